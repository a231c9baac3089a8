//! Descent-condition analysis on quadratic objectives: the per-step
//! inequality under which one optimizer step decreases the loss, critical
//! learning-rate estimation and its scaling with dimension, loss
//! trajectories under synthetic gradients, and the second-moment
//! curvature proxy on diagonal quadratics.

use crate::gradient::{GradientModel, ModelError, Variant};
use crate::optimizer::{AdamError, AdamParams, AdamState};
use crate::rmt::{log_log_slope, sample_wigner, RmtError, SymmetricMatrix};
use crate::rng::{domain, CounterRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DivergenceError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("learning rate must be positive, got {0}")]
    BadEta(f64),
    #[error("hessian must be diagonal for the curvature proxy")]
    NotDiagonal,
    #[error("sigma must be positive, got {0}")]
    BadSigma(f64),
    #[error(transparent)]
    Adam(#[from] AdamError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Rmt(#[from] RmtError),
}

/// f(theta) = 1/2 (theta - theta*)' H (theta - theta*), H symmetric PSD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticObjective {
    pub hessian: SymmetricMatrix,
    pub theta_star: Vec<f64>,
}

impl QuadraticObjective {
    pub fn new(hessian: SymmetricMatrix, theta_star: Vec<f64>) -> Result<Self, DivergenceError> {
        if hessian.dim() != theta_star.len() {
            return Err(DivergenceError::Dimension(format!(
                "hessian is {}x{} but theta* has length {}",
                hessian.dim(),
                hessian.dim(),
                theta_star.len()
            )));
        }
        Ok(QuadraticObjective {
            hessian,
            theta_star,
        })
    }

    pub fn dim(&self) -> usize {
        self.theta_star.len()
    }

    pub fn loss(&self, theta: &[f64]) -> f64 {
        let d: Vec<f64> = theta
            .iter()
            .zip(&self.theta_star)
            .map(|(t, s)| t - s)
            .collect();
        let hd = self.hessian.matvec(&d);
        0.5 * d.iter().zip(&hd).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn gradient(&self, theta: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = theta
            .iter()
            .zip(&self.theta_star)
            .map(|(t, s)| t - s)
            .collect();
        self.hessian.matvec(&d)
    }
}

/// Both sides of the one-step descent inequality
/// <grad, u> > (eta/2) u' H u, evaluated exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescentCheck {
    /// <grad, u>
    pub lhs: f64,
    /// (eta/2) u' H u
    pub rhs: f64,
    pub satisfied: bool,
    /// 2 <grad, u> / (u' H u) when the curvature term is positive.
    pub eta_critical: Option<f64>,
}

/// Evaluate the descent inequality for a step of size eta along -u.
pub fn descent_condition(
    grad: &[f64],
    u: &[f64],
    hessian: &SymmetricMatrix,
    eta: f64,
) -> Result<DescentCheck, DivergenceError> {
    let n = hessian.dim();
    if grad.len() != n || u.len() != n {
        return Err(DivergenceError::Dimension(format!(
            "expected length {n}, got grad {} and u {}",
            grad.len(),
            u.len()
        )));
    }
    if !(eta > 0.0) {
        return Err(DivergenceError::BadEta(eta));
    }
    let lhs: f64 = grad.iter().zip(u).map(|(g, ui)| g * ui).sum();
    let hu = hessian.matvec(u);
    let quad: f64 = u.iter().zip(&hu).map(|(ui, h)| ui * h).sum();
    let rhs = 0.5 * eta * quad;
    Ok(DescentCheck {
        lhs,
        rhs,
        satisfied: lhs > rhs,
        eta_critical: if quad > 0.0 && lhs > 0.0 {
            Some(2.0 * lhs / quad)
        } else {
            None
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaScalingPoint {
    pub n: usize,
    pub median_eta_critical: f64,
    pub discarded: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaScalingReport {
    pub points: Vec<EtaScalingPoint>,
    pub slope: f64,
}

/// Hessian generator for the critical learning-rate experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HessianKind {
    /// H = S * S for a unit-variance Wigner S: eigenvalues grow linearly
    /// with n, so the critical step size falls as 1/n.
    WignerSquared,
    /// H = I control: the critical step size is dimension-free.
    Identity,
}

/// Median critical learning rate across trials for each dimension.
///
/// Gradients carry unit-magnitude sign structure (every entry +-1), so
/// <g, u> = n * beta1/sqrt(beta2) exactly and the measured scaling
/// isolates the curvature term u' H u.
pub fn critical_eta_scaling(
    n_list: &[usize],
    trials: usize,
    kind: HessianKind,
    params: &AdamParams,
    seed: u64,
) -> Result<EtaScalingReport, DivergenceError> {
    let coeff = params.beta1 / params.beta2.sqrt();
    let mut points = Vec::with_capacity(n_list.len());
    for (ni, &n) in n_list.iter().enumerate() {
        let etas: Vec<Option<f64>> = (0..trials as u64)
            .into_par_iter()
            .map(|t| {
                let trial_seed = CounterRng::new(seed).bits(&[domain::TRIAL, ni as u64, t]);
                let rng = CounterRng::new(trial_seed);
                let g: Vec<f64> = (0..n as u64).map(|i| rng.sign(&[domain::THETA, i])).collect();
                let u: Vec<f64> = g.iter().map(|gi| gi.signum() * coeff).collect();
                let lhs: f64 = g.iter().zip(&u).map(|(a, b)| a * b).sum();
                let quad = match kind {
                    HessianKind::WignerSquared => {
                        // u' S^2 u = |S u|^2 without forming S^2
                        let s = sample_wigner(n, rng.bits(&[domain::WIGNER]));
                        let su = s.matvec(&u);
                        su.iter().map(|v| v * v).sum::<f64>()
                    }
                    HessianKind::Identity => u.iter().map(|v| v * v).sum::<f64>(),
                };
                if lhs > 0.0 && quad > 0.0 {
                    Some(2.0 * lhs / quad)
                } else {
                    None
                }
            })
            .collect();
        let mut kept: Vec<f64> = etas.iter().filter_map(|e| *e).collect();
        let discarded = trials - kept.len();
        kept.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if kept.is_empty() {
            f64::NAN
        } else {
            kept[kept.len() / 2]
        };
        points.push(EtaScalingPoint {
            n,
            median_eta_critical: median,
            discarded,
            trials,
        });
    }
    let xs: Vec<f64> = points.iter().map(|p| p.n as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.median_eta_critical).collect();
    Ok(EtaScalingReport {
        slope: log_log_slope(&xs, &ys),
        points,
    })
}

/// Loss series of an optimizer run on a quadratic objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossTrajectory {
    /// f(theta_t) evaluated before the update of step t+1; losses[0] is the
    /// initial loss.
    pub losses: Vec<f64>,
    /// Step index at which the loss became non-finite, if the run diverged.
    pub diverged_at: Option<usize>,
}

/// Run Adam on the objective for `steps` steps starting at `theta0`.
///
/// `QuadraticExact` gradients come from the objective itself, with any
/// configured additive noise model on top; other variants are purely
/// synthetic and the objective only scores the loss.
pub fn loss_trajectory(
    objective: &QuadraticObjective,
    params: &AdamParams,
    model: &GradientModel,
    theta0: &[f64],
    steps: u64,
    eta: f64,
) -> Result<LossTrajectory, DivergenceError> {
    let n = objective.dim();
    if theta0.len() != n || model.n != n {
        return Err(DivergenceError::Dimension(format!(
            "objective dim {n}, theta0 {}, model {}",
            theta0.len(),
            model.n
        )));
    }
    if !(eta > 0.0) {
        return Err(DivergenceError::BadEta(eta));
    }
    let mut theta = theta0.to_vec();
    let mut state = AdamState::new(n);
    let mut losses = Vec::with_capacity(steps as usize + 1);
    losses.push(objective.loss(&theta));
    for t in 1..=steps {
        let g = match &model.variant {
            Variant::QuadraticExact { noise } => {
                let mut g = objective.gradient(&theta);
                if let Some(noise_variant) = noise {
                    let noise_model =
                        GradientModel::new((**noise_variant).clone(), n, model_noise_seed(model))?;
                    for (gi, ni) in g.iter_mut().zip(noise_model.sample(t)?) {
                        *gi += ni;
                    }
                }
                g
            }
            _ => model.sample(t)?,
        };
        let u = state.step(&g, params)?;
        for (th, ui) in theta.iter_mut().zip(&u.values) {
            *th -= eta * ui;
        }
        let loss = objective.loss(&theta);
        if !loss.is_finite() {
            return Ok(LossTrajectory {
                losses,
                diverged_at: Some(t as usize),
            });
        }
        losses.push(loss);
    }
    Ok(LossTrajectory {
        losses,
        diverged_at: None,
    })
}

fn model_noise_seed(model: &GradientModel) -> u64 {
    // derive the noise stream from the model's own identity
    CounterRng::new(model.n as u64)
        .bits(&[domain::NOISE, model.batch_size])
}

/// Per-coordinate curvature-proxy outcome on a diagonal quadratic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyReport {
    /// sqrt(mean g_i^2) / (sigma |H_ii|) for coordinates with H_ii != 0.
    pub ratios: Vec<f64>,
    /// Coordinates excluded because the diagonal entry is zero.
    pub flagged_zero: Vec<usize>,
    /// The same ratio computed from the Adam second-moment accumulator
    /// after feeding the sampled gradients through the recursion.
    pub adam_ratios: Vec<f64>,
    pub sigma: f64,
    pub samples: u64,
}

/// Verify that the second-moment average of gradients sampled around the
/// optimum recovers sigma^2 times the squared Hessian diagonal: draws
/// theta = theta* + sigma z with iid standard normal z, so g = sigma H z
/// coordinate-wise on a diagonal H.
pub fn hessian_proxy_check(
    objective: &QuadraticObjective,
    sigma: f64,
    samples: u64,
    params: &AdamParams,
    seed: u64,
) -> Result<ProxyReport, DivergenceError> {
    if !(sigma > 0.0) {
        return Err(DivergenceError::BadSigma(sigma));
    }
    let n = objective.dim();
    for i in 0..n {
        for j in 0..i {
            if objective.hessian.get(i, j) != 0.0 {
                return Err(DivergenceError::NotDiagonal);
            }
        }
    }
    let rng = CounterRng::new(seed).stream(domain::THETA);
    let mut mean_sq = vec![0.0f64; n];
    let mut state = AdamState::new(n);
    for s in 0..samples {
        let mut g = vec![0.0; n];
        for (i, gi) in g.iter_mut().enumerate() {
            let z = rng.normal(&[s, i as u64]);
            *gi = sigma * objective.hessian.get(i, i) * z;
        }
        for (acc, gi) in mean_sq.iter_mut().zip(&g) {
            *acc += gi * gi;
        }
        state.step(&g, params)?;
    }
    let mut ratios = Vec::new();
    let mut adam_ratios = Vec::new();
    let mut flagged_zero = Vec::new();
    for i in 0..n {
        let h = objective.hessian.get(i, i);
        if h == 0.0 {
            flagged_zero.push(i);
            continue;
        }
        let denom = sigma * h.abs();
        ratios.push((mean_sq[i] / samples as f64).sqrt() / denom);
        adam_ratios.push(state.v[i].sqrt() / denom);
    }
    Ok(ProxyReport {
        ratios,
        flagged_zero,
        adam_ratios,
        sigma,
        samples,
    })
}
