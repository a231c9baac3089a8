//! Synthetic stochastic gradient processes.
//!
//! Each model produces one gradient vector per step from a counter-based
//! generator, so draws for a given (coordinate, step) never depend on
//! evaluation order and configured rare events cannot perturb any other
//! coordinate or step. Time-domain correlation is injected through a
//! frozen per-coordinate component added to a fresh per-step component.

use crate::optimizer::GroupPartition;
use crate::rng::{domain, CounterRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{0}")]
    InvalidSpec(String),
    #[error("rare event names unknown group {0:?}")]
    UnknownGroup(String),
    #[error("rare events require a group partition")]
    MissingPartition,
    #[error("model variant has no closed-form moments")]
    UnsupportedVariant,
    #[error("layered model requires a partition covering every group")]
    LayeredShape,
}

/// Closed-form first and second moments plus lag-k autocorrelation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSpec {
    pub mean: f64,
    pub variance: f64,
    pub time_autocorrelation: f64,
}

/// One multiplicative gradient-magnitude jump for a group at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RareEvent {
    pub step: u64,
    pub group: String,
    pub multiplier: f64,
}

/// Per-group scale over time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScaleSchedule {
    Constant(f64),
    /// Geometric interpolation from `from` to `to` over [start, end], flat outside.
    GeometricRamp {
        from: f64,
        to: f64,
        start: u64,
        end: u64,
    },
}

impl ScaleSchedule {
    pub fn at(&self, t: u64) -> f64 {
        match *self {
            ScaleSchedule::Constant(s) => s,
            ScaleSchedule::GeometricRamp {
                from,
                to,
                start,
                end,
            } => {
                if t <= start {
                    from
                } else if t >= end {
                    to
                } else {
                    let frac = (t - start) as f64 / (end - start) as f64;
                    from * (to / from).powf(frac)
                }
            }
        }
    }
}

/// The stochastic law of a single coordinate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Variant {
    /// Fresh fair signs each step.
    IidSign,
    /// Frozen per-coordinate sign of magnitude rho plus a fresh fair sign.
    CorrelatedSign { rho: f64 },
    /// Fresh centered Gaussians of standard deviation sigma.
    IidGaussian { sigma: f64 },
    /// Frozen N(0, (rho sigma)^2) component plus fresh N(0, sigma^2).
    CorrelatedGaussian { rho: f64, sigma: f64 },
    /// The same fixed value every step.
    Constant { value: f64 },
    /// Exact objective gradients; only trajectory runners can evaluate it,
    /// optionally with additive synthetic noise.
    QuadraticExact { noise: Option<Box<Variant>> },
    /// Per-group sub-models with per-group scale schedules.
    Layered { layers: Vec<LayerSpec> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub group: String,
    pub variant: Box<Variant>,
    pub scale: ScaleSchedule,
}

/// A seeded gradient process over `n` coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientModel {
    pub variant: Variant,
    pub n: usize,
    pub batch_size: u64,
    pub rare_events: Vec<RareEvent>,
    pub partition: Option<GroupPartition>,
    seed: u64,
}

impl GradientModel {
    pub fn new(variant: Variant, n: usize, seed: u64) -> Result<Self, ModelError> {
        let model = GradientModel {
            variant,
            n,
            batch_size: 1,
            rare_events: Vec::new(),
            partition: None,
            seed,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn with_batch_size(mut self, b: u64) -> Result<Self, ModelError> {
        if b < 1 {
            return Err(ModelError::InvalidSpec("batch size must be >= 1".into()));
        }
        self.batch_size = b;
        Ok(self)
    }

    pub fn with_partition(mut self, partition: GroupPartition) -> Result<Self, ModelError> {
        if partition.dim() != self.n {
            return Err(ModelError::InvalidSpec(format!(
                "partition covers {} indices, model has {}",
                partition.dim(),
                self.n
            )));
        }
        self.partition = Some(partition);
        self.validate()?;
        Ok(self)
    }

    pub fn with_rare_events(mut self, events: Vec<RareEvent>) -> Result<Self, ModelError> {
        self.rare_events = events;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<(), ModelError> {
        fn check_variant(v: &Variant) -> Result<(), ModelError> {
            match v {
                Variant::CorrelatedSign { rho } => {
                    if !(*rho >= 0.0) {
                        return Err(ModelError::InvalidSpec("rho must be >= 0".into()));
                    }
                }
                Variant::IidGaussian { sigma } => {
                    if !(*sigma > 0.0) {
                        return Err(ModelError::InvalidSpec("sigma must be > 0".into()));
                    }
                }
                Variant::CorrelatedGaussian { rho, sigma } => {
                    if !(*rho >= 0.0) || !(*sigma > 0.0) {
                        return Err(ModelError::InvalidSpec(
                            "rho must be >= 0 and sigma > 0".into(),
                        ));
                    }
                }
                Variant::QuadraticExact { noise: Some(inner) } => check_variant(inner)?,
                Variant::Layered { layers } => {
                    for l in layers {
                        check_variant(&l.variant)?;
                    }
                }
                _ => {}
            }
            Ok(())
        }
        check_variant(&self.variant)?;
        if !self.rare_events.is_empty() {
            let partition = self.partition.as_ref().ok_or(ModelError::MissingPartition)?;
            for ev in &self.rare_events {
                partition
                    .find(&ev.group)
                    .map_err(|_| ModelError::UnknownGroup(ev.group.clone()))?;
            }
        }
        // layered group names are checked once the partition is attached
        if let (Variant::Layered { layers }, Some(partition)) =
            (&self.variant, self.partition.as_ref())
        {
            for l in layers {
                partition
                    .find(&l.group)
                    .map_err(|_| ModelError::UnknownGroup(l.group.clone()))?;
            }
            if layers.len() != partition.len() {
                return Err(ModelError::LayeredShape);
            }
        }
        Ok(())
    }

    fn rng(&self) -> CounterRng {
        CounterRng::new(self.seed)
    }

    /// One draw of variant `v` for coordinate `i`, step `t`, batch slot `k`.
    fn draw(&self, v: &Variant, i: usize, t: u64, k: u64) -> Result<f64, ModelError> {
        let frozen = self.rng().stream(domain::FROZEN);
        let fresh = self.rng().stream(domain::FRESH);
        let iu = i as u64;
        Ok(match v {
            Variant::IidSign => fresh.sign(&[iu, t, k]),
            Variant::CorrelatedSign { rho } => {
                rho * frozen.sign(&[iu]) + fresh.sign(&[iu, t, k])
            }
            Variant::IidGaussian { sigma } => sigma * fresh.normal(&[iu, t, k]),
            Variant::CorrelatedGaussian { rho, sigma } => {
                rho * sigma * frozen.normal(&[iu]) + sigma * fresh.normal(&[iu, t, k])
            }
            Variant::Constant { value } => *value,
            Variant::QuadraticExact { .. } => return Err(ModelError::UnsupportedVariant),
            Variant::Layered { .. } => unreachable!("layered handled per group"),
        })
    }

    fn batched(&self, v: &Variant, i: usize, t: u64) -> Result<f64, ModelError> {
        let b = self.batch_size;
        if b == 1 {
            return self.draw(v, i, t, 0);
        }
        let mut acc = 0.0;
        for k in 0..b {
            acc += self.draw(v, i, t, k)?;
        }
        Ok(acc / b as f64)
    }

    /// The gradient vector at step `t` (t >= 1).
    pub fn sample(&self, t: u64) -> Result<Vec<f64>, ModelError> {
        let mut g = vec![0.0; self.n];
        match &self.variant {
            Variant::Layered { layers } => {
                let partition = self.partition.as_ref().ok_or(ModelError::LayeredShape)?;
                for l in layers {
                    let k = partition
                        .find(&l.group)
                        .map_err(|_| ModelError::UnknownGroup(l.group.clone()))?;
                    let scale = l.scale.at(t);
                    for &i in partition.indices(k) {
                        g[i] = scale * self.batched(&l.variant, i, t)?;
                    }
                }
            }
            v => {
                for (i, gi) in g.iter_mut().enumerate() {
                    *gi = self.batched(v, i, t)?;
                }
            }
        }
        for ev in &self.rare_events {
            if ev.step == t {
                let partition = self.partition.as_ref().ok_or(ModelError::MissingPartition)?;
                let k = partition
                    .find(&ev.group)
                    .map_err(|_| ModelError::UnknownGroup(ev.group.clone()))?;
                for &i in partition.indices(k) {
                    g[i] *= ev.multiplier;
                }
            }
        }
        Ok(g)
    }

    /// Analytic moments, where the variant admits them. Batching divides
    /// the fresh component's variance by b while the frozen component is
    /// shared across the batch, which raises the autocorrelation.
    pub fn expected_moments(&self) -> Result<MomentSpec, ModelError> {
        let b = self.batch_size as f64;
        let spec = match &self.variant {
            Variant::IidSign => MomentSpec {
                mean: 0.0,
                variance: 1.0 / b,
                time_autocorrelation: 0.0,
            },
            Variant::CorrelatedSign { rho } => {
                let var = rho * rho + 1.0 / b;
                MomentSpec {
                    mean: 0.0,
                    variance: var,
                    time_autocorrelation: rho * rho / var,
                }
            }
            Variant::IidGaussian { sigma } => MomentSpec {
                mean: 0.0,
                variance: sigma * sigma / b,
                time_autocorrelation: 0.0,
            },
            Variant::CorrelatedGaussian { rho, sigma } => {
                let var = sigma * sigma * (rho * rho + 1.0 / b);
                MomentSpec {
                    mean: 0.0,
                    variance: var,
                    time_autocorrelation: rho * rho / (rho * rho + 1.0 / b),
                }
            }
            Variant::Constant { value } => MomentSpec {
                mean: *value,
                variance: 0.0,
                time_autocorrelation: 1.0,
            },
            Variant::QuadraticExact { .. } | Variant::Layered { .. } => {
                return Err(ModelError::UnsupportedVariant)
            }
        };
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments_of(samples: &[f64]) -> (f64, f64) {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn correlated_sign_rho_zero_is_fresh_signs() {
        let m = GradientModel::new(Variant::CorrelatedSign { rho: 0.0 }, 100_000, 3).unwrap();
        let g = m.sample(1).unwrap();
        assert!(g.iter().all(|x| x.abs() == 1.0));
        let (mean, var) = moments_of(&g);
        // 3 sigma on 1e5 fair signs
        assert!(mean.abs() < 3.0 / (100_000f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.01, "var {var}");
    }

    #[test]
    fn correlated_sign_variance_and_autocorrelation() {
        let rho = 2.0;
        let n = 100_000;
        let m = GradientModel::new(Variant::CorrelatedSign { rho }, n, 17).unwrap();
        let spec = m.expected_moments().unwrap();
        assert!((spec.variance - 5.0).abs() < 1e-12);
        assert!((spec.time_autocorrelation - 0.8).abs() < 1e-12);

        let g1 = m.sample(1).unwrap();
        let (mean, var) = moments_of(&g1);
        assert!(mean.abs() < 3.0 * (5.0f64 / n as f64).sqrt());
        assert!((var - 5.0).abs() < 0.1, "var {var}");

        // Monte Carlo lag-k autocorrelation across coordinates
        for lag in [1u64, 4] {
            let ga = m.sample(10).unwrap();
            let gb = m.sample(10 + lag).unwrap();
            let cov = ga
                .iter()
                .zip(gb.iter())
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / n as f64;
            let corr = cov / 5.0;
            assert!((corr - 0.8).abs() < 0.02, "lag {lag}: {corr}");
        }
    }

    #[test]
    fn expected_moment_table() {
        let iid = GradientModel::new(Variant::IidSign, 10, 0).unwrap();
        assert_eq!(
            iid.expected_moments().unwrap(),
            MomentSpec {
                mean: 0.0,
                variance: 1.0,
                time_autocorrelation: 0.0
            }
        );
        let batched = GradientModel::new(Variant::IidSign, 10, 0)
            .unwrap()
            .with_batch_size(100)
            .unwrap();
        assert!((batched.expected_moments().unwrap().variance - 0.01).abs() < 1e-15);
        let quad = GradientModel::new(Variant::QuadraticExact { noise: None }, 10, 0).unwrap();
        assert!(matches!(
            quad.expected_moments(),
            Err(ModelError::UnsupportedVariant)
        ));
        assert!(matches!(quad.sample(1), Err(ModelError::UnsupportedVariant)));
    }

    #[test]
    fn frozen_component_is_stable_across_steps() {
        let m = GradientModel::new(Variant::CorrelatedSign { rho: 3.0 }, 1000, 5).unwrap();
        let first = m.sample(1).unwrap();
        for t in [2u64, 50, 500] {
            let g = m.sample(t).unwrap();
            for i in 0..1000 {
                // |frozen| = 3 dominates the fresh unit sign, so the sign never flips
                assert_eq!(g[i].signum(), first[i].signum(), "i={i} t={t}");
            }
        }
    }

    #[test]
    fn batch_averaging_scales_variance() {
        let n = 60_000;
        let base = GradientModel::new(Variant::IidSign, n, 11).unwrap();
        let (_, v1) = moments_of(&base.sample(3).unwrap());
        for b in [4u64, 16, 64] {
            let m = GradientModel::new(Variant::IidSign, n, 11)
                .unwrap()
                .with_batch_size(b)
                .unwrap();
            let (_, vb) = moments_of(&m.sample(3).unwrap());
            let ratio = vb / v1 * b as f64;
            assert!((ratio - 1.0).abs() < 0.10, "b={b}: ratio {ratio}");
        }
    }

    #[test]
    fn rare_event_is_local_and_validated() {
        let n = 50;
        let part = GroupPartition::two_blocks(n, 10, "early", "rest");
        let plain = GradientModel::new(Variant::IidSign, n, 23)
            .unwrap()
            .with_partition(part.clone())
            .unwrap();
        let evented = plain
            .clone()
            .with_rare_events(vec![RareEvent {
                step: 5,
                group: "early".into(),
                multiplier: 1e7,
            }])
            .unwrap();

        for t in 1..=10u64 {
            let a = plain.sample(t).unwrap();
            let b = evented.sample(t).unwrap();
            for i in 0..n {
                if t == 5 && i < 10 {
                    assert_eq!(b[i], a[i] * 1e7);
                } else {
                    assert_eq!(a[i].to_bits(), b[i].to_bits(), "t={t} i={i}");
                }
            }
        }

        let bad = GradientModel::new(Variant::IidSign, n, 23)
            .unwrap()
            .with_partition(part)
            .unwrap()
            .with_rare_events(vec![RareEvent {
                step: 5,
                group: "nope".into(),
                multiplier: 2.0,
            }]);
        assert!(matches!(bad, Err(ModelError::UnknownGroup(_))));
    }

    #[test]
    fn layered_scales_apply_per_group() {
        let n = 20;
        let part = GroupPartition::two_blocks(n, 5, "g", "r");
        let m = GradientModel::new(
            Variant::Layered {
                layers: vec![
                    LayerSpec {
                        group: "g".into(),
                        variant: Box::new(Variant::IidSign),
                        scale: ScaleSchedule::GeometricRamp {
                            from: 1.0,
                            to: 1e-10,
                            start: 2,
                            end: 6,
                        },
                    },
                    LayerSpec {
                        group: "r".into(),
                        variant: Box::new(Variant::IidSign),
                        scale: ScaleSchedule::Constant(1.0),
                    },
                ],
            },
            n,
            7,
        )
        .unwrap()
        .with_partition(part)
        .unwrap();

        let early = m.sample(1).unwrap();
        assert!(early[..5].iter().all(|x| x.abs() == 1.0));
        let late = m.sample(10).unwrap();
        assert!(late[..5].iter().all(|x| x.abs() == 1e-10));
        assert!(late[5..].iter().all(|x| x.abs() == 1.0));
    }

    #[test]
    fn gaussian_moments() {
        let n = 100_000;
        let m = GradientModel::new(Variant::IidGaussian { sigma: 0.5 }, n, 29).unwrap();
        let (mean, var) = moments_of(&m.sample(1).unwrap());
        assert!(mean.abs() < 5.0 * 0.5 / (n as f64).sqrt());
        assert!((var - 0.25).abs() < 0.01);

        let c = GradientModel::new(
            Variant::CorrelatedGaussian {
                rho: 2.0,
                sigma: 1.0,
            },
            n,
            31,
        )
        .unwrap();
        let (_, varc) = moments_of(&c.sample(1).unwrap());
        assert!((varc - 5.0).abs() < 0.2, "var {varc}");
        assert!((c.expected_moments().unwrap().time_autocorrelation - 0.8).abs() < 1e-12);
    }
}
