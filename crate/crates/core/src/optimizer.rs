//! Instrumented Adam recursion.
//!
//! The optimizer state is the pair of exponential moving averages (m, v)
//! over gradients and squared gradients, stored here in bias-corrected
//! form so that m and v are proper weighted averages of the gradient
//! history at every step. Parameter updates are left to callers; this
//! module only produces the unscaled update vector and the epsilon-free
//! ratio m/sqrt(v) that the rest of the crate interrogates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdamError {
    #[error("gradient length {got} does not match state dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite gradient entry at index {index} on step {step}")]
    NonFiniteGradient { index: usize, step: u64 },
    #[error("non-finite optimizer state at index {index} (step {step})")]
    NonFiniteState { index: usize, step: u64 },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("operation requires at least one completed step")]
    EmptyHistory,
    #[error("weight coefficient requires 1 <= tau <= t, got tau={tau}, t={t}")]
    BadWeightIndex { tau: u64, t: u64 },
}

/// How division by zero in the update is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpsilonPolicy {
    /// u = m / (sqrt(v) + epsilon), epsilon > 0.
    Standard,
    /// epsilon = 0 and u\[i\] = 0 wherever v\[i\] = 0. Updates are then
    /// invariant under positive rescaling of the whole gradient history.
    ZeroGuard,
}

/// Which averaging recursion the accumulators follow.
///
/// `Classic` is standard bias-corrected Adam: plain moving averages
/// divided by (1 - beta^t) on readout; equivalently the corrected
/// averages are updated in place as
///   m_t = (beta (1 - beta^{t-1}) m_{t-1} + (1 - beta) g_t) / (1 - beta^t).
/// Its per-step weights sum to exactly 1 for every t.
///
/// `Renormalized` divides both terms by (1 - beta^t) each step:
///   m_t = (beta m_{t-1} + (1 - beta) g_t) / (1 - beta^t).
/// Its weight sum blows up transiently (for beta = 0.95 the squared-weight
/// sum is still ~1e4 at t = 300) before settling to 1; it is kept as a
/// comparison variant, not the default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum AdamVariant {
    #[default]
    Classic,
    Renormalized,
}

/// Step-size schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EtaSchedule {
    Constant(f64),
}

impl EtaSchedule {
    pub fn at(&self, _t: u64) -> f64 {
        match *self {
            EtaSchedule::Constant(eta) => eta,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub eta: EtaSchedule,
    pub policy: EpsilonPolicy,
    pub variant: AdamVariant,
}

impl AdamParams {
    pub fn new(
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        eta: EtaSchedule,
        policy: EpsilonPolicy,
    ) -> Result<Self, AdamError> {
        if !(0.0 < beta1 && beta1 < 1.0) {
            return Err(AdamError::InvalidParams(format!(
                "beta1 must be in (0,1), got {beta1}"
            )));
        }
        if !(0.0 < beta2 && beta2 < 1.0) {
            return Err(AdamError::InvalidParams(format!(
                "beta2 must be in (0,1), got {beta2}"
            )));
        }
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(AdamError::InvalidParams(format!(
                "epsilon must be finite and >= 0, got {epsilon}"
            )));
        }
        match policy {
            EpsilonPolicy::ZeroGuard if epsilon != 0.0 => {
                return Err(AdamError::InvalidParams(format!(
                    "zero-guard policy requires epsilon = 0, got {epsilon}"
                )));
            }
            EpsilonPolicy::Standard if epsilon == 0.0 => {
                return Err(AdamError::InvalidParams(
                    "standard policy requires epsilon > 0; use zero-guard for epsilon = 0".into(),
                ));
            }
            _ => {}
        }
        let EtaSchedule::Constant(e) = eta;
        if !(e.is_finite() && e > 0.0) {
            return Err(AdamError::InvalidParams(format!(
                "eta must be positive, got {e}"
            )));
        }
        Ok(AdamParams {
            beta1,
            beta2,
            epsilon,
            eta,
            policy,
            variant: AdamVariant::Classic,
        })
    }

    /// Reference hyper-parameters used throughout the experiments.
    pub fn reference() -> Self {
        AdamParams::new(
            0.9,
            0.95,
            1e-8,
            EtaSchedule::Constant(1e-4),
            EpsilonPolicy::Standard,
        )
        .expect("reference parameters are valid")
    }

    pub fn with_variant(mut self, variant: AdamVariant) -> Self {
        self.variant = variant;
        self
    }

    /// Switch to the zero-guard division policy (epsilon becomes 0).
    pub fn zero_guard(mut self) -> Self {
        self.epsilon = 0.0;
        self.policy = EpsilonPolicy::ZeroGuard;
        self
    }
}

/// Unscaled update vector u_t.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateVector {
    pub values: Vec<f64>,
    pub step: u64,
}

/// The epsilon-free ratio r = m / sqrt(v), with 0/0 mapped to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioVector {
    pub values: Vec<f64>,
    pub step: u64,
}

/// Optimizer accumulators. `m` and `v` always hold the bias-corrected
/// weighted averages as of step `t`; per-coordinate step offsets support
/// group-scoped reinitialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    offsets: Vec<u64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            offsets: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// Effective step count for coordinate `i` (1-based after the next step).
    fn effective_t(&self, i: usize, t_next: u64) -> u64 {
        if self.offsets.is_empty() {
            t_next
        } else {
            t_next - self.offsets[i]
        }
    }

    /// Zero the accumulators of the given coordinates and restart their
    /// step counters, leaving every other coordinate untouched.
    pub fn reinitialize(&mut self, indices: &[usize]) {
        if self.offsets.is_empty() {
            self.offsets = vec![0; self.dim()];
        }
        for &i in indices {
            self.m[i] = 0.0;
            self.v[i] = 0.0;
            self.offsets[i] = self.t;
        }
    }

    /// Steps elapsed since coordinate `i` was last (re)initialized.
    pub fn age(&self, i: usize) -> u64 {
        if self.offsets.is_empty() {
            self.t
        } else {
            self.t - self.offsets[i]
        }
    }

    /// Advance one step on gradient `g`, returning the unscaled update.
    pub fn step(&mut self, g: &[f64], params: &AdamParams) -> Result<UpdateVector, AdamError> {
        let n = self.dim();
        if g.len() != n {
            return Err(AdamError::DimensionMismatch {
                expected: n,
                got: g.len(),
            });
        }
        let t_next = self.t + 1;
        if let Some(index) = g.iter().position(|x| !x.is_finite()) {
            return Err(AdamError::NonFiniteGradient {
                index,
                step: t_next,
            });
        }
        let (b1, b2) = (params.beta1, params.beta2);
        let mut u = vec![0.0; n];

        let uniform = self.offsets.is_empty();
        // Per-step factors are shared by every coordinate unless group
        // reinitialization introduced distinct effective ages.
        let factors = |te: u64| -> (f64, f64, f64, f64) {
            let p1 = pow_int(b1, te);
            let p2 = pow_int(b2, te);
            match params.variant {
                AdamVariant::Classic => {
                    let p1p = pow_int(b1, te - 1);
                    let p2p = pow_int(b2, te - 1);
                    (
                        b1 * (1.0 - p1p) / (1.0 - p1),
                        (1.0 - b1) / (1.0 - p1),
                        b2 * (1.0 - p2p) / (1.0 - p2),
                        (1.0 - b2) / (1.0 - p2),
                    )
                }
                AdamVariant::Renormalized => (
                    b1 / (1.0 - p1),
                    (1.0 - b1) / (1.0 - p1),
                    b2 / (1.0 - p2),
                    (1.0 - b2) / (1.0 - p2),
                ),
            }
        };

        let shared = if uniform { Some(factors(t_next)) } else { None };
        for i in 0..n {
            let (am, bm, av, bv) = match shared {
                Some(f) => f,
                None => factors(self.effective_t(i, t_next)),
            };
            let gi = g[i];
            self.m[i] = am * self.m[i] + bm * gi;
            self.v[i] = av * self.v[i] + bv * gi * gi;
            u[i] = match params.policy {
                EpsilonPolicy::Standard => self.m[i] / (self.v[i].sqrt() + params.epsilon),
                EpsilonPolicy::ZeroGuard => {
                    if self.v[i] == 0.0 {
                        0.0
                    } else {
                        self.m[i] / self.v[i].sqrt()
                    }
                }
            };
        }
        self.t = t_next;
        Ok(UpdateVector {
            values: u,
            step: t_next,
        })
    }

    /// The epsilon-free ratio of the current state. v = 0 maps to 0.
    pub fn ratio(&self) -> Result<RatioVector, AdamError> {
        if self.t == 0 {
            return Err(AdamError::EmptyHistory);
        }
        let mut r = vec![0.0; self.dim()];
        for i in 0..self.dim() {
            if !self.m[i].is_finite() || !self.v[i].is_finite() {
                return Err(AdamError::NonFiniteState {
                    index: i,
                    step: self.t,
                });
            }
            r[i] = if self.v[i] == 0.0 {
                0.0
            } else {
                self.m[i] / self.v[i].sqrt()
            };
        }
        Ok(RatioVector {
            values: r,
            step: self.t,
        })
    }
}

#[inline]
fn pow_int(base: f64, exp: u64) -> f64 {
    if exp > i32::MAX as u64 {
        0.0
    } else {
        base.powi(exp as i32)
    }
}

/// Coefficient of the gradient at step `tau` in the accumulator at step `t`.
///
/// The same formula serves both moments; pass beta1 for the first moment
/// and beta2 for the second.
pub fn weight_coefficient(
    variant: AdamVariant,
    beta: f64,
    t: u64,
    tau: u64,
) -> Result<f64, AdamError> {
    if tau < 1 || tau > t {
        return Err(AdamError::BadWeightIndex { tau, t });
    }
    let w = match variant {
        AdamVariant::Classic => {
            pow_int(beta, t - tau) * (1.0 - beta) / (1.0 - pow_int(beta, t))
        }
        AdamVariant::Renormalized => {
            let mut denom = 1.0;
            for k in tau..=t {
                denom *= 1.0 - pow_int(beta, k);
            }
            pow_int(beta, t - tau) * (1.0 - beta) / denom
        }
    };
    Ok(w)
}

/// All weight coefficients w_t\[tau\] for tau = 1..=t, computed in O(t).
pub fn weight_profile(variant: AdamVariant, beta: f64, t: u64) -> Vec<f64> {
    let t_us = t as usize;
    let mut w = vec![0.0; t_us];
    match variant {
        AdamVariant::Classic => {
            let denom = 1.0 - pow_int(beta, t);
            let mut pow = 1.0; // beta^(t - tau), tau = t down to 1
            for tau in (1..=t_us).rev() {
                w[tau - 1] = pow * (1.0 - beta) / denom;
                pow *= beta;
            }
        }
        AdamVariant::Renormalized => {
            // suffix products of (1 - beta^T), T = tau..=t
            let mut suffix = 1.0;
            let mut pow = 1.0;
            for tau in (1..=t_us).rev() {
                suffix *= 1.0 - pow_int(beta, tau as u64);
                w[tau - 1] = pow * (1.0 - beta) / suffix;
                pow *= beta;
            }
        }
    }
    w
}

/// Partial sum of squared first-moment weights up to step `t`.
pub fn gamma_partial(variant: AdamVariant, beta: f64, t: u64) -> f64 {
    weight_profile(variant, beta, t).iter().map(|w| w * w).sum()
}

/// Limit of the squared-weight sum for plain geometric weights
/// beta^(t-tau) (1-beta); the asymptote both variants approach.
pub fn gamma_geometric_limit(beta: f64) -> f64 {
    (1.0 - beta) / (1.0 + beta)
}

/// Disjoint named index groups covering 0..n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupPartition {
    groups: Vec<Vec<usize>>,
    labels: Vec<String>,
    n: usize,
}

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("groups and labels differ in length")]
    LabelMismatch,
    #[error("index {0} appears in more than one group")]
    Overlap(usize),
    #[error("index {0} out of range for dimension {1}")]
    OutOfRange(usize, usize),
    #[error("partition does not cover all {expected} indices (covered {covered})")]
    Incomplete { expected: usize, covered: usize },
    #[error("unknown group label {0:?}")]
    UnknownLabel(String),
}

impl GroupPartition {
    pub fn new(
        n: usize,
        groups: Vec<Vec<usize>>,
        labels: Vec<String>,
    ) -> Result<Self, PartitionError> {
        if groups.len() != labels.len() {
            return Err(PartitionError::LabelMismatch);
        }
        let mut seen = vec![false; n];
        let mut covered = 0usize;
        for g in &groups {
            for &i in g {
                if i >= n {
                    return Err(PartitionError::OutOfRange(i, n));
                }
                if seen[i] {
                    return Err(PartitionError::Overlap(i));
                }
                seen[i] = true;
                covered += 1;
            }
        }
        if covered != n {
            return Err(PartitionError::Incomplete {
                expected: n,
                covered,
            });
        }
        Ok(GroupPartition { groups, labels, n })
    }

    /// Two contiguous blocks [0, split) and [split, n).
    pub fn two_blocks(n: usize, split: usize, first: &str, second: &str) -> Self {
        GroupPartition::new(
            n,
            vec![(0..split).collect(), (split..n).collect()],
            vec![first.to_string(), second.to_string()],
        )
        .expect("two contiguous blocks form a valid partition")
    }

    /// Single group covering everything.
    pub fn whole(n: usize, label: &str) -> Self {
        GroupPartition::new(n, vec![(0..n).collect()], vec![label.to_string()])
            .expect("single block is a valid partition")
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn label(&self, k: usize) -> &str {
        &self.labels[k]
    }

    pub fn indices(&self, k: usize) -> &[usize] {
        &self.groups[k]
    }

    pub fn find(&self, label: &str) -> Result<usize, PartitionError> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| PartitionError::UnknownLabel(label.to_string()))
    }

    /// Gather the entries of `x` belonging to group `k`.
    pub fn gather(&self, k: usize, x: &[f64]) -> Vec<f64> {
        self.groups[k].iter().map(|&i| x[i]).collect()
    }

    /// (start, len) per group when every group is a contiguous ascending range.
    pub fn contiguous_ranges(&self) -> Option<Vec<(usize, usize)>> {
        let mut out = Vec::with_capacity(self.groups.len());
        for g in &self.groups {
            if g.is_empty() {
                out.push((0, 0));
                continue;
            }
            let start = g[0];
            for (off, &i) in g.iter().enumerate() {
                if i != start + off {
                    return None;
                }
            }
            out.push((start, g.len()));
        }
        Some(out)
    }
}
