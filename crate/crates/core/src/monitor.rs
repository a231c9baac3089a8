//! Early-warning instability detector and mitigation engine.
//!
//! The monitor watches per-group gradient norms relative to epsilon and
//! the modality of the ratio m/sqrt(v). A group whose gradients stay
//! below epsilon for a sustained window while its ratio distribution is
//! bimodal carries the pre-spike optimizer-state signature; only that
//! conjunction raises the actionable alarm, since either signal alone
//! appears in benign runs.

use crate::optimizer::{AdamParams, AdamState, EpsilonPolicy, GroupPartition};
use crate::stats::{CalibratedClassifier, ModalityClass, ModalityConfig};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MonitorError {
    #[error("snapshot dimension {got} does not match partition dimension {expected}")]
    PartitionMismatch { expected: usize, got: usize },
    #[error("mitigation requires an impending-spike alarm, got {0:?}")]
    WrongTrigger(AlarmKind),
    #[error(transparent)]
    Dip(#[from] crate::dip::DipError),
    #[error(transparent)]
    Adam(#[from] crate::optimizer::AdamError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AlarmKind {
    VanishingGradients,
    BimodalRatio,
    ImpendingSpike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmEvent {
    pub step: u64,
    pub group: String,
    pub kind: AlarmKind,
    /// Dip p-value of the group ratio at the triggering check, when known.
    pub dip_p: Option<f64>,
    pub g_norm_inf: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Mitigation {
    None,
    /// Switch to epsilon = 0 with zero-guarded division.
    ZeroGuard,
    /// Zero the flagged group's accumulators and restart its step count.
    ReinitState,
    RetuneEpsilon(f64),
    ReduceBetas(f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorConfig {
    /// Ratio bimodality threshold on the dip-test p-value.
    pub dip_threshold_p: f64,
    /// Steps the gradient norm must stay below the vanish level.
    pub vanish_window: u64,
    /// Vanish level is epsilon times this factor.
    pub vanish_factor: f64,
    pub mitigation: Mitigation,
    /// Modality checks run every this many steps.
    pub check_period: u64,
    /// Calibration draws for the dip null.
    pub n_boot: u32,
    pub seed: u64,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig {
            dip_threshold_p: 0.01,
            vanish_window: 20,
            vanish_factor: 1.0,
            mitigation: Mitigation::None,
            check_period: 10,
            n_boot: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationRecord {
    pub step: u64,
    pub group: String,
    pub action: Mitigation,
    pub applied: bool,
    pub note: String,
}

/// Rolling per-group detector state.
pub struct Monitor {
    pub config: MonitorConfig,
    vanish_run: Vec<u64>,
    vanish_announced: Vec<bool>,
    bimodal: Vec<bool>,
    classifiers: HashMap<usize, CalibratedClassifier>,
}

impl Monitor {
    pub fn new(config: MonitorConfig) -> Self {
        Monitor {
            config,
            vanish_run: Vec::new(),
            vanish_announced: Vec::new(),
            bimodal: Vec::new(),
            classifiers: HashMap::new(),
        }
    }

    fn classifier(&mut self, n: usize) -> Result<&CalibratedClassifier, MonitorError> {
        if !self.classifiers.contains_key(&n) {
            let cfg = ModalityConfig {
                p_bimodal: self.config.dip_threshold_p,
                n_boot: self.config.n_boot,
                seed: self.config.seed ^ n as u64,
                ..ModalityConfig::default()
            };
            self.classifiers.insert(n, CalibratedClassifier::new(n, cfg)?);
        }
        Ok(&self.classifiers[&n])
    }

    /// Feed one step's gradient and optimizer state; returns raised alarms.
    ///
    /// Vanishing runs are tracked every call; modality checks run every
    /// `check_period` steps. The impending-spike alarm is level-triggered
    /// on checks while both conditions hold, so a mitigation that clears
    /// the state re-arms naturally.
    pub fn observe(
        &mut self,
        step: u64,
        g: &[f64],
        state: &AdamState,
        params: &AdamParams,
        partition: &GroupPartition,
    ) -> Result<Vec<AlarmEvent>, MonitorError> {
        if g.len() != partition.dim() || state.dim() != partition.dim() {
            return Err(MonitorError::PartitionMismatch {
                expected: partition.dim(),
                got: g.len(),
            });
        }
        let k = partition.len();
        if self.vanish_run.len() != k {
            self.vanish_run = vec![0; k];
            self.vanish_announced = vec![false; k];
            self.bimodal = vec![false; k];
        }
        let vanish_level = params.epsilon * self.config.vanish_factor;
        let mut alarms = Vec::new();

        let mut norms_inf = vec![0.0f64; k];
        for gi in 0..k {
            let mut ninf = 0.0f64;
            for &i in partition.indices(gi) {
                ninf = ninf.max(g[i].abs());
            }
            norms_inf[gi] = ninf;
            if vanish_level > 0.0 && ninf < vanish_level {
                self.vanish_run[gi] += 1;
            } else {
                self.vanish_run[gi] = 0;
                self.vanish_announced[gi] = false;
            }
            if self.vanish_run[gi] == self.config.vanish_window && !self.vanish_announced[gi] {
                self.vanish_announced[gi] = true;
                alarms.push(AlarmEvent {
                    step,
                    group: partition.label(gi).to_string(),
                    kind: AlarmKind::VanishingGradients,
                    dip_p: None,
                    g_norm_inf: ninf,
                });
            }
        }

        if step % self.config.check_period == 0 && state.t >= 1 {
            let ratio = state.ratio()?;
            for gi in 0..k {
                let sample = partition.gather(gi, &ratio.values);
                if sample.len() < 100 {
                    continue;
                }
                let report = self.classifier(sample.len())?.classify(&sample)?;
                let was = self.bimodal[gi];
                self.bimodal[gi] = report.class == ModalityClass::Bimodal;
                if self.bimodal[gi] && !was {
                    alarms.push(AlarmEvent {
                        step,
                        group: partition.label(gi).to_string(),
                        kind: AlarmKind::BimodalRatio,
                        dip_p: report.dip.p_value,
                        g_norm_inf: norms_inf[gi],
                    });
                }
                if self.bimodal[gi] && self.vanish_run[gi] >= self.config.vanish_window {
                    alarms.push(AlarmEvent {
                        step,
                        group: partition.label(gi).to_string(),
                        kind: AlarmKind::ImpendingSpike,
                        dip_p: report.dip.p_value,
                        g_norm_inf: norms_inf[gi],
                    });
                }
            }
        }
        Ok(alarms)
    }
}

/// Apply the configured mitigation in response to an impending-spike alarm.
/// Group-scoped actions touch only the flagged group's coordinates.
pub fn apply_mitigation(
    params: &mut AdamParams,
    state: &mut AdamState,
    partition: &GroupPartition,
    mitigation: Mitigation,
    trigger: &AlarmEvent,
) -> Result<MitigationRecord, MonitorError> {
    if trigger.kind != AlarmKind::ImpendingSpike {
        return Err(MonitorError::WrongTrigger(trigger.kind));
    }
    let record = |applied: bool, note: &str| MitigationRecord {
        step: trigger.step,
        group: trigger.group.clone(),
        action: mitigation,
        applied,
        note: note.to_string(),
    };
    match mitigation {
        Mitigation::None => Ok(record(false, "no mitigation configured")),
        Mitigation::ReinitState => {
            let gi = partition
                .find(&trigger.group)
                .map_err(|_| MonitorError::PartitionMismatch {
                    expected: partition.dim(),
                    got: state.dim(),
                })?;
            state.reinitialize(partition.indices(gi));
            Ok(record(true, "zeroed group accumulators and step count"))
        }
        Mitigation::ZeroGuard => {
            if params.policy == EpsilonPolicy::ZeroGuard {
                Ok(record(false, "zero-guard already active"))
            } else {
                params.epsilon = 0.0;
                params.policy = EpsilonPolicy::ZeroGuard;
                Ok(record(true, "switched to zero-guarded division"))
            }
        }
        Mitigation::RetuneEpsilon(eps) => {
            if !(eps > 0.0) {
                Ok(record(false, "requested epsilon is not positive"))
            } else if eps >= params.epsilon && params.epsilon > 0.0 {
                Ok(record(
                    false,
                    "requested epsilon does not lower the current value",
                ))
            } else {
                params.epsilon = eps;
                params.policy = EpsilonPolicy::Standard;
                Ok(record(true, "lowered epsilon"))
            }
        }
        Mitigation::ReduceBetas(b1, b2) => {
            if !(0.0 < b1 && b1 < params.beta1 && 0.0 < b2 && b2 < params.beta2) {
                Ok(record(
                    false,
                    "requested betas do not reduce the current ones",
                ))
            } else {
                params.beta1 = b1;
                params.beta2 = b2;
                Ok(record(true, "reduced averaging constants"))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradient::{GradientModel, Variant};
    use crate::rng::CounterRng;

    fn params() -> AdamParams {
        AdamParams::reference()
    }

    #[test]
    fn healthy_run_raises_no_alarms() {
        let n = 400;
        let partition = GroupPartition::two_blocks(n, 200, "early", "rest");
        let model = GradientModel::new(Variant::IidSign, n, 5).unwrap();
        let p = params();
        let mut state = AdamState::new(n);
        let mut mon = Monitor::new(MonitorConfig::default());
        let mut total = 0;
        for t in 1..=500u64 {
            let g = model.sample(t).unwrap();
            state.step(&g, &p).unwrap();
            total += mon.observe(t, &g, &state, &p, &partition).unwrap().len();
        }
        assert_eq!(total, 0);
    }

    #[test]
    fn vanishing_without_bimodality_is_partial_alarm() {
        // tiny uncorrelated gradients: updates spike at zero but the ratio
        // stays unimodal, so only the vanishing alarm fires
        let n = 300;
        let partition = GroupPartition::whole(n, "all");
        let p = params();
        let mut state = AdamState::new(n);
        let mut mon = Monitor::new(MonitorConfig::default());
        let rng = CounterRng::new(8);
        let mut kinds = Vec::new();
        for t in 1..=120u64 {
            let g: Vec<f64> = (0..n as u64).map(|i| 1e-12 * rng.sign(&[i, t])).collect();
            state.step(&g, &p).unwrap();
            for a in mon.observe(t, &g, &state, &p, &partition).unwrap() {
                kinds.push(a.kind);
            }
        }
        assert!(kinds.contains(&AlarmKind::VanishingGradients));
        assert!(!kinds.contains(&AlarmKind::ImpendingSpike));
        assert!(!kinds.contains(&AlarmKind::BimodalRatio));
    }

    #[test]
    fn sustained_vanish_plus_bimodal_ratio_raises_impending_spike() {
        // tiny but heavily time-correlated gradients: the ratio goes
        // bimodal while norms sit far below epsilon
        let n = 300;
        let partition = GroupPartition::whole(n, "all");
        let p = params();
        let mut state = AdamState::new(n);
        let mut mon = Monitor::new(MonitorConfig::default());
        let frozen = CounterRng::new(3);
        let fresh = CounterRng::new(4);
        let mut impending = 0;
        let mut first_at = None;
        for t in 1..=200u64 {
            let g: Vec<f64> = (0..n as u64)
                .map(|i| 1e-12 * (4.0 * frozen.sign(&[i]) + fresh.sign(&[i, t])))
                .collect();
            state.step(&g, &p).unwrap();
            for a in mon.observe(t, &g, &state, &p, &partition).unwrap() {
                if a.kind == AlarmKind::ImpendingSpike {
                    impending += 1;
                    first_at.get_or_insert(a.step);
                }
            }
        }
        assert!(impending >= 2, "level-triggered alarm should refire");
        assert!(first_at.unwrap() <= 60, "first alarm at {:?}", first_at);
    }

    #[test]
    fn reinit_is_group_local() {
        let n = 40;
        let partition = GroupPartition::two_blocks(n, 10, "early", "rest");
        let mut p = params();
        let mut state = AdamState::new(n);
        let rng = CounterRng::new(1);
        for t in 1..=30u64 {
            let g: Vec<f64> = (0..n as u64).map(|i| rng.normal(&[i, t])).collect();
            state.step(&g, &p).unwrap();
        }
        let before = state.clone();
        let trigger = AlarmEvent {
            step: 30,
            group: "early".into(),
            kind: AlarmKind::ImpendingSpike,
            dip_p: Some(0.0),
            g_norm_inf: 0.0,
        };
        let rec = apply_mitigation(
            &mut p,
            &mut state,
            &partition,
            Mitigation::ReinitState,
            &trigger,
        )
        .unwrap();
        assert!(rec.applied);
        for i in 0..10 {
            assert_eq!(state.m[i], 0.0);
            assert_eq!(state.v[i], 0.0);
        }
        for i in 10..n {
            assert_eq!(state.m[i].to_bits(), before.m[i].to_bits());
            assert_eq!(state.v[i].to_bits(), before.v[i].to_bits());
        }
    }

    #[test]
    fn incompatible_mitigations_are_noop_warnings() {
        let partition = GroupPartition::whole(4, "all");
        let mut p = params().zero_guard();
        let mut state = AdamState::new(4);
        let trigger = AlarmEvent {
            step: 1,
            group: "all".into(),
            kind: AlarmKind::ImpendingSpike,
            dip_p: None,
            g_norm_inf: 0.0,
        };
        let rec = apply_mitigation(
            &mut p,
            &mut state,
            &partition,
            Mitigation::ZeroGuard,
            &trigger,
        )
        .unwrap();
        assert!(!rec.applied);

        let mut p2 = params();
        let rec = apply_mitigation(
            &mut p2,
            &mut state,
            &partition,
            Mitigation::RetuneEpsilon(1.0),
            &trigger,
        )
        .unwrap();
        assert!(!rec.applied);
        let rec = apply_mitigation(
            &mut p2,
            &mut state,
            &partition,
            Mitigation::ReduceBetas(0.95, 0.99),
            &trigger,
        )
        .unwrap();
        assert!(!rec.applied);

        let wrong = AlarmEvent {
            kind: AlarmKind::BimodalRatio,
            ..trigger
        };
        assert!(matches!(
            apply_mitigation(
                &mut p2,
                &mut state,
                &partition,
                Mitigation::ReinitState,
                &wrong
            ),
            Err(MonitorError::WrongTrigger(AlarmKind::BimodalRatio))
        ));
    }

    #[test]
    fn observe_is_deterministic() {
        let n = 200;
        let partition = GroupPartition::whole(n, "all");
        let p = params();
        let run = || {
            let mut state = AdamState::new(n);
            let mut mon = Monitor::new(MonitorConfig::default());
            let frozen = CounterRng::new(3);
            let fresh = CounterRng::new(4);
            let mut out = Vec::new();
            for t in 1..=80u64 {
                let g: Vec<f64> = (0..n as u64)
                    .map(|i| 1e-11 * (2.0 * frozen.sign(&[i]) + fresh.sign(&[i, t])))
                    .collect();
                state.step(&g, &p).unwrap();
                out.extend(mon.observe(t, &g, &state, &p, &partition).unwrap());
            }
            out
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn partition_mismatch_is_hard_error() {
        let partition = GroupPartition::whole(8, "all");
        let p = params();
        let state = AdamState::new(8);
        let mut mon = Monitor::new(MonitorConfig::default());
        let g = vec![0.0; 7];
        assert!(matches!(
            mon.observe(1, &g, &state, &p, &partition),
            Err(MonitorError::PartitionMismatch {
                expected: 8,
                got: 7
            })
        ));
    }
}
