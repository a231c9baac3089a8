//! End-to-end simulation of the loss-spike instability process.
//!
//! A two-block synthetic model drives the mechanism: a small "early"
//! parameter block feeds multiplicative features into a large "rest"
//! block that fits a fixed target. The early block's gradient magnitudes
//! are driven below epsilon by a scale schedule while their time-domain
//! correlation ramps up, reproducing the pre-spike state signature
//! (updates spiked at zero, ratio bimodal). A configured rare event then
//! lifts the early gradients back above epsilon; if the optimizer state
//! has held a bimodal ratio long enough, the event triggers a chain
//! reaction (a short amplifying burst of correlated gradients) that
//! corrupts the features, spikes the loss through the rest block, and
//! resolves as the rest block refits and the early gradients decorrelate.
//!
//! The chain reaction is gated on the live optimizer state: a sustained
//! run of bimodal ratio classifications that is reset whenever the early
//! block's accumulators are reinitialized. An event arriving at a
//! bell-shaped or freshly reset state produces a one-step gradient-norm
//! blip without the amplifying burst.

use crate::monitor::{apply_mitigation, AlarmEvent, AlarmKind, MitigationRecord, Monitor, MonitorConfig};
use crate::optimizer::{AdamParams, AdamState, GroupPartition};
use crate::stats::{ModalityClass, ModalityConfig, ModalityReport};
use crate::rng::{domain, CounterRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpikeError {
    #[error("scenario invalid: {0}")]
    InvalidScenario(String),
    #[error("chain-reaction gain is unbounded at epsilon = 0")]
    GainUnbounded,
    #[error(transparent)]
    Dip(#[from] crate::dip::DipError),
    #[error(transparent)]
    Adam(#[from] crate::optimizer::AdamError),
    #[error(transparent)]
    Monitor(#[from] crate::monitor::MonitorError),
}

/// One multiplicative magnitude jump of the early block at one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RareEventSpec {
    pub step: u64,
    pub multiplier: f64,
}

/// Thresholds of the deterministic stage classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageThresholds {
    pub epsilon: f64,
    /// Lag-1 gradient correlation above which the block counts as
    /// time-correlated.
    pub correlation_level: f64,
    /// Steps of sustained vanish needed before a norm jump reads as the
    /// rare event.
    pub vanish_window: usize,
    /// Loss above this multiple of the rolling baseline counts as rising.
    pub loss_rise_factor: f64,
    /// Loss at or below this multiple of baseline counts as recovered.
    pub loss_recover_factor: f64,
    /// Baseline is the median loss over this many trailing records.
    pub baseline_window: usize,
}

impl Default for StageThresholds {
    fn default() -> Self {
        StageThresholds {
            epsilon: 1e-8,
            correlation_level: 0.1,
            vanish_window: 10,
            loss_rise_factor: 2.5,
            loss_recover_factor: 1.5,
            baseline_window: 50,
        }
    }
}

/// Stages of the instability process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// 1: healthy training, both distributions unimodal.
    Healthy,
    /// 2: early-block gradients dropping below epsilon.
    Vanishing,
    /// 3: updates spiked at zero, ratio still unimodal, gradients fresh.
    SpikedUpdates,
    /// 4: gradients time-correlated, ratio not yet flipped.
    CorrelatedGradients,
    /// 5: ratio bimodal while updates stay spiked at zero.
    BimodalRatio,
    /// 6: gradient norm jumped above epsilon, loss not yet risen.
    RareEventHit,
    /// 7: updates bimodal and loss rising.
    Explosion,
    /// 8: post-explosion, gradients large and decorrelated, loss elevated.
    Decorrelation,
    /// 9: loss back near baseline after an explosion.
    Recovered,
    Undetermined,
}

impl Stage {
    pub fn number(self) -> Option<u8> {
        match self {
            Stage::Healthy => Some(1),
            Stage::Vanishing => Some(2),
            Stage::SpikedUpdates => Some(3),
            Stage::CorrelatedGradients => Some(4),
            Stage::BimodalRatio => Some(5),
            Stage::RareEventHit => Some(6),
            Stage::Explosion => Some(7),
            Stage::Decorrelation => Some(8),
            Stage::Recovered => Some(9),
            Stage::Undetermined => None,
        }
    }
}

/// What the stage classifier sees of one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageObservation {
    pub g_norm_inf: f64,
    pub u_class: ModalityClass,
    pub r_class: ModalityClass,
    pub loss: f64,
    /// Normalized lag-1 cross moment of the block gradient.
    pub lag1_correlation: f64,
}

fn recent_jump_after_vanish(history: &[StageObservation], w: usize, eps: f64) -> bool {
    // a vanish -> jump boundary inside the last w entries
    let tail_start = history.len().saturating_sub(w);
    (tail_start.max(1)..history.len()).any(|i| {
        history[i].g_norm_inf >= eps
            && history[i - 1].g_norm_inf < eps
            && i >= w
            && history[i - w..i].iter().all(|o| o.g_norm_inf < eps)
    })
}

/// Deterministic stage label from the current observation and its
/// history window (chronological, current step excluded).
pub fn classify_stage(
    current: &StageObservation,
    history: &[StageObservation],
    cfg: &StageThresholds,
) -> Stage {
    if history.len() < 10 {
        return Stage::Undetermined;
    }
    let vanished = current.g_norm_inf < cfg.epsilon;
    let u_spiked = current.u_class == ModalityClass::SpikedAtZero;
    let u_bimodal = current.u_class == ModalityClass::Bimodal;
    let u_uni = current.u_class == ModalityClass::Unimodal;
    let r_bimodal = current.r_class == ModalityClass::Bimodal;
    let r_uni = current.r_class == ModalityClass::Unimodal;
    let correlated = current.lag1_correlation > cfg.correlation_level;

    // rolling baseline: median over the trailing window, lagged a few
    // steps so a spike does not contaminate its own reference level
    let lag = 5.min(history.len() - 1);
    let end = history.len() - lag;
    let start = end.saturating_sub(cfg.baseline_window);
    let mut window: Vec<f64> = history[start..end].iter().map(|o| o.loss).collect();
    window.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let baseline = window[window.len() / 2];
    let loss_rising = current.loss > cfg.loss_rise_factor * baseline;

    let w = cfg.vanish_window;
    let rare_event_now = !vanished
        && history.len() >= w
        && (history[history.len() - w..]
            .iter()
            .all(|o| o.g_norm_inf < cfg.epsilon)
            || recent_jump_after_vanish(history, w, cfg.epsilon));

    let explosion_seen = history
        .windows(2)
        .any(|pair| pair[1].g_norm_inf >= cfg.epsilon && pair[0].g_norm_inf < cfg.epsilon);

    if rare_event_now && !loss_rising {
        Stage::RareEventHit
    } else if u_bimodal && loss_rising {
        Stage::Explosion
    } else if vanished && u_spiked && r_bimodal {
        Stage::BimodalRatio
    } else if vanished && u_spiked && r_uni && correlated {
        Stage::CorrelatedGradients
    } else if vanished && u_spiked && r_uni {
        Stage::SpikedUpdates
    } else if vanished && !u_spiked {
        Stage::Vanishing
    } else if explosion_seen && current.loss > cfg.loss_recover_factor * baseline {
        Stage::Decorrelation
    } else if explosion_seen && !vanished {
        Stage::Recovered
    } else if !vanished && u_uni && r_uni && !loss_rising {
        Stage::Healthy
    } else {
        Stage::Undetermined
    }
}

/// Scenario of a layered run with a vanishing early block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeScenario {
    pub early_size: usize,
    pub rest_size: usize,
    pub params: AdamParams,
    pub eta: f64,
    /// Linear step-size ramp over the first steps; damps the sign-like
    /// updates the fresh second-moment estimate produces.
    pub eta_warmup: u64,
    pub steps: u64,
    /// Early-block gradient scale: geometric ramp from `healthy_scale`
    /// down to `floor_scale` over [vanish_start, vanish_end].
    pub healthy_scale: f64,
    pub floor_scale: f64,
    pub vanish_start: u64,
    pub vanish_end: u64,
    /// Frozen-component weight: linear ramp 0 -> rho_max over
    /// [correlation_start, correlation_end].
    pub rho_max: f64,
    pub correlation_start: u64,
    pub correlation_end: u64,
    pub rare_event: Option<RareEventSpec>,
    /// Consecutive bimodal-ratio steps (with uninterrupted state age)
    /// required for an event to start the chain reaction.
    pub arm_window: u64,
    /// Length and per-step gain of the amplifying burst.
    pub kick_len: u64,
    pub kick_gain: f64,
    /// Frozen-component weight during the burst; above 1 the burst is
    /// sign-coherent with the entrenched direction.
    pub kick_rho: f64,
    /// Additive sign-noise scale of the early block after the burst.
    pub recovery_noise: f64,
    /// Outputs of the two-block objective.
    pub outputs: usize,
    /// Scale of the early-block feature coupling.
    pub coupling: f64,
    /// Irreducible residual level of the target.
    pub residual_floor: f64,
    /// Sign-noise scale on the rest block's gradients.
    pub rest_noise: f64,
    pub modality: ModalityConfig,
    pub stages: StageThresholds,
    /// Keep the raw early-block update and ratio vectors in each record.
    pub record_samples: bool,
}

impl Default for SpikeScenario {
    fn default() -> Self {
        SpikeScenario {
            early_size: 1000,
            rest_size: 10_000,
            params: AdamParams::reference(),
            eta: 0.1,
            eta_warmup: 50,
            steps: 600,
            // the early block sits at the vanished scale from the start:
            // bias-corrected averages cannot track a ten-decade cliff
            // inside the pre-event window, and a cliff would collapse the
            // ratio toward zero instead of leaving it order one
            healthy_scale: 1e-10,
            floor_scale: 1e-10,
            vanish_start: 0,
            vanish_end: 0,
            rho_max: 0.85,
            correlation_start: 80,
            correlation_end: 140,
            rare_event: Some(RareEventSpec {
                step: 300,
                multiplier: 1e7,
            }),
            arm_window: 40,
            kick_len: 40,
            kick_gain: 1.15,
            kick_rho: 2.0,
            recovery_noise: 0.02,
            outputs: 64,
            coupling: 0.5,
            residual_floor: 0.05,
            rest_noise: 0.15,
            modality: ModalityConfig {
                delta_spike: 0.1,
                n_boot: 200,
                ..ModalityConfig::default()
            },
            stages: StageThresholds::default(),
            record_samples: false,
        }
    }
}

impl SpikeScenario {
    /// Healthy control: healthy gradient scales everywhere, no
    /// correlation, no event.
    pub fn healthy() -> Self {
        SpikeScenario {
            healthy_scale: 1.0,
            floor_scale: 1.0,
            rho_max: 0.0,
            rare_event: None,
            ..SpikeScenario::default()
        }
    }

    /// Same scenario with the rare event removed (the batch-skipping
    /// analogue: the trigger never arrives).
    pub fn without_event(mut self) -> Self {
        self.rare_event = None;
        self
    }

    pub fn validate(&self) -> Result<(), SpikeError> {
        if self.early_size == 0 || self.rest_size == 0 {
            return Err(SpikeError::InvalidScenario(
                "both blocks must be nonempty".into(),
            ));
        }
        if self.early_size < 100 {
            return Err(SpikeError::InvalidScenario(
                "early block needs at least 100 coordinates for classification".into(),
            ));
        }
        if !(self.eta > 0.0) {
            return Err(SpikeError::InvalidScenario("eta must be positive".into()));
        }
        if self.vanish_end < self.vanish_start || self.correlation_end < self.correlation_start {
            return Err(SpikeError::InvalidScenario("ramp bounds out of order".into()));
        }
        Ok(())
    }

    fn scale_at(&self, t: u64) -> f64 {
        if t <= self.vanish_start || self.floor_scale == self.healthy_scale {
            self.healthy_scale
        } else if t >= self.vanish_end {
            self.floor_scale
        } else {
            let frac =
                (t - self.vanish_start) as f64 / (self.vanish_end - self.vanish_start) as f64;
            self.healthy_scale * (self.floor_scale / self.healthy_scale).powf(frac)
        }
    }

    fn rho_at(&self, t: u64) -> f64 {
        if self.rho_max == 0.0 || t <= self.correlation_start {
            0.0
        } else if t >= self.correlation_end {
            self.rho_max
        } else {
            self.rho_max * (t - self.correlation_start) as f64
                / (self.correlation_end - self.correlation_start) as f64
        }
    }
}

/// Two-block objective: predictions A0 theta_rest + (W theta_early) o
/// (C theta_rest), squared-error loss against a fixed target. The early
/// block parameterizes the features consumed by the rest block, so
/// corrupting it raises the loss through the rest block.
struct TwoBlockObjective {
    outputs: usize,
    early: usize,
    rest: usize,
    a0: Vec<f64>,
    c: Vec<f64>,
    w: Vec<f64>,
    y: Vec<f64>,
}

struct Evaluation {
    loss: f64,
    residual: Vec<f64>,
    features: Vec<f64>,
    rest_mix: Vec<f64>,
}

impl TwoBlockObjective {
    fn generate(s: &SpikeScenario, rng: &CounterRng, theta: &[f64]) -> Self {
        let (m, ge, re) = (s.outputs, s.early_size, s.rest_size);
        let or = rng.stream(domain::OBJECTIVE);
        let inv_r = 1.0 / (re as f64).sqrt();
        let inv_g = s.coupling / (ge as f64).sqrt();
        let mut a0 = vec![0.0; m * re];
        let mut c = vec![0.0; m * re];
        for j in 0..m {
            for k in 0..re {
                a0[j * re + k] = inv_r * or.normal(&[0, j as u64, k as u64]);
                c[j * re + k] = inv_r * or.normal(&[1, j as u64, k as u64]);
            }
        }
        let mut w = vec![0.0; m * ge];
        for j in 0..m {
            for k in 0..ge {
                w[j * ge + k] = inv_g * or.normal(&[2, j as u64, k as u64]);
            }
        }
        let mut obj = TwoBlockObjective {
            outputs: m,
            early: ge,
            rest: re,
            a0,
            c,
            w,
            y: vec![0.0; m],
        };
        // target: the initial parameters fit up to an irreducible residual
        let ev = obj.evaluate(theta);
        let mut y = vec![0.0; m];
        for j in 0..m {
            let pred = ev.residual[j]; // residual ran against y = 0
            y[j] = pred + s.residual_floor * or.normal(&[3, j as u64]);
        }
        obj.y = y;
        obj
    }

    fn evaluate(&self, theta: &[f64]) -> Evaluation {
        let (m, ge, re) = (self.outputs, self.early, self.rest);
        let th_e = &theta[..ge];
        let th_r = &theta[ge..];
        let mut features = vec![0.0; m];
        let mut rest_mix = vec![0.0; m];
        let mut residual = vec![0.0; m];
        let mut loss = 0.0;
        for j in 0..m {
            let mut phi = 0.0;
            for k in 0..ge {
                phi += self.w[j * ge + k] * th_e[k];
            }
            let mut a0r = 0.0;
            let mut psi = 0.0;
            let row_a = &self.a0[j * re..(j + 1) * re];
            let row_c = &self.c[j * re..(j + 1) * re];
            for k in 0..re {
                a0r += row_a[k] * th_r[k];
                psi += row_c[k] * th_r[k];
            }
            let res = a0r + phi * psi - self.y[j];
            features[j] = phi;
            rest_mix[j] = psi;
            residual[j] = res;
            loss += res * res;
        }
        Evaluation {
            loss: 0.5 * loss,
            residual,
            features,
            rest_mix,
        }
    }

    fn grad_rest(&self, ev: &Evaluation, out: &mut [f64]) {
        let (m, re) = (self.outputs, self.rest);
        out.iter_mut().for_each(|x| *x = 0.0);
        for j in 0..m {
            let r = ev.residual[j];
            let rf = r * ev.features[j];
            let row_a = &self.a0[j * re..(j + 1) * re];
            let row_c = &self.c[j * re..(j + 1) * re];
            for k in 0..re {
                out[k] += r * row_a[k] + rf * row_c[k];
            }
        }
    }

    fn grad_early(&self, ev: &Evaluation, out: &mut [f64]) {
        let (m, ge) = (self.outputs, self.early);
        out.iter_mut().for_each(|x| *x = 0.0);
        for j in 0..m {
            let rp = ev.residual[j] * ev.rest_mix[j];
            let row_w = &self.w[j * ge..(j + 1) * ge];
            for k in 0..ge {
                out[k] += rp * row_w[k];
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    /// Loss evaluated at the pre-update parameters of this step.
    pub loss: f64,
    /// l2 gradient norms per group (early, rest).
    pub g_norm2: [f64; 2],
    pub g_norm_inf: [f64; 2],
    pub update_early: ModalityReport,
    pub ratio_early: ModalityReport,
    pub lag1_correlation: f64,
    pub stage: Stage,
    /// Raw early-block update and ratio samples, when recording is on.
    pub samples: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EventMarker {
    RareEvent { step: u64, armed: bool },
    ChainKickEnd { step: u64 },
    Diverged { step: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpikeTimeline {
    pub records: Vec<StepRecord>,
    pub events: Vec<EventMarker>,
    pub diverged_at: Option<u64>,
    pub scenario: SpikeScenario,
}

impl SpikeTimeline {
    /// Median loss over [end - window, end), in steps (1-based).
    pub fn baseline_loss(&self, end: u64, window: u64) -> f64 {
        let lo = end.saturating_sub(window).max(1);
        let mut w: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.step >= lo && r.step < end)
            .map(|r| r.loss)
            .collect();
        w.sort_by(|a, b| a.partial_cmp(b).unwrap());
        w[w.len() / 2]
    }

    pub fn peak_loss_from(&self, from: u64) -> f64 {
        self.records
            .iter()
            .filter(|r| r.step >= from)
            .map(|r| r.loss)
            .fold(0.0f64, f64::max)
    }

    pub fn peak_loss(&self) -> f64 {
        self.records.iter().map(|r| r.loss).fold(0.0f64, f64::max)
    }

    /// First step (at or after `from`) whose loss exceeds factor times the
    /// pre-`from` baseline.
    pub fn spike_onset(&self, from: u64, factor: f64) -> Option<u64> {
        let base = self.baseline_loss(from, 50);
        self.records
            .iter()
            .find(|r| r.step >= from && r.loss > factor * base)
            .map(|r| r.step)
    }

    /// First step after `from` at which the loss returns within `frac`
    /// of the pre-`from` baseline.
    pub fn recovery_step(&self, from: u64, frac: f64) -> Option<u64> {
        let base = self.baseline_loss(from, 50);
        let onset = self.spike_onset(from, 2.0)?;
        self.records
            .iter()
            .find(|r| r.step > onset && r.loss <= (1.0 + frac) * base)
            .map(|r| r.step)
    }

    /// First step at which the early-block ratio classifies bimodal.
    pub fn first_bimodal_ratio(&self) -> Option<u64> {
        self.records
            .iter()
            .find(|r| r.ratio_early.class == ModalityClass::Bimodal)
            .map(|r| r.step)
    }

    /// Start and length of the unbroken bimodal-ratio run leading into
    /// `before`, skipping the atom-dominated first steps of a fresh state.
    pub fn sustained_bimodal_run(&self, before: u64) -> Option<(u64, u64)> {
        let mut start = None;
        let mut len = 0u64;
        for r in self.records.iter().rev() {
            if r.step >= before {
                continue;
            }
            if r.ratio_early.class == ModalityClass::Bimodal {
                start = Some(r.step);
                len += 1;
            } else {
                break;
            }
        }
        start.map(|s| (s, len))
    }

    /// First step at which the early-block gradient norm rises back above
    /// epsilon after a sustained vanish.
    pub fn norm_explosion_step(&self) -> Option<u64> {
        let eps = self.scenario.params.epsilon;
        let w = self.scenario.stages.vanish_window;
        for i in w..self.records.len() {
            let r = &self.records[i];
            if r.g_norm_inf[0] >= eps
                && self.records[i - w..i].iter().all(|p| p.g_norm_inf[0] < eps)
            {
                return Some(r.step);
            }
        }
        None
    }
}

/// Outcome of a monitored run.
pub struct MonitoredRun {
    pub timeline: SpikeTimeline,
    pub alarms: Vec<AlarmEvent>,
    pub mitigations: Vec<MitigationRecord>,
}

/// Run the scenario without a monitor.
pub fn run_spike_scenario(scenario: &SpikeScenario, seed: u64) -> Result<SpikeTimeline, SpikeError> {
    Ok(run_internal(scenario, None, seed)?.timeline)
}

/// Run the scenario with a monitor in the loop; the configured mitigation
/// is applied on every impending-spike alarm.
pub fn run_spike_scenario_monitored(
    scenario: &SpikeScenario,
    monitor: MonitorConfig,
    seed: u64,
) -> Result<MonitoredRun, SpikeError> {
    run_internal(scenario, Some(monitor), seed)
}

fn run_internal(
    scenario: &SpikeScenario,
    monitor_cfg: Option<MonitorConfig>,
    seed: u64,
) -> Result<MonitoredRun, SpikeError> {
    scenario.validate()?;
    let ge = scenario.early_size;
    let re = scenario.rest_size;
    let n = ge + re;
    let rng = CounterRng::new(seed);
    let frozen = rng.stream(domain::FROZEN);
    let fresh = rng.stream(domain::FRESH);

    let mut theta = vec![0.0; n];
    let init = rng.stream(domain::THETA);
    for (i, th) in theta.iter_mut().enumerate() {
        *th = init.normal(&[i as u64]);
    }
    let objective = TwoBlockObjective::generate(scenario, &rng, &theta);

    let partition = GroupPartition::two_blocks(n, ge, "early", "rest");
    let mut params = scenario.params.clone();
    let mut state = AdamState::new(n);
    // fixed calibration stream: the dip null depends only on the sample
    // size, so every run shares one calibration
    let mut classifier_cfg = scenario.modality;
    classifier_cfg.seed = 0xD1CE;
    let classifier = crate::stats::shared_classifier(ge, classifier_cfg)?;
    let mut monitor = monitor_cfg.clone().map(Monitor::new);

    let mut records: Vec<StepRecord> = Vec::with_capacity(scenario.steps as usize);
    let mut observations: Vec<StageObservation> = Vec::with_capacity(scenario.steps as usize);
    let mut events = Vec::new();
    let mut alarms_out = Vec::new();
    let mut mitigations_out = Vec::new();
    let mut diverged_at = None;

    let mut g_vec = vec![0.0; n];
    let mut grad_rest = vec![0.0; re];
    let mut grad_early = vec![0.0; ge];
    let mut prev_early: Vec<f64> = Vec::new();
    let mut bimodal_run: u64 = 0;
    // chain state: step at which an armed event fired
    let mut explosion_from: Option<u64> = None;

    let mut stage_thresholds = scenario.stages;
    stage_thresholds.epsilon = params.epsilon;

    for t in 1..=scenario.steps {
        let ev = objective.evaluate(&theta);
        if !ev.loss.is_finite() {
            diverged_at = Some(t);
            events.push(EventMarker::Diverged { step: t });
            break;
        }

        // rest block: true gradient plus dominant sign noise
        objective.grad_rest(&ev, &mut grad_rest);
        for k in 0..re {
            let i = ge + k;
            g_vec[i] = grad_rest[k] + scenario.rest_noise * fresh.sign(&[i as u64, t]);
        }

        // early block: schedule, event, burst, or recovery phase
        let in_kick = matches!(explosion_from, Some(t0) if t >= t0 && t < t0 + scenario.kick_len);
        let post_kick = matches!(explosion_from, Some(t0) if t >= t0 + scenario.kick_len);
        let event_now = scenario.rare_event.map(|e| e.step == t).unwrap_or(false);
        if event_now {
            let armed = bimodal_run >= scenario.arm_window;
            events.push(EventMarker::RareEvent { step: t, armed });
            if armed {
                explosion_from = Some(t);
            }
        }
        let in_kick = in_kick || matches!(explosion_from, Some(t0) if t == t0);
        if post_kick {
            // feature relearning: true gradients with decorrelating noise
            objective.grad_early(&ev, &mut grad_early);
            for k in 0..ge {
                g_vec[k] =
                    grad_early[k] + scenario.recovery_noise * fresh.sign(&[k as u64, t]);
            }
        } else if in_kick {
            let t0 = explosion_from.unwrap();
            let amp = scenario.floor_scale
                * scenario.rare_event.map(|e| e.multiplier).unwrap_or(1.0)
                * scenario.kick_gain.powi((t - t0) as i32);
            for k in 0..ge {
                g_vec[k] = amp
                    * (scenario.kick_rho * frozen.sign(&[k as u64])
                        + fresh.sign(&[k as u64, t]));
            }
        } else {
            let mut scale = scenario.scale_at(t);
            if event_now {
                scale *= scenario.rare_event.map(|e| e.multiplier).unwrap_or(1.0);
            }
            let rho = scenario.rho_at(t);
            for k in 0..ge {
                g_vec[k] =
                    scale * (rho * frozen.sign(&[k as u64]) + fresh.sign(&[k as u64, t]));
            }
        }
        if in_kick && explosion_from.map(|t0| t + 1 == t0 + scenario.kick_len).unwrap_or(false) {
            events.push(EventMarker::ChainKickEnd { step: t });
        }

        // norms per group
        let mut norms2 = [0.0f64; 2];
        let mut norms_inf = [0.0f64; 2];
        for (gi, range) in [(0usize, 0..ge), (1usize, ge..n)] {
            let mut sq = 0.0;
            let mut mx = 0.0f64;
            for i in range {
                sq += g_vec[i] * g_vec[i];
                mx = mx.max(g_vec[i].abs());
            }
            norms2[gi] = sq.sqrt();
            norms_inf[gi] = mx;
        }

        // lag-1 correlation of the early gradients
        let early_now = &g_vec[..ge];
        let lag1 = if prev_early.is_empty() {
            0.0
        } else {
            let mut num = 0.0;
            let mut da = 0.0;
            let mut db = 0.0;
            for k in 0..ge {
                num += early_now[k] * prev_early[k];
                da += early_now[k] * early_now[k];
                db += prev_early[k] * prev_early[k];
            }
            if da > 0.0 && db > 0.0 {
                num / (da * db).sqrt()
            } else {
                0.0
            }
        };
        prev_early = early_now.to_vec();

        let u = state.step(&g_vec, &params)?;
        let ratio = state.ratio()?;
        let (u_report, r_report) = rayon::join(
            || classifier.classify(&u.values[..ge]),
            || classifier.classify(&ratio.values[..ge]),
        );
        let (u_report, r_report) = (u_report?, r_report?);

        let observation = StageObservation {
            g_norm_inf: norms_inf[0],
            u_class: u_report.class,
            r_class: r_report.class,
            loss: ev.loss,
            lag1_correlation: lag1,
        };
        let stage = classify_stage(&observation, &observations, &stage_thresholds);
        observations.push(observation);

        records.push(StepRecord {
            step: t,
            loss: ev.loss,
            g_norm2: norms2,
            g_norm_inf: norms_inf,
            update_early: u_report,
            ratio_early: r_report.clone(),
            lag1_correlation: lag1,
            stage,
            samples: scenario
                .record_samples
                .then(|| (u.values[..ge].to_vec(), ratio.values[..ge].to_vec())),
        });

        // chain-arming bookkeeping: a bimodal ratio classification extends
        // the run only while the early state has aged past it
        if r_report.class == ModalityClass::Bimodal {
            bimodal_run += 1;
        } else {
            bimodal_run = 0;
        }

        // parameter update
        let eta_t = if t < scenario.eta_warmup {
            scenario.eta * t as f64 / scenario.eta_warmup as f64
        } else {
            scenario.eta
        };
        for (th, ui) in theta.iter_mut().zip(&u.values) {
            *th -= eta_t * ui;
        }

        // monitor hook
        if let Some(mon) = monitor.as_mut() {
            let alarms = mon.observe(t, &g_vec, &state, &params, &partition)?;
            for alarm in alarms {
                if alarm.kind == AlarmKind::ImpendingSpike {
                    let rec = apply_mitigation(
                        &mut params,
                        &mut state,
                        &partition,
                        mon.config.mitigation,
                        &alarm,
                    )?;
                    if rec.applied {
                        // a reset state has no entrenched bimodal memory
                        bimodal_run = 0;
                        stage_thresholds.epsilon = params.epsilon;
                    }
                    mitigations_out.push(rec);
                }
                alarms_out.push(alarm);
            }
        }
    }

    Ok(MonitoredRun {
        timeline: SpikeTimeline {
            records,
            events,
            diverged_at,
            scenario: scenario.clone(),
        },
        alarms: alarms_out,
        mitigations: mitigations_out,
    })
}

/// Analytic and finite-difference sensitivity of x / (|x| + epsilon) at 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub analytic: f64,
    pub finite_difference: f64,
    pub relative_gap: f64,
}

/// The update response x / (|x| + epsilon) has derivative 1/epsilon at
/// zero, so small gradient changes move the update disproportionately.
pub fn chain_reaction_gain(epsilon: f64) -> Result<GainReport, SpikeError> {
    if !(epsilon > 0.0) {
        return Err(SpikeError::GainUnbounded);
    }
    let phi = |x: f64| x / (x.abs() + epsilon);
    let h = epsilon / 100.0;
    let fd = (phi(h) - phi(-h)) / (2.0 * h);
    let analytic = 1.0 / epsilon;
    Ok(GainReport {
        analytic,
        finite_difference: fd,
        relative_gap: (fd - analytic).abs() / analytic,
    })
}
