//! Experiment configuration. Parsing is strict: unknown keys anywhere in
//! the file are rejected with the parser's line and column.

use crate::CliError;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Dist,
    Rmt,
    Divergence,
    Spike,
    Monitor,
    Trace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Csv,
    #[default]
    Json,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// Root seed; every stochastic experiment requires one.
    pub seed: u64,
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default)]
    pub dist: Option<DistConfig>,
    #[serde(default)]
    pub rmt: Option<RmtConfig>,
    #[serde(default)]
    pub divergence: Option<DivergenceConfig>,
    #[serde(default)]
    pub spike: Option<SpikeConfig>,
    #[serde(default)]
    pub monitor: Option<MonitorBlock>,
    #[serde(default)]
    pub trace: Option<TraceConfig>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct AdamBlock {
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    /// Zero selects the zero-guard division policy.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub renormalized: bool,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.95
}
fn default_epsilon() -> f64 {
    1e-8
}

impl Default for AdamBlock {
    fn default() -> Self {
        AdamBlock {
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            renormalized: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ModelBlock {
    pub model: String,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub value: Option<f64>,
    #[serde(default = "default_batch")]
    pub batch_size: u64,
}

fn default_batch() -> u64 {
    1
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct DistConfig {
    #[serde(flatten)]
    pub model: ModelBlock,
    pub n: usize,
    pub steps: u64,
    /// "update" or "ratio".
    #[serde(default = "default_target")]
    pub target: String,
    #[serde(default)]
    pub adam: AdamBlock,
    #[serde(default = "default_n_boot")]
    pub n_boot: u32,
    #[serde(default = "default_delta_spike")]
    pub delta_spike: f64,
    #[serde(default = "default_f_spike")]
    pub f_spike: f64,
    #[serde(default = "default_p_bimodal")]
    pub p_bimodal: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_target() -> String {
    "update".into()
}
fn default_n_boot() -> u32 {
    100
}
fn default_delta_spike() -> f64 {
    1e-3
}
fn default_f_spike() -> f64 {
    0.5
}
fn default_p_bimodal() -> f64 {
    0.01
}
fn default_bins() -> usize {
    101
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RmtConfig {
    /// "semicircle" or "scaling".
    pub mode: String,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub trials: Option<usize>,
    #[serde(default)]
    pub n_list: Option<Vec<usize>>,
    #[serde(default)]
    pub entry_std: Option<f64>,
    /// "gaussian" or "rademacher".
    #[serde(default = "default_ensemble")]
    pub ensemble: String,
}

fn default_ensemble() -> String {
    "gaussian".into()
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct DivergenceConfig {
    /// "eta-scaling" or "hessian-proxy".
    pub mode: String,
    #[serde(default)]
    pub n_list: Option<Vec<usize>>,
    #[serde(default)]
    pub trials: Option<usize>,
    /// "wigner-squared" or "identity".
    #[serde(default = "default_hessian")]
    pub hessian: String,
    #[serde(default)]
    pub adam: AdamBlock,
    #[serde(default)]
    pub diagonal: Option<Vec<f64>>,
    #[serde(default)]
    pub sigma: Option<f64>,
    #[serde(default)]
    pub samples: Option<u64>,
}

fn default_hessian() -> String {
    "wigner-squared".into()
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct SpikeConfig {
    #[serde(default)]
    pub healthy: bool,
    #[serde(default)]
    pub steps: Option<u64>,
    #[serde(default)]
    pub early_size: Option<usize>,
    #[serde(default)]
    pub rest_size: Option<usize>,
    /// None disables the rare event entirely.
    #[serde(default)]
    pub event_step: Option<u64>,
    #[serde(default)]
    pub event_multiplier: Option<f64>,
    #[serde(default)]
    pub suppress_event: bool,
    /// Steps whose update/ratio histograms are exported.
    #[serde(default)]
    pub histogram_steps: Vec<u64>,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct MonitorBlock {
    #[serde(default)]
    pub spike: Option<SpikeConfig>,
    /// "none", "zero-guard", "reinit-state", "retune-epsilon", "reduce-betas".
    #[serde(default = "default_mitigation")]
    pub mitigation: String,
    #[serde(default)]
    pub new_epsilon: Option<f64>,
    #[serde(default)]
    pub new_betas: Option<(f64, f64)>,
    #[serde(default = "default_check_period")]
    pub check_period: u64,
    #[serde(default = "default_vanish_window")]
    pub vanish_window: u64,
}

fn default_mitigation() -> String {
    "none".into()
}
fn default_check_period() -> u64 {
    10
}
fn default_vanish_window() -> u64 {
    20
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TraceConfig {
    #[serde(flatten)]
    pub model: ModelBlock,
    pub n: usize,
    pub steps: u64,
    pub eta: f64,
    #[serde(default)]
    pub adam: AdamBlock,
    /// Hessian is a squared Wigner draw scaled by 1/n; this sets the
    /// entry standard deviation of the square root.
    #[serde(default = "default_entry_std")]
    pub entry_std: f64,
    #[serde(default)]
    pub exact_gradients: bool,
    #[serde(default)]
    pub noise: Option<String>,
    #[serde(default = "default_theta_scale")]
    pub theta_scale: f64,
}

fn default_entry_std() -> f64 {
    1.0
}
fn default_theta_scale() -> f64 {
    1.0
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        Self::from_str_strict(&text)
    }

    pub fn from_str_strict(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// The section matching `kind` must be present.
    pub fn validate(&self) -> Result<(), CliError> {
        let ok = match self.kind {
            ExperimentKind::Dist => self.dist.is_some(),
            ExperimentKind::Rmt => self.rmt.is_some(),
            ExperimentKind::Divergence => self.divergence.is_some(),
            ExperimentKind::Spike => self.spike.is_some(),
            ExperimentKind::Monitor => self.monitor.is_some(),
            ExperimentKind::Trace => self.trace.is_some(),
        };
        if ok {
            Ok(())
        } else {
            Err(CliError::Config(format!(
                "config kind {:?} requires its matching section",
                self.kind
            )))
        }
    }
}

impl AdamBlock {
    pub fn to_params(&self) -> Result<adamlab_core::optimizer::AdamParams, CliError> {
        use adamlab_core::optimizer::{AdamParams, AdamVariant, EpsilonPolicy, EtaSchedule};
        let policy = if self.epsilon == 0.0 {
            EpsilonPolicy::ZeroGuard
        } else {
            EpsilonPolicy::Standard
        };
        let params = AdamParams::new(
            self.beta1,
            self.beta2,
            self.epsilon,
            EtaSchedule::Constant(1e-4),
            policy,
        )
        .map_err(|e| CliError::Config(e.to_string()))?;
        Ok(if self.renormalized {
            params.with_variant(AdamVariant::Renormalized)
        } else {
            params.with_variant(AdamVariant::Classic)
        })
    }
}

impl ModelBlock {
    pub fn to_variant(&self) -> Result<adamlab_core::gradient::Variant, CliError> {
        use adamlab_core::gradient::Variant;
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| CliError::Config(format!("model {:?} requires `{name}`", self.model)))
        };
        Ok(match self.model.as_str() {
            "iid-sign" => Variant::IidSign,
            "correlated-sign" => Variant::CorrelatedSign {
                rho: need(self.rho, "rho")?,
            },
            "iid-gaussian" => Variant::IidGaussian {
                sigma: need(self.sigma, "sigma")?,
            },
            "correlated-gaussian" => Variant::CorrelatedGaussian {
                rho: need(self.rho, "rho")?,
                sigma: need(self.sigma, "sigma")?,
            },
            "constant" => Variant::Constant {
                value: need(self.value, "value")?,
            },
            other => {
                return Err(CliError::Config(format!(
                    "unknown gradient model {other:?}"
                )))
            }
        })
    }
}
