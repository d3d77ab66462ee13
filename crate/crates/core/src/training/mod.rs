//! Model variants, the episodic multi-task objective and the training loop.

mod engine;
mod model;
mod objective;
mod schedule;

pub use engine::{train, History, HistoryRecord, Trained};
pub use model::{Model, Prediction};
pub use objective::{
    binary_cross_entropy, build_objective, meta_source_loss, meta_source_loss_probs,
    meta_target_loss, meta_target_loss_probs, total_loss, AdvItem, BatchItem, EpisodeVars,
    BCE_EPS,
};
pub use schedule::{schedule, Episode};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adversarial::AdversarialConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::evaluation::Metric;

/// The model families compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// One shared encoder with a classification head.
    Basic,
    /// `Basic` plus a domain-adversarial branch at the given layer.
    Adv(usize),
    /// Experts trained on their own domain only; predictions averaged.
    IndependentAvg,
    /// As `IndependentAvg` with mixing weights searched on validation data.
    IndependentFt,
    /// Episodic training with an averaging mixture.
    MoeAvg,
    /// Episodic training with the attention mixture.
    MoeAtt,
    /// `MoeAtt` with an adversarial branch on the shared model.
    MoeAttAdv(usize),
    /// Independent experts mixed by a frozen domain classifier.
    MoeDc,
}

pub const VARIANT_NAMES: &str =
    "Basic, Adv-X, Independent-Avg, Independent-Ft, MoE-Avg, MoE-Att, MoE-Att-Adv-X, MoE-DC";

impl Variant {
    /// Whether the model holds per-domain experts.
    pub fn has_experts(&self) -> bool {
        !matches!(self, Variant::Basic | Variant::Adv(_))
    }

    /// Whether training uses the meta-source/meta-target objective.
    pub fn is_episodic(&self) -> bool {
        matches!(self, Variant::MoeAvg | Variant::MoeAtt | Variant::MoeAttAdv(_))
    }

    pub fn uses_attention(&self) -> bool {
        matches!(self, Variant::MoeAtt | Variant::MoeAttAdv(_))
    }

    pub fn adversary_layer(&self) -> Option<usize> {
        match self {
            Variant::Adv(x) | Variant::MoeAttAdv(x) => Some(*x),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Basic => f.write_str("Basic"),
            Variant::Adv(x) => write!(f, "Adv-{x}"),
            Variant::IndependentAvg => f.write_str("Independent-Avg"),
            Variant::IndependentFt => f.write_str("Independent-Ft"),
            Variant::MoeAvg => f.write_str("MoE-Avg"),
            Variant::MoeAtt => f.write_str("MoE-Att"),
            Variant::MoeAttAdv(x) => write!(f, "MoE-Att-Adv-{x}"),
            Variant::MoeDc => f.write_str("MoE-DC"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let layer = |rest: &str| -> Result<usize> {
            rest.parse::<usize>().map_err(|_| {
                Error::Config(format!("bad adversarial layer in variant {s:?}"))
            })
        };
        match s {
            "Basic" => Ok(Variant::Basic),
            "Independent-Avg" => Ok(Variant::IndependentAvg),
            "Independent-Ft" | "Independent-FT" => Ok(Variant::IndependentFt),
            "MoE-Avg" => Ok(Variant::MoeAvg),
            "MoE-Att" => Ok(Variant::MoeAtt),
            "MoE-DC" => Ok(Variant::MoeDc),
            _ => {
                if let Some(rest) = s.strip_prefix("MoE-Att-Adv-") {
                    Ok(Variant::MoeAttAdv(layer(rest)?))
                } else if let Some(rest) = s.strip_prefix("Adv-") {
                    Ok(Variant::Adv(layer(rest)?))
                } else {
                    Err(Error::Config(format!(
                        "unknown variant {s:?}; valid names: {VARIANT_NAMES}"
                    )))
                }
            }
        }
    }
}

impl Serialize for Variant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn d_lr() -> f64 {
    3e-5
}
fn d_wd() -> f64 {
    0.01
}
fn d_epochs() -> usize {
    5
}
fn d_warmup() -> usize {
    200
}
fn d_batch() -> usize {
    8
}
fn d_accum() -> usize {
    1
}
fn d_lambda() -> f64 {
    0.5
}
fn d_gamma() -> f64 {
    0.003
}
fn d_val() -> f64 {
    0.1
}
fn d_log() -> usize {
    50
}

/// Optimisation and objective settings. Defaults are the published
/// full-scale values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    #[serde(default = "d_epochs")]
    pub epochs: usize,
    #[serde(default = "d_warmup")]
    pub warmup_steps: usize,
    #[serde(default = "d_batch")]
    pub batch_size: usize,
    #[serde(default = "d_accum")]
    pub grad_accumulation: usize,
    /// Weight of the meta-source loss against the meta-target loss.
    #[serde(default = "d_lambda")]
    pub lambda: f64,
    /// Weight of the domain-adversarial loss.
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub seed: u64,
    /// Fraction of each source domain held back for model selection.
    #[serde(default = "d_val")]
    pub val_fraction: f64,
    #[serde(default)]
    pub metric: Metric,
    /// Write one episode record to the history every this many episodes (0: never).
    #[serde(default = "d_log")]
    pub log_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: d_lr(),
            weight_decay: d_wd(),
            epochs: d_epochs(),
            warmup_steps: d_warmup(),
            batch_size: d_batch(),
            grad_accumulation: d_accum(),
            lambda: d_lambda(),
            gamma: d_gamma(),
            seed: 0,
            val_fraction: d_val(),
            metric: Metric::Accuracy,
            log_interval: d_log(),
        }
    }
}

impl TrainConfig {
    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight_decay must be non-negative".into()));
        }
        if self.batch_size == 0 || self.grad_accumulation == 0 {
            return Err(Error::Config("batch_size and grad_accumulation must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma {} must be >= 0", self.gamma)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

fn d_true() -> bool {
    true
}
fn d_trials() -> usize {
    100
}

/// Mixture settings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixingConfig {
    /// Divide attention logits by `sqrt(d)`.
    #[serde(default)]
    pub attention_scaled: bool,
    /// Include the shared model among the meta-source mixture members.
    #[serde(default = "d_true")]
    pub meta_source_include_global: bool,
    /// Random-search trials for fine-tuned averaging.
    #[serde(default = "d_trials")]
    pub ft_trials: usize,
}

impl Default for MixingConfig {
    fn default() -> Self {
        Self {
            attention_scaled: false,
            meta_source_include_global: true,
            ft_trials: d_trials(),
        }
    }
}

/// Everything `train` needs besides the data.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub adversarial: AdversarialConfig,
    #[serde(default)]
    pub mixing: MixingConfig,
}

impl Settings {
    /// Checks the settings against a variant before any work starts.
    pub fn validate_for(&self, variant: Variant) -> Result<()> {
        self.encoder.validate()?;
        self.train.validate()?;
        if let Some(x) = variant.adversary_layer() {
            self.encoder.check_layer(x).map_err(|_| {
                Error::Config(format!(
                    "variant {variant} attaches at layer {x} but the encoder has {} layers (valid: 1..={})",
                    self.encoder.num_layers, self.encoder.num_layers
                ))
            })?;
        }
        if variant == Variant::IndependentFt && self.mixing.ft_trials == 0 {
            return Err(Error::Config("ft_trials must be >= 1".into()));
        }
        Ok(())
    }
}
