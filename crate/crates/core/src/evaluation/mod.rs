//! Binary-classification metrics and the leave-one-out harness.

mod loo;

pub use loo::{loo_run, render_table, CellResult, LooOptions, LooReport, RunReport, SeedResult};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label predicted for a probability: 1 iff `prob >= 0.5`.
pub fn threshold_predict(prob: f64) -> u8 {
    u8::from(prob >= 0.5)
}

/// Confusion counts with label 1 as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    pub fn from_predictions(predicted: &[u8], gold: &[u8]) -> Self {
        let mut c = Self::default();
        for (&p, &y) in predicted.iter().zip(gold) {
            c.record_label(p, y);
        }
        c
    }

    pub fn record_label(&mut self, predicted: u8, gold: u8) {
        match (predicted, gold) {
            (1, 1) => self.tp += 1,
            (1, _) => self.fp += 1,
            (_, 1) => self.fn_ += 1,
            _ => self.tn += 1,
        }
    }

    pub fn record(&mut self, prob: f64, gold: u8) {
        self.record_label(threshold_predict(prob), gold);
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            tn: self.tn + other.tn,
            fn_: self.fn_ + other.fn_,
        }
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a.add(&b))
    }
}

/// `(tp + tn) / total`; an empty count is an error.
pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    let total = c.total();
    if total == 0 {
        return Err(Error::Evaluation("accuracy of zero examples".into()));
    }
    Ok((c.tp + c.tn) as f64 / total as f64)
}

/// Precision; 0 when nothing was predicted positive.
pub fn precision(c: &ConfusionCounts) -> f64 {
    let d = c.tp + c.fp;
    if d == 0 {
        0.0
    } else {
        c.tp as f64 / d as f64
    }
}

/// Recall; 0 when there are no positives.
pub fn recall(c: &ConfusionCounts) -> f64 {
    let d = c.tp + c.fn_;
    if d == 0 {
        0.0
    } else {
        c.tp as f64 / d as f64
    }
}

/// `2pr / (p + r)`, 0 when `p + r = 0`.
pub fn f1(c: &ConfusionCounts) -> f64 {
    let p = precision(c);
    let r = recall(c);
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Model-selection and reporting metric.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Accuracy,
    F1,
}

impl Metric {
    pub fn score(&self, c: &ConfusionCounts) -> Result<f64> {
        match self {
            Metric::Accuracy => accuracy(c),
            Metric::F1 => Ok(f1(c)),
        }
    }

    /// Column header of the aggregate in a results table.
    pub fn aggregate_name(&self) -> &'static str {
        match self {
            Metric::Accuracy => "macroA",
            Metric::F1 => "μF1",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Accuracy => "accuracy",
            Metric::F1 => "f1",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(Metric::Accuracy),
            "f1" => Ok(Metric::F1),
            other => Err(Error::Config(format!("unknown metric {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&ConfusionCounts::new(3, 1, 2, 4)).unwrap(), 0.5);
        assert_eq!(accuracy(&ConfusionCounts::new(5, 0, 5, 0)).unwrap(), 1.0);
        assert_eq!(accuracy(&ConfusionCounts::new(0, 5, 0, 5)).unwrap(), 0.0);
        assert!(accuracy(&ConfusionCounts::default()).is_err());
    }

    #[test]
    fn f1_examples() {
        let c = ConfusionCounts::new(3, 1, 0, 4);
        assert_eq!(precision(&c), 0.75);
        assert!((recall(&c) - 3.0 / 7.0).abs() < 1e-15);
        assert!((f1(&c) - 18.0 / 33.0).abs() < 1e-15);
        assert_eq!(f1(&ConfusionCounts::new(0, 3, 3, 2)), 0.0);
        assert_eq!(f1(&ConfusionCounts::default()), 0.0);
        assert_eq!(f1(&ConfusionCounts::new(4, 0, 6, 0)), 1.0);
    }

    #[test]
    fn threshold_convention() {
        assert_eq!(threshold_predict(0.7), 1);
        assert_eq!(threshold_predict(0.5), 1);
        assert_eq!(threshold_predict(0.49), 0);
    }

    #[test]
    fn counts_serialise_with_fn_key() {
        let s = serde_json::to_string(&ConfusionCounts::new(1, 2, 3, 4)).unwrap();
        assert_eq!(s, r#"{"tp":1,"fp":2,"tn":3,"fn":4}"#);
    }
}
