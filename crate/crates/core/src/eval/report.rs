use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::pr::check_labels;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(predicted: impl IntoIterator<Item = bool>, labels: &[u8]) -> Self {
        let mut c = Confusion::default();
        for (p, &y) in predicted.into_iter().zip(labels) {
            match (p, y == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(flatten)]
    pub confusion: Confusion,
    pub threshold: f64,
    pub seed: u64,
    pub epochs: usize,
}

impl EvalReport {
    pub fn from_confusion(confusion: Confusion, threshold: f64, seed: u64, epochs: usize) -> Self {
        let Confusion { tp, fp, tn, fn_ } = confusion;
        let ratio = |num: usize, den: usize| {
            if den == 0 {
                0.0
            } else {
                num as f64 / den as f64
            }
        };
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            accuracy: ratio(tp + tn, confusion.total()),
            precision,
            recall,
            f1,
            confusion,
            threshold,
            seed,
            epochs,
        }
    }

    /// One `name=value` line per field.
    pub fn to_text(&self) -> String {
        let c = &self.confusion;
        let mut s = String::new();
        for (k, v) in [
            ("accuracy", self.accuracy),
            ("precision", self.precision),
            ("recall", self.recall),
            ("f1", self.f1),
        ] {
            let _ = writeln!(s, "{k}={v}");
        }
        for (k, v) in [("tp", c.tp), ("fp", c.fp), ("tn", c.tn), ("fn", c.fn_)] {
            let _ = writeln!(s, "{k}={v}");
        }
        let _ = writeln!(s, "threshold={}", self.threshold);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "epochs={}", self.epochs);
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report fields are serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Data(format!("bad report JSON: {e}")))
    }
}

/// Predicts "interact" iff `distance ≥ threshold` and tabulates the metrics.
pub fn classify_and_report(
    distances: &[f64],
    labels: &[u8],
    threshold: f64,
    seed: u64,
    epochs: usize,
) -> Result<EvalReport> {
    if !threshold.is_finite() {
        return Err(Error::NonFinite(format!("threshold {threshold}")));
    }
    check_labels(distances, labels)?;
    let c = Confusion::from_predictions(distances.iter().map(|&d| d >= threshold), labels);
    Ok(EvalReport::from_confusion(c, threshold, seed, epochs))
}
