//! Binary confusion matrices and the metrics derived from them.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 2×2 cross-tabulation with the target class as positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub fp: u64,
    pub tn: u64,
}

/// Metrics derived from a confusion matrix. Ratios with a zero denominator are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedMetrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionMatrix {
    pub fn new(tp: u64, fn_: u64, fp: u64, tn: u64) -> Self {
        ConfusionMatrix { tp, fn_, fp, tn }
    }

    /// Tabulates boolean predictions against boolean truth (true = positive).
    pub fn from_bools(predictions: &[bool], truth: &[bool]) -> Result<Self> {
        if predictions.len() != truth.len() {
            return Err(Error::dimension("prediction count", truth.len(), predictions.len()));
        }
        let mut cm = ConfusionMatrix::default();
        for (&p, &t) in predictions.iter().zip(truth) {
            cm.record(p, t);
        }
        Ok(cm)
    }

    fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (false, true) => self.fn_ += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.fp + self.tn
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn f1(&self) -> Option<f64> {
        let p = self.precision()?;
        let r = self.recall()?;
        (p + r > 0.0).then(|| 2.0 * p * r / (p + r))
    }

    pub fn derived(&self) -> DerivedMetrics {
        DerivedMetrics {
            accuracy: self.accuracy(),
            precision: self.precision(),
            recall: self.recall(),
            specificity: self.specificity(),
            f1: self.f1(),
        }
    }

    /// Renders the matrix in an Actual × Predicted layout.
    pub fn render(&self, positive: &str, negative: &str) -> String {
        let w = positive.len().max(negative.len()).max(6);
        let mut s = String::new();
        s.push_str(&format!("{:w$}  {:>10}  {:>10}\n", "actual", positive, negative));
        s.push_str(&format!("{:w$}  {:>10}  {:>10}\n", positive, self.tp, self.fn_));
        s.push_str(&format!("{:w$}  {:>10}  {:>10}\n", negative, self.fp, self.tn));
        s
    }
}

/// Tabulates `predictions` against `truth`; every label must be `positive` or `negative`.
pub fn confusion<T: PartialEq + fmt::Debug>(
    predictions: &[T],
    truth: &[T],
    positive: &T,
    negative: &T,
) -> Result<ConfusionMatrix> {
    if predictions.len() != truth.len() {
        return Err(Error::dimension("prediction count", truth.len(), predictions.len()));
    }
    let classify = |label: &T| -> Result<bool> {
        if label == positive {
            Ok(true)
        } else if label == negative {
            Ok(false)
        } else {
            Err(Error::Parameter(format!("unknown label {label:?}")))
        }
    };
    let mut cm = ConfusionMatrix::default();
    for (p, t) in predictions.iter().zip(truth) {
        cm.record(classify(p)?, classify(t)?);
    }
    Ok(cm)
}

/// First differences `acc[k+1] - acc[k]`.
pub fn marginal_series(accuracies: &[f64]) -> Result<Vec<f64>> {
    if accuracies.len() < 2 {
        return Err(Error::Parameter(format!(
            "marginal series needs at least 2 accuracies, got {}",
            accuracies.len()
        )));
    }
    Ok(accuracies.windows(2).map(|w| w[1] - w[0]).collect())
}

impl fmt::Display for DerivedMetrics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
        writeln!(f, "accuracy     {}", show(self.accuracy))?;
        writeln!(f, "precision    {}", show(self.precision))?;
        writeln!(f, "recall       {}", show(self.recall))?;
        writeln!(f, "specificity  {}", show(self.specificity))?;
        write!(f, "f1           {}", show(self.f1))
    }
}
