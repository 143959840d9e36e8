//! Binary classification metrics and run-level summaries.
//!
//! Every ratio follows the zero-division rule: an empty denominator yields 0.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion matrix of a binary classifier.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    /// Tallies `(predicted_positive, label)` pairs.
    pub fn from_pairs<I>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (bool, bool)>,
    {
        let mut c = Self::default();
        for (pred, label) in pairs {
            c.record(pred, label);
        }
        c
    }

    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> f64 {
        precision(self)
    }

    pub fn recall(&self) -> f64 {
        recall(self)
    }

    pub fn f1(&self) -> f64 {
        f1(precision(self), recall(self))
    }

    pub fn accuracy(&self) -> Result<f64> {
        accuracy(self)
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self {
            tp: self.tp + rhs.tp,
            fp: self.fp + rhs.fp,
            fn_: self.fn_ + rhs.fn_,
            tn: self.tn + rhs.tn,
        }
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, rhs: Self) {
        *self = *self + rhs;
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `tp / (tp + fp)`.
pub fn precision(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fp)
}

/// `tp / (tp + fn)`.
pub fn recall(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fn_)
}

/// Harmonic mean of precision and recall.
pub fn f1(precision: f64, recall: f64) -> f64 {
    let den = precision + recall;
    if den == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / den
    }
}

pub fn accuracy(c: &ConfusionCounts) -> Result<f64> {
    let total = c.total();
    if total == 0 {
        return Err(Error::EmptyCounts);
    }
    Ok((c.tp + c.tn) as f64 / total as f64)
}

/// One evaluation point on a training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub loss: f64,
    pub num_eval_examples: u64,
    pub num_fit_clients: usize,
}

impl RoundMetrics {
    /// Builds the record from pooled counts.
    pub fn from_counts(
        round: usize,
        counts: &ConfusionCounts,
        loss: f64,
        num_fit_clients: usize,
    ) -> Result<Self> {
        let p = counts.precision();
        let r = counts.recall();
        Ok(Self {
            round,
            accuracy: counts.accuracy()?,
            precision: p,
            recall: r,
            f1: f1(p, r),
            loss,
            num_eval_examples: counts.total(),
            num_fit_clients,
        })
    }
}

/// Best/mean/spread of a metric over a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub best_value: f64,
    pub best_round: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std_dev: f64,
    pub len: usize,
}

/// Summarizes a `(round, value)` series. Ties for the best value resolve to
/// the earliest round.
pub fn summarize(series: &[(usize, f64)]) -> Result<MetricSummary> {
    let (&(first_round, first_value), rest) = series.split_first().ok_or(Error::EmptySeries)?;
    let (mut best_round, mut best_value) = (first_round, first_value);
    for &(round, value) in rest {
        if value > best_value {
            best_value = value;
            best_round = round;
        }
    }
    let n = series.len() as f64;
    let mean = series.iter().map(|&(_, v)| v).sum::<f64>() / n;
    let var = series.iter().map(|&(_, v)| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(MetricSummary {
        best_value,
        best_round,
        mean,
        std_dev: var.sqrt(),
        len: series.len(),
    })
}

/// Weighted mean `Σ wᵢ·mᵢ / Σ wᵢ`.
pub fn weighted_metric(values: &[(f64, f64)]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (num, den) = values
        .iter()
        .fold((0.0, 0.0), |(num, den), &(m, w)| (num + w * m, den + w));
    if den <= 0.0 {
        return Err(Error::InvalidConfig(
            "metric weights must be positive".into(),
        ));
    }
    Ok(num / den)
}
