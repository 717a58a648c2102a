//! Binary classification metrics with bootstrap confidence intervals.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bootstrap::{percentile_ci, resample_statistics};
use crate::describe::midranks;
use crate::{Result, StatsError};

/// Confusion matrix at a fixed decision threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

// Ratios with an empty denominator evaluate to 0, the usual convention for
// reporting; MCC likewise is 0 when any margin is empty.
impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        Self { tp, fp, tn, fn_ }
    }

    /// Predicted positive iff `prob >= threshold`.
    pub fn from_probabilities(labels: &[u8], probs: &[f64], threshold: f64) -> Self {
        let mut c = Self::default();
        for (&y, &p) in labels.iter().zip(probs) {
            match (y == 1, p >= threshold) {
                (true, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    pub fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> f64 {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn ppv(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn npv(&self) -> f64 {
        ratio(self.tn, self.tn + self.fn_)
    }

    pub fn informedness(&self) -> f64 {
        self.sensitivity() + self.specificity() - 1.0
    }

    pub fn markedness(&self) -> f64 {
        self.ppv() + self.npv() - 1.0
    }

    pub fn mcc(&self) -> f64 {
        let (tp, fp, tn, fn_) = (self.tp as f64, self.fp as f64, self.tn as f64, self.fn_ as f64);
        let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
        if den == 0.0 {
            return 0.0;
        }
        (tp * tn - fp * fn_) / den.sqrt()
    }
}

/// Area under the ROC curve as the Mann-Whitney concordance probability, with midranks for ties.
pub fn auc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(StatsError::InvalidArgument("labels and scores differ in length".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(StatsError::SingleClass("AUC"));
    }
    let ranks = midranks(scores);
    let pos_rank_sum: f64 = labels.iter().zip(&ranks).filter(|(&y, _)| y == 1).map(|(_, r)| r).sum();
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    F1,
    Sensitivity,
    Specificity,
    Ppv,
    Npv,
    Informedness,
    Markedness,
    Mcc,
    Auc,
}

impl Metric {
    pub const ALL: [Metric; 10] = [
        Metric::Accuracy,
        Metric::F1,
        Metric::Sensitivity,
        Metric::Specificity,
        Metric::Ppv,
        Metric::Npv,
        Metric::Informedness,
        Metric::Markedness,
        Metric::Mcc,
        Metric::Auc,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::F1 => "f1",
            Metric::Sensitivity => "sensitivity",
            Metric::Specificity => "specificity",
            Metric::Ppv => "ppv",
            Metric::Npv => "npv",
            Metric::Informedness => "informedness",
            Metric::Markedness => "markedness",
            Metric::Mcc => "mcc",
            Metric::Auc => "auc",
        }
    }

    /// Value from a confusion matrix; `None` for AUC, which needs the scores.
    pub fn from_counts(self, c: &ConfusionCounts) -> Option<f64> {
        Some(match self {
            Metric::Accuracy => c.accuracy(),
            Metric::F1 => c.f1(),
            Metric::Sensitivity => c.sensitivity(),
            Metric::Specificity => c.specificity(),
            Metric::Ppv => c.ppv(),
            Metric::Npv => c.npv(),
            Metric::Informedness => c.informedness(),
            Metric::Markedness => c.markedness(),
            Metric::Mcc => c.mcc(),
            Metric::Auc => return None,
        })
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricEntry {
    pub metric: Metric,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub threshold: f64,
    pub n_boot: usize,
    pub confidence: f64,
    pub confusion: ConfusionCounts,
    pub metrics: Vec<MetricEntry>,
}

impl MetricReport {
    pub fn get(&self, metric: Metric) -> Option<&MetricEntry> {
        self.metrics.iter().find(|e| e.metric == metric)
    }

    pub fn estimate(&self, metric: Metric) -> f64 {
        self.get(metric).map_or(f64::NAN, |e| e.estimate)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["metric", "estimate", "ci_low", "ci_high"])?;
        for e in &self.metrics {
            w.write_record([
                e.metric.name().to_string(),
                e.estimate.to_string(),
                e.ci_low.to_string(),
                e.ci_high.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Point estimates at `threshold` plus 95% percentile-bootstrap intervals.
pub fn compute_metrics(labels: &[u8], probs: &[f64], threshold: f64, n_boot: usize, seed: u64) -> Result<MetricReport> {
    if labels.len() != probs.len() {
        return Err(StatsError::InvalidArgument(format!(
            "{} labels but {} probabilities",
            labels.len(),
            probs.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(StatsError::InvalidArgument(format!("label {bad} is not binary")));
    }
    let confusion = ConfusionCounts::from_probabilities(labels, probs, threshold);
    let point_auc = auc(labels, probs)?;
    let point = |m: Metric| m.from_counts(&confusion).unwrap_or(point_auc);

    let draws = resample_statistics(labels.len(), n_boot, seed, |idx| {
        let ys: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
        let ps: Vec<f64> = idx.iter().map(|&i| probs[i]).collect();
        let c = ConfusionCounts::from_probabilities(&ys, &ps, threshold);
        Metric::ALL
            .iter()
            .map(|m| m.from_counts(&c).or_else(|| auc(&ys, &ps).ok()))
            .collect()
    });

    let level = 0.95;
    let metrics = Metric::ALL
        .iter()
        .enumerate()
        .map(|(k, &metric)| {
            let samples: Vec<f64> = draws.iter().filter_map(|d| d[k]).collect();
            let estimate = point(metric);
            let (ci_low, ci_high) = percentile_ci(&samples, estimate, level);
            MetricEntry { metric, estimate, ci_low, ci_high }
        })
        .collect();
    Ok(MetricReport { n: labels.len(), threshold, n_boot, confidence: level, confusion, metrics })
}
