//! Evaluation metrics.

use std::cmp::Ordering;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Clamp applied to predictions before the logarithm in [`logloss`].
pub const LOGLOSS_CLAMP: f64 = 1e-12;

/// Area under the ROC curve as the Mann-Whitney statistic: the fraction of
/// (positive, negative) pairs ranked correctly, ties counting one half.
/// Computed in `O(n log n)` with mid-ranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::dim("auc", &[scores.len()], &[labels.len()]));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Domain("NaN score".into()));
    }
    let positives = labels.iter().filter(|&&y| y == 1).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric(format!(
            "AUC needs both classes, got {positives} positives and {negatives} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));

    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j share their mean.
        let mid = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += mid * pos_in_group as f64;
        i = j;
    }
    let p = positives as f64;
    let u = rank_sum - p * (p + 1.0) / 2.0;
    Ok(u / (p * negatives as f64))
}

/// Mean binary cross-entropy of one task, with predictions clamped to
/// `[1e-12, 1 - 1e-12]`.
pub fn logloss(scores: &[f64], labels: &[u8]) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(LOGLOSS_CLAMP, 1.0 - LOGLOSS_CLAMP);
            if y == 1 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    total / scores.len() as f64
}

/// Fraction of rows with some `t` where `y_t > y_{t-1}`.
pub fn violation_rate(preds: &Tensor) -> Result<f64> {
    if preds.cols() < 2 {
        return Err(Error::Contract(
            "violation rate needs at least two tasks".into(),
        ));
    }
    let violating = (0..preds.rows())
        .filter(|&r| preds.row(r).windows(2).any(|w| w[1] > w[0]))
        .count();
    Ok(violating as f64 / preds.rows() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Per task; `None` when the task has a single class.
    pub auc: Vec<Option<f64>>,
    pub logloss: Vec<f64>,
    /// `None` for single-task data.
    pub violation_rate: Option<f64>,
    pub samples: usize,
}

impl MetricReport {
    /// `preds` is `N x T`; `labels` holds `N * T` row-major 0/1 entries.
    pub fn compute(preds: &Tensor, labels: &[u8]) -> Result<Self> {
        let (rows, tasks) = (preds.rows(), preds.cols());
        if labels.len() != rows * tasks {
            return Err(Error::dim("metrics", preds.shape(), &[labels.len()]));
        }
        let mut report = MetricReport {
            auc: Vec::with_capacity(tasks),
            logloss: Vec::with_capacity(tasks),
            violation_rate: None,
            samples: rows,
        };
        for t in 0..tasks {
            let s: Vec<f64> = (0..rows).map(|r| preds.get(r, t)).collect();
            let y: Vec<u8> = (0..rows).map(|r| labels[r * tasks + t]).collect();
            report.auc.push(match auc(&s, &y) {
                Ok(v) => Some(v),
                Err(Error::UndefinedMetric(_)) => None,
                Err(e) => return Err(e),
            });
            report.logloss.push(logloss(&s, &y));
        }
        if tasks >= 2 {
            report.violation_rate = Some(violation_rate(preds)?);
        }
        Ok(report)
    }

    pub fn final_auc(&self) -> Option<f64> {
        self.auc.last().copied().flatten()
    }

    /// `(metric, task, value)` triples; tasks are 1-based, `-` for
    /// whole-dataset metrics, and undefined values print as `NA`.
    pub fn rows(&self) -> Vec<(String, String, String)> {
        let mut out = vec![("samples".into(), "-".into(), self.samples.to_string())];
        for (t, a) in self.auc.iter().enumerate() {
            let v = a.map_or_else(|| "NA".to_string(), |v| v.to_string());
            out.push(("auc".into(), (t + 1).to_string(), v));
        }
        for (t, l) in self.logloss.iter().enumerate() {
            out.push(("logloss".into(), (t + 1).to_string(), l.to_string()));
        }
        if let Some(v) = self.violation_rate {
            out.push(("violation_rate".into(), "-".into(), v.to_string()));
        }
        out
    }

    /// Human-readable `key = value` block.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "samples = {}", self.samples);
        for (t, a) in self.auc.iter().enumerate() {
            match a {
                Some(v) => {
                    let _ = writeln!(s, "auc.task{} = {v:.6}", t + 1);
                }
                None => {
                    let _ = writeln!(s, "auc.task{} = undefined (single class)", t + 1);
                }
            }
        }
        for (t, l) in self.logloss.iter().enumerate() {
            let _ = writeln!(s, "logloss.task{} = {l:.6}", t + 1);
        }
        if let Some(v) = self.violation_rate {
            let _ = writeln!(s, "violation_rate = {v:.6}");
        }
        s
    }
}
