//! Training objectives: summed per-task cross-entropy plus the monotonicity
//! calibrator `max(y_t - y_{t-1}, 0)`.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub ce: f64,
    pub lc: f64,
    pub alpha: f64,
    pub total: f64,
}

fn check_pair(preds: &Tensor, labels: &Tensor) -> Result<()> {
    if preds.shape().len() != 2 {
        return Err(Error::dim("loss", preds.shape(), labels.shape()));
    }
    preds.same_shape(labels, "loss")
}

/// `-(1/N) * sum_t sum_n [y ln p + (1 - y) ln(1 - p)]` over an `N x T`
/// prediction matrix: averaged over samples, summed over tasks.
pub fn cross_entropy_loss(preds: &Tensor, labels: &Tensor) -> Result<f64> {
    check_pair(preds, labels)?;
    let mut total = 0.0;
    for (&p, &y) in preds.data().iter().zip(labels.data()) {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("prediction {p} outside (0, 1)")));
        }
        if y != 0.0 && y != 1.0 {
            return Err(Error::Domain(format!("label {y} is not 0 or 1")));
        }
        total -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(total / preds.rows() as f64)
}

/// `(1/N) * sum_{t>=2} sum_n max(y_t - y_{t-1}, 0)`; zero for one task.
pub fn calibrator_loss(preds: &Tensor) -> f64 {
    let tasks = preds.cols();
    let mut total = 0.0;
    for r in 0..preds.rows() {
        let row = preds.row(r);
        for t in 1..tasks {
            total += (row[t] - row[t - 1]).max(0.0);
        }
    }
    total / preds.rows() as f64
}

pub fn total_loss(ce: f64, lc: f64, alpha: f64) -> Result<f64> {
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("alpha {alpha} must be >= 0")));
    }
    Ok(ce + alpha * lc)
}

/// Records the joint objective on `tape` for per-task prediction columns.
///
/// `labels` is `N x T` row-major with entries 0 or 1.
pub fn joint_loss(
    tape: &mut Tape,
    predictions: &[Var],
    labels: &[u8],
    alpha: f64,
) -> Result<(Var, LossBreakdown)> {
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("alpha {alpha} must be >= 0")));
    }
    let tasks = predictions.len();
    let rows = tape.value(predictions[0]).len();
    if labels.len() != rows * tasks {
        return Err(Error::dim("joint_loss", &[rows, tasks], &[labels.len()]));
    }
    let inv_n = 1.0 / rows as f64;

    let mut ce_sum: Option<Var> = None;
    for (t, &p) in predictions.iter().enumerate() {
        let y: Vec<f64> = (0..rows).map(|r| labels[r * tasks + t] as f64).collect();
        let term = tape.bce_sum(p, y)?;
        ce_sum = Some(match ce_sum {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    let ce = tape.scale(ce_sum.expect("at least one task"), inv_n)?;

    let mut lc_sum: Option<Var> = None;
    for t in 1..tasks {
        let diff = tape.sub(predictions[t], predictions[t - 1])?;
        let hinge = tape.relu(diff)?;
        let term = tape.sum(hinge)?;
        lc_sum = Some(match lc_sum {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    let lc = match lc_sum {
        Some(s) => tape.scale(s, inv_n)?,
        None => tape.constant(Tensor::scalar(0.0)),
    };
    let weighted = tape.scale(lc, alpha)?;
    let total = tape.add(ce, weighted)?;

    let ce_v = tape.value(ce).item()?;
    let lc_v = tape.value(lc).item()?;
    let breakdown = LossBreakdown {
        ce: ce_v,
        lc: lc_v,
        alpha,
        total: tape.value(total).item()?,
    };
    Ok((total, breakdown))
}
