use crate::error::{PulseError, Result};

/// Mean absolute error between `pred` and `target`.
pub fn l1_loss(pred: &[f32], target: &[f32]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(PulseError::dim("l1_loss", "batch", target.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(PulseError::InvalidArgument("l1_loss of an empty batch".into()));
    }
    let s: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| (p as f64 - t as f64).abs())
        .sum();
    Ok(s / pred.len() as f64)
}

/// d(l1_loss)/d(pred). The subgradient at zero error is 0.
pub fn l1_loss_grad(pred: &[f32], target: &[f32]) -> Result<Vec<f64>> {
    if pred.len() != target.len() {
        return Err(PulseError::dim("l1_loss_grad", "batch", target.len(), pred.len()));
    }
    let n = pred.len() as f64;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p as f64 - t as f64;
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect())
}
