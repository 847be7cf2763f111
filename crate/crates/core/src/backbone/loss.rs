//! Classification objectives over logits. Each returns the batch-mean loss
//! and its gradient with respect to the logits.

use crate::error::{shape_err, Result};
use crate::numerics::{softmax_rows, Matrix};

/// Probabilities below this are clamped before taking logs.
pub const LOG_FLOOR: f64 = 1e-12;

/// Mean cross-entropy against hard labels.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if labels.len() != logits.rows() {
        return Err(shape_err(format!("{} labels for {} rows", labels.len(), logits.rows())));
    }
    let b = logits.rows() as f64;
    let mut grad = softmax_rows(logits);
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= logits.cols() {
            return Err(shape_err(format!("label {y} out of range")));
        }
        loss -= grad[(i, y)].max(LOG_FLOOR).ln();
        grad[(i, y)] -= 1.0;
    }
    Ok((loss / b, grad.scale(1.0 / b)))
}

/// Class-averaged soft cross-entropy `-(1/C) sum_c t_c log p_c` per row,
/// averaged over rows. Targets are constants.
pub fn soft_cross_entropy(logits: &Matrix, targets: &Matrix) -> Result<(f64, Matrix)> {
    if logits.shape() != targets.shape() {
        return Err(shape_err(format!("logits {:?} vs targets {:?}", logits.shape(), targets.shape())));
    }
    let (rows, classes) = logits.shape();
    let probs = softmax_rows(logits);
    let scale = 1.0 / (rows as f64 * classes as f64);
    let mut grad = Matrix::zeros(rows, classes);
    let mut loss = 0.0;
    for i in 0..rows {
        let p = probs.row(i);
        let t = targets.row(i);
        // Clamped entries are constant in the logits and drop out of the gradient.
        let mut active_mass = 0.0;
        for c in 0..classes {
            loss -= t[c] * p[c].max(LOG_FLOOR).ln();
            if p[c] >= LOG_FLOOR {
                active_mass += t[c];
            }
        }
        let g = grad.row_mut(i);
        for k in 0..classes {
            let own = if p[k] >= LOG_FLOOR { t[k] } else { 0.0 };
            g[k] = scale * (p[k] * active_mass - own);
        }
    }
    Ok((loss * scale, grad))
}

/// Mean Shannon entropy of the softmax predictions.
pub fn entropy(logits: &Matrix) -> (f64, Matrix) {
    let (rows, classes) = logits.shape();
    let probs = softmax_rows(logits);
    let mut grad = Matrix::zeros(rows, classes);
    let mut total = 0.0;
    for i in 0..rows {
        let p = probs.row(i);
        let h: f64 = -p.iter().map(|&q| q * q.max(LOG_FLOOR).ln()).sum::<f64>();
        total += h;
        for k in 0..classes {
            grad[(i, k)] = -p[k] * (p[k].max(LOG_FLOOR).ln() + h) / rows as f64;
        }
    }
    (total / rows as f64, grad)
}
