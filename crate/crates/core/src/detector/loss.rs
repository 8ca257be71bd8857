use crate::autograd::{lca_value, LOG_FLOOR};
use crate::error::{Error, Result};

use super::LabelVector;

fn check_len(y: &LabelVector, scores: &[f64]) -> Result<()> {
    if y.len() != scores.len() {
        return Err(Error::LengthMismatch {
            expected: y.len(),
            actual: scores.len(),
        });
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Hyperparameter(format!("alpha {alpha} outside [0, 1]")));
    }
    Ok(())
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean over negative/positive pairs of `exp(s_neg − s_pos)`; zero when
/// either side is empty.
pub fn lca_loss(y: &LabelVector, scores: &[f64]) -> Result<f64> {
    check_len(y, scores)?;
    Ok(lca_value(scores, y.as_slice()))
}

/// Mean binary cross-entropy of probabilities, clamped away from 0 and 1.
pub fn bce_loss(y: &LabelVector, scores: &[f64]) -> Result<f64> {
    check_len(y, scores)?;
    let sum: f64 = scores
        .iter()
        .zip(y.as_slice())
        .map(|(&s, &t)| {
            let s = s.clamp(LOG_FLOOR, 1.0 - LOG_FLOOR);
            if t {
                -s.ln()
            } else {
                -(1.0 - s).ln()
            }
        })
        .sum();
    Ok(sum / scores.len() as f64)
}

/// Mean binary cross-entropy computed from pre-sigmoid values.
pub fn bce_with_logits(y: &LabelVector, logits: &[f64]) -> Result<f64> {
    check_len(y, logits)?;
    let sum: f64 = logits
        .iter()
        .zip(y.as_slice())
        .map(|(&z, &t)| z.max(0.0) - if t { z } else { 0.0 } + (-z.abs()).exp().ln_1p())
        .sum();
    Ok(sum / logits.len() as f64)
}

/// `(1−α)·mean BCE + α·mean LCA` over a batch of (labels, probabilities).
pub fn combined_loss(batch: &[(LabelVector, Vec<f64>)], alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let (mut bce, mut lca) = (0.0, 0.0);
    for (y, s) in batch {
        bce += bce_loss(y, s)?;
        lca += lca_loss(y, s)?;
    }
    let n = batch.len() as f64;
    Ok((1.0 - alpha) * bce / n + alpha * lca / n)
}

/// The combined loss over (labels, logits) pairs and its gradient with
/// respect to every logit.
pub fn combined_loss_with_grad(batch: &[(LabelVector, Vec<f64>)], alpha: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    check_alpha(alpha)?;
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let n = batch.len() as f64;
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(batch.len());
    for (y, z) in batch {
        let s: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
        total += (1.0 - alpha) * bce_with_logits(y, z)? + alpha * lca_loss(y, &s)?;

        let c = z.len() as f64;
        let labels = y.as_slice();
        let n_pos = labels.iter().filter(|&&t| t).count();
        let n_neg = labels.len() - n_pos;
        let pairs = (n_pos * n_neg) as f64;
        let neg_sum: f64 = s.iter().zip(labels).filter(|(_, &t)| !t).map(|(v, _)| v.exp()).sum();
        let pos_sum: f64 = s.iter().zip(labels).filter(|(_, &t)| t).map(|(v, _)| (-v).exp()).sum();
        let g = s
            .iter()
            .zip(labels)
            .map(|(&si, &t)| {
                let d_bce = (si - if t { 1.0 } else { 0.0 }) / c;
                let d_lca_ds = if pairs == 0.0 {
                    0.0
                } else if t {
                    -(-si).exp() * neg_sum / pairs
                } else {
                    si.exp() * pos_sum / pairs
                };
                ((1.0 - alpha) * d_bce + alpha * d_lca_ds * si * (1.0 - si)) / n
            })
            .collect();
        grads.push(g);
    }
    Ok((total / n, grads))
}
