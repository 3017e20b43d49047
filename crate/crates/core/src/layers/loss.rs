use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax of `[n, k]` logits, stabilized by max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let &[_, k] = logits.shape() else {
        return Err(Error::shape(format!("softmax expects [n, k], got {:?}", logits.shape())));
    };
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        for v in row.iter_mut() {
            *v /= z;
        }
    }
    Ok(out)
}

/// Mean cross-entropy of the true class and its gradient `(softmax - onehot) / n`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let &[n, k] = logits.shape() else {
        return Err(Error::shape(format!("logits must be [n, k], got {:?}", logits.shape())));
    };
    if labels.len() != n {
        return Err(Error::shape(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::invalid(format!("label {bad} outside [0, {k})")));
    }
    let mut grad = softmax(logits)?;
    let mut loss = 0.0;
    for ((row, probs), &y) in logits
        .data()
        .chunks_exact(k)
        .zip(grad.data_mut().chunks_exact_mut(k))
        .zip(labels)
    {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += log_z - row[y];
        probs[y] -= 1.0;
        for p in probs.iter_mut() {
            *p /= n as f64;
        }
    }
    Ok((loss / n as f64, grad))
}
