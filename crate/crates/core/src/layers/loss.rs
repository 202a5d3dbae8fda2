use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Mean cross-entropy over a batch and its gradient with respect to the logits.
#[derive(Debug, Clone)]
pub struct LossValue<T = f32> {
    pub loss: T,
    pub grad: Tensor<T>,
}

/// Softmax followed by negative log-likelihood, averaged over the batch.
///
/// Uses max-subtraction, so large logits do not overflow.
/// The gradient is `(softmax - onehot) / b`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<LossValue<T>> {
    let (b, k) = logits.shape().as2()?;
    if labels.len() != b {
        return Err(Error::Dimension(format!(
            "{} labels for a batch of {b}",
            labels.len()
        )));
    }
    let inv_b = T::one() / T::of(b as f64);
    let mut grad = Vec::with_capacity(b * k);
    let mut total = T::zero();
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        if label >= k {
            return Err(Error::Data(format!("label {label} out of range for {k} classes")));
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum_exp: T = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum_exp.ln();
        total += log_z - row[label];
        for (j, &v) in row.iter().enumerate() {
            let p = (v - log_z).exp();
            let onehot = if j == label { T::one() } else { T::zero() };
            grad.push((p - onehot) * inv_b);
        }
    }
    Ok(LossValue {
        loss: total * inv_b,
        grad: Tensor::new([b, k], grad)?,
    })
}

/// Index of the largest logit per row; ties pick the lowest index.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<usize>> {
    let (_, k) = logits.shape().as2()?;
    Ok(logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}
