//! Softmax cross entropy on logits.

use crate::error::{DiffError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    /// `sum_i w_i CE_i`; each example's gradient is independent of the batch.
    Sum,
    /// `sum_i w_i CE_i / sum_i w_i`
    WeightedMean,
}

/// Row-wise softmax of an `N x K` tensor.
pub fn softmax<F: Scalar>(logits: &Tensor<F>) -> Tensor<F> {
    let k = logits.item_len();
    let mut out = logits.clone();
    if k > 0 {
        for row in out.data_mut().chunks_mut(k) {
            crate::ops::softmax_in_place(row);
        }
    }
    out
}

/// Weighted cross entropy of `labels` under `softmax(logits)`, and its
/// gradient with respect to the logits.
pub fn cross_entropy<F: Scalar>(
    logits: &Tensor<F>,
    labels: &[usize],
    class_weights: Option<&[F]>,
    reduction: Reduction,
) -> Result<(F, Tensor<F>)> {
    let n = logits.batch();
    let k = logits.item_len();
    if labels.len() != n {
        return Err(DiffError::Shape(format!("{} labels for {n} logit rows", labels.len())));
    }
    if n == 0 {
        return Err(DiffError::EmptyBatch);
    }
    if let Some(w) = class_weights {
        if w.len() != k {
            return Err(DiffError::Shape(format!("{} class weights for {k} classes", w.len())));
        }
    }
    let mut grad = softmax(logits);
    let mut total = F::zero();
    let mut weight_sum = F::zero();
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(DiffError::InvalidLabel { label: y, classes: k });
        }
        let w = class_weights.map_or(F::one(), |cw| cw[y]);
        let row = logits.item(i);
        let m = row.iter().fold(F::neg_infinity(), |a, &b| a.max(b));
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<F>().ln();
        total += w * (lse - row[y]);
        weight_sum += w;
        let g = grad.item_mut(i);
        g[y] -= F::one();
        g.iter_mut().for_each(|v| *v *= w);
    }
    if reduction == Reduction::WeightedMean {
        total /= weight_sum;
        grad.scale(F::one() / weight_sum);
    }
    Ok((total, grad))
}
