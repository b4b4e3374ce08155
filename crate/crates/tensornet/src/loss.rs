use crate::error::{arg_err, shape_err, Result};
use crate::layers::softmax_in_place;
use crate::tensor::Tensor;

/// Mean softmax cross-entropy and its gradient `(softmax - onehot) / B`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let [b, c] = *logits.shape() else {
        return Err(shape_err(
            "softmax_cross_entropy",
            format!("logits must be [B, C], got {:?}", logits.shape()),
        ));
    };
    if labels.len() != b {
        return Err(shape_err(
            "softmax_cross_entropy",
            format!("{} labels for batch of {b}", labels.len()),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= c) {
        return Err(arg_err(
            "softmax_cross_entropy",
            format!("label {bad} outside [0, {c})"),
        ));
    }
    let mut grad = logits.data().to_vec();
    let mut loss = 0.0;
    for (row, &label) in grad.chunks_exact_mut(c).zip(labels) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        softmax_in_place(row);
        row[label] -= 1.0;
        for v in row.iter_mut() {
            *v /= b as f64;
        }
    }
    Ok((loss / b as f64, Tensor::new(vec![b, c], grad)?))
}

/// `CE(plus) - CE(minus)` for two logit sets with the same labels, evaluated
/// without subtracting two nearly equal losses. Per row it is
/// `log1p(sum_i a_i expm1(d_i) / sum_i a_i) - d_label` with
/// `d = plus - minus` and `a_i = exp(minus_i - max(minus))`.
pub fn cross_entropy_difference(plus: &Tensor, minus: &Tensor, labels: &[usize]) -> Result<f64> {
    let [b, c] = *minus.shape() else {
        return Err(shape_err(
            "cross_entropy_difference",
            format!("logits must be [B, C], got {:?}", minus.shape()),
        ));
    };
    if plus.shape() != minus.shape() || labels.len() != b {
        return Err(shape_err(
            "cross_entropy_difference",
            format!(
                "{:?} vs {:?} with {} labels",
                plus.shape(),
                minus.shape(),
                labels.len()
            ),
        ));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= c) {
        return Err(arg_err(
            "cross_entropy_difference",
            format!("label {bad} outside [0, {c})"),
        ));
    }
    let mut total = 0.0;
    for ((zp, zm), &label) in plus
        .data()
        .chunks_exact(c)
        .zip(minus.data().chunks_exact(c))
        .zip(labels)
    {
        let max = zm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut num = 0.0;
        let mut den = 0.0;
        for (p, m) in zp.iter().zip(zm) {
            let a = (m - max).exp();
            num += a * (p - m).exp_m1();
            den += a;
        }
        total += (num / den).ln_1p() - (zp[label] - zm[label]);
    }
    Ok(total / b as f64)
}

/// Row-wise softmax of `[B, C]` logits.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let c = logits.last_dim();
    out.data_mut()
        .chunks_exact_mut(c)
        .for_each(softmax_in_place);
    out
}
