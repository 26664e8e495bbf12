use super::{NumericsError, Tensor};

/// Summed label-smoothed cross entropy and the instance count that weights it.
///
/// Per row: `(1 − ε)·(−log p_target) + (ε/V)·Σ_c (−log p_c)`.
pub fn label_smoothed_cross_entropy(
    logits: &Tensor,
    targets: &[usize],
    epsilon: f64,
) -> Result<(f64, usize), NumericsError> {
    let (total, _) = label_smoothed_cross_entropy_parts(logits, targets, epsilon)?;
    Ok((total, targets.len()))
}

/// Loss sum plus the row softmax, which the backward rule reuses.
pub(crate) fn label_smoothed_cross_entropy_parts(
    logits: &Tensor,
    targets: &[usize],
    epsilon: f64,
) -> Result<(f64, Tensor), NumericsError> {
    if !(0.0..1.0).contains(&epsilon) {
        return Err(NumericsError::Config(format!("label smoothing {epsilon} outside [0, 1)")));
    }
    logits.ensure_finite("cross_entropy")?;
    let (rows, vocab) = logits.dims2();
    if rows != targets.len() {
        return Err(NumericsError::Shape(format!("{rows} logit rows for {} targets", targets.len())));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= vocab) {
        return Err(NumericsError::Index(format!("target {bad} outside [0, {vocab})")));
    }
    let dtype = logits.dtype();
    let mut probs = Vec::with_capacity(logits.len());
    let mut total = 0.0;
    for (row, &t) in logits.data().chunks(vocab.max(1)).zip(targets) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let nll_target = lse - row[t];
        let nll_all: f64 = row.iter().map(|x| lse - x).sum();
        total += (1.0 - epsilon) * nll_target + epsilon / vocab as f64 * nll_all;
        probs.extend(row.iter().map(|x| dtype.round((x - lse).exp())));
    }
    let total = dtype.round(total);
    if !total.is_finite() {
        return Err(NumericsError::NonFinite("cross_entropy".into()));
    }
    Ok((total, Tensor::from_parts(logits.shape().to_vec(), probs, dtype)))
}
