use super::EvalError;

fn check(pred: &[f64], target: &[f64]) -> Result<(), EvalError> {
    if pred.len() != target.len() {
        return Err(EvalError::LengthMismatch(pred.len(), target.len()));
    }
    if pred.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64, EvalError> {
    check(pred, target)?;
    let sq: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sq / pred.len() as f64).sqrt())
}

pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64, EvalError> {
    check(pred, target)?;
    let abs: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum();
    Ok(abs / pred.len() as f64)
}

/// Indices of the `max(1, floor(frac * N))` largest means, ties to the lower
/// index, returned ascending.
pub fn hot_nodes(means: &[f64], frac: f64) -> Vec<usize> {
    let k = ((frac * means.len() as f64).floor() as usize).max(1).min(means.len());
    let mut order: Vec<usize> = (0..means.len()).collect();
    order.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then(a.cmp(&b)));
    let mut hot = order[..k].to_vec();
    hot.sort_unstable();
    hot
}

/// Joint mean of `|y - ŷ| / max(y, 1)` over `hot` nodes and every sample of
/// row-major `[samples, nodes]` data.
pub fn mape_topk(pred: &[f64], target: &[f64], nodes: usize, hot: &[usize]) -> Result<f64, EvalError> {
    check(pred, target)?;
    if nodes == 0 || !pred.len().is_multiple_of(nodes) || hot.is_empty() || hot.iter().any(|&h| h >= nodes) {
        return Err(EvalError::Invalid(format!("hot set {hot:?} invalid for {nodes} nodes")));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (p_row, t_row) in pred.chunks(nodes).zip(target.chunks(nodes)) {
        for &h in hot {
            total += (t_row[h] - p_row[h]).abs() / t_row[h].max(1.0);
            count += 1;
        }
    }
    Ok(total / count as f64)
}
