use super::StatsError;

/// 1-based ranks with ties sharing their mean rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mean_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mean_rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y, 2)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::Undefined("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman correlation: Pearson on average-ranked data.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check_pair(x, y, 2)?;
    pearson(&average_ranks(x), &average_ranks(y))
        .map_err(|_| StatsError::Undefined("zero rank variance".into()))
}

fn check_pair(x: &[f64], y: &[f64], min: usize) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < min {
        return Err(StatsError::TooFew { needed: min, got: x.len() });
    }
    Ok(())
}

/// `⌈fraction · n⌉`, guarding against representation error such as
/// `0.1 * 30 = 3.0000000000000004`.
pub fn topk_size(fraction: f64, n: usize) -> usize {
    let raw = fraction * n as f64;
    let k = if (raw - raw.round()).abs() < 1e-9 {
        raw.round()
    } else {
        raw.ceil()
    };
    (k as usize).clamp(1, n.max(1))
}

fn top_indices(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    // stable: ties keep index order
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order.truncate(k);
    order
}

/// Fraction of the true top-k recovered by the predicted top-k,
/// `k = ⌈fraction · n⌉`, ties broken by index.
pub fn topk_overlap(pred: &[f64], truth: &[f64], fraction: f64) -> Result<f64, StatsError> {
    check_pair(pred, truth, 1)?;
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(StatsError::InvalidInput(format!("fraction must be in (0, 1], got {fraction}")));
    }
    let k = topk_size(fraction, pred.len());
    let a = top_indices(pred, k);
    let b: std::collections::HashSet<usize> = top_indices(truth, k).into_iter().collect();
    let common = a.iter().filter(|i| b.contains(i)).count();
    Ok(common as f64 / k as f64)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64, StatsError> {
    check_pair(pred, truth, 1)?;
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}
