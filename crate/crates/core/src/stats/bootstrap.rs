use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::StatsError;
use crate::acquire::percentile;
use crate::par::{self, Execution};

pub const DEFAULT_REPLICATES: usize = 10_000;

/// Percentile bootstrap interval. `flagged` is set when the metric was
/// undefined on more than half of the replicates; the bounds then come from
/// the defined replicates only (NaN if there were none).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapInterval {
    pub lo: f64,
    pub hi: f64,
    pub replicates: usize,
    pub undefined: usize,
    pub flagged: bool,
}

/// Resamples `n` items with replacement `b` times and takes the 2.5th and
/// 97.5th percentiles of `metric` over the resampled index sets. Replicate
/// `r` draws from ChaCha stream `r` of `seed`, so the result does not depend
/// on execution order.
pub fn bootstrap_ci<F>(n: usize, metric: F, b: usize, seed: u64) -> Result<BootstrapInterval, StatsError>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    bootstrap_ci_with(Execution::default(), n, metric, b, seed)
}

pub fn bootstrap_ci_with<F>(
    exec: Execution,
    n: usize,
    metric: F,
    b: usize,
    seed: u64,
) -> Result<BootstrapInterval, StatsError>
where
    F: Fn(&[usize]) -> Option<f64> + Sync,
{
    if n < 2 {
        return Err(StatsError::TooFew { needed: 2, got: n });
    }
    if b < 100 {
        return Err(StatsError::InvalidInput(format!("need at least 100 replicates, got {b}")));
    }
    let draws = par::map_range(exec, b, |r| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(r as u64);
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        metric(&idx).filter(|v| v.is_finite())
    });
    let defined: Vec<f64> = draws.into_iter().flatten().collect();
    let undefined = b - defined.len();
    let (lo, hi) = if defined.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        (
            percentile(&defined, 0.025).expect("non-empty"),
            percentile(&defined, 0.975).expect("non-empty"),
        )
    };
    Ok(BootstrapInterval {
        lo,
        hi,
        replicates: b,
        undefined,
        flagged: 2 * undefined > b,
    })
}

/// Bootstrap interval for the mean of `values`.
pub fn bootstrap_mean(values: &[f64], b: usize, seed: u64) -> Result<BootstrapInterval, StatsError> {
    bootstrap_ci(
        values.len(),
        |idx| Some(idx.iter().map(|&i| values[i]).sum::<f64>() / idx.len() as f64),
        b,
        seed,
    )
}
