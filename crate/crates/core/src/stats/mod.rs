//! Evaluation statistics: leave-one-out metrics, bootstrap intervals,
//! hypothesis tests, policy ablation and trap density.

mod ablation;
mod bench;
mod bootstrap;
mod hypothesis;
mod loo;
mod rank;
pub mod report;

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::acquire::AcquireError;
use crate::domain::ExperimentResult;
use crate::featurize::FeaturizeError;
use crate::surrogate::SurrogateError;

pub use ablation::{policy_ablation, policy_ablation_with, AblationReport, PolicySummary};
pub use bench::{benchmark_stats, BenchmarkReport, ModelRow};
pub use bootstrap::{bootstrap_ci, bootstrap_ci_with, bootstrap_mean, BootstrapInterval, DEFAULT_REPLICATES};
pub use hypothesis::{
    holm_bonferroni, incomplete_beta, mcnemar_exact, t_cdf, t_quantile, t_two_sided_p, welch_t, wilson_interval,
    TestResult,
};
pub use loo::{
    ablate_representation, loo_evaluate, loo_evaluate_with, LooMetrics, LooReport, ModeIntervals, RepresentationAblation,
    DEFAULT_TOPK_FRACTION,
};
pub use rank::{average_ranks, pearson, rmse, spearman, topk_overlap, topk_size};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} values, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("statistic undefined: {0}")]
    Undefined(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("zero pooled standard error")]
    ZeroStandardError,
    #[error("model `{0}` not found in benchmark sheet")]
    UnknownModel(String),
    #[error("no result for molecule `{0}` in the library")]
    UnknownMolecule(String),
    #[error("fold holding out `{molecule_id}` failed: {source}")]
    Fold {
        molecule_id: String,
        #[source]
        source: Box<StatsError>,
    },
    #[error(transparent)]
    Featurize(#[from] FeaturizeError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Acquire(#[from] AcquireError),
}

pub const VACUUM_PERMITTIVITY: f64 = 8.85e-12;
pub const ELEMENTARY_CHARGE: f64 = 1.6e-19;

/// Trap-state density in cm⁻³ from the trap-filled-limit voltage:
/// `N_t = 2 ε_r ε₀ V_TFL / (e L²)`, SI result divided by 10⁶.
pub fn trap_density(epsilon_r: f64, v_tfl: f64, thickness: f64) -> Result<f64, StatsError> {
    for (name, v) in [("epsilon_r", epsilon_r), ("v_tfl", v_tfl), ("thickness", thickness)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(StatsError::InvalidInput(format!("{name} must be positive, got {v}")));
        }
    }
    let per_m3 = 2.0 * epsilon_r * VACUUM_PERMITTIVITY * v_tfl / (ELEMENTARY_CHARGE * thickness * thickness);
    Ok(per_m3 / 1e6)
}

/// Training targets per molecule: Δ_rel averaged over repeated measurements,
/// keyed and ordered by molecule id.
pub fn targets_by_molecule(results: &[ExperimentResult]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in results {
        let e = acc.entry(r.molecule_id.clone()).or_insert((0.0, 0));
        e.0 += r.delta_rel;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

/// Independent seed for replicate `index`, taken from its own ChaCha stream.
pub fn replicate_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.next_u64()
}
