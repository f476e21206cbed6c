//! Decision policies over a scored candidate pool and shortlist construction.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurize::{FeatureMatrix, FeaturizeError};
use crate::normal;
use crate::par::Execution;
use crate::surrogate::{GpPosterior, SurrogateError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AcquireError {
    #[error("cannot take a percentile of an empty list")]
    EmptyTargets,
    #[error("quantile must lie in (0, 1), got {0}")]
    InvalidQuantile(f64),
    #[error("shortlist size must be >= 1")]
    InvalidShortlistSize,
    #[error("candidate `{0}` is not in the feature matrix")]
    UnknownCandidate(String),
    #[error(transparent)]
    Featurize(#[from] FeaturizeError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    #[default]
    Ei,
    Mean,
    Uncertainty,
    Random,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Ei, Policy::Mean, Policy::Uncertainty, Policy::Random];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Ei => "ei",
            Policy::Mean => "mean",
            Policy::Uncertainty => "uncertainty",
            Policy::Random => "random",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown policy `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AcquisitionConfig {
    pub policy: Policy,
    pub xi: f64,
    pub incumbent_quantile: f64,
    pub shortlist_size: usize,
    pub seed: u64,
    /// Replicates used when summarizing the random policy.
    pub random_replicates: usize,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        AcquisitionConfig {
            policy: Policy::Ei,
            xi: 0.05,
            incumbent_quantile: 0.8,
            shortlist_size: 50,
            seed: 0,
            random_replicates: 20,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<(), AcquireError> {
        if !(self.incumbent_quantile > 0.0 && self.incumbent_quantile < 1.0) {
            return Err(AcquireError::InvalidQuantile(self.incumbent_quantile));
        }
        if self.shortlist_size == 0 {
            return Err(AcquireError::InvalidShortlistSize);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub molecule_id: String,
    pub mu: f64,
    pub sigma: f64,
    pub ei: f64,
    pub rank: usize,
    pub feasible: bool,
}

/// Linear-interpolation percentile at position `q (n - 1)` of the sorted list.
pub fn percentile(values: &[f64], q: f64) -> Result<f64, AcquireError> {
    if values.is_empty() {
        return Err(AcquireError::EmptyTargets);
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(AcquireError::InvalidQuantile(q));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= sorted.len() || frac == 0.0 {
        return Ok(sorted[lo]);
    }
    Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
}

/// The robust current-best reference: the `q`-th percentile of training targets.
pub fn robust_incumbent(train_y: &[f64], q: f64) -> Result<f64, AcquireError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(AcquireError::InvalidQuantile(q));
    }
    percentile(train_y, q)
}

/// ξ-shifted expected improvement over `best`.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64, xi: f64) -> f64 {
    let improvement = mu - best - xi;
    if sigma <= 0.0 {
        return improvement.max(0.0);
    }
    let z = improvement / sigma;
    (improvement * normal::cdf(z) + sigma * normal::pdf(z)).max(0.0)
}

/// Orders `scored` by the policy key (descending), ties by molecule id, and
/// assigns ranks 1..m.
pub fn rank_candidates(scored: &mut [ScoredCandidate], policy: Policy, seed: u64) {
    scored.sort_by(|a, b| a.molecule_id.cmp(&b.molecule_id));
    match policy {
        Policy::Ei => scored.sort_by(|a, b| b.ei.total_cmp(&a.ei)),
        Policy::Mean => scored.sort_by(|a, b| b.mu.total_cmp(&a.mu)),
        Policy::Uncertainty => scored.sort_by(|a, b| b.sigma.total_cmp(&a.sigma)),
        Policy::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            scored.shuffle(&mut rng);
        }
    }
    for (i, c) in scored.iter_mut().enumerate() {
        c.rank = i + 1;
    }
}

/// Scores every pool candidate with μ, σ and EI and ranks them by `cfg.policy`.
/// All candidates start out feasible.
pub fn score_pool(
    gp: &GpPosterior,
    fm: &FeatureMatrix,
    pool_ids: &[String],
    cfg: &AcquisitionConfig,
    include_noise: bool,
) -> Result<Vec<ScoredCandidate>, AcquireError> {
    score_pool_with(Execution::default(), gp, fm, pool_ids, cfg, include_noise)
}

pub fn score_pool_with(
    exec: Execution,
    gp: &GpPosterior,
    fm: &FeatureMatrix,
    pool_ids: &[String],
    cfg: &AcquisitionConfig,
    include_noise: bool,
) -> Result<Vec<ScoredCandidate>, AcquireError> {
    cfg.validate()?;
    let idx = fm.index();
    for id in pool_ids {
        if !idx.contains_key(id.as_str()) {
            return Err(AcquireError::UnknownCandidate(id.clone()));
        }
    }
    let xq = fm.rows_for(pool_ids)?;
    let preds = gp.predict_with(exec, &xq, include_noise)?;
    let best = robust_incumbent(gp.train_y(), cfg.incumbent_quantile)?;
    let mut scored: Vec<ScoredCandidate> = pool_ids
        .iter()
        .zip(preds)
        .map(|(id, p)| ScoredCandidate {
            molecule_id: id.clone(),
            mu: p.mu,
            sigma: p.sigma,
            ei: expected_improvement(p.mu, p.sigma, best, cfg.xi),
            rank: 0,
            feasible: true,
        })
        .collect();
    rank_candidates(&mut scored, cfg.policy, cfg.seed);
    Ok(scored)
}

/// Applies expert feasibility flags. Ranks are unchanged; only shortlist
/// membership is affected.
pub fn apply_feasibility(scored: &mut [ScoredCandidate], flags: &BTreeMap<String, bool>) {
    for c in scored {
        c.feasible = flags.get(&c.molecule_id).copied().unwrap_or(true);
    }
}

/// The first `size` feasible candidates in rank order.
pub fn shortlist(scored: &[ScoredCandidate], size: usize) -> Vec<ScoredCandidate> {
    let mut ordered: Vec<&ScoredCandidate> = scored.iter().collect();
    ordered.sort_by_key(|c| c.rank);
    ordered.into_iter().filter(|c| c.feasible).take(size).cloned().collect()
}

/// `shortlist_round<k>.csv`: `rank,molecule_id,mu,sigma,ei,feasible`.
pub fn write_shortlist_csv<W: std::io::Write>(rows: &[ScoredCandidate], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["rank", "molecule_id", "mu", "sigma", "ei", "feasible"])?;
    for c in rows {
        w.write_record([
            c.rank.to_string(),
            c.molecule_id.clone(),
            c.mu.to_string(),
            c.sigma.to_string(),
            c.ei.to_string(),
            c.feasible.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn incumbent_interpolates() {
        let y = [0.0, 0.02, 0.05, 0.08, 0.10];
        let v = robust_incumbent(&y, 0.8).unwrap();
        // position 3.2 -> 0.08 + 0.2 * 0.02
        assert!((v - 0.084).abs() < 1e-15, "{v}");
        let shuffled = [0.08, 0.0, 0.10, 0.05, 0.02];
        assert_eq!(robust_incumbent(&shuffled, 0.8).unwrap(), v);
        assert_eq!(robust_incumbent(&[0.3], 0.17).unwrap(), 0.3);
        assert_eq!(robust_incumbent(&[], 0.8), Err(AcquireError::EmptyTargets));
        assert!(robust_incumbent(&y, 1.0).is_err());
    }

    #[test]
    fn ei_closed_forms() {
        assert_eq!(expected_improvement(0.35, 0.0, 0.1, 0.05), 0.35 - 0.1 - 0.05);
        assert!((expected_improvement(0.15, 1.0, 0.1, 0.05) - 0.398_942_280_401_432_7).abs() < 1e-12);
        assert_eq!(expected_improvement(0.0, 0.0, 0.05, 0.05), 0.0);
        assert_eq!(expected_improvement(-0.05, 0.0, 0.0, 0.05), 0.0);
        let limit = expected_improvement(0.35, 1e-12, 0.1, 0.05);
        assert!((limit - 0.2).abs() < 1e-9);
        assert!(expected_improvement(-0.05, 1e-12, 0.0, 0.05).abs() < 1e-9);
    }

    fn cand(id: &str, mu: f64, sigma: f64, ei: f64) -> ScoredCandidate {
        ScoredCandidate {
            molecule_id: id.into(),
            mu,
            sigma,
            ei,
            rank: 0,
            feasible: true,
        }
    }

    #[test]
    fn ties_break_on_id() {
        let mut s = vec![cand("b", 0.0, 0.0, 0.5), cand("a", 0.0, 0.0, 0.5), cand("c", 0.0, 0.0, 0.9)];
        rank_candidates(&mut s, Policy::Ei, 0);
        let order: Vec<_> = s.iter().map(|c| c.molecule_id.as_str()).collect();
        assert_eq!(order, ["c", "a", "b"]);
        assert_eq!(s.iter().map(|c| c.rank).collect::<Vec<_>>(), [1, 2, 3]);
    }

    #[test]
    fn random_policy_is_seeded() {
        let base: Vec<_> = (0..30).map(|i| cand(&format!("m{i:02}"), 0.0, 0.0, 0.0)).collect();
        let mut a = base.clone();
        let mut b = base.clone();
        let mut c = base;
        rank_candidates(&mut a, Policy::Random, 5);
        rank_candidates(&mut b, Policy::Random, 5);
        rank_candidates(&mut c, Policy::Random, 6);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn ei_prefers_uncertain_candidate_when_incumbent_is_far() {
        let (best, xi) = (1.0, 0.05);
        let a = cand("a", 0.3, 0.01, expected_improvement(0.3, 0.01, best, xi));
        let b = cand("b", 0.1, 0.4, expected_improvement(0.1, 0.4, best, xi));
        // brute force: E[max(f - best - xi, 0)] by quadrature over f ~ N(mu, sigma)
        let brute = |mu: f64, sigma: f64| {
            let steps = 400_000;
            let lo = mu - 12.0 * sigma;
            let h = 24.0 * sigma / steps as f64;
            (0..steps)
                .map(|i| {
                    let f = lo + (i as f64 + 0.5) * h;
                    (f - best - xi).max(0.0) * normal::pdf((f - mu) / sigma) / sigma * h
                })
                .sum::<f64>()
        };
        assert!((a.ei - brute(0.3, 0.01)).abs() < 1e-12);
        assert!((b.ei - brute(0.1, 0.4)).abs() < 1e-9);
        let mut s = vec![a, b];
        rank_candidates(&mut s, Policy::Ei, 0);
        assert_eq!(s[0].molecule_id, "b");
    }

    #[test]
    fn shortlist_skips_infeasible() {
        let mut s = vec![cand("a", 0.0, 0.0, 0.9), cand("b", 0.0, 0.0, 0.5), cand("c", 0.0, 0.0, 0.1)];
        rank_candidates(&mut s, Policy::Ei, 0);
        assert_eq!(shortlist(&s, 50).len(), 3);
        let flags = BTreeMap::from([("a".to_string(), false)]);
        apply_feasibility(&mut s, &flags);
        let sl = shortlist(&s, 2);
        assert_eq!(sl.iter().map(|c| c.molecule_id.as_str()).collect::<Vec<_>>(), ["b", "c"]);
        assert_eq!(sl[0].rank, 2);
    }

    proptest! {
        #[test]
        fn ei_nonnegative(mu in -5.0f64..5.0, sigma in 0.0f64..5.0, best in -5.0f64..5.0, xi in 0.0f64..1.0) {
            prop_assert!(expected_improvement(mu, sigma, best, xi) >= 0.0);
        }

        #[test]
        fn ei_increases_in_mu(mu in -2.0f64..2.0, d in 1e-3f64..1.0, sigma in 0.05f64..3.0) {
            prop_assert!(expected_improvement(mu + d, sigma, 0.1, 0.05) > expected_improvement(mu, sigma, 0.1, 0.05));
        }

        #[test]
        fn ei_increases_in_sigma_below_threshold(imp in -1.0f64..0.0, s in 0.01f64..2.0, d in 1e-3f64..1.0) {
            prop_assert!(expected_improvement(imp, s + d, 0.0, 0.0) >= expected_improvement(imp, s, 0.0, 0.0));
        }

        #[test]
        fn percentile_is_permutation_invariant(mut v in proptest::collection::vec(-1.0f64..1.0, 1..40), q in 0.01f64..0.99) {
            let a = robust_incumbent(&v, q).unwrap();
            v.reverse();
            prop_assert_eq!(a, robust_incumbent(&v, q).unwrap());
        }
    }
}
