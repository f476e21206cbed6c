use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{replicate_seed, StatsError};
use crate::acquire::{rank_candidates, score_pool_with, AcquisitionConfig, Policy, ScoredCandidate};
use crate::featurize::FeatureMatrix;
use crate::par::{self, Execution};
use crate::surrogate::GpPosterior;

/// Top-k summary for one policy. For the random policy every value is the
/// mean over replicates and the `_std` fields hold the population standard
/// deviation across replicates; for the others they are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: Policy,
    pub k: usize,
    pub mean_mu: f64,
    pub mean_sigma: f64,
    pub mean_ei: f64,
    /// Fraction of this policy's top-k also in the EI top-k.
    pub overlap_with_ei: f64,
    pub mean_mu_std: Option<f64>,
    pub mean_sigma_std: Option<f64>,
    pub mean_ei_std: Option<f64>,
    pub overlap_with_ei_std: Option<f64>,
    pub top_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub pool_size: usize,
    pub k: usize,
    pub random_replicates: usize,
    pub seed: u64,
    pub policies: Vec<PolicySummary>,
}

impl AblationReport {
    pub fn policy(&self, p: Policy) -> Option<&PolicySummary> {
        self.policies.iter().find(|s| s.policy == p)
    }
}

struct TopK {
    ids: Vec<String>,
    mu: f64,
    sigma: f64,
    ei: f64,
}

fn top_k(scored: &[ScoredCandidate], policy: Policy, seed: u64, k: usize) -> TopK {
    let mut ranked = scored.to_vec();
    rank_candidates(&mut ranked, policy, seed);
    ranked.truncate(k);
    let kf = k as f64;
    TopK {
        mu: ranked.iter().map(|c| c.mu).sum::<f64>() / kf,
        sigma: ranked.iter().map(|c| c.sigma).sum::<f64>() / kf,
        ei: ranked.iter().map(|c| c.ei).sum::<f64>() / kf,
        ids: ranked.into_iter().map(|c| c.molecule_id).collect(),
    }
}

fn overlap(a: &[String], b: &HashSet<&str>) -> f64 {
    a.iter().filter(|id| b.contains(id.as_str())).count() as f64 / a.len() as f64
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Ranks one scored pool under each policy and summarizes the top-k sets.
/// `cfg` supplies ξ and the incumbent quantile; its policy field is ignored.
pub fn policy_ablation(
    gp: &GpPosterior,
    fm: &FeatureMatrix,
    pool_ids: &[String],
    k: usize,
    random_replicates: usize,
    seed: u64,
    cfg: &AcquisitionConfig,
) -> Result<AblationReport, StatsError> {
    policy_ablation_with(Execution::default(), gp, fm, pool_ids, k, random_replicates, seed, cfg)
}

#[allow(clippy::too_many_arguments)]
pub fn policy_ablation_with(
    exec: Execution,
    gp: &GpPosterior,
    fm: &FeatureMatrix,
    pool_ids: &[String],
    k: usize,
    random_replicates: usize,
    seed: u64,
    cfg: &AcquisitionConfig,
) -> Result<AblationReport, StatsError> {
    if k == 0 || k > pool_ids.len() {
        return Err(StatsError::InvalidInput(format!(
            "k must be in 1..={}, got {k}",
            pool_ids.len()
        )));
    }
    if random_replicates == 0 {
        return Err(StatsError::InvalidInput("need at least one random replicate".into()));
    }
    let score_cfg = AcquisitionConfig {
        policy: Policy::Ei,
        ..*cfg
    };
    let scored = score_pool_with(exec, gp, fm, pool_ids, &score_cfg, false)?;

    let ei_top = top_k(&scored, Policy::Ei, seed, k);
    let ei_set: HashSet<&str> = ei_top.ids.iter().map(String::as_str).collect();
    let mut policies = Vec::with_capacity(4);
    for policy in [Policy::Ei, Policy::Mean, Policy::Uncertainty] {
        let t = top_k(&scored, policy, seed, k);
        policies.push(PolicySummary {
            policy,
            k,
            mean_mu: t.mu,
            mean_sigma: t.sigma,
            mean_ei: t.ei,
            overlap_with_ei: overlap(&t.ids, &ei_set),
            mean_mu_std: None,
            mean_sigma_std: None,
            mean_ei_std: None,
            overlap_with_ei_std: None,
            top_ids: t.ids,
        });
    }

    let reps = par::map_range(exec, random_replicates, |r| {
        let t = top_k(&scored, Policy::Random, replicate_seed(seed, r as u64), k);
        let o = overlap(&t.ids, &ei_set);
        (t, o)
    });
    let col = |f: &dyn Fn(&(TopK, f64)) -> f64| mean_std(&reps.iter().map(f).collect::<Vec<_>>());
    let (mu, mu_sd) = col(&|r| r.0.mu);
    let (sigma, sigma_sd) = col(&|r| r.0.sigma);
    let (ei, ei_sd) = col(&|r| r.0.ei);
    let (ov, ov_sd) = col(&|r| r.1);
    policies.push(PolicySummary {
        policy: Policy::Random,
        k,
        mean_mu: mu,
        mean_sigma: sigma,
        mean_ei: ei,
        overlap_with_ei: ov,
        mean_mu_std: Some(mu_sd),
        mean_sigma_std: Some(sigma_sd),
        mean_ei_std: Some(ei_sd),
        overlap_with_ei_std: Some(ov_sd),
        top_ids: reps[0].0.ids.clone(),
    });

    Ok(AblationReport {
        pool_size: pool_ids.len(),
        k,
        random_replicates,
        seed,
        policies,
    })
}
