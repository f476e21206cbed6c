use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bootstrap::{bootstrap_ci_with, BootstrapInterval};
use super::rank::{rmse, spearman, topk_overlap};
use super::{targets_by_molecule, StatsError};
use crate::domain::{ExperimentResult, Library, MoleculeRecord};
use crate::featurize::{assemble, RepresentationMode, SoftProfile};
use crate::par::{self, Execution};
use crate::surrogate::{FitConfig, GpPosterior};

pub const DEFAULT_TOPK_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LooMetrics {
    /// `None` when rank variance is zero on either side.
    pub spearman: Option<f64>,
    pub topk_overlap: f64,
    pub rmse: f64,
}

impl LooMetrics {
    pub fn compute(truth: &[f64], predicted: &[f64], fraction: f64) -> Result<Self, StatsError> {
        let spearman = match spearman(predicted, truth) {
            Ok(r) => Some(r),
            Err(StatsError::Undefined(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(LooMetrics {
            spearman,
            topk_overlap: topk_overlap(predicted, truth, fraction)?,
            rmse: rmse(predicted, truth)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooReport {
    pub representation_mode: RepresentationMode,
    pub topk_fraction: f64,
    /// Fold order: molecule ids ascending.
    pub molecule_ids: Vec<String>,
    pub truth: Vec<f64>,
    pub predicted: Vec<f64>,
    pub metrics: LooMetrics,
    /// RMSE(hard) - RMSE(this mode); filled in when a hard baseline was run
    /// on the same folds.
    pub rmse_improvement_vs_hard: Option<f64>,
}

impl LooReport {
    /// Metrics recomputed from the stored per-fold predictions.
    pub fn recompute(&self) -> Result<LooMetrics, StatsError> {
        LooMetrics::compute(&self.truth, &self.predicted, self.topk_fraction)
    }
}

/// Leave-one-out over every molecule with a result: each fold refits the
/// scaler and the surrogate on the remaining molecules only and predicts the
/// held-out μ.
pub fn loo_evaluate(
    library: &Library,
    profiles: &BTreeMap<String, SoftProfile>,
    results: &[ExperimentResult],
    mode: RepresentationMode,
    fit_cfg: &FitConfig,
) -> Result<LooReport, StatsError> {
    loo_evaluate_with(fit_cfg.execution, library, profiles, results, mode, fit_cfg, DEFAULT_TOPK_FRACTION)
}

pub fn loo_evaluate_with(
    exec: Execution,
    library: &Library,
    profiles: &BTreeMap<String, SoftProfile>,
    results: &[ExperimentResult],
    mode: RepresentationMode,
    fit_cfg: &FitConfig,
    topk_fraction: f64,
) -> Result<LooReport, StatsError> {
    let targets = targets_by_molecule(results);
    if targets.len() < 3 {
        return Err(StatsError::TooFew { needed: 3, got: targets.len() });
    }
    let mols: Vec<&MoleculeRecord> = targets
        .keys()
        .map(|id| library.get(id).ok_or_else(|| StatsError::UnknownMolecule(id.clone())))
        .collect::<Result<_, _>>()?;
    let ids: Vec<String> = targets.keys().cloned().collect();
    let truth: Vec<f64> = targets.values().copied().collect();

    let folds = par::map_range(exec, ids.len(), |held| {
        predict_held_out(&mols, profiles, mode, fit_cfg, &ids, &truth, held).map_err(|e| StatsError::Fold {
            molecule_id: ids[held].clone(),
            source: Box::new(e),
        })
    });
    let predicted = folds.into_iter().collect::<Result<Vec<f64>, _>>()?;
    let metrics = LooMetrics::compute(&truth, &predicted, topk_fraction)?;
    Ok(LooReport {
        representation_mode: mode,
        topk_fraction,
        molecule_ids: ids,
        truth,
        predicted,
        metrics,
        rmse_improvement_vs_hard: if mode == RepresentationMode::Hard { Some(0.0) } else { None },
    })
}

fn predict_held_out(
    mols: &[&MoleculeRecord],
    profiles: &BTreeMap<String, SoftProfile>,
    mode: RepresentationMode,
    fit_cfg: &FitConfig,
    ids: &[String],
    truth: &[f64],
    held: usize,
) -> Result<f64, StatsError> {
    let train_ids: Vec<String> = ids
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != held)
        .map(|(_, id)| id.clone())
        .collect();
    let train_y: Vec<f64> = truth
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != held)
        .map(|(_, &y)| y)
        .collect();
    let fm = assemble(mols, profiles, mode, &train_ids)?;
    let x = fm.rows_for(&train_ids)?;
    let gp = GpPosterior::fit(&x, &train_y, fit_cfg)?;
    Ok(gp.predict_point(fm.row(held), false)?.mu)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeIntervals {
    pub mode: RepresentationMode,
    pub spearman: BootstrapInterval,
    pub topk_overlap: BootstrapInterval,
    pub rmse_improvement: BootstrapInterval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentationAblation {
    pub reports: Vec<LooReport>,
    pub intervals: Vec<ModeIntervals>,
    pub bootstrap_replicates: usize,
    pub seed: u64,
}

/// LOO for each mode on shared folds, with a hard-feature baseline for RMSE
/// improvement and additive-level bootstrap intervals over the stored
/// predictions. Every mode's intervals use the same resampled index sets.
pub fn ablate_representation(
    library: &Library,
    profiles: &BTreeMap<String, SoftProfile>,
    results: &[ExperimentResult],
    modes: &[RepresentationMode],
    fit_cfg: &FitConfig,
    bootstrap_replicates: usize,
    seed: u64,
) -> Result<RepresentationAblation, StatsError> {
    let exec = fit_cfg.execution;
    let hard = loo_evaluate_with(
        exec,
        library,
        profiles,
        results,
        RepresentationMode::Hard,
        fit_cfg,
        DEFAULT_TOPK_FRACTION,
    )?;
    let mut reports = Vec::with_capacity(modes.len());
    for &mode in modes {
        let mut r = if mode == RepresentationMode::Hard {
            hard.clone()
        } else {
            loo_evaluate_with(exec, library, profiles, results, mode, fit_cfg, DEFAULT_TOPK_FRACTION)?
        };
        r.rmse_improvement_vs_hard = Some(hard.metrics.rmse - r.metrics.rmse);
        reports.push(r);
    }

    let n = hard.truth.len();
    let k_fraction = DEFAULT_TOPK_FRACTION;
    let mut intervals = Vec::with_capacity(reports.len());
    for r in &reports {
        let pick = |v: &[f64], idx: &[usize]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
        let spearman_ci = bootstrap_ci_with(
            exec,
            n,
            |idx| spearman(&pick(&r.predicted, idx), &pick(&r.truth, idx)).ok(),
            bootstrap_replicates,
            seed,
        )?;
        let overlap_ci = bootstrap_ci_with(
            exec,
            n,
            |idx| topk_overlap(&pick(&r.predicted, idx), &pick(&r.truth, idx), k_fraction).ok(),
            bootstrap_replicates,
            seed,
        )?;
        let improvement_ci = bootstrap_ci_with(
            exec,
            n,
            |idx| {
                let t = pick(&r.truth, idx);
                let base = rmse(&pick(&hard.predicted, idx), &t).ok()?;
                let cur = rmse(&pick(&r.predicted, idx), &t).ok()?;
                Some(base - cur)
            },
            bootstrap_replicates,
            seed,
        )?;
        intervals.push(ModeIntervals {
            mode: r.representation_mode,
            spearman: spearman_ci,
            topk_overlap: overlap_ci,
            rmse_improvement: improvement_ci,
        });
    }
    Ok(RepresentationAblation {
        reports,
        intervals,
        bootstrap_replicates,
        seed,
    })
}
