//! CSV writers for evaluation reports. Missing values are written as empty
//! fields; floats use Rust's shortest round-trip formatting.

use std::io::Write;

use super::ablation::AblationReport;
use super::bench::BenchmarkReport;
use super::bootstrap::BootstrapInterval;
use super::loo::{LooReport, RepresentationAblation};

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn ci(v: Option<&BootstrapInterval>) -> [String; 3] {
    match v {
        Some(b) => [b.lo.to_string(), b.hi.to_string(), b.flagged.to_string()],
        None => Default::default(),
    }
}

pub const LOO_HEADER: [&str; 15] = [
    "mode",
    "n",
    "spearman",
    "spearman_lo",
    "spearman_hi",
    "spearman_flagged",
    "topk_fraction",
    "topk_overlap",
    "topk_overlap_lo",
    "topk_overlap_hi",
    "topk_overlap_flagged",
    "rmse",
    "rmse_improvement_vs_hard",
    "rmse_improvement_lo",
    "rmse_improvement_hi",
];

/// `loo_report.csv`: one row per representation mode. Interval columns are
/// empty when no bootstrap was run.
pub fn write_loo_report<W: Write>(
    reports: &[LooReport],
    ablation: Option<&RepresentationAblation>,
    writer: W,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(LOO_HEADER)?;
    for r in reports {
        let iv = ablation.and_then(|a| a.intervals.iter().find(|i| i.mode == r.representation_mode));
        let [s_lo, s_hi, s_flag] = ci(iv.map(|i| &i.spearman));
        let [o_lo, o_hi, o_flag] = ci(iv.map(|i| &i.topk_overlap));
        let [i_lo, i_hi, _] = ci(iv.map(|i| &i.rmse_improvement));
        w.write_record([
            r.representation_mode.name().to_string(),
            r.truth.len().to_string(),
            opt(r.metrics.spearman),
            s_lo,
            s_hi,
            s_flag,
            r.topk_fraction.to_string(),
            r.metrics.topk_overlap.to_string(),
            o_lo,
            o_hi,
            o_flag,
            r.metrics.rmse.to_string(),
            opt(r.rmse_improvement_vs_hard),
            i_lo,
            i_hi,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-fold predictions: `mode,molecule_id,truth,predicted`.
pub fn write_loo_predictions<W: Write>(reports: &[LooReport], writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["mode", "molecule_id", "truth", "predicted"])?;
    for r in reports {
        for ((id, t), p) in r.molecule_ids.iter().zip(&r.truth).zip(&r.predicted) {
            w.write_record([r.representation_mode.name(), id, &t.to_string(), &p.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `ablation_report.csv`: one row per policy.
pub fn write_ablation_report<W: Write>(report: &AblationReport, writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "policy",
        "k",
        "pool_size",
        "replicates",
        "mean_mu",
        "mean_mu_std",
        "mean_sigma",
        "mean_sigma_std",
        "mean_ei",
        "mean_ei_std",
        "overlap_with_ei",
        "overlap_with_ei_std",
    ])?;
    for p in &report.policies {
        let reps = if p.mean_ei_std.is_some() { report.random_replicates } else { 1 };
        w.write_record([
            p.policy.name().to_string(),
            p.k.to_string(),
            report.pool_size.to_string(),
            reps.to_string(),
            p.mean_mu.to_string(),
            opt(p.mean_mu_std),
            p.mean_sigma.to_string(),
            opt(p.mean_sigma_std),
            p.mean_ei.to_string(),
            opt(p.mean_ei_std),
            p.overlap_with_ei.to_string(),
            opt(p.overlap_with_ei_std),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `benchmark_report.csv`: one row per model.
pub fn write_benchmark_report<W: Write>(report: &BenchmarkReport, writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "model",
        "correct",
        "total",
        "accuracy",
        "ci_lo",
        "ci_hi",
        "reference",
        "b",
        "c",
        "p_mcnemar",
        "p_holm",
    ])?;
    for r in &report.rows {
        w.write_record([
            r.model.clone(),
            r.correct.to_string(),
            r.total.to_string(),
            r.accuracy.to_string(),
            r.ci_lo.to_string(),
            r.ci_hi.to_string(),
            report.reference.clone(),
            r.b.map(|v| v.to_string()).unwrap_or_default(),
            r.c.map(|v| v.to_string()).unwrap_or_default(),
            opt(r.p_raw),
            opt(r.p_holm),
        ])?;
    }
    w.flush()?;
    Ok(())
}
