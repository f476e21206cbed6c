//! Stateless commands: ingestion checks, oracle profiling, one-off fits and
//! scores, evaluation reports and the small calculators.

use std::io::Write;
use std::path::{Path, PathBuf};

use alprio_core::acquire::{score_pool_with, write_shortlist_csv, AcquisitionConfig, Policy};
use alprio_core::domain::{self, Dimension, ExperimentResult, MoleculeRecord, SoftSample, SoftScores};
use alprio_core::featurize::{assemble, FeatureMatrix, RepresentationMode};
use alprio_core::oracle::{mock_judgment, sample_molecule, PromptTemplate};
use alprio_core::stats::{self, report};
use alprio_core::surrogate::GpPosterior;
use alprio_core::{par, synthetic};
use anyhow::Context;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{read_ids, DataArgs, Dataset};
use crate::exit::{self, invalid};
use crate::output::{emit_scalar, emit_table, table};
use crate::Ctx;

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> anyhow::Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn write_file(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn ingest(
    ctx: &Ctx,
    molecules: Option<PathBuf>,
    results: Option<PathBuf>,
    soft_samples: Option<PathBuf>,
    benchmark: Option<PathBuf>,
) -> anyhow::Result<i32> {
    let mut rows: Vec<[String; 4]> = Vec::new();
    let library = molecules.as_ref().map(domain::ingest_molecules).transpose()?;
    if let (Some(p), Some(lib)) = (&molecules, &library) {
        rows.push([
            p.display().to_string(),
            "molecules".into(),
            lib.len().to_string(),
            format!("{} hard descriptors", lib.descriptor_names().len()),
        ]);
    }
    if let Some(p) = &results {
        let rs = domain::ingest_results(p)?;
        if let Some(lib) = &library {
            if let Some(r) = rs.iter().find(|r| !lib.contains(&r.molecule_id)) {
                return Err(invalid(format!("result for `{}`, which is not in the library", r.molecule_id)));
            }
        }
        let distinct = stats::targets_by_molecule(&rs).len();
        rows.push([
            p.display().to_string(),
            "results".into(),
            rs.len().to_string(),
            format!("{distinct} distinct molecules"),
        ]);
    }
    if let Some(p) = &soft_samples {
        let ss = domain::ingest_soft_samples(p)?;
        let profiles = alprio_core::featurize::aggregate_all(&ss)?;
        rows.push([
            p.display().to_string(),
            "soft_samples".into(),
            ss.len().to_string(),
            format!("{} molecules", profiles.len()),
        ]);
    }
    if let Some(p) = &benchmark {
        let b = domain::ingest_benchmark(p)?;
        rows.push([
            p.display().to_string(),
            "benchmark".into(),
            b.question_ids.len().to_string(),
            format!("{} models", b.models.len()),
        ]);
    }
    if rows.is_empty() {
        return Err(invalid("nothing to ingest; pass at least one input file"));
    }
    emit_table(ctx.table_format(), table(["file", "kind", "rows", "detail"], rows)?, None)?;
    Ok(exit::OK)
}

pub fn profile(
    ctx: &Ctx,
    molecules: Option<PathBuf>,
    ids: Option<PathBuf>,
    oracle: Option<PathBuf>,
    template: Option<PathBuf>,
    out: Option<PathBuf>,
    responses: Option<PathBuf>,
) -> anyhow::Result<i32> {
    let args = DataArgs {
        molecules,
        oracle,
        ..DataArgs::default()
    };
    let mut ds = Dataset::load(&args, ctx)?;
    if let Some(p) = template {
        let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        ds.template = PromptTemplate::new(ds.template.version, text)?;
    }
    let mols: Vec<&MoleculeRecord> = match ids {
        Some(p) => read_ids(&p)?
            .iter()
            .map(|id| {
                ds.library
                    .get(id)
                    .ok_or_else(|| invalid(format!("molecule `{id}` is not in the library")))
            })
            .collect::<anyhow::Result<_>>()?,
        None => ds.library.records().iter().collect(),
    };
    let (cfg, tpl) = (&ds.oracle, &ds.template);
    let records = par::map(ctx.exec, &mols, |m| sample_molecule(cfg, m, tpl))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let all: Vec<_> = records.into_iter().flatten().collect();
    let bad = all.iter().filter(|r| !r.parse_ok).count();
    if bad > 0 {
        log::warn!("{bad} of {} responses could not be parsed and were dropped", all.len());
    }
    if let Some(p) = responses {
        let mut buf = Vec::new();
        for r in &all {
            serde_json::to_writer(&mut buf, r)?;
            buf.push(b'\n');
        }
        write_file(&p, &buf)?;
    }
    let samples: Vec<SoftSample> = all.iter().filter_map(|r| r.to_sample()).collect();
    let bytes = csv_bytes(|b| domain::write_soft_samples(&samples, b))?;
    emit_table(ctx.table_format(), bytes, out.as_deref())?;
    Ok(exit::OK)
}

/// Training rows plus `extra` candidates, featurized with a scaler fitted on
/// the training rows, and the surrogate fitted on them.
fn fit_on(ds: &mut Dataset, mode: RepresentationMode, extra: &[String]) -> anyhow::Result<(FeatureMatrix, GpPosterior, Vec<String>)> {
    ds.require_results(2)?;
    let train = ds.measured_ids();
    let all: Vec<String> = train.iter().chain(extra).cloned().collect();
    ds.ensure_profiles(&all, mode)?;
    let mols: Vec<&MoleculeRecord> = all
        .iter()
        .map(|id| {
            ds.library
                .get(id)
                .ok_or_else(|| invalid(format!("molecule `{id}` is not in the library")))
        })
        .collect::<anyhow::Result<_>>()?;
    let fm = assemble(&mols, &ds.profiles, mode, &train)?;
    let targets = stats::targets_by_molecule(&ds.results);
    let y: Vec<f64> = train.iter().map(|id| targets[id]).collect();
    let gp = GpPosterior::fit(&fm.rows_for(&train)?, &y, &ds.fit)?;
    Ok((fm, gp, train))
}

fn pool_ids(ds: &Dataset, pool: Option<PathBuf>) -> anyhow::Result<Vec<String>> {
    let measured: std::collections::BTreeSet<String> = ds.measured_ids().into_iter().collect();
    let ids = match pool {
        Some(p) => read_ids(&p)?,
        None => ds.unmeasured_ids(),
    };
    let ids: Vec<String> = ids.into_iter().filter(|id| !measured.contains(id)).collect();
    if ids.is_empty() {
        return Err(invalid("the candidate pool is empty"));
    }
    Ok(ids)
}

pub fn fit(
    ctx: &Ctx,
    data: &DataArgs,
    mode: RepresentationMode,
    features: Option<PathBuf>,
    model: Option<PathBuf>,
) -> anyhow::Result<i32> {
    let mut ds = Dataset::load(data, ctx)?;
    let (fm, gp, train) = fit_on(&mut ds, mode, &[])?;
    if let Some(p) = features {
        write_file(&p, &csv_bytes(|b| fm.write_csv(b))?)?;
    }
    if let Some(p) = model {
        write_file(&p, serde_json::to_string_pretty(&gp.snapshot())?.as_bytes())?;
    }
    let k = gp.params();
    emit_scalar(
        ctx.scalar_format(),
        &format!(
            "{} on {} molecules x {} features: signal variance {:.4}, length scale {:.4}, noise variance {:.3e}, log marginal likelihood {:.4}",
            mode,
            train.len(),
            gp.dim(),
            k.signal_variance,
            k.length_scale,
            k.noise_variance,
            gp.log_marginal_likelihood()
        ),
        ["mode", "n", "d", "signal_variance", "length_scale", "noise_variance", "log_marginal_likelihood", "jitter"],
        [
            mode.name().to_string(),
            train.len().to_string(),
            gp.dim().to_string(),
            k.signal_variance.to_string(),
            k.length_scale.to_string(),
            k.noise_variance.to_string(),
            gp.log_marginal_likelihood().to_string(),
            gp.jitter().to_string(),
        ],
    )?;
    Ok(exit::OK)
}

pub fn score(
    ctx: &Ctx,
    data: &DataArgs,
    mode: RepresentationMode,
    pool: Option<PathBuf>,
    policy: Policy,
    limit: Option<usize>,
    out: Option<PathBuf>,
) -> anyhow::Result<i32> {
    let mut ds = Dataset::load(data, ctx)?;
    let pool = pool_ids(&ds, pool)?;
    let (fm, gp, _) = fit_on(&mut ds, mode, &pool)?;
    let cfg = AcquisitionConfig {
        policy,
        seed: ctx.seed,
        ..AcquisitionConfig::default()
    };
    let mut scored = score_pool_with(ctx.exec, &gp, &fm, &pool, &cfg, ds.fit.predictive_noise)?;
    if let Some(n) = limit {
        scored.truncate(n);
    }
    emit_table(ctx.table_format(), csv_bytes(|b| write_shortlist_csv(&scored, b))?, out.as_deref())?;
    Ok(exit::OK)
}

pub fn loo(
    ctx: &Ctx,
    data: &DataArgs,
    mode: RepresentationMode,
    topk: f64,
    predictions: Option<PathBuf>,
) -> anyhow::Result<i32> {
    if !(topk > 0.0 && topk <= 1.0) {
        return Err(invalid(format!("--topk must be in (0, 1], got {topk}")));
    }
    let mut ds = Dataset::load(data, ctx)?;
    ds.require_results(3)?;
    ds.ensure_profiles(&ds.measured_ids(), mode)?;
    let r = stats::loo_evaluate_with(ctx.exec, &ds.library, &ds.profiles, &ds.results, mode, &ds.fit, topk)?;
    if let Some(p) = predictions {
        write_file(&p, &csv_bytes(|b| report::write_loo_predictions(std::slice::from_ref(&r), b))?)?;
    }
    let bytes = csv_bytes(|b| report::write_loo_report(std::slice::from_ref(&r), None, b))?;
    emit_table(ctx.table_format(), bytes, None)?;
    Ok(exit::OK)
}

pub fn ablate_representation(
    ctx: &Ctx,
    data: &DataArgs,
    replicates: usize,
    predictions: Option<PathBuf>,
) -> anyhow::Result<i32> {
    let mut ds = Dataset::load(data, ctx)?;
    ds.require_results(3)?;
    ds.ensure_profiles(&ds.measured_ids(), RepresentationMode::Hybrid)?;
    let a = stats::ablate_representation(
        &ds.library,
        &ds.profiles,
        &ds.results,
        &RepresentationMode::ALL,
        &ds.fit,
        replicates,
        ctx.seed,
    )?;
    if let Some(p) = predictions {
        write_file(&p, &csv_bytes(|b| report::write_loo_predictions(&a.reports, b))?)?;
    }
    let bytes = csv_bytes(|b| report::write_loo_report(&a.reports, Some(&a), b))?;
    emit_table(ctx.table_format(), bytes, None)?;
    Ok(exit::OK)
}

pub fn ablate_policy(
    ctx: &Ctx,
    data: &DataArgs,
    mode: RepresentationMode,
    pool: Option<PathBuf>,
    k: usize,
    replicates: usize,
) -> anyhow::Result<i32> {
    let mut ds = Dataset::load(data, ctx)?;
    let pool = pool_ids(&ds, pool)?;
    let (fm, gp, _) = fit_on(&mut ds, mode, &pool)?;
    let r = stats::policy_ablation_with(
        ctx.exec,
        &gp,
        &fm,
        &pool,
        k,
        replicates,
        ctx.seed,
        &AcquisitionConfig::default(),
    )?;
    emit_table(ctx.table_format(), csv_bytes(|b| report::write_ablation_report(&r, b))?, None)?;
    Ok(exit::OK)
}

pub fn bench_stats(
    ctx: &Ctx,
    benchmark: Option<PathBuf>,
    reference: Option<String>,
    kn: Option<(u64, u64)>,
    confidence: f64,
) -> anyhow::Result<i32> {
    if let Some((k, n)) = kn {
        let (lo, hi) = stats::wilson_interval(k, n, confidence)?;
        let acc = k as f64 / n as f64;
        emit_scalar(
            ctx.scalar_format(),
            &format!("{acc:.3} ({lo:.3}, {hi:.3})"),
            ["correct", "total", "accuracy", "ci_lo", "ci_hi"],
            [k.to_string(), n.to_string(), acc.to_string(), lo.to_string(), hi.to_string()],
        )?;
        return Ok(exit::OK);
    }
    let path = benchmark.ok_or_else(|| invalid("pass --benchmark, or --k and --n"))?;
    let sheet = domain::ingest_benchmark(&path)?;
    let reference = match reference {
        Some(r) => r,
        None => sheet
            .models
            .first()
            .map(|(m, _)| m.clone())
            .ok_or_else(|| invalid("benchmark has no model columns"))?,
    };
    let r = stats::benchmark_stats(&sheet, &reference, confidence)?;
    let bytes = csv_bytes(|b| report::write_benchmark_report(&r, b))?;
    // text falls back to the table: there is more than one line to show
    let format = ctx.format.unwrap_or(crate::output::Format::Csv);
    emit_table(format, bytes, None)?;
    Ok(exit::OK)
}

#[derive(Debug, Clone, Copy)]
pub struct Group {
    pub mean: f64,
    pub sd: f64,
    pub n: u64,
}

pub fn parse_group(s: &str) -> Result<Group, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [m, sd, n] = parts[..] else {
        return Err(format!("expected MEAN,SD,N, got `{s}`"));
    };
    let num = |v: &str| v.parse::<f64>().map_err(|e| format!("`{v}`: {e}"));
    Ok(Group {
        mean: num(m)?,
        sd: num(sd)?,
        n: n.parse().map_err(|e| format!("`{n}`: {e}"))?,
    })
}

pub fn welch(ctx: &Ctx, t: Group, c: Group) -> anyhow::Result<i32> {
    let r = stats::welch_t(t.mean, t.sd, t.n, c.mean, c.sd, c.n)?;
    let est = r.estimate.unwrap_or(t.mean - c.mean);
    let (lo, hi) = r.ci.unwrap_or((f64::NAN, f64::NAN));
    let df = r.df.unwrap_or(f64::NAN);
    emit_scalar(
        ctx.scalar_format(),
        &format!(
            "difference {est:+.2} (95% CI {lo:+.2} to {hi:+.2}), t = {:.3}, df = {df:.1}, p = {:.3e}",
            r.statistic, r.p_value
        ),
        ["estimate", "ci_lo", "ci_hi", "t", "df", "p_value"],
        [
            est.to_string(),
            lo.to_string(),
            hi.to_string(),
            r.statistic.to_string(),
            df.to_string(),
            r.p_value.to_string(),
        ],
    )?;
    Ok(exit::OK)
}

pub fn trapdensity(ctx: &Ctx, eps: f64, vtfl: f64, thickness: f64) -> anyhow::Result<i32> {
    let n = stats::trap_density(eps, vtfl, thickness)?;
    emit_scalar(
        ctx.scalar_format(),
        &format!("{n:.2e}"),
        ["epsilon_r", "v_tfl", "thickness", "trap_density_cm3"],
        [eps.to_string(), vtfl.to_string(), thickness.to_string(), n.to_string()],
    )?;
    Ok(exit::OK)
}

/// Writes molecules.csv, results.csv (hot start with the planted response)
/// and soft_samples.csv (10 mock samples per molecule) into `out`.
pub fn demo(ctx: &Ctx, out: &Path, size: usize, hot: usize) -> anyhow::Result<i32> {
    if hot < 2 || hot > size {
        return Err(invalid(format!("--hot must be in 2..={size}, got {hot}")));
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let lib = synthetic::library(size, synthetic::HARD_NAMES.len(), ctx.seed);
    let mut ids: Vec<String> = lib.ids().map(String::from).collect();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(ctx.seed));
    let results: Vec<ExperimentResult> = ids[..hot]
        .iter()
        .map(|id| synthetic::result(id, 0, synthetic::noisy_response(ctx.seed, ctx.seed, id, 0.01)))
        .collect();
    let samples: Vec<SoftSample> = lib
        .ids()
        .flat_map(|id| {
            (0..10).map(move |k| {
                let mut s = [0.0; 6];
                for d in Dimension::ALL {
                    s[d.index()] = f64::from(mock_judgment(ctx.seed, id, d, k));
                }
                SoftSample {
                    molecule_id: id.to_string(),
                    sample_idx: k,
                    scores: SoftScores(s),
                }
            })
        })
        .collect();
    let files = [
        ("molecules.csv", csv_bytes(|b| domain::write_molecules(&lib, b))?),
        ("results.csv", csv_bytes(|b| domain::write_results(&results, b))?),
        ("soft_samples.csv", csv_bytes(|b| domain::write_soft_samples(&samples, b))?),
    ];
    let mut rows = Vec::new();
    for (name, bytes) in &files {
        let p = out.join(name);
        let mut f = std::fs::File::create(&p).with_context(|| format!("creating {}", p.display()))?;
        f.write_all(bytes)?;
        let n = bytes.iter().filter(|&&b| b == b'\n').count().saturating_sub(1);
        rows.push([p.display().to_string(), name.trim_end_matches(".csv").to_string(), n.to_string(), String::new()]);
    }
    emit_table(ctx.table_format(), table(["file", "kind", "rows", "detail"], rows)?, None)?;
    Ok(exit::OK)
}
