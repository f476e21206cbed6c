//! One PASS/FAIL line per acceptance criterion. Expected values are either
//! published figures or computed here independently of the library code.
//!
//! Exits non-zero on any failure that is not listed in `KNOWN_FAILURES`.
//! Known failures still print FAIL; they are input-data limitations that
//! no implementation can satisfy.

mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use alprio_core::acquire::{expected_improvement, robust_incumbent, AcquisitionConfig, Policy};
use alprio_core::domain::{relative_change, ExperimentResult, MoleculeRecord};
use alprio_core::featurize::{assemble, RepresentationMode};
use alprio_core::par::Execution;
use alprio_core::stats;
use alprio_core::surrogate::{log_marginal_likelihood, FitConfig, GpPosterior, KernelParams};
use alprio_core::synthetic::{self, simulate_campaign, SimulationConfig};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The summary means for the 6-CDQ group differ by 0.88, not the published
/// +0.89, which was computed from unrounded device-level values.
const KNOWN_FAILURES: &[&str] = &["welch-summaries"];

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn wilson() -> Outcome {
    let t = Instant::now();
    let (lo, hi) = stats::wilson_interval(25, 32, 0.95).unwrap();
    let dt = t.elapsed();
    let cli = common::ok(&["bench-stats", "--k", "25", "--n", "32"]);
    check(
        within(lo, 0.612, 0.001) && within(hi, 0.890, 0.001) && dt < Duration::from_millis(1) && cli == "0.781 (0.612, 0.890)\n",
        format!("({lo:.4}, {hi:.4}) in {dt:?}; cli `{}`", cli.trim()),
    )
}

fn trap_density() -> Outcome {
    let rows = [(0.883, 8.07e15), (0.595, 5.44e15), (0.542, 4.96e15)];
    let mut ok = true;
    let mut parts = Vec::new();
    for (v, published) in rows {
        let n = stats::trap_density(46.5, v, 750e-9).unwrap();
        // SI oracle: C/(V m) * V / (C m^2) = m^-3, then per cm^3
        let oracle = 2.0 * 46.5 * 8.85e-12 * v / (1.6e-19 * 750e-9_f64.powi(2)) * 1e-6;
        ok &= ((n - published) / published).abs() <= 0.005 && ((n - oracle) / oracle).abs() < 1e-12;
        parts.push(format!("{n:.3e}"));
    }
    let cli = common::ok(&["trapdensity", "--eps", "46.5", "--vtfl", "0.542", "--thickness", "750e-9"]);
    ok &= cli == "4.96e15\n";
    check(ok, parts.join(" / "))
}

fn welch_summaries() -> Outcome {
    // (name, treated mean, treated sd, published delta, published CI, p bound)
    let control = (19.25, 0.28, 24);
    let rows = [
        ("6-CDQ", 20.13, 0.25, 0.89, (0.73, 1.04), 1e-12),
        ("2-CNA", 20.87, 0.25, 1.62, (1.47, 1.77), 1e-20),
        ("Boc-DCPy", 16.76, 0.58, -2.49, (-2.75, -2.22), 1e-15),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, m, s, delta, (clo, chi), p_max) in rows {
        let r = stats::welch_t(m, s, 24, control.0, control.1, control.2).unwrap();
        let est = r.estimate.unwrap();
        let (lo, hi) = r.ci.unwrap();
        let delta_ok = format!("{est:+.2}") == format!("{delta:+.2}");
        let ci_ok = within(lo, clo, 0.02) && within(hi, chi, 0.02);
        let p_ok = r.p_value < p_max;
        ok &= delta_ok && ci_ok && p_ok;
        let flag = |b: bool| if b { "" } else { "!" };
        parts.push(format!(
            "{name}: delta {est:+.2}{} CI ({lo:.2}, {hi:.2}){} p {:.1e}{}",
            flag(delta_ok),
            flag(ci_ok),
            r.p_value,
            flag(p_ok)
        ));
    }
    check(ok, parts.join("; "))
}

fn delta_rel() -> Outcome {
    let d = relative_change(20.87, 19.25);
    let r = ExperimentResult::new("x", 0, 20.87, 19.25).unwrap();
    // 1.62 / 19.25 by long division: 0.0841558441...
    check(within(d, 0.084156, 1e-6) && within(d, 0.0841558441, 1e-10) && d == r.delta_rel, format!("{d:.9}"))
}

fn gp() -> Outcome {
    let t = Instant::now();
    // 2x2 oracle written out by hand
    let (sf, ell, sn) = (1.3, 0.7, 0.01);
    let p = KernelParams {
        signal_variance: sf,
        length_scale: ell,
        noise_variance: sn,
    };
    let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.5]);
    let (y1, y2) = (0.3, -0.2);
    let a = 3f64.sqrt() * (1.0f64 + 0.25).sqrt() / ell;
    let k12 = sf * (1.0 + a) * (-a).exp();
    let d = sf + sn;
    let det = d * d - k12 * k12;
    let quad = (d * y1 * y1 - 2.0 * k12 * y1 * y2 + d * y2 * y2) / det;
    let oracle = -0.5 * quad - 0.5 * det.ln() - (2.0 * std::f64::consts::PI).ln();
    let lml = log_marginal_likelihood(&x, &[y1, y2], &p).unwrap();
    let lml_ok = within(lml, oracle, 1e-10);

    // noise-free interpolation on 8 points
    let xs: Vec<f64> = (0..8).map(|i| i as f64 * 0.6).collect();
    let ys: Vec<f64> = xs.iter().map(|v| v.sin()).collect();
    let gp = GpPosterior::with_params(
        DMatrix::from_column_slice(8, 1, &xs),
        &ys,
        KernelParams {
            signal_variance: 1.0,
            length_scale: 1.0,
            noise_variance: 1e-10,
        },
    )
    .unwrap();
    let worst = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (gp.predict_point(&[*x], false).unwrap().mu - y).abs())
        .fold(0.0, f64::max);

    // five-restart fit, repeated and across execution modes
    let lib = synthetic::library(60, 6, 3);
    let profiles = synthetic::profiles(&lib, 3, 10);
    let ids: Vec<String> = lib.ids().take(30).map(String::from).collect();
    let mols: Vec<&MoleculeRecord> = ids.iter().map(|id| lib.get(id).unwrap()).collect();
    let fm = assemble(&mols, &profiles, RepresentationMode::Hybrid, &ids).unwrap();
    let xt = fm.rows_for(&ids).unwrap();
    let yt: Vec<f64> = ids.iter().map(|id| synthetic::noisy_response(3, 3, id, 0.01)).collect();
    let fit = |exec| {
        let cfg = FitConfig {
            seed: 42,
            execution: exec,
            ..FitConfig::default()
        };
        GpPosterior::fit(&xt, &yt, &cfg).unwrap().snapshot()
    };
    let s1 = fit(Execution::Parallel);
    let deterministic = s1 == fit(Execution::Parallel) && s1 == fit(Execution::Sequential);
    let dt = t.elapsed();
    check(
        lml_ok && worst < 1e-4 && deterministic && dt < Duration::from_secs(10),
        format!(
            "LML {lml:.12} vs {oracle:.12}; interpolation error {worst:.1e}; deterministic {deterministic}; {dt:.2?}"
        ),
    )
}

fn ei() -> Outcome {
    let mut limit_err: f64 = 0.0;
    for imp in [-0.3, -1e-3, 0.0, 1e-3, 0.2] {
        let (best, xi) = (0.1, 0.05);
        let mu = best + xi + imp;
        for sigma in [0.0, 1e-12, 1e-15] {
            limit_err = limit_err.max((expected_improvement(mu, sigma, best, xi) - f64::max(imp, 0.0)).abs());
        }
    }
    let phi0 = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let at_zero = expected_improvement(0.15, 1.0, 0.1, 0.05);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut negative = 0;
    for _ in 0..100_000 {
        let mu = rng.random_range(-2.0..2.0);
        let sigma = if rng.random_bool(0.05) { 0.0 } else { rng.random_range(0.0..3.0) };
        let best = rng.random_range(-2.0..2.0);
        let xi = rng.random_range(0.0..0.2);
        let v = expected_improvement(mu, sigma, best, xi);
        if !(v >= 0.0 && v.is_finite()) {
            negative += 1;
        }
    }
    check(
        limit_err <= 1e-9 && within(at_zero, 0.398942, 1e-6) && within(at_zero, phi0, 1e-12) && negative == 0,
        format!("limit error {limit_err:.1e}; EI(0, 1) = {at_zero:.9}; {negative} bad of 100000"),
    )
}

fn mcnemar_holm() -> Outcome {
    let p = stats::mcnemar_exact(5, 1).p_value;
    // 2 * (C(6,0) + C(6,1)) / 2^6
    let oracle = 2.0 * (1.0 + 6.0) / 64.0;
    let holm = stats::holm_bonferroni(&[0.01, 0.04, 0.03]).unwrap();
    check(p == 0.21875 && p == oracle && holm == [0.03, 0.06, 0.06], format!("p = {p}; Holm {holm:?}"))
}

fn incumbent() -> Outcome {
    let v = robust_incumbent(&[0.0, 0.02, 0.05, 0.08, 0.10], 0.8).unwrap();
    // position 0.8 * 4 = 3.2 between 0.08 and 0.10
    check(within(v, 0.084, 2.0 * f64::EPSILON * 0.084), format!("{v}"))
}

fn policy_ablation() -> Outcome {
    let t = Instant::now();
    let seed = 17;
    let lib = synthetic::library(1000, 6, seed);
    let profiles = synthetic::profiles(&lib, seed, 10);
    let ids: Vec<String> = lib.ids().map(String::from).collect();
    let train: Vec<String> = ids[..36].to_vec();
    let pool: Vec<String> = ids[36..].to_vec();
    let mols: Vec<&MoleculeRecord> = lib.records().iter().collect();
    let fm = assemble(&mols, &profiles, RepresentationMode::Hybrid, &train).unwrap();
    let y: Vec<f64> = train.iter().map(|id| synthetic::noisy_response(seed, seed, id, 0.01)).collect();
    let gp = GpPosterior::fit(
        &fm.rows_for(&train).unwrap(),
        &y,
        &FitConfig {
            seed,
            ..FitConfig::default()
        },
    )
    .unwrap();
    let r = stats::policy_ablation(&gp, &fm, &pool, 50, 20, seed, &AcquisitionConfig::default()).unwrap();
    let dt = t.elapsed();
    let get = |p| r.policy(p).unwrap();
    let (ei, mean, unc, rnd) = (get(Policy::Ei), get(Policy::Mean), get(Policy::Uncertainty), get(Policy::Random));
    let all = [ei, mean, unc, rnd];
    let tol = 1e-12;
    let mu_max = all.iter().all(|p| mean.mean_mu >= p.mean_mu - tol);
    let sigma_max = all.iter().all(|p| unc.mean_sigma >= p.mean_sigma - tol);
    let ei_max = all.iter().all(|p| ei.mean_ei >= p.mean_ei - tol);
    check(
        mu_max && sigma_max && ei_max && ei.mean_ei > rnd.mean_ei && dt < Duration::from_secs(30),
        format!(
            "mean EI: ei {:.4}, mean {:.4}, uncertainty {:.4}, random {:.4} +/- {:.4}; {dt:.2?}",
            ei.mean_ei,
            mean.mean_ei,
            unc.mean_ei,
            rnd.mean_ei,
            rnd.mean_ei_std.unwrap_or(f64::NAN)
        ),
    )
}

fn closed_loop() -> Outcome {
    let t = Instant::now();
    let sim = SimulationConfig::default();
    let improved = (0..20)
        .filter(|&seed| {
            let o = simulate_campaign(seed, &sim).unwrap();
            o.shortlist_true_mean[2] > o.shortlist_true_mean[0]
        })
        .count();
    let dt = t.elapsed();
    check(improved >= 18 && dt < Duration::from_secs(120), format!("{improved}/20 improved; {dt:.2?}"))
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = common::pipeline(a.path(), 5, &[]);
    let fb = common::pipeline(b.path(), 5, &[]);
    let differing: Vec<String> = fa
        .iter()
        .zip(&fb)
        .filter(|(x, y)| std::fs::read(x).unwrap() != std::fs::read(y).unwrap())
        .map(|(x, _)| x.file_name().unwrap().to_string_lossy().into_owned())
        .collect();
    let state = a.path().join("campaign");
    let replay = common::alprio(&["--state", state.to_str().unwrap(), "replay"]);
    let replay_ok = replay.status.success();
    check(
        differing.is_empty() && replay_ok,
        format!(
            "{} files compared, differing {differing:?}; {}",
            fa.len(),
            String::from_utf8_lossy(&replay.stdout).trim()
        ),
    )
}

/// Runs only when the released dataset is unpacked under `data/`.
fn paper_data() -> Option<Outcome> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data");
    let f = |n: &str| root.join(n);
    if !(f("molecules.csv").exists() && f("results.csv").exists() && f("soft_samples.csv").exists()) {
        return None;
    }
    let lib = alprio_core::domain::ingest_molecules(f("molecules.csv")).ok()?;
    let results = alprio_core::domain::ingest_results(f("results.csv")).ok()?;
    let samples = alprio_core::domain::ingest_soft_samples(f("soft_samples.csv")).ok()?;
    let profiles = alprio_core::featurize::aggregate_all(&samples).ok()?;
    let fit = FitConfig::default();
    let hard = stats::loo_evaluate(&lib, &profiles, &results, RepresentationMode::Hard, &fit).ok()?;
    let hybrid = stats::loo_evaluate(&lib, &profiles, &results, RepresentationMode::Hybrid, &fit).ok()?;
    let (hs, ys) = (hard.metrics.spearman.unwrap_or(f64::NAN), hybrid.metrics.spearman.unwrap_or(f64::NAN));
    Some(check(
        within(hs, 0.274, 0.03)
            && within(ys, 0.394, 0.03)
            && hard.metrics.topk_overlap == 0.125
            && hybrid.metrics.topk_overlap == 0.375,
        format!(
            "hard {hs:.3}/{:.3}, hybrid {ys:.3}/{:.3}",
            hard.metrics.topk_overlap, hybrid.metrics.topk_overlap
        ),
    ))
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("wilson-interval", wilson),
        ("trap-density", trap_density),
        ("welch-summaries", welch_summaries),
        ("delta-rel", delta_rel),
        ("gp-correctness", gp),
        ("expected-improvement", ei),
        ("mcnemar-holm", mcnemar_holm),
        ("robust-incumbent", incumbent),
        ("policy-ablation", policy_ablation),
        ("closed-loop", closed_loop),
        ("determinism-persistence", determinism),
    ];
    let mut unexpected = 0;
    for (name, f) in criteria {
        let o = f();
        let tag = if o.pass { "PASS" } else { "FAIL" };
        let known = !o.pass && KNOWN_FAILURES.contains(&name);
        if !o.pass && !known {
            unexpected += 1;
        }
        let note = if known { " (known: input summaries cannot reproduce this)" } else { "" };
        println!("{tag} {name}: {}{note}", o.detail);
    }
    match paper_data() {
        Some(o) => {
            if !o.pass {
                unexpected += 1;
            }
            println!("{} paper-data-replay: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        }
        None => println!("SKIP paper-data-replay: released dataset not found under data/"),
    }
    if unexpected > 0 {
        eprintln!("{unexpected} acceptance criteria failed");
        std::process::exit(1);
    }
}
