#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub const BIN: &str = env!("CARGO_BIN_EXE_alprio");

pub fn alprio(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

/// Runs and requires exit 0; returns stdout.
pub fn ok(args: &[&str]) -> String {
    let out = alprio(args);
    assert!(
        out.status.success(),
        "alprio {args:?} exited {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn field(csv_line: &str, i: usize) -> String {
    csv_line.split(',').nth(i).unwrap().to_string()
}

/// Two full rounds from synthetic inputs. Every report ends up as a file in
/// `dir`; returns the paths that must be reproducible.
pub fn pipeline(dir: &Path, seed: u64, extra: &[&str]) -> Vec<PathBuf> {
    let d = |p: &str| dir.join(p).to_string_lossy().into_owned();
    let seed = seed.to_string();
    let state = d("campaign");
    let run = |args: &[&str]| {
        let mut all: Vec<&str> = vec!["--seed", &seed, "--state", &state];
        all.extend_from_slice(extra);
        all.extend_from_slice(args);
        ok(&all)
    };
    run(&["demo", "--out", &d("fx"), "--size", "300", "--hot", "36"]);
    run(&[
        "init",
        "--molecules",
        &d("fx/molecules.csv"),
        "--results",
        &d("fx/results.csv"),
        "--soft-samples",
        &d("fx/soft_samples.csv"),
    ]);
    run(&["open-round"]);
    let sl = run(&["retrain"]);
    std::fs::write(d("shortlist_round1.csv"), &sl).unwrap();
    let first = field(sl.lines().nth(1).unwrap(), 1);
    let second = field(sl.lines().nth(2).unwrap(), 1);
    run(&["review", &first, "--infeasible", "--note", "not purchasable"]);
    run(&["record", "--molecule", &second, "--pce-additive", "20.87", "--pce-control", "19.25"]);
    run(&["close-round"]);
    run(&["open-round"]);
    run(&["retrain", "--out", &d("shortlist_round2.csv")]);
    let loo = run(&["loo", "--predictions", &d("loo_predictions.csv")]);
    std::fs::write(d("loo_report.csv"), loo).unwrap();
    let abl = run(&["ablate-policy", "--k", "20", "--replicates", "5"]);
    std::fs::write(d("ablation_report.csv"), abl).unwrap();
    [
        "campaign/campaign.state",
        "campaign/campaign.log",
        "shortlist_round1.csv",
        "shortlist_round2.csv",
        "loo_report.csv",
        "loo_predictions.csv",
        "ablation_report.csv",
    ]
    .iter()
    .map(|p| dir.join(p))
    .collect()
}
