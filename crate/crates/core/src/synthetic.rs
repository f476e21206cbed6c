//! Seeded synthetic fixtures: a molecule library with uninformative hard
//! descriptors, soft profiles drawn from the mock oracle, and a planted
//! response that depends on one soft dimension only. Used by tests, benches
//! and the `demo` command.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::acquire::AcquisitionConfig;
use crate::campaign::{init_campaign, CampaignConfig, CampaignError, CampaignState};
use crate::domain::{Dimension, ExperimentResult, Library, MoleculeRecord, SoftSample, SoftScores};
use crate::featurize::{aggregate_soft, RepresentationMode, SoftProfile};
use crate::oracle::{latent_probability, mock_judgment, OracleConfig};
use crate::surrogate::FitConfig;

pub const HARD_NAMES: [&str; 6] = [
    "hf_mol_weight",
    "hf_logp",
    "hf_tpsa",
    "hf_h_donors",
    "hf_h_acceptors",
    "hf_rot_bonds",
];

/// Control PCE used for synthetic results.
pub const CONTROL_PCE: f64 = 19.25;

const TAILS: [&str; 6] = ["O", "N", "C(=O)O", "C#N", "Cl", "c1ccccc1"];

pub fn molecule_id(i: usize) -> String {
    format!("syn{i:05}")
}

/// `n` molecules with `n_hard` (≤ 6) random hard descriptors.
pub fn library(n: usize, n_hard: usize, seed: u64) -> Library {
    let n_hard = n_hard.min(HARD_NAMES.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|i| {
            let hard = HARD_NAMES[..n_hard]
                .iter()
                .map(|name| (name.to_string(), rng.random_range(-1.0..1.0)))
                .collect();
            MoleculeRecord {
                id: molecule_id(i),
                smiles: format!("{}{}", "C".repeat(1 + i % 7), TAILS[(i / 7) % TAILS.len()]),
                name: format!("synthetic {i}"),
                hard,
            }
        })
        .collect();
    Library::new(HARD_NAMES[..n_hard].iter().map(|s| s.to_string()).collect(), records)
        .expect("synthetic library is well formed")
}

/// Aggregated mock-oracle samples for one molecule, as the oracle and
/// aggregation steps would produce them.
pub fn profile(oracle_seed: u64, molecule_id: &str, samples: usize) -> SoftProfile {
    let draws: Vec<SoftSample> = (0..samples)
        .map(|k| {
            let mut s = [0.0; 6];
            for d in Dimension::ALL {
                s[d.index()] = f64::from(mock_judgment(oracle_seed, molecule_id, d, k));
            }
            SoftSample {
                molecule_id: molecule_id.to_string(),
                sample_idx: k,
                scores: SoftScores(s),
            }
        })
        .collect();
    let mut p = aggregate_soft(molecule_id, &draws).expect("non-empty samples");
    p.n_requested = Some(samples);
    p
}

pub fn profiles(lib: &Library, oracle_seed: u64, samples: usize) -> BTreeMap<String, SoftProfile> {
    lib.ids()
        .map(|id| (id.to_string(), profile(oracle_seed, id, samples)))
        .collect()
}

/// Noise-free planted Δ_rel: increasing in the latent binding probability.
pub fn planted_response(oracle_seed: u64, molecule_id: &str) -> f64 {
    let p = latent_probability(oracle_seed, molecule_id, Dimension::Binding);
    0.2 * (p - 0.5)
}

/// An experiment result whose Δ_rel is `delta_rel` against [`CONTROL_PCE`].
pub fn result(molecule_id: &str, round: u32, delta_rel: f64) -> ExperimentResult {
    ExperimentResult::new(molecule_id, round, CONTROL_PCE * (1.0 + delta_rel), CONTROL_PCE)
        .expect("synthetic PCE in range")
}

/// Planted response plus Gaussian noise of standard deviation `noise_sd`,
/// drawn deterministically from (`noise_seed`, molecule id).
pub fn noisy_response(oracle_seed: u64, noise_seed: u64, molecule_id: &str, noise_sd: f64) -> f64 {
    let mut h: u64 = noise_seed ^ 0x9e37_79b9_7f4a_7c15;
    for b in molecule_id.bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(h);
    // Box-Muller
    let u1: f64 = 1.0 - rng.random::<f64>();
    let u2: f64 = rng.random();
    let z = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
    planted_response(oracle_seed, molecule_id) + noise_sd * z
}

/// Settings for [`simulate_campaign`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    pub library_size: usize,
    pub hot_start: usize,
    pub rounds: u32,
    pub shortlist_size: usize,
    /// Shortlist entries measured and fed back after each round.
    pub tested_per_round: usize,
    pub noise_sd: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        SimulationConfig {
            library_size: 600,
            hot_start: 5,
            rounds: 3,
            shortlist_size: 10,
            tested_per_round: 10,
            noise_sd: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOutcome {
    /// Mean noise-free response of each round's shortlist.
    pub shortlist_true_mean: Vec<f64>,
    /// Mean noise-free response over each round's whole pool.
    pub pool_true_mean: Vec<f64>,
    /// Best noise-free response in each round's pool.
    pub pool_true_max: Vec<f64>,
    pub final_state: CampaignState,
}

/// Runs a campaign against the mock oracle with the planted response as the
/// measured outcome. Each round's pool is every molecule not yet measured;
/// the top `tested_per_round` shortlist entries are measured with noise.
pub fn simulate_campaign(seed: u64, sim: &SimulationConfig) -> Result<SimulationOutcome, CampaignError> {
    let lib = library(sim.library_size, 4, seed);
    let mut ids: Vec<String> = lib.ids().map(String::from).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    ids.shuffle(&mut rng);
    let hot: Vec<ExperimentResult> = ids[..sim.hot_start]
        .iter()
        .map(|id| result(id, 0, noisy_response(seed, seed, id, sim.noise_sd)))
        .collect();
    let config = CampaignConfig {
        oracle: OracleConfig {
            seed,
            ..OracleConfig::default()
        },
        acquisition: AcquisitionConfig {
            shortlist_size: sim.shortlist_size,
            seed,
            ..AcquisitionConfig::default()
        },
        fit: FitConfig {
            seed,
            ..FitConfig::default()
        },
        representation: RepresentationMode::Hybrid,
    };
    let (mut state, _) = init_campaign(format!("simulation-{seed}"), lib, hot, config, seed)?;
    let mut out = SimulationOutcome {
        shortlist_true_mean: Vec::new(),
        pool_true_mean: Vec::new(),
        pool_true_max: Vec::new(),
        final_state: state.clone(),
    };
    let truth = |id: &str| planted_response(seed, id);
    let mean = |v: &mut dyn Iterator<Item = f64>| {
        let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        s / n as f64
    };
    for round in 1..=sim.rounds {
        let measured: std::collections::BTreeSet<String> = state.training_ids().into_iter().collect();
        let pool: Vec<String> = state.library.ids().filter(|id| !measured.contains(*id)).map(String::from).collect();
        state.open_round(pool.clone(), None, 0)?;
        state.retrain_and_shortlist()?;
        let shortlist = state.round(round)?.shortlist.clone();
        out.shortlist_true_mean.push(mean(&mut shortlist.iter().map(|c| truth(&c.molecule_id))));
        out.pool_true_mean.push(mean(&mut pool.iter().map(|id| truth(id))));
        out.pool_true_max.push(pool.iter().map(|id| truth(id)).fold(f64::MIN, f64::max));
        let tested: Vec<String> = shortlist
            .iter()
            .take(sim.tested_per_round)
            .map(|c| c.molecule_id.clone())
            .collect();
        let results = tested
            .iter()
            .map(|id| result(id, round, noisy_response(seed, seed, id, sim.noise_sd)))
            .collect();
        state.close_round(round, tested, results)?;
    }
    out.final_state = state;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::validate_smiles;

    #[test]
    fn library_is_valid_and_deterministic() {
        let a = library(50, 4, 3);
        assert_eq!(a, library(50, 4, 3));
        assert_eq!(a.descriptor_names().len(), 4);
        assert!(a.records().iter().all(|r| validate_smiles(&r.smiles)));
    }

    #[test]
    fn profile_means_are_sample_fractions() {
        let p = profile(1, "syn00001", 10);
        for m in p.mean {
            assert!((m * 10.0 - (m * 10.0).round()).abs() < 1e-12);
        }
        assert!(!p.incomplete());
    }

    #[test]
    fn responses_stay_in_range() {
        for i in 0..200 {
            let y = noisy_response(1, 2, &molecule_id(i), 0.01);
            assert!(y.abs() < 0.2);
            let r = result(&molecule_id(i), 0, y);
            assert!((r.delta_rel - y).abs() < 1e-12);
        }
    }
}
