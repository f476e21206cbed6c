//! Response bodies. Every number is copied from the campaign state; nothing
//! here recomputes a model quantity.

use std::collections::{BTreeMap, HashMap};

use alprio_core::acquire::ScoredCandidate;
use alprio_core::campaign::{CampaignState, LogEntry, Mutation, Round, RoundStatus};
use alprio_core::domain::Dimension;
use alprio_core::featurize::RepresentationMode;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub index: u32,
    pub status: RoundStatus,
    pub template_version: u32,
    pub pool_size: usize,
    pub prioritized: Option<usize>,
    pub scored: usize,
    pub shortlist: usize,
    pub tested: usize,
    pub retrain_count: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSummary {
    pub campaign_id: String,
    pub version: u64,
    pub library_size: usize,
    pub results: usize,
    pub representation: RepresentationMode,
    pub template_versions: Vec<u32>,
    pub rounds: Vec<RoundSummary>,
}

impl CampaignSummary {
    pub fn new(s: &CampaignState) -> Self {
        CampaignSummary {
            campaign_id: s.campaign_id.clone(),
            version: s.version,
            library_size: s.library.len(),
            results: s.results.len(),
            representation: s.config.representation,
            template_versions: s.templates.keys().copied().collect(),
            rounds: s
                .rounds
                .iter()
                .map(|r| RoundSummary {
                    index: r.index,
                    status: r.status,
                    template_version: r.template_version,
                    pool_size: r.pool_ids.len(),
                    prioritized: r.prioritized_ids.as_ref().map(Vec::len),
                    scored: r.scored.len(),
                    shortlist: r.shortlist.len(),
                    tested: r.tested.len(),
                    retrain_count: r.retrain_count,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub molecule_id: String,
    pub name: String,
    pub smiles: String,
    pub mu: f64,
    pub sigma: f64,
    pub ei: f64,
    /// Position in the round's full ranking, 1-based.
    pub rank: usize,
    /// Position on the shortlist, when on it.
    pub shortlist_rank: Option<usize>,
    pub feasible: bool,
    pub note: Option<String>,
    /// Soft-profile means and stds under the round's template, when profiled.
    pub soft_mean: Option<BTreeMap<String, f64>>,
    pub soft_std: Option<BTreeMap<String, f64>>,
    pub tested: bool,
    /// Mean Δ_rel over this molecule's recorded results.
    pub delta_rel: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SortKey {
    #[default]
    Ei,
    Mu,
    Sigma,
    Rank,
}

/// Builds rows for one round. Shared lookups are computed once per request.
pub struct RowBuilder<'a> {
    state: &'a CampaignState,
    round: &'a Round,
    shortlist_pos: HashMap<&'a str, usize>,
    targets: BTreeMap<String, f64>,
}

impl<'a> RowBuilder<'a> {
    pub fn new(state: &'a CampaignState, round: &'a Round) -> Self {
        RowBuilder {
            state,
            round,
            shortlist_pos: round
                .shortlist
                .iter()
                .enumerate()
                .map(|(i, c)| (c.molecule_id.as_str(), i + 1))
                .collect(),
            targets: alprio_core::stats::targets_by_molecule(&state.results),
        }
    }

    pub fn row(&self, c: &ScoredCandidate) -> CandidateRow {
        let id = c.molecule_id.as_str();
        let mol = self.state.library.get(id);
        let profile = self
            .state
            .profiles
            .get(&self.round.template_version)
            .and_then(|p| p.get(id));
        let by_dim = |v: &[f64; 6]| Dimension::ALL.iter().map(|d| (d.name().to_string(), v[d.index()])).collect();
        CandidateRow {
            molecule_id: c.molecule_id.clone(),
            name: mol.map(|m| m.name.clone()).unwrap_or_default(),
            smiles: mol.map(|m| m.smiles.clone()).unwrap_or_default(),
            mu: c.mu,
            sigma: c.sigma,
            ei: c.ei,
            rank: c.rank,
            shortlist_rank: self.shortlist_pos.get(id).copied(),
            feasible: c.feasible,
            note: self.round.feasibility.get(id).map(|f| f.note.clone()),
            soft_mean: profile.map(|p| by_dim(&p.mean)),
            soft_std: profile.map(|p| by_dim(&p.std)),
            tested: self.round.tested.iter().any(|t| t == id),
            delta_rel: self.targets.get(id).copied(),
        }
    }
}

/// All scored candidates, feasible ones first, each group ordered by `key`
/// descending with ties broken by id. With the default EI policy the
/// feasible prefix under `Ei` is the shortlist order.
pub fn sorted_candidates(round: &Round, key: SortKey) -> Vec<&ScoredCandidate> {
    let mut out: Vec<&ScoredCandidate> = round.scored.iter().collect();
    let value = |c: &ScoredCandidate| match key {
        SortKey::Ei => c.ei,
        SortKey::Mu => c.mu,
        SortKey::Sigma => c.sigma,
        SortKey::Rank => -(c.rank as f64),
    };
    out.sort_by(|a, b| {
        b.feasible
            .cmp(&a.feasible)
            .then(value(b).total_cmp(&value(a)))
            .then_with(|| a.molecule_id.cmp(&b.molecule_id))
    });
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Movement {
    New,
    Dropped,
    Kept,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffRow {
    pub molecule_id: String,
    pub rank: Option<usize>,
    pub previous_rank: Option<usize>,
    /// Positions gained; positive means the molecule moved up.
    pub moved: Option<i64>,
    pub movement: Movement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundDiff {
    pub round: u32,
    /// Round of the ranking compared against, and which of its retrains (1-based).
    pub previous_round: u32,
    pub previous_retrain: u32,
    pub rows: Vec<DiffRow>,
}

/// Compares the round's current shortlist with the ranking produced by the
/// preceding retrain in the log: the same round's previous retrain when it
/// has one, otherwise the last retrain of an earlier round. The earlier
/// shortlist is rebuilt with the feasibility flags in force at that time.
pub fn round_diff(state: &CampaignState, log: &[LogEntry], round: u32) -> Option<RoundDiff> {
    let current = state.rounds.iter().find(|r| r.index == round)?;
    if current.retrain_count == 0 {
        return None;
    }
    // Replay the rounds' shortlists from the log, keeping each round's list
    // as it stood right before its latest retrain.
    let mut shortlists: Vec<(u32, u32, Vec<String>)> = Vec::new();
    let mut replayed: Option<alprio_core::campaign::CampaignState> = None;
    for e in log {
        match &mut replayed {
            None => replayed = alprio_core::campaign::replay([&e.mutation]).ok(),
            Some(s) => {
                if s.apply(&e.mutation).is_err() {
                    return None;
                }
            }
        }
        if let (Mutation::Retrain { round: r, .. }, Some(s)) = (&e.mutation, &replayed) {
            let snapshot = s.rounds.iter().find(|x| x.index == *r)?;
            shortlists.push((*r, snapshot.retrain_count, Vec::new()));
        }
        // Track every round's shortlist after feasibility edits as well.
        if let Some(s) = &replayed {
            for entry in shortlists.iter_mut() {
                if let Some(rr) = s.rounds.iter().find(|x| x.index == entry.0) {
                    if rr.retrain_count == entry.1 {
                        entry.2 = rr.shortlist.iter().map(|c| c.molecule_id.clone()).collect();
                    }
                }
            }
        }
    }
    let latest = shortlists
        .iter()
        .rposition(|(r, n, _)| *r == round && *n == current.retrain_count)?;
    let (prev_round, prev_n, prev) = shortlists[..latest].last()?.clone();
    let now: Vec<&str> = current.shortlist.iter().map(|c| c.molecule_id.as_str()).collect();
    let prev_pos: HashMap<&str, usize> = prev.iter().enumerate().map(|(i, id)| (id.as_str(), i + 1)).collect();
    let now_pos: HashMap<&str, usize> = now.iter().enumerate().map(|(i, id)| (*id, i + 1)).collect();
    let mut rows: Vec<DiffRow> = now
        .iter()
        .map(|id| {
            let rank = now_pos[id];
            let previous_rank = prev_pos.get(id).copied();
            DiffRow {
                molecule_id: id.to_string(),
                rank: Some(rank),
                previous_rank,
                moved: previous_rank.map(|p| p as i64 - rank as i64),
                movement: if previous_rank.is_some() { Movement::Kept } else { Movement::New },
            }
        })
        .collect();
    rows.extend(prev.iter().filter(|id| !now_pos.contains_key(id.as_str())).map(|id| DiffRow {
        molecule_id: id.clone(),
        rank: None,
        previous_rank: Some(prev_pos[id.as_str()]),
        moved: None,
        movement: Movement::Dropped,
    }));
    Some(RoundDiff {
        round,
        previous_round: prev_round,
        previous_retrain: prev_n,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaPreview {
    pub pce_additive: f64,
    pub pce_control: f64,
    pub delta_rel: f64,
    /// Δ_rel in percent, rounded to two decimals.
    pub percent: f64,
    /// Display form, e.g. "+8.42% relative".
    pub display: String,
}

impl DeltaPreview {
    pub fn new(pce_additive: f64, pce_control: f64, delta_rel: f64) -> Self {
        let percent = (delta_rel * 1e4).round() / 1e2;
        DeltaPreview {
            pce_additive,
            pce_control,
            delta_rel,
            percent,
            display: format!("{percent:+.2}% relative"),
        }
    }
}
