//! Round-based campaign state machine.
//!
//! Every change to a [`CampaignState`] is a [`Mutation`]. Operations compute
//! their mutations first (including any oracle calls or surrogate fits) and
//! only then apply them, so a failed operation leaves the state untouched.
//! The applied mutations are returned for the caller to append to the log;
//! replaying the log from the initial mutation reproduces the state.

mod store;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::acquire::{self, AcquireError, AcquisitionConfig, ScoredCandidate};
use crate::domain::{ExperimentResult, Library, MoleculeRecord};
use crate::featurize::{self, FeaturizeError, RepresentationMode, SoftProfile};
use crate::oracle::{self, OracleConfig, OracleError, PromptTemplate};
use crate::par;
use crate::surrogate::{FitConfig, GpPosterior, GpSnapshot, SurrogateError};

pub use store::{CampaignStore, DirLock, LogEntry, StoreError, LOG_FILE, STATE_FILE};

pub const STATE_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("need at least {needed} results, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("a result for `{molecule_id}` in round {round} is already recorded")]
    DuplicateResult { molecule_id: String, round: u32 },
    #[error("molecule `{0}` is not in the library")]
    UnknownMolecule(String),
    #[error("round sequence error: {0}")]
    RoundSequence(String),
    #[error("no round {0}")]
    UnknownRound(u32),
    #[error("molecule `{molecule_id}` is not in the pool of round {round}")]
    NotInPool { molecule_id: String, round: u32 },
    #[error("result for `{0}`, which is not among the tested molecules")]
    UntestedResult(String),
    #[error("result for `{molecule_id}` carries round {found}, expected {expected}")]
    RoundMismatch { molecule_id: String, expected: u32, found: u32 },
    #[error("invalid pool: {0}")]
    InvalidPool(String),
    #[error("no feasible candidates remain in round {0}")]
    EmptyFeasiblePool(u32),
    #[error("no prompt template with version {0}")]
    UnknownTemplate(u32),
    #[error("template version {new} must exceed the latest version {latest}")]
    TemplateVersion { new: u32, latest: u32 },
    #[error("campaign already initialized")]
    AlreadyInitialized,
    #[error("state format version {0} is not supported")]
    FormatVersion(u32),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Featurize(#[from] FeaturizeError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
    #[error(transparent)]
    Acquire(#[from] AcquireError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct CampaignConfig {
    pub oracle: OracleConfig,
    pub acquisition: AcquisitionConfig,
    pub fit: FitConfig,
    pub representation: RepresentationMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoundStatus {
    Open,
    AwaitingResults,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityFlag {
    pub feasible: bool,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Round {
    pub index: u32,
    pub pool_ids: Vec<String>,
    /// Expert-supplied subset of the pool to score instead of the full pool.
    pub prioritized_ids: Option<Vec<String>>,
    pub template_version: u32,
    /// Molecules with results at the last retrain.
    pub training_ids: Vec<String>,
    /// Every scored candidate in rank order.
    pub scored: Vec<ScoredCandidate>,
    pub shortlist: Vec<ScoredCandidate>,
    pub feasibility: BTreeMap<String, FeasibilityFlag>,
    pub tested: Vec<String>,
    pub status: RoundStatus,
    pub retrain_count: u32,
}

impl Round {
    pub fn in_pool(&self, id: &str) -> bool {
        self.pool_ids.iter().any(|p| p == id)
    }

    /// Candidates scored in this round: the prioritized subset when given.
    pub fn selection_pool(&self) -> &[String] {
        self.prioritized_ids.as_deref().unwrap_or(&self.pool_ids)
    }

    /// SHA-256 over the canonical JSON form, hex encoded.
    pub fn content_hash(&self) -> String {
        hex_digest(&serde_json::to_vec(self).expect("round serializes"))
    }

    fn refresh_shortlist(&mut self, size: usize) {
        let flags: BTreeMap<String, bool> = self.feasibility.iter().map(|(k, v)| (k.clone(), v.feasible)).collect();
        acquire::apply_feasibility(&mut self.scored, &flags);
        self.shortlist = acquire::shortlist(&self.scored, size);
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignState {
    pub format_version: u32,
    pub campaign_id: String,
    /// Incremented by every applied mutation.
    pub version: u64,
    pub rng_seed: u64,
    pub config: CampaignConfig,
    pub library: Library,
    pub results: Vec<ExperimentResult>,
    pub templates: BTreeMap<u32, PromptTemplate>,
    /// Soft profiles per template version.
    pub profiles: BTreeMap<u32, BTreeMap<String, SoftProfile>>,
    pub rounds: Vec<Round>,
    pub current_gp: Option<GpSnapshot>,
}

/// One recorded state change. Outcomes of computation (profiles, fitted
/// posterior, scores) are stored in the mutation itself, so applying it is
/// cheap and does not depend on an oracle or optimizer.
// Init carries the whole library but occurs once per log.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Mutation {
    Init {
        campaign_id: String,
        library: Library,
        hot_start: Vec<ExperimentResult>,
        config: CampaignConfig,
        rng_seed: u64,
        template: PromptTemplate,
    },
    AddTemplate {
        template: PromptTemplate,
    },
    AddProfiles {
        template_version: u32,
        profiles: Vec<SoftProfile>,
    },
    OpenRound {
        pool_ids: Vec<String>,
        prioritized_ids: Option<Vec<String>>,
        template_version: u32,
    },
    Retrain {
        round: u32,
        training_ids: Vec<String>,
        gp: GpSnapshot,
        scored: Vec<ScoredCandidate>,
    },
    SetFeasibility {
        round: u32,
        molecule_id: String,
        feasible: bool,
        note: String,
    },
    RecordResult {
        result: ExperimentResult,
    },
    CloseRound {
        round: u32,
        tested_ids: Vec<String>,
        results: Vec<ExperimentResult>,
    },
}

impl Mutation {
    pub fn name(&self) -> &'static str {
        match self {
            Mutation::Init { .. } => "init",
            Mutation::AddTemplate { .. } => "add_template",
            Mutation::AddProfiles { .. } => "add_profiles",
            Mutation::OpenRound { .. } => "open_round",
            Mutation::Retrain { .. } => "retrain",
            Mutation::SetFeasibility { .. } => "set_feasibility",
            Mutation::RecordResult { .. } => "record_result",
            Mutation::CloseRound { .. } => "close_round",
        }
    }
}

/// Builds the initial state. Hot-start results must all carry round 0.
pub fn init_campaign(
    campaign_id: impl Into<String>,
    library: Library,
    hot_start: Vec<ExperimentResult>,
    config: CampaignConfig,
    rng_seed: u64,
) -> Result<(CampaignState, Mutation), CampaignError> {
    let m = Mutation::Init {
        campaign_id: campaign_id.into(),
        library,
        hot_start,
        config,
        rng_seed,
        template: PromptTemplate::default_v0(),
    };
    let state = CampaignState::from_init(&m)?;
    Ok((state, m))
}

/// Rebuilds a state by applying `log` in order; the first entry must be `Init`.
pub fn replay<'a>(log: impl IntoIterator<Item = &'a Mutation>) -> Result<CampaignState, CampaignError> {
    let mut it = log.into_iter();
    let first = it
        .next()
        .ok_or_else(|| CampaignError::RoundSequence("empty mutation log".into()))?;
    let mut state = CampaignState::from_init(first)?;
    for m in it {
        state.apply(m)?;
    }
    Ok(state)
}

fn check_unique(ids: &[String], what: &str) -> Result<(), CampaignError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(CampaignError::InvalidPool(format!("duplicate id `{id}` in {what}")));
        }
    }
    Ok(())
}

impl CampaignState {
    fn from_init(m: &Mutation) -> Result<Self, CampaignError> {
        let Mutation::Init {
            campaign_id,
            library,
            hot_start,
            config,
            rng_seed,
            template,
        } = m
        else {
            return Err(CampaignError::RoundSequence(format!(
                "log must start with init, found {}",
                m.name()
            )));
        };
        let mut state = CampaignState {
            format_version: STATE_FORMAT_VERSION,
            campaign_id: campaign_id.clone(),
            version: 1,
            rng_seed: *rng_seed,
            config: config.clone(),
            library: library.clone(),
            results: Vec::new(),
            templates: BTreeMap::from([(template.version, template.clone())]),
            profiles: BTreeMap::new(),
            rounds: Vec::new(),
            current_gp: None,
        };
        for r in hot_start {
            if r.round != 0 {
                return Err(CampaignError::RoundMismatch {
                    molecule_id: r.molecule_id.clone(),
                    expected: 0,
                    found: r.round,
                });
            }
            state.push_result(r.clone())?;
        }
        let distinct: BTreeSet<&str> = state.results.iter().map(|r| r.molecule_id.as_str()).collect();
        if distinct.len() < 2 {
            return Err(CampaignError::InsufficientData {
                needed: 2,
                got: distinct.len(),
            });
        }
        Ok(state)
    }

    fn push_result(&mut self, r: ExperimentResult) -> Result<(), CampaignError> {
        if !self.library.contains(&r.molecule_id) {
            return Err(CampaignError::UnknownMolecule(r.molecule_id));
        }
        if self
            .results
            .iter()
            .any(|x| x.molecule_id == r.molecule_id && x.round == r.round)
        {
            return Err(CampaignError::DuplicateResult {
                molecule_id: r.molecule_id,
                round: r.round,
            });
        }
        self.results.push(r);
        Ok(())
    }

    pub fn current_round(&self) -> Option<&Round> {
        self.rounds.last()
    }

    pub fn round(&self, index: u32) -> Result<&Round, CampaignError> {
        index
            .checked_sub(1)
            .and_then(|i| self.rounds.get(i as usize))
            .ok_or(CampaignError::UnknownRound(index))
    }

    fn round_mut(&mut self, index: u32) -> Result<&mut Round, CampaignError> {
        index
            .checked_sub(1)
            .and_then(|i| self.rounds.get_mut(i as usize))
            .ok_or(CampaignError::UnknownRound(index))
    }

    pub fn latest_template(&self) -> &PromptTemplate {
        self.templates.values().next_back().expect("init stores a template")
    }

    /// Molecule ids with at least one result, ascending.
    pub fn training_ids(&self) -> Vec<String> {
        let ids: BTreeSet<&str> = self.results.iter().map(|r| r.molecule_id.as_str()).collect();
        ids.into_iter().map(String::from).collect()
    }

    /// SHA-256 of the canonical state document.
    pub fn content_hash(&self) -> String {
        hex_digest(self.to_document().as_bytes())
    }

    /// Pretty-printed JSON; `from_document(to_document(s))` re-serializes
    /// to identical bytes.
    pub fn to_document(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("state serializes");
        s.push('\n');
        s
    }

    pub fn from_document(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Applies one mutation after validating it against the current state.
    /// On error the state is unchanged.
    pub fn apply(&mut self, m: &Mutation) -> Result<(), CampaignError> {
        let mut next = self.clone();
        next.apply_in_place(m)?;
        next.version += 1;
        *self = next;
        Ok(())
    }

    fn apply_in_place(&mut self, m: &Mutation) -> Result<(), CampaignError> {
        match m {
            Mutation::Init { .. } => return Err(CampaignError::AlreadyInitialized),
            Mutation::AddTemplate { template } => {
                let latest = self.latest_template().version;
                if template.version <= latest {
                    return Err(CampaignError::TemplateVersion {
                        new: template.version,
                        latest,
                    });
                }
                self.templates.insert(template.version, template.clone());
            }
            Mutation::AddProfiles {
                template_version,
                profiles,
            } => {
                if !self.templates.contains_key(template_version) {
                    return Err(CampaignError::UnknownTemplate(*template_version));
                }
                for p in profiles {
                    if !self.library.contains(&p.molecule_id) {
                        return Err(CampaignError::UnknownMolecule(p.molecule_id.clone()));
                    }
                }
                let slot = self.profiles.entry(*template_version).or_default();
                for p in profiles {
                    slot.insert(p.molecule_id.clone(), p.clone());
                }
            }
            Mutation::OpenRound {
                pool_ids,
                prioritized_ids,
                template_version,
            } => {
                if let Some(r) = self.current_round() {
                    if r.status != RoundStatus::Closed {
                        return Err(CampaignError::RoundSequence(format!(
                            "round {} is not closed",
                            r.index
                        )));
                    }
                }
                if !self.templates.contains_key(template_version) {
                    return Err(CampaignError::UnknownTemplate(*template_version));
                }
                if pool_ids.is_empty() {
                    return Err(CampaignError::InvalidPool("pool is empty".into()));
                }
                check_unique(pool_ids, "pool")?;
                if let Some(id) = pool_ids.iter().find(|id| !self.library.contains(id)) {
                    return Err(CampaignError::UnknownMolecule(id.clone()));
                }
                let index = self.rounds.len() as u32 + 1;
                if let Some(pri) = prioritized_ids {
                    check_unique(pri, "prioritized set")?;
                    let pool: BTreeSet<&str> = pool_ids.iter().map(String::as_str).collect();
                    if let Some(id) = pri.iter().find(|id| !pool.contains(id.as_str())) {
                        return Err(CampaignError::NotInPool {
                            molecule_id: id.clone(),
                            round: index,
                        });
                    }
                }
                self.rounds.push(Round {
                    index,
                    pool_ids: pool_ids.clone(),
                    prioritized_ids: prioritized_ids.clone(),
                    template_version: *template_version,
                    training_ids: Vec::new(),
                    scored: Vec::new(),
                    shortlist: Vec::new(),
                    feasibility: BTreeMap::new(),
                    tested: Vec::new(),
                    status: RoundStatus::Open,
                    retrain_count: 0,
                });
            }
            Mutation::Retrain {
                round,
                training_ids,
                gp,
                scored,
            } => {
                self.require_current(*round)?;
                let size = self.config.acquisition.shortlist_size;
                let r = self.round_mut(*round)?;
                if r.status == RoundStatus::Closed {
                    return Err(CampaignError::RoundSequence(format!("round {round} is closed")));
                }
                if let Some(c) = scored.iter().find(|c| !r.in_pool(&c.molecule_id)) {
                    return Err(CampaignError::NotInPool {
                        molecule_id: c.molecule_id.clone(),
                        round: *round,
                    });
                }
                r.training_ids = training_ids.clone();
                r.scored = scored.clone();
                r.refresh_shortlist(size);
                r.status = RoundStatus::AwaitingResults;
                r.retrain_count += 1;
                self.current_gp = Some(gp.clone());
            }
            Mutation::SetFeasibility {
                round,
                molecule_id,
                feasible,
                note,
            } => {
                let size = self.config.acquisition.shortlist_size;
                let r = self.round_mut(*round)?;
                if r.status == RoundStatus::Closed {
                    return Err(CampaignError::RoundSequence(format!("round {round} is closed")));
                }
                if !r.in_pool(molecule_id) {
                    return Err(CampaignError::NotInPool {
                        molecule_id: molecule_id.clone(),
                        round: *round,
                    });
                }
                r.feasibility.insert(
                    molecule_id.clone(),
                    FeasibilityFlag {
                        feasible: *feasible,
                        note: note.clone(),
                    },
                );
                r.refresh_shortlist(size);
            }
            Mutation::RecordResult { result } => {
                let round = self.rounds.len() as u32;
                let r = self.round(result.round)?;
                if result.round != round {
                    return Err(CampaignError::RoundMismatch {
                        molecule_id: result.molecule_id.clone(),
                        expected: round,
                        found: result.round,
                    });
                }
                if r.status == RoundStatus::Closed {
                    return Err(CampaignError::RoundSequence(format!("round {round} is closed")));
                }
                if !r.in_pool(&result.molecule_id) {
                    return Err(CampaignError::NotInPool {
                        molecule_id: result.molecule_id.clone(),
                        round,
                    });
                }
                self.push_result(result.clone())?;
                let r = self.round_mut(round)?;
                if !r.tested.contains(&result.molecule_id) {
                    r.tested.push(result.molecule_id.clone());
                }
            }
            Mutation::CloseRound {
                round,
                tested_ids,
                results,
            } => {
                self.require_current(*round)?;
                let r = self.round(*round)?;
                if r.status != RoundStatus::AwaitingResults {
                    return Err(CampaignError::RoundSequence(format!(
                        "round {round} is not awaiting results"
                    )));
                }
                check_unique(tested_ids, "tested set")?;
                if let Some(id) = tested_ids.iter().find(|id| !r.in_pool(id)) {
                    return Err(CampaignError::NotInPool {
                        molecule_id: id.clone(),
                        round: *round,
                    });
                }
                let mut tested = r.tested.clone();
                for res in results {
                    if !tested_ids.contains(&res.molecule_id) {
                        return Err(CampaignError::UntestedResult(res.molecule_id.clone()));
                    }
                    if res.round != *round {
                        return Err(CampaignError::RoundMismatch {
                            molecule_id: res.molecule_id.clone(),
                            expected: *round,
                            found: res.round,
                        });
                    }
                    self.push_result(res.clone())?;
                }
                for id in tested_ids {
                    if !tested.contains(id) {
                        tested.push(id.clone());
                    }
                }
                let r = self.round_mut(*round)?;
                r.tested = tested;
                r.status = RoundStatus::Closed;
            }
        }
        Ok(())
    }

    fn require_current(&self, round: u32) -> Result<(), CampaignError> {
        match self.current_round() {
            Some(r) if r.index == round => Ok(()),
            Some(r) => Err(CampaignError::RoundSequence(format!(
                "round {round} is not the current round ({})",
                r.index
            ))),
            None => Err(CampaignError::UnknownRound(round)),
        }
    }

    fn commit(&mut self, ms: Vec<Mutation>) -> Result<Vec<Mutation>, CampaignError> {
        let mut next = self.clone();
        for m in &ms {
            next.apply(m)?;
        }
        *self = next;
        Ok(ms)
    }

    pub fn add_template(&mut self, template: PromptTemplate) -> Result<Vec<Mutation>, CampaignError> {
        self.commit(vec![Mutation::AddTemplate { template }])
    }

    /// Opens the next round. Profiles for `template_version` are generated
    /// lazily at retrain time.
    pub fn open_round(
        &mut self,
        pool_ids: Vec<String>,
        prioritized_ids: Option<Vec<String>>,
        template_version: u32,
    ) -> Result<Vec<Mutation>, CampaignError> {
        self.commit(vec![Mutation::OpenRound {
            pool_ids,
            prioritized_ids,
            template_version,
        }])
    }

    /// Oracle profiles for the `ids` that lack one under `template_version`.
    /// Returns the `AddProfiles` mutation, or `None` when nothing is missing.
    pub fn missing_profiles(&self, ids: &[String], template_version: u32) -> Result<Option<Mutation>, CampaignError> {
        let template = self
            .templates
            .get(&template_version)
            .ok_or(CampaignError::UnknownTemplate(template_version))?;
        let have = self.profiles.get(&template_version);
        let missing: Vec<&MoleculeRecord> = ids
            .iter()
            .filter(|id| !have.is_some_and(|h| h.contains_key(*id)))
            .map(|id| self.library.get(id).ok_or_else(|| CampaignError::UnknownMolecule(id.clone())))
            .collect::<Result<_, _>>()?;
        if missing.is_empty() {
            return Ok(None);
        }
        let cfg = &self.config.oracle;
        let profiles = par::map(self.config.fit.execution, &missing, |mol| {
            profile_molecule(cfg, mol, template)
        })
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
        Ok(Some(Mutation::AddProfiles {
            template_version,
            profiles,
        }))
    }

    /// Generates and stores any missing profiles for `ids`.
    pub fn ensure_profiles(&mut self, ids: &[String], template_version: u32) -> Result<Vec<Mutation>, CampaignError> {
        match self.missing_profiles(ids, template_version)? {
            Some(m) => self.commit(vec![m]),
            None => Ok(Vec::new()),
        }
    }

    /// Refits the surrogate on every molecule with a result and rescores the
    /// current round's selection pool (molecules already measured are not
    /// rescored). Missing profiles for the round's template are generated
    /// first, for the training set as well as the pool.
    pub fn retrain_and_shortlist(&mut self) -> Result<Vec<Mutation>, CampaignError> {
        let round = self
            .current_round()
            .ok_or_else(|| CampaignError::RoundSequence("no round is open".into()))?;
        if round.status == RoundStatus::Closed {
            return Err(CampaignError::RoundSequence(format!("round {} is closed", round.index)));
        }
        let index = round.index;
        let template_version = round.template_version;
        let training_ids = self.training_ids();
        if training_ids.len() < 2 {
            return Err(CampaignError::InsufficientData {
                needed: 2,
                got: training_ids.len(),
            });
        }
        let trained: BTreeSet<&str> = training_ids.iter().map(String::as_str).collect();
        let candidates: Vec<String> = round
            .selection_pool()
            .iter()
            .filter(|id| !trained.contains(id.as_str()))
            .cloned()
            .collect();
        if candidates.is_empty() {
            return Err(CampaignError::EmptyFeasiblePool(index));
        }

        let mode = self.config.representation;
        let mut staged = self.clone();
        let mut ms = Vec::new();
        if mode.uses_soft() {
            let all: Vec<String> = training_ids.iter().chain(&candidates).cloned().collect();
            if let Some(m) = staged.missing_profiles(&all, template_version)? {
                staged.apply(&m)?;
                ms.push(m);
            }
        }
        let m = staged.compute_retrain(index, template_version, &training_ids, &candidates)?;
        staged.apply(&m)?;
        if staged.round(index)?.shortlist.is_empty() {
            return Err(CampaignError::EmptyFeasiblePool(index));
        }
        ms.push(m);
        *self = staged;
        Ok(ms)
    }

    fn compute_retrain(
        &self,
        index: u32,
        template_version: u32,
        training_ids: &[String],
        candidates: &[String],
    ) -> Result<Mutation, CampaignError> {
        let empty = BTreeMap::new();
        let profiles = self.profiles.get(&template_version).unwrap_or(&empty);
        let mols: Vec<&MoleculeRecord> = training_ids
            .iter()
            .chain(candidates)
            .map(|id| self.library.get(id).ok_or_else(|| CampaignError::UnknownMolecule(id.clone())))
            .collect::<Result<_, _>>()?;
        let fm = featurize::assemble(&mols, profiles, self.config.representation, training_ids)?;
        let targets = crate::stats::targets_by_molecule(&self.results);
        let y: Vec<f64> = training_ids.iter().map(|id| targets[id]).collect();
        let gp = GpPosterior::fit(&fm.rows_for(training_ids)?, &y, &self.config.fit)?;
        let scored = acquire::score_pool_with(
            self.config.fit.execution,
            &gp,
            &fm,
            candidates,
            &self.config.acquisition,
            self.config.fit.predictive_noise,
        )?;
        Ok(Mutation::Retrain {
            round: index,
            training_ids: training_ids.to_vec(),
            gp: gp.snapshot(),
            scored,
        })
    }

    /// Flags a pool molecule as (in)feasible and rebuilds the shortlist from
    /// the stored scores without refitting.
    pub fn set_feasibility(
        &mut self,
        round: u32,
        molecule_id: &str,
        feasible: bool,
        note: impl Into<String>,
    ) -> Result<Vec<Mutation>, CampaignError> {
        self.commit(vec![Mutation::SetFeasibility {
            round,
            molecule_id: molecule_id.to_string(),
            feasible,
            note: note.into(),
        }])
    }

    /// Records one measured result in the current round. The molecule is
    /// marked tested; it need not be on the shortlist.
    pub fn record_result(&mut self, result: ExperimentResult) -> Result<Vec<Mutation>, CampaignError> {
        self.commit(vec![Mutation::RecordResult { result }])
    }

    /// Records the round's remaining results and freezes it.
    pub fn close_round(
        &mut self,
        round: u32,
        tested_ids: Vec<String>,
        results: Vec<ExperimentResult>,
    ) -> Result<Vec<Mutation>, CampaignError> {
        self.commit(vec![Mutation::CloseRound {
            round,
            tested_ids,
            results,
        }])
    }

    /// The posterior stored by the last retrain.
    pub fn posterior(&self) -> Result<Option<GpPosterior>, CampaignError> {
        self.current_gp
            .as_ref()
            .map(GpPosterior::from_snapshot)
            .transpose()
            .map_err(CampaignError::from)
    }
}

/// Samples the oracle for one molecule and aggregates the parsable responses.
pub fn profile_molecule(
    cfg: &OracleConfig,
    mol: &MoleculeRecord,
    template: &PromptTemplate,
) -> Result<SoftProfile, CampaignError> {
    let records = oracle::sample_molecule(cfg, mol, template)?;
    let samples: Vec<_> = records.iter().filter_map(|r| r.to_sample()).collect();
    if samples.len() < records.len() {
        log::warn!(
            "{}: {} of {} oracle responses unparsable",
            mol.id,
            records.len() - samples.len(),
            records.len()
        );
    }
    let mut p = featurize::aggregate_soft(&mol.id, &samples)?;
    p.n_requested = Some(records.len());
    Ok(p)
}
