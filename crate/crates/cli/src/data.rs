use std::collections::BTreeMap;
use std::path::PathBuf;

use alprio_core::campaign::{profile_molecule, CampaignConfig, CampaignStore};
use alprio_core::domain::{self, ExperimentResult, Library, MoleculeRecord};
use alprio_core::featurize::{aggregate_all, RepresentationMode, SoftProfile};
use alprio_core::oracle::{OracleConfig, PromptTemplate};
use alprio_core::par;
use alprio_core::surrogate::FitConfig;
use anyhow::Context;
use clap::Args;

use crate::exit::invalid;
use crate::Ctx;

#[derive(Args, Debug, Clone, Default)]
pub struct DataArgs {
    /// molecules.csv. Without it, library, results and profiles are read from
    /// the campaign in --state.
    #[arg(long)]
    pub molecules: Option<PathBuf>,
    /// results.csv (molecule_id,round,pce_additive,pce_control).
    #[arg(long, requires = "molecules")]
    pub results: Option<PathBuf>,
    /// soft_samples.csv; aggregated into profiles.
    #[arg(long)]
    pub soft_samples: Option<PathBuf>,
    /// Oracle config (TOML) for generating missing profiles. Defaults to the
    /// mock provider seeded by --seed.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
}

pub struct Dataset {
    pub library: Library,
    pub results: Vec<ExperimentResult>,
    pub profiles: BTreeMap<String, SoftProfile>,
    pub oracle: OracleConfig,
    pub template: PromptTemplate,
    pub fit: FitConfig,
}

pub fn oracle_config(ctx: &Ctx, path: Option<&PathBuf>) -> anyhow::Result<OracleConfig> {
    let mut cfg = match path {
        Some(p) => OracleConfig::from_file(p)?,
        None => OracleConfig::default(),
    };
    if path.is_none() || ctx.seed_given {
        cfg.seed = ctx.seed;
    }
    Ok(cfg)
}

impl Dataset {
    pub fn load(args: &DataArgs, ctx: &Ctx) -> anyhow::Result<Self> {
        let mut ds = match &args.molecules {
            Some(m) => {
                let library = domain::ingest_molecules(m)?;
                let results = match &args.results {
                    Some(r) => domain::ingest_results(r)?,
                    None => Vec::new(),
                };
                Dataset {
                    library,
                    results,
                    profiles: BTreeMap::new(),
                    oracle: oracle_config(ctx, args.oracle.as_ref())?,
                    template: PromptTemplate::default_v0(),
                    fit: FitConfig {
                        seed: ctx.seed,
                        ..FitConfig::default()
                    },
                }
            }
            None => {
                let store = CampaignStore::at(&ctx.state);
                let state = store
                    .load()
                    .with_context(|| "no --molecules given and no campaign to read from")?;
                let template = state.latest_template().clone();
                let mut fit = state.config.fit;
                let mut oracle = match &args.oracle {
                    Some(p) => OracleConfig::from_file(p)?,
                    None => state.config.oracle.clone(),
                };
                if ctx.seed_given {
                    fit.seed = ctx.seed;
                    oracle.seed = ctx.seed;
                }
                Dataset {
                    profiles: state.profiles.get(&template.version).cloned().unwrap_or_default(),
                    library: state.library,
                    results: state.results,
                    oracle,
                    template,
                    fit,
                }
            }
        };
        ds.fit.execution = ctx.exec;
        if let Some(s) = &args.soft_samples {
            let samples = domain::ingest_soft_samples(s)?;
            ds.profiles.extend(aggregate_all(&samples)?);
        }
        for r in &ds.results {
            if !ds.library.contains(&r.molecule_id) {
                return Err(invalid(format!("result for `{}`, which is not in the library", r.molecule_id)));
            }
        }
        Ok(ds)
    }

    pub fn require_results(&self, needed: usize) -> anyhow::Result<()> {
        if self.results.len() < needed {
            return Err(invalid(format!(
                "need at least {needed} results (pass --results or use a campaign), got {}",
                self.results.len()
            )));
        }
        Ok(())
    }

    /// Distinct molecules with results, sorted.
    pub fn measured_ids(&self) -> Vec<String> {
        alprio_core::stats::targets_by_molecule(&self.results).into_keys().collect()
    }

    /// Library molecules without a result, in library order.
    pub fn unmeasured_ids(&self) -> Vec<String> {
        let measured = alprio_core::stats::targets_by_molecule(&self.results);
        self.library
            .ids()
            .filter(|id| !measured.contains_key(*id))
            .map(String::from)
            .collect()
    }

    /// Generates profiles for any of `ids` that lack one when `mode` needs them.
    pub fn ensure_profiles(&mut self, ids: &[String], mode: RepresentationMode) -> anyhow::Result<()> {
        if !mode.uses_soft() {
            return Ok(());
        }
        let missing: Vec<&MoleculeRecord> = ids
            .iter()
            .filter(|id| !self.profiles.contains_key(*id))
            .map(|id| {
                self.library
                    .get(id)
                    .ok_or_else(|| invalid(format!("molecule `{id}` is not in the library")))
            })
            .collect::<anyhow::Result<_>>()?;
        if missing.is_empty() {
            return Ok(());
        }
        log::info!(
            "generating {} soft profiles with the {:?} oracle (seed {})",
            missing.len(),
            self.oracle.provider,
            self.oracle.seed
        );
        let (cfg, template) = (&self.oracle, &self.template);
        let made = par::map(self.fit.execution, &missing, |m| profile_molecule(cfg, m, template));
        for p in made {
            let p = p?;
            self.profiles.insert(p.molecule_id.clone(), p);
        }
        Ok(())
    }
}

/// Reads molecule ids, one per line; blank lines and `#` comments skipped.
/// A `molecule_id` or `id` header line is ignored.
pub fn read_ids(path: &PathBuf) -> anyhow::Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(|l| l.split(',').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty() && !l.starts_with('#') && *l != "molecule_id" && *l != "id")
        .map(String::from)
        .collect())
}

pub fn campaign_config(ctx: &Ctx, path: Option<&PathBuf>) -> anyhow::Result<CampaignConfig> {
    let mut cfg: CampaignConfig = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?
        }
        None => CampaignConfig::default(),
    };
    if path.is_none() || ctx.seed_given {
        cfg.oracle.seed = ctx.seed;
        cfg.fit.seed = ctx.seed;
        cfg.acquisition.seed = ctx.seed;
    }
    cfg.oracle.validate()?;
    cfg.acquisition.validate()?;
    Ok(cfg)
}
