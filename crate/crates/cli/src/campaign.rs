//! Commands that read or mutate the campaign directory. Every mutation takes
//! the directory lock, applies to a loaded state and commits the log entries
//! it produced; log entries carry no timestamps so reruns are byte-identical.

use std::net::SocketAddr;
use std::path::PathBuf;

use alprio_core::acquire::write_shortlist_csv;
use alprio_core::campaign::{init_campaign, CampaignState, CampaignStore, Mutation, RoundStatus};
use alprio_core::domain::{self, ExperimentResult};
use alprio_core::featurize::aggregate_all;
use alprio_core::oracle::PromptTemplate;
use anyhow::Context;

use crate::data::{campaign_config, read_ids};
use crate::exit::{self, invalid};
use crate::output::{emit_scalar, emit_table};
use crate::Ctx;

fn store(ctx: &Ctx) -> CampaignStore {
    CampaignStore::at(&ctx.state)
}

/// Loads under the lock, runs `f` and commits whatever it produced.
fn mutate<T>(
    ctx: &Ctx,
    f: impl FnOnce(&mut CampaignState) -> anyhow::Result<(Vec<Mutation>, T)>,
) -> anyhow::Result<(CampaignState, T)> {
    let store = store(ctx);
    if !store.exists() {
        return Err(alprio_core::campaign::StoreError::Missing(store.dir().to_path_buf()).into());
    }
    let _lock = store.lock()?;
    let mut state = store.load()?;
    let (ms, out) = f(&mut state)?;
    store.commit(&state, &ms)?;
    log::info!("committed {} mutation(s); campaign at version {}", ms.len(), state.version);
    Ok((state, out))
}

fn current_index(state: &CampaignState, round: Option<u32>) -> anyhow::Result<u32> {
    match round {
        Some(r) => Ok(r),
        None => state
            .current_round()
            .map(|r| r.index)
            .ok_or_else(|| invalid("no round has been opened")),
    }
}

fn shortlist_csv(state: &CampaignState, round: u32) -> anyhow::Result<Vec<u8>> {
    let r = state.round(round)?;
    if r.retrain_count == 0 {
        return Err(invalid(format!("round {round} has not been scored; run `alprio retrain`")));
    }
    let mut buf = Vec::new();
    write_shortlist_csv(&r.shortlist, &mut buf)?;
    Ok(buf)
}

pub fn init(
    ctx: &Ctx,
    molecules: &PathBuf,
    results: &PathBuf,
    soft_samples: Option<&PathBuf>,
    config: Option<&PathBuf>,
    id: String,
) -> anyhow::Result<i32> {
    let store = store(ctx);
    if store.exists() {
        return Err(alprio_core::campaign::StoreError::Exists(store.dir().to_path_buf()).into());
    }
    let library = domain::ingest_molecules(molecules)?;
    let hot = domain::ingest_results(results)?;
    let cfg = campaign_config(ctx, config)?;
    let (mut state, init) = init_campaign(id, library, hot, cfg, ctx.seed)?;
    let first = state.clone();
    let mut extra = Vec::new();
    if let Some(path) = soft_samples {
        let samples = domain::ingest_soft_samples(path)?;
        let profiles = aggregate_all(&samples)?;
        for id in profiles.keys() {
            if !state.library.contains(id) {
                return Err(invalid(format!("soft samples for `{id}`, which is not in the library")));
            }
        }
        let m = Mutation::AddProfiles {
            template_version: 0,
            profiles: profiles.into_values().collect(),
        };
        state.apply(&m)?;
        extra.push(m);
    }
    std::fs::create_dir_all(store.dir()).with_context(|| format!("creating {}", store.dir().display()))?;
    let _lock = store.lock()?;
    store.create(&first, &init)?;
    store.commit(&state, &extra)?;
    emit_scalar(
        ctx.scalar_format(),
        &format!(
            "initialized `{}` with {} molecules and {} hot-start results in {}",
            state.campaign_id,
            state.library.len(),
            state.results.len(),
            store.dir().display()
        ),
        ["campaign_id", "molecules", "results", "version"],
        [
            state.campaign_id.clone(),
            state.library.len().to_string(),
            state.results.len().to_string(),
            state.version.to_string(),
        ],
    )?;
    Ok(exit::OK)
}

pub fn open_round(
    ctx: &Ctx,
    pool: Option<PathBuf>,
    prioritized: Option<PathBuf>,
    template: Option<PathBuf>,
    template_version: Option<u32>,
) -> anyhow::Result<i32> {
    let pool = pool.map(|p| read_ids(&p)).transpose()?;
    let prioritized = prioritized.map(|p| read_ids(&p)).transpose()?;
    let template_text = template
        .map(|p| std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    let (state, (index, size)) = mutate(ctx, |s| {
        let mut ms = Vec::new();
        let version = match template_text {
            Some(text) => {
                let t = PromptTemplate::new(s.latest_template().version + 1, text)?;
                let v = t.version;
                ms.extend(s.add_template(t)?);
                v
            }
            None => template_version.unwrap_or_else(|| s.latest_template().version),
        };
        let pool = pool.unwrap_or_else(|| {
            let measured: std::collections::BTreeSet<String> = s.training_ids().into_iter().collect();
            s.library.ids().filter(|id| !measured.contains(*id)).map(String::from).collect()
        });
        let size = pool.len();
        ms.extend(s.open_round(pool, prioritized, version)?);
        let index = current_index(s, None)?;
        Ok((ms, (index, size)))
    })?;
    let tv = state.round(index)?.template_version;
    emit_scalar(
        ctx.scalar_format(),
        &format!("opened round {index}: {size} candidates, template v{tv}"),
        ["round", "pool_size", "template_version", "version"],
        [index.to_string(), size.to_string(), tv.to_string(), state.version.to_string()],
    )?;
    Ok(exit::OK)
}

pub fn retrain(ctx: &Ctx, out: Option<PathBuf>) -> anyhow::Result<i32> {
    let (state, index) = mutate(ctx, |s| {
        s.config.fit.execution = ctx.exec;
        let ms = s.retrain_and_shortlist()?;
        Ok((ms, current_index(s, None)?))
    })?;
    emit_table(ctx.table_format(), shortlist_csv(&state, index)?, out.as_deref())?;
    Ok(exit::OK)
}

pub fn shortlist(ctx: &Ctx, round: Option<u32>, out: Option<PathBuf>) -> anyhow::Result<i32> {
    let state = store(ctx).load()?;
    let index = current_index(&state, round)?;
    emit_table(ctx.table_format(), shortlist_csv(&state, index)?, out.as_deref())?;
    Ok(exit::OK)
}

pub fn review(ctx: &Ctx, id: &str, feasible: bool, note: String, round: Option<u32>) -> anyhow::Result<i32> {
    let (state, index) = mutate(ctx, |s| {
        let index = current_index(s, round)?;
        let ms = s.set_feasibility(index, id, feasible, note)?;
        Ok((ms, index))
    })?;
    let r = state.round(index)?;
    let word = if feasible { "feasible" } else { "infeasible" };
    emit_scalar(
        ctx.scalar_format(),
        &format!("{id} marked {word} in round {index}; shortlist has {} entries", r.shortlist.len()),
        ["molecule_id", "round", "feasible", "shortlist_size", "version"],
        [
            id.to_string(),
            index.to_string(),
            feasible.to_string(),
            r.shortlist.len().to_string(),
            state.version.to_string(),
        ],
    )?;
    Ok(exit::OK)
}

fn results_table(rows: &[ExperimentResult]) -> anyhow::Result<Vec<u8>> {
    crate::output::table(
        ["molecule_id", "round", "pce_additive", "pce_control", "delta_rel"],
        rows.iter().map(|r| {
            [
                r.molecule_id.clone(),
                r.round.to_string(),
                r.pce_additive.to_string(),
                r.pce_control.to_string(),
                r.delta_rel.to_string(),
            ]
        }),
    )
}

pub fn record(
    ctx: &Ctx,
    molecule: Option<String>,
    pce_additive: Option<f64>,
    pce_control: Option<f64>,
    round: Option<u32>,
    results: Option<PathBuf>,
) -> anyhow::Result<i32> {
    let file_rows = results.map(domain::ingest_results).transpose()?;
    let (_, recorded) = mutate(ctx, |s| {
        let index = current_index(s, round)?;
        let rows = match file_rows {
            Some(rows) => rows,
            None => {
                let (Some(id), Some(a), Some(c)) = (molecule, pce_additive, pce_control) else {
                    return Err(invalid("pass --molecule with --pce-additive and --pce-control, or --results"));
                };
                vec![ExperimentResult::new(id, index, a, c)?]
            }
        };
        // Stage on a copy so a bad row leaves nothing committed.
        let mut staged = s.clone();
        let mut ms = Vec::new();
        for r in &rows {
            ms.extend(staged.record_result(r.clone())?);
        }
        *s = staged;
        Ok((ms, rows))
    })?;
    emit_table(ctx.table_format(), results_table(&recorded)?, None)?;
    Ok(exit::OK)
}

pub fn close_round(
    ctx: &Ctx,
    round: Option<u32>,
    tested: Option<PathBuf>,
    results: Option<PathBuf>,
) -> anyhow::Result<i32> {
    let tested = tested.map(|p| read_ids(&p)).transpose()?;
    let results = results.map(domain::ingest_results).transpose()?.unwrap_or_default();
    let (state, index) = mutate(ctx, |s| {
        let index = current_index(s, round)?;
        let tested = match tested {
            Some(t) => t,
            None => {
                let mut t = s.round(index)?.tested.clone();
                for r in &results {
                    if !t.contains(&r.molecule_id) {
                        t.push(r.molecule_id.clone());
                    }
                }
                t
            }
        };
        let ms = s.close_round(index, tested, results)?;
        Ok((ms, index))
    })?;
    let r = state.round(index)?;
    debug_assert_eq!(r.status, RoundStatus::Closed);
    emit_scalar(
        ctx.scalar_format(),
        &format!(
            "closed round {index}: {} tested; {} molecules with results",
            r.tested.len(),
            state.training_ids().len()
        ),
        ["round", "tested", "training_rows", "version"],
        [
            index.to_string(),
            r.tested.len().to_string(),
            state.training_ids().len().to_string(),
            state.version.to_string(),
        ],
    )?;
    Ok(exit::OK)
}

pub fn replay(ctx: &Ctx) -> anyhow::Result<i32> {
    let store = store(ctx);
    let state = store.load()?;
    let rebuilt = store.replay()?;
    let (a, b) = (state.content_hash(), rebuilt.content_hash());
    let ok = a == b;
    let line = if ok {
        format!("replay matches state at version {} ({a})", state.version)
    } else {
        format!("replay MISMATCH: state {a} (v{}) vs log {b} (v{})", state.version, rebuilt.version)
    };
    emit_scalar(
        ctx.scalar_format(),
        &line,
        ["state_hash", "replay_hash", "matches", "version"],
        [a, b, ok.to_string(), state.version.to_string()],
    )?;
    Ok(if ok { exit::OK } else { exit::RUNTIME })
}

pub fn serve(ctx: &Ctx, listen: SocketAddr, static_dir: PathBuf) -> anyhow::Result<i32> {
    let app = alprio_service::AppState::open(store(ctx))?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .with_context(|| format!("binding {listen}"))?;
        log::warn!("serving {} on http://{}", ctx.state.display(), listener.local_addr()?);
        let dir = static_dir.is_dir().then_some(static_dir.as_path());
        alprio_service::serve(listener, app, dir).await?;
        anyhow::Ok(())
    })?;
    Ok(exit::OK)
}
