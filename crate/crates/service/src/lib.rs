//! HTTP JSON API over one campaign directory. Reads are served from an
//! immutable snapshot; mutations are serialized through a single writer and
//! carry optimistic-concurrency versions (`ETag` / `If-Match`).

mod error;
mod state;
mod views;

use std::path::Path;
use std::sync::Arc;

use alprio_core::campaign::{CampaignState, Round, RoundStatus};
use alprio_core::domain::ExperimentResult;
use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

pub use error::{ApiError, ErrorCode};
pub use state::{AppState, Job, JobStatus};
pub use views::{
    CampaignSummary, CandidateRow, DeltaPreview, DiffRow, Movement, RoundDiff, RoundSummary, SortKey,
};

type Shared = State<Arc<AppState>>;
type ApiResult = Result<Response, ApiError>;

pub fn router(app: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/campaign", get(get_campaign))
        .route("/rounds", post(open_round))
        .route("/rounds/{r}/candidates", get(get_candidates))
        .route("/rounds/{r}/shortlist", get(get_shortlist))
        .route("/rounds/{r}/diff", get(get_diff))
        .route("/rounds/{r}/retrain", post(retrain))
        .route("/rounds/{r}/close", post(close_round))
        .route("/candidates/{id}/feasibility", post(set_feasibility))
        .route("/results", post(record_result))
        .route("/results/preview", post(preview_result))
        .route("/jobs/{j}", get(get_job))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(ErrorCode::Validation, "method not allowed on this endpoint")
        });
    let router = Router::new().nest("/api", api).with_state(app);
    match static_dir {
        Some(dir) if dir.is_dir() => router.fallback_service(tower_http::services::ServeDir::new(dir)),
        _ => router,
    }
}

/// Serves `app` on `listener` until ctrl-c.
pub async fn serve(listener: tokio::net::TcpListener, app: Arc<AppState>, static_dir: Option<&Path>) -> std::io::Result<()> {
    axum::serve(listener, router(app, static_dir))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

fn etag(version: u64) -> HeaderValue {
    HeaderValue::from_str(&format!("\"{version}\"")).expect("ascii etag")
}

fn parse_etag(v: &HeaderValue) -> Option<u64> {
    let s = v.to_str().ok()?.trim();
    let s = s.strip_prefix("W/").unwrap_or(s);
    s.trim_matches('"').parse().ok()
}

fn not_modified(headers: &HeaderMap, version: u64) -> bool {
    headers
        .get(header::IF_NONE_MATCH)
        .is_some_and(|v| v.as_bytes() == b"*" || parse_etag(v) == Some(version))
}

/// Version the client expects, from `If-Match` or the body.
fn expected_version(headers: &HeaderMap, body: Option<u64>) -> Result<Option<u64>, ApiError> {
    match headers.get(header::IF_MATCH) {
        Some(v) => parse_etag(v)
            .map(Some)
            .ok_or_else(|| ApiError::validation("If-Match must be a quoted state version")),
        None => Ok(body),
    }
}

fn versioned<T: Serialize>(status: StatusCode, version: u64, body: T) -> Response {
    (status, [(header::ETAG, etag(version))], Json(body)).into_response()
}

fn json_body<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    body.map(|Json(b)| b).map_err(|e| ApiError::validation(e.body_text()))
}

fn path_param<T>(p: Result<UrlPath<T>, PathRejection>) -> Result<T, ApiError> {
    p.map(|UrlPath(v)| v).map_err(|e| ApiError::not_found(e.body_text()))
}

fn find_round(state: &CampaignState, r: u32) -> Result<&Round, ApiError> {
    state
        .rounds
        .iter()
        .find(|x| x.index == r)
        .ok_or_else(|| ApiError::not_found(format!("no round {r}")))
}

fn scored_round(state: &CampaignState, r: u32) -> Result<&Round, ApiError> {
    let round = find_round(state, r)?;
    if round.retrain_count == 0 {
        return Err(ApiError::conflict(format!("round {r} has not been scored yet")));
    }
    Ok(round)
}

async fn get_campaign(State(app): Shared, headers: HeaderMap) -> Response {
    let s = app.snapshot();
    if not_modified(&headers, s.version) {
        return (StatusCode::NOT_MODIFIED, [(header::ETAG, etag(s.version))]).into_response();
    }
    versioned(StatusCode::OK, s.version, CampaignSummary::new(&s))
}

#[derive(Debug, Deserialize)]
struct CandidateQuery {
    #[serde(default)]
    sort: SortKey,
    limit: Option<usize>,
    #[serde(default)]
    offset: usize,
}

async fn get_candidates(
    State(app): Shared,
    r: Result<UrlPath<u32>, PathRejection>,
    q: Result<Query<CandidateQuery>, QueryRejection>,
    headers: HeaderMap,
) -> ApiResult {
    let r = path_param(r)?;
    let Query(q) = q.map_err(|e| ApiError::validation(e.body_text()))?;
    let s = app.snapshot();
    let round = scored_round(&s, r)?;
    if not_modified(&headers, s.version) {
        return Ok((StatusCode::NOT_MODIFIED, [(header::ETAG, etag(s.version))]).into_response());
    }
    let sorted = views::sorted_candidates(round, q.sort);
    let total = sorted.len();
    let rows = views::RowBuilder::new(&s, round);
    let page: Vec<CandidateRow> = sorted
        .into_iter()
        .skip(q.offset)
        .take(q.limit.unwrap_or(usize::MAX))
        .map(|c| rows.row(c))
        .collect();
    let mut resp = versioned(StatusCode::OK, s.version, page);
    resp.headers_mut().insert("x-total-count", HeaderValue::from(total));
    Ok(resp)
}

async fn get_shortlist(State(app): Shared, r: Result<UrlPath<u32>, PathRejection>) -> ApiResult {
    let r = path_param(r)?;
    let s = app.snapshot();
    let round = scored_round(&s, r)?;
    let rows = views::RowBuilder::new(&s, round);
    let out: Vec<CandidateRow> = round.shortlist.iter().map(|c| rows.row(c)).collect();
    Ok(versioned(StatusCode::OK, s.version, out))
}

async fn get_diff(State(app): Shared, r: Result<UrlPath<u32>, PathRejection>) -> ApiResult {
    let r = path_param(r)?;
    let s = app.snapshot();
    scored_round(&s, r)?;
    let store = app.store().clone();
    let log = tokio::task::spawn_blocking(move || store.read_log())
        .await
        .map_err(|e| ApiError::new(ErrorCode::Internal, e.to_string()))??;
    // the log may be ahead of this snapshot if a write landed in between
    let log: Vec<_> = log.into_iter().filter(|e| e.version <= s.version).collect();
    let diff = views::round_diff(&s, &log, r)
        .ok_or_else(|| ApiError::conflict(format!("round {r} has no earlier ranking to compare with")))?;
    Ok(versioned(StatusCode::OK, s.version, diff))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OpenRoundBody {
    /// Defaults to every library molecule without a result.
    pool_ids: Option<Vec<String>>,
    prioritized_ids: Option<Vec<String>>,
    /// Defaults to the latest template.
    template_version: Option<u32>,
    version: Option<u64>,
}

async fn open_round(State(app): Shared, headers: HeaderMap, body: Result<Json<OpenRoundBody>, JsonRejection>) -> ApiResult {
    let b = json_body(body)?;
    let expected = expected_version(&headers, b.version)?;
    let (s, index) = app
        .mutate(expected, |s| {
            let pool = b.pool_ids.unwrap_or_else(|| {
                let measured: std::collections::BTreeSet<String> = s.training_ids().into_iter().collect();
                s.library.ids().filter(|id| !measured.contains(*id)).map(String::from).collect()
            });
            let template = b.template_version.unwrap_or_else(|| s.latest_template().version);
            let ms = s.open_round(pool, b.prioritized_ids, template)?;
            let index = s.current_round().map(|r| r.index).unwrap_or(0);
            Ok((ms, index))
        })
        .await?;
    let summary = CampaignSummary::new(&s);
    let round = summary.rounds.into_iter().find(|r| r.index == index);
    Ok(versioned(StatusCode::CREATED, s.version, serde_json::json!({ "version": s.version, "round": round })))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FeasibilityBody {
    feasible: bool,
    #[serde(default)]
    note: String,
    /// Defaults to the current round.
    round: Option<u32>,
    version: Option<u64>,
}

async fn set_feasibility(
    State(app): Shared,
    id: Result<UrlPath<String>, PathRejection>,
    headers: HeaderMap,
    body: Result<Json<FeasibilityBody>, JsonRejection>,
) -> ApiResult {
    let id = path_param(id)?;
    let b = json_body(body)?;
    let expected = expected_version(&headers, b.version)?;
    let (s, r) = app
        .mutate(expected, |s| {
            if !s.library.contains(&id) {
                return Err(ApiError::not_found(format!("molecule `{id}` is not in the library")));
            }
            let r = match b.round {
                Some(r) => r,
                None => s
                    .current_round()
                    .map(|r| r.index)
                    .ok_or_else(|| ApiError::conflict("no round has been opened"))?,
            };
            if find_round(s, r)?.status == RoundStatus::Closed {
                return Err(ApiError::conflict(format!("round {r} is closed")));
            }
            Ok((s.set_feasibility(r, &id, b.feasible, b.note)?, r))
        })
        .await?;
    let round = find_round(&s, r)?;
    let candidate = round
        .scored
        .iter()
        .find(|c| c.molecule_id == id)
        .map(|c| views::RowBuilder::new(&s, round).row(c));
    Ok(versioned(
        StatusCode::OK,
        s.version,
        serde_json::json!({ "version": s.version, "round": r, "candidate": candidate }),
    ))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResultBody {
    molecule_id: String,
    round: u32,
    pce_additive: f64,
    pce_control: f64,
    #[serde(default)]
    version: Option<u64>,
}

async fn record_result(State(app): Shared, headers: HeaderMap, body: Result<Json<ResultBody>, JsonRejection>) -> ApiResult {
    let b = json_body(body)?;
    let expected = expected_version(&headers, b.version)?;
    let result = ExperimentResult::new(&b.molecule_id, b.round, b.pce_additive, b.pce_control)?;
    let (s, ()) = app
        .mutate(expected, |s| {
            if !s.library.contains(&result.molecule_id) {
                return Err(ApiError::not_found(format!("molecule `{}` is not in the library", result.molecule_id)));
            }
            if find_round(s, result.round)?.status == RoundStatus::Closed {
                return Err(ApiError::conflict(format!("round {} is closed", result.round)));
            }
            Ok((s.record_result(result.clone())?, ()))
        })
        .await?;
    Ok(versioned(
        StatusCode::CREATED,
        s.version,
        serde_json::json!({ "version": s.version, "delta_rel": result.delta_rel, "result": result }),
    ))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PreviewBody {
    pce_additive: f64,
    pce_control: f64,
}

/// Δ_rel for a pair of PCE values without recording anything.
async fn preview_result(body: Result<Json<PreviewBody>, JsonRejection>) -> ApiResult {
    let b = json_body(body)?;
    let r = ExperimentResult::new("preview", 0, b.pce_additive, b.pce_control)?;
    Ok(Json(DeltaPreview::new(r.pce_additive, r.pce_control, r.delta_rel)).into_response())
}

#[derive(Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CloseBody {
    /// Defaults to the molecules already marked tested.
    tested_ids: Option<Vec<String>>,
    #[serde(default)]
    results: Vec<ResultInput>,
    version: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ResultInput {
    molecule_id: String,
    pce_additive: f64,
    pce_control: f64,
}

async fn close_round(
    State(app): Shared,
    r: Result<UrlPath<u32>, PathRejection>,
    headers: HeaderMap,
    body: Result<Json<CloseBody>, JsonRejection>,
) -> ApiResult {
    let r = path_param(r)?;
    let b = json_body(body)?;
    let expected = expected_version(&headers, b.version)?;
    let results = b
        .results
        .iter()
        .map(|x| ExperimentResult::new(&x.molecule_id, r, x.pce_additive, x.pce_control))
        .collect::<Result<Vec<_>, _>>()?;
    let (s, ()) = app
        .mutate(expected, |s| {
            let round = find_round(s, r)?;
            let mut tested = b.tested_ids.unwrap_or_else(|| round.tested.clone());
            for x in &results {
                if !tested.contains(&x.molecule_id) {
                    tested.push(x.molecule_id.clone());
                }
            }
            Ok((s.close_round(r, tested, results)?, ()))
        })
        .await?;
    Ok(versioned(StatusCode::OK, s.version, serde_json::json!({ "version": s.version, "round": r })))
}

async fn retrain(State(app): Shared, r: Result<UrlPath<u32>, PathRejection>) -> ApiResult {
    let r = path_param(r)?;
    let s = app.snapshot();
    let round = find_round(&s, r)?;
    if round.status == RoundStatus::Closed {
        return Err(ApiError::conflict(format!("round {r} is closed")));
    }
    let job = app.start_retrain(r)?;
    let location = HeaderValue::from_str(&format!("/api/jobs/{}", job.id)).expect("ascii path");
    Ok((StatusCode::ACCEPTED, [(header::LOCATION, location)], Json(job)).into_response())
}

async fn get_job(State(app): Shared, j: Result<UrlPath<u64>, PathRejection>) -> ApiResult {
    let j = path_param(j)?;
    app.job(j)
        .map(|job| Json(job).into_response())
        .ok_or_else(|| ApiError::not_found(format!("no job {j}")))
}
