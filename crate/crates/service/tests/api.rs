use std::sync::Arc;
use std::time::Duration;

use alprio_core::campaign::{init_campaign, CampaignConfig, CampaignStore, StoreError};
use alprio_core::domain::ExperimentResult;
use alprio_core::featurize::RepresentationMode;
use alprio_core::synthetic;
use alprio_service::{ApiError, AppState, CampaignSummary, CandidateRow, DeltaPreview, ErrorCode, Job, JobStatus, RoundDiff};
use reqwest::StatusCode;
use serde_json::{json, Value};

struct Fixture {
    _dir: tempfile::TempDir,
    store: CampaignStore,
    base: String,
    http: reqwest::Client,
}

async fn start_with(hot: Vec<ExperimentResult>, n_lib: usize, mode: RepresentationMode) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let lib = synthetic::library(n_lib, 4, 0);
    let cfg = CampaignConfig {
        representation: mode,
        ..CampaignConfig::default()
    };
    let (state, init) = init_campaign("api", lib, hot, cfg, 3).unwrap();
    let store = CampaignStore::new(dir.path());
    store.create(&state, &init).unwrap();
    let app = AppState::open(store.clone()).unwrap();
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}/api", listener.local_addr().unwrap());
    tokio::spawn(alprio_service::serve(listener, app, None));
    Fixture {
        _dir: dir,
        store,
        base,
        http: reqwest::Client::new(),
    }
}

fn hot_start(n: usize) -> Vec<ExperimentResult> {
    (0..n)
        .map(|i| {
            let id = synthetic::molecule_id(i);
            synthetic::result(&id, 0, synthetic::noisy_response(0, 1, &id, 0.01))
        })
        .collect()
}

async fn start(n_lib: usize) -> Fixture {
    start_with(hot_start(36), n_lib, RepresentationMode::Hybrid).await
}

impl Fixture {
    async fn get(&self, path: &str) -> reqwest::Response {
        self.http.get(format!("{}{path}", self.base)).send().await.unwrap()
    }

    async fn post(&self, path: &str, body: Value) -> reqwest::Response {
        self.http.post(format!("{}{path}", self.base)).json(&body).send().await.unwrap()
    }

    async fn summary(&self) -> CampaignSummary {
        self.get("/campaign").await.json().await.unwrap()
    }

    async fn wait(&self, job: &Job) -> Job {
        for _ in 0..3000 {
            let j: Job = self.get(&format!("/jobs/{}", job.id)).await.json().await.unwrap();
            if j.status != JobStatus::Pending {
                return j;
            }
            tokio::time::sleep(Duration::from_millis(20)).await;
        }
        panic!("job {} never finished", job.id);
    }

    async fn retrain(&self, round: u32) -> Job {
        let resp = self.post(&format!("/rounds/{round}/retrain"), json!({})).await;
        assert_eq!(resp.status(), StatusCode::ACCEPTED);
        let job: Job = resp.json().await.unwrap();
        let done = self.wait(&job).await;
        assert_eq!(done.status, JobStatus::Done, "{:?}", done.error);
        done
    }

    async fn open_scored_round(&self) {
        assert_eq!(self.post("/rounds", json!({})).await.status(), StatusCode::CREATED);
        self.retrain(1).await;
    }

    async fn shortlist(&self, round: u32) -> Vec<CandidateRow> {
        self.get(&format!("/rounds/{round}/shortlist")).await.json().await.unwrap()
    }

    fn files(&self) -> (Vec<u8>, Vec<u8>) {
        (
            std::fs::read(self.store.state_path()).unwrap(),
            std::fs::read(self.store.log_path()).unwrap(),
        )
    }
}

async fn error_of(resp: reqwest::Response, status: StatusCode, code: ErrorCode) -> ApiError {
    assert_eq!(resp.status(), status);
    let e: ApiError = resp.json().await.unwrap();
    assert_eq!(e.code, code, "{}", e.message);
    e
}

#[tokio::test(flavor = "multi_thread")]
async fn campaign_summary_and_etag() {
    let f = start(120).await;
    let resp = f.get("/campaign").await;
    assert_eq!(resp.headers()["etag"], "\"1\"");
    let s: CampaignSummary = resp.json().await.unwrap();
    assert_eq!((s.version, s.results, s.rounds.len()), (1, 36, 0));

    let resp = f
        .http
        .get(format!("{}/campaign", f.base))
        .header("If-None-Match", "\"1\"")
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_MODIFIED);

    f.post("/rounds", json!({})).await;
    let s = f.summary().await;
    assert_eq!(s.version, 2);
    assert_eq!(s.rounds[0].index, 1);
    assert_eq!(serde_json::to_value(s.rounds[0].status).unwrap(), "open");
    assert_eq!(s.rounds[0].pool_size, 84);
}

#[tokio::test(flavor = "multi_thread")]
async fn candidates_follow_the_shortlist() {
    let f = start(160).await;
    f.post("/rounds", json!({})).await;
    error_of(f.get("/rounds/1/candidates").await, StatusCode::CONFLICT, ErrorCode::Conflict).await;
    error_of(f.get("/rounds/9/candidates").await, StatusCode::NOT_FOUND, ErrorCode::NotFound).await;
    f.retrain(1).await;

    let shortlist = f.shortlist(1).await;
    assert_eq!(shortlist.len(), 50);
    let resp = f.get("/rounds/1/candidates?sort=ei&limit=50").await;
    assert_eq!(resp.headers()["x-total-count"], "124");
    let by_ei: Vec<CandidateRow> = resp.json().await.unwrap();
    assert_eq!(by_ei, shortlist);
    assert_eq!(shortlist[0].shortlist_rank, Some(1));
    assert!(shortlist.iter().all(|c| c.soft_mean.as_ref().is_some_and(|m| m.len() == 6)));

    let resp = f.get("/rounds/1/candidates?limit=0").await;
    assert_eq!(resp.headers()["x-total-count"], "124");
    assert!(resp.json::<Vec<CandidateRow>>().await.unwrap().is_empty());

    let by_sigma: Vec<CandidateRow> = f.get("/rounds/1/candidates?sort=sigma").await.json().await.unwrap();
    assert_eq!(by_sigma.len(), 124);
    assert!(by_sigma.windows(2).all(|w| w[0].sigma >= w[1].sigma));

    error_of(f.get("/rounds/1/candidates?sort=bogus").await, StatusCode::UNPROCESSABLE_ENTITY, ErrorCode::Validation)
        .await;
}

#[tokio::test(flavor = "multi_thread")]
async fn feasibility_toggle_reranks_and_restores() {
    let f = start(160).await;
    f.open_scored_round().await;
    let before = f.shortlist(1).await;
    let top = before[0].molecule_id.clone();

    let resp = f.post(&format!("/candidates/{top}/feasibility"), json!({"feasible": false, "note": "no supplier"})).await;
    assert_eq!(resp.status(), StatusCode::OK);
    let body: Value = resp.json().await.unwrap();
    assert_eq!(body["candidate"]["feasible"], false);
    assert_eq!(body["candidate"]["note"], "no supplier");
    let after = f.shortlist(1).await;
    assert_eq!(after[0].molecule_id, before[1].molecule_id);
    assert!(after.iter().all(|c| c.molecule_id != top));
    let by_ei: Vec<CandidateRow> = f.get("/rounds/1/candidates?sort=ei&limit=50").await.json().await.unwrap();
    assert_eq!(by_ei, after);

    f.post(&format!("/candidates/{top}/feasibility"), json!({"feasible": true})).await;
    let restored = f.shortlist(1).await;
    let ids = |v: &[CandidateRow]| v.iter().map(|c| c.molecule_id.clone()).collect::<Vec<_>>();
    assert_eq!(ids(&restored), ids(&before));

    error_of(
        f.post("/candidates/nope/feasibility", json!({"feasible": false})).await,
        StatusCode::NOT_FOUND,
        ErrorCode::NotFound,
    )
    .await;
    f.post("/rounds/1/close", json!({})).await;
    error_of(
        f.post(&format!("/candidates/{top}/feasibility"), json!({"feasible": false})).await,
        StatusCode::CONFLICT,
        ErrorCode::Conflict,
    )
    .await;
}

#[tokio::test(flavor = "multi_thread")]
async fn racing_clients_get_one_conflict() {
    let f = start(160).await;
    f.open_scored_round().await;
    let list = f.shortlist(1).await;
    let v = f.summary().await.version;
    let other = reqwest::Client::new();
    let send = |client: &reqwest::Client, id: &str, feasible: bool| {
        client
            .post(format!("{}/candidates/{id}/feasibility", f.base))
            .header("If-Match", format!("\"{v}\""))
            .json(&json!({"feasible": feasible}))
            .send()
    };
    let (a, b) = tokio::join!(
        send(&f.http, &list[0].molecule_id, false),
        send(&other, &list[1].molecule_id, false)
    );
    let (a, b) = (a.unwrap(), b.unwrap());
    let mut statuses = [a.status(), b.status()];
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT]);
    let loser = if a.status() == StatusCode::CONFLICT { a } else { b };
    let e: ApiError = loser.json().await.unwrap();
    assert_eq!(e.code, ErrorCode::Conflict);
    assert_eq!(e.detail.unwrap()["current_version"], v + 1);
    assert_eq!(f.summary().await.version, v + 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn result_entry() {
    let f = start(160).await;
    f.open_scored_round().await;
    let id = f.shortlist(1).await[3].molecule_id.clone();
    let body = json!({"molecule_id": id, "round": 1, "pce_additive": 20.57, "pce_control": 19.85});
    let resp = f.post("/results", body.clone()).await;
    assert_eq!(resp.status(), StatusCode::CREATED);
    let out: Value = resp.json().await.unwrap();
    assert!((out["delta_rel"].as_f64().unwrap() - 0.036272).abs() < 1e-6);

    error_of(f.post("/results", body).await, StatusCode::CONFLICT, ErrorCode::Conflict).await;
    error_of(
        f.post("/results", json!({"molecule_id": "ghost", "round": 1, "pce_additive": 20.0, "pce_control": 19.0})).await,
        StatusCode::NOT_FOUND,
        ErrorCode::NotFound,
    )
    .await;
    let e = error_of(
        f.post("/results", json!({"molecule_id": id, "round": 1, "pce_additive": 20.0, "pce_control": 0.0})).await,
        StatusCode::UNPROCESSABLE_ENTITY,
        ErrorCode::Validation,
    )
    .await;
    assert!(e.message.contains("pce_control"));

    let rows = f.shortlist(1).await;
    let row = rows.iter().find(|c| c.molecule_id == id).unwrap();
    assert!(row.tested);
    assert!((row.delta_rel.unwrap() - 0.72 / 19.85).abs() < 1e-12);

    f.post("/rounds/1/close", json!({})).await;
    let other = f.shortlist(1).await[0].molecule_id.clone();
    error_of(
        f.post("/results", json!({"molecule_id": other, "round": 1, "pce_additive": 20.0, "pce_control": 19.0})).await,
        StatusCode::CONFLICT,
        ErrorCode::Conflict,
    )
    .await;
    assert_eq!(f.summary().await.results, 37);
}

#[tokio::test(flavor = "multi_thread")]
async fn delta_preview_is_dry_run() {
    let f = start(60).await;
    let (state, log) = f.files();
    let resp = f.post("/results/preview", json!({"pce_additive": 20.87, "pce_control": 19.25})).await;
    assert_eq!(resp.status(), StatusCode::OK);
    let p: DeltaPreview = resp.json().await.unwrap();
    assert!((p.delta_rel - 0.084156).abs() < 1e-6);
    assert_eq!(p.display, "+8.42% relative");
    error_of(
        f.post("/results/preview", json!({"pce_additive": 20.87, "pce_control": 0})).await,
        StatusCode::UNPROCESSABLE_ENTITY,
        ErrorCode::Validation,
    )
    .await;
    assert_eq!(f.files(), (state, log));
}

#[tokio::test(flavor = "multi_thread")]
async fn retrain_jobs() {
    let f = start(3000).await;
    f.post("/rounds", json!({})).await;
    let first = f.post("/rounds/1/retrain", json!({})).await;
    assert_eq!(first.status(), StatusCode::ACCEPTED);
    assert_eq!(first.headers()["location"], "/api/jobs/1");
    let job: Job = first.json().await.unwrap();
    assert_eq!(job.status, JobStatus::Pending);
    error_of(f.post("/rounds/1/retrain", json!({})).await, StatusCode::CONFLICT, ErrorCode::Busy).await;
    let done = f.wait(&job).await;
    assert_eq!(done.status, JobStatus::Done);
    assert_eq!(done.version, Some(f.summary().await.version));
    assert_eq!(f.shortlist(1).await.len(), 50);
    error_of(f.get("/jobs/99").await, StatusCode::NOT_FOUND, ErrorCode::NotFound).await;
    error_of(f.post("/rounds/4/retrain", json!({})).await, StatusCode::NOT_FOUND, ErrorCode::NotFound).await;
}

#[tokio::test(flavor = "multi_thread")]
async fn numerical_failure_fails_the_job() {
    // a near-zero control PCE sends Δ_rel to ~1e301 and overflows the likelihood
    let hot: Vec<ExperimentResult> = (0..4)
        .map(|i| ExperimentResult::new(synthetic::molecule_id(i), 0, 10.0 + i as f64, 1e-300).unwrap())
        .collect();
    let f = start_with(hot, 40, RepresentationMode::Hard).await;
    f.post("/rounds", json!({})).await;
    let job: Job = f.post("/rounds/1/retrain", json!({})).await.json().await.unwrap();
    let done = f.wait(&job).await;
    assert_eq!(done.status, JobStatus::Failed);
    assert_eq!(done.error.unwrap().code, ErrorCode::Numerical);
    assert_eq!(f.summary().await.version, 2, "a failed retrain commits nothing");
}

#[tokio::test(flavor = "multi_thread")]
async fn round_diff_after_new_result() {
    let f = start(160).await;
    f.open_scored_round().await;
    error_of(f.get("/rounds/1/diff").await, StatusCode::CONFLICT, ErrorCode::Conflict).await;
    let top = f.shortlist(1).await[0].molecule_id.clone();
    f.post("/results", json!({"molecule_id": top, "round": 1, "pce_additive": 21.5, "pce_control": 19.25}))
        .await;
    f.retrain(1).await;
    let d: RoundDiff = f.get("/rounds/1/diff").await.json().await.unwrap();
    assert_eq!((d.round, d.previous_round, d.previous_retrain), (1, 1, 1));
    // the measured molecule leaves the ranking
    let row = d.rows.iter().find(|r| r.molecule_id == top).unwrap();
    assert_eq!((row.rank, row.previous_rank), (None, Some(1)));
    assert!(d.rows.iter().any(|r| r.moved.is_some_and(|m| m != 0)));
}

#[tokio::test(flavor = "multi_thread")]
async fn gets_are_side_effect_free() {
    let f = start(160).await;
    f.open_scored_round().await;
    let files = f.files();
    let v = f.summary().await.version;
    for path in [
        "/campaign",
        "/rounds/1/candidates",
        "/rounds/1/candidates?sort=mu&limit=5&offset=3",
        "/rounds/1/shortlist",
        "/rounds/1/diff",
        "/jobs/1",
        "/rounds/7/shortlist",
        "/nothing/here",
    ] {
        f.get(path).await;
    }
    assert_eq!(f.files(), files);
    assert_eq!(f.summary().await.version, v);
}

#[tokio::test(flavor = "multi_thread")]
async fn http_session_replays_from_log() {
    let f = start(160).await;
    f.open_scored_round().await;
    let list = f.shortlist(1).await;
    f.post(&format!("/candidates/{}/feasibility", list[0].molecule_id), json!({"feasible": false, "note": "x"}))
        .await;
    f.post(
        "/results",
        json!({"molecule_id": list[1].molecule_id, "round": 1, "pce_additive": 20.1, "pce_control": 19.25}),
    )
    .await;
    f.retrain(1).await;
    f.post("/rounds/1/close", json!({})).await;
    f.post("/rounds", json!({})).await;

    let final_version = f.summary().await.version;
    let loaded = f.store.load().unwrap();
    let replayed = f.store.replay().unwrap();
    assert_eq!(replayed.version, final_version);
    assert_eq!(replayed.content_hash(), loaded.content_hash());
    let log = f.store.read_log().unwrap();
    assert!(log[1..].iter().all(|e| e.recorded_at.is_some()));
}

#[tokio::test(flavor = "multi_thread")]
async fn every_error_is_an_api_error() {
    let f = start(60).await;
    let bad_json = f
        .http
        .post(format!("{}/results", f.base))
        .header("content-type", "application/json")
        .body("{not json")
        .send()
        .await
        .unwrap();
    error_of(bad_json, StatusCode::UNPROCESSABLE_ENTITY, ErrorCode::Validation).await;
    error_of(f.get("/nowhere").await, StatusCode::NOT_FOUND, ErrorCode::NotFound).await;
    error_of(f.get("/rounds/abc/shortlist").await, StatusCode::NOT_FOUND, ErrorCode::NotFound).await;
    error_of(
        f.post("/results", json!({"molecule_id": "syn00001", "round": 1, "pce_additive": 20.0, "pce_control": 19.0, "extra": 1}))
            .await,
        StatusCode::UNPROCESSABLE_ENTITY,
        ErrorCode::Validation,
    )
    .await;
    let stale = f
        .http
        .post(format!("{}/rounds", f.base))
        .header("If-Match", "\"0\"")
        .json(&json!({}))
        .send()
        .await
        .unwrap();
    error_of(stale, StatusCode::CONFLICT, ErrorCode::Conflict).await;
}

#[tokio::test(flavor = "multi_thread")]
async fn service_holds_the_directory_lock() {
    let f = start(60).await;
    assert!(matches!(f.store.lock(), Err(StoreError::Locked(_))));
    assert!(matches!(AppState::open(f.store.clone()).map(|_: Arc<AppState>| ()), Err(StoreError::Locked(_))));
}
