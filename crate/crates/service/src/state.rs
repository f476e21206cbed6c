use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use alprio_core::campaign::{CampaignState, CampaignStore, DirLock, Mutation, StoreError};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub id: u64,
    pub kind: String,
    pub round: u32,
    pub status: JobStatus,
    /// State version after the job committed.
    pub version: Option<u64>,
    pub error: Option<ApiError>,
}

/// Shared service state. Readers clone the current snapshot `Arc`; every
/// mutation goes through `writer`, so at most one is in progress and each
/// sees the result of the previous one.
pub struct AppState {
    store: CampaignStore,
    snapshot: RwLock<Arc<CampaignState>>,
    writer: Arc<tokio::sync::Mutex<()>>,
    jobs: Mutex<Vec<Job>>,
    retrain_busy: AtomicBool,
    stamp_log: bool,
    _lock: DirLock,
}

impl AppState {
    /// Locks the campaign directory for the lifetime of the service and
    /// loads its state.
    pub fn open(store: CampaignStore) -> Result<Arc<Self>, StoreError> {
        let lock = store.lock()?;
        let state = store.load()?;
        Ok(Arc::new(AppState {
            store,
            snapshot: RwLock::new(Arc::new(state)),
            writer: Arc::new(tokio::sync::Mutex::new(())),
            jobs: Mutex::new(Vec::new()),
            retrain_busy: AtomicBool::new(false),
            stamp_log: true,
            _lock: lock,
        }))
    }

    pub fn store(&self) -> &CampaignStore {
        &self.store
    }

    pub fn snapshot(&self) -> Arc<CampaignState> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    pub fn retrain_in_flight(&self) -> bool {
        self.retrain_busy.load(Ordering::SeqCst)
    }

    fn now(&self) -> Option<u64> {
        self.stamp_log
            .then(|| SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0))
    }

    /// Runs `f` on a copy of the current state as the single writer, commits
    /// the mutations it returns and publishes the new snapshot. With
    /// `expected` set the call fails with a conflict unless the state is
    /// still at that version.
    pub async fn mutate<T, F>(&self, expected: Option<u64>, f: F) -> Result<(Arc<CampaignState>, T), ApiError>
    where
        F: FnOnce(&mut CampaignState) -> Result<(Vec<Mutation>, T), ApiError>,
    {
        let _guard = self.writer.lock().await;
        self.mutate_locked(expected, f)
    }

    fn mutate_locked<T, F>(&self, expected: Option<u64>, f: F) -> Result<(Arc<CampaignState>, T), ApiError>
    where
        F: FnOnce(&mut CampaignState) -> Result<(Vec<Mutation>, T), ApiError>,
    {
        let current = self.snapshot();
        if let Some(v) = expected {
            if v != current.version {
                return Err(ApiError::stale(v, current.version));
            }
        }
        let mut next = (*current).clone();
        let (ms, out) = f(&mut next)?;
        self.store.commit_at(&next, &ms, self.now())?;
        let next = Arc::new(next);
        *self.snapshot.write().expect("snapshot lock") = next.clone();
        Ok((next, out))
    }

    pub fn job(&self, id: u64) -> Option<Job> {
        self.jobs.lock().expect("jobs lock").iter().find(|j| j.id == id).cloned()
    }

    fn update_job(&self, id: u64, status: JobStatus, version: Option<u64>, error: Option<ApiError>) {
        let mut jobs = self.jobs.lock().expect("jobs lock");
        if let Some(j) = jobs.iter_mut().find(|j| j.id == id) {
            j.status = status;
            j.version = version;
            j.error = error;
        }
    }

    /// Queues a retrain of `round` on the writer. Fails with `busy` while
    /// another retrain is pending.
    pub fn start_retrain(self: &Arc<Self>, round: u32) -> Result<Job, ApiError> {
        if self.retrain_busy.swap(true, Ordering::SeqCst) {
            return Err(ApiError::new(crate::error::ErrorCode::Busy, "a retrain is already in flight"));
        }
        let job = {
            let mut jobs = self.jobs.lock().expect("jobs lock");
            let job = Job {
                id: jobs.len() as u64 + 1,
                kind: "retrain".into(),
                round,
                status: JobStatus::Pending,
                version: None,
                error: None,
            };
            jobs.push(job.clone());
            job
        };
        let app = self.clone();
        let id = job.id;
        tokio::spawn(async move {
            let guard = app.writer.clone().lock_owned().await;
            let worker = app.clone();
            let outcome = tokio::task::spawn_blocking(move || {
                let r = worker.mutate_locked(None, |s| {
                    let current = s.current_round().map(|r| r.index);
                    if current != Some(round) {
                        return Err(ApiError::conflict(format!("round {round} is not the current round")));
                    }
                    Ok((s.retrain_and_shortlist()?, ()))
                });
                drop(guard);
                r
            })
            .await;
            app.retrain_busy.store(false, Ordering::SeqCst);
            match outcome {
                Ok(Ok((state, ()))) => app.update_job(id, JobStatus::Done, Some(state.version), None),
                Ok(Err(e)) => {
                    log::warn!("retrain job {id} failed: {}", e.message);
                    app.update_job(id, JobStatus::Failed, None, Some(e));
                }
                Err(e) => app.update_job(
                    id,
                    JobStatus::Failed,
                    None,
                    Some(ApiError::new(crate::error::ErrorCode::Internal, e.to_string())),
                ),
            }
        });
        Ok(job)
    }
}
