use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{replay, CampaignError, CampaignState, Mutation, STATE_FORMAT_VERSION};

pub const STATE_FILE: &str = "campaign.state";
pub const LOG_FILE: &str = "campaign.log";
const LOCK_FILE: &str = "campaign.lock";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("a campaign already exists in {0}")]
    Exists(PathBuf),
    #[error("no campaign in {0}")]
    Missing(PathBuf),
    #[error("log entry {line} has version {found}, expected {expected}")]
    VersionGap { line: usize, expected: u64, found: u64 },
    #[error("campaign in {0} is locked by another process")]
    Locked(PathBuf),
    #[error(transparent)]
    Campaign(#[from] CampaignError),
}

/// One line of `campaign.log`: the state version reached after applying
/// `mutation`, and when it was recorded if the writer keeps a clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub version: u64,
    /// Unix seconds. Headless runs leave it out so logs are reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recorded_at: Option<u64>,
    #[serde(flatten)]
    pub mutation: Mutation,
}

/// A campaign directory holding `campaign.state` (the current state as a
/// JSON document) and `campaign.log` (append-only JSON lines).
#[derive(Debug, Clone)]
pub struct CampaignStore {
    dir: PathBuf,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Exclusive advisory lock on the campaign directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    _file: File,
}

impl CampaignStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        CampaignStore { dir: dir.into() }
    }

    /// Accepts either the campaign directory or the path of its state file.
    pub fn at(path: impl AsRef<Path>) -> Self {
        let path = path.as_ref();
        match path.parent() {
            Some(parent) if path.file_name().is_some_and(|f| f == STATE_FILE) => Self::new(parent),
            _ => Self::new(path),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn state_path(&self) -> PathBuf {
        self.dir.join(STATE_FILE)
    }

    pub fn log_path(&self) -> PathBuf {
        self.dir.join(LOG_FILE)
    }

    pub fn exists(&self) -> bool {
        self.state_path().exists()
    }

    /// Takes the single-writer lock without blocking.
    pub fn lock(&self) -> Result<DirLock, StoreError> {
        let path = self.dir.join(LOCK_FILE);
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&path)
            .map_err(io_err(&path))?;
        match file.try_lock() {
            Ok(()) => Ok(DirLock { _file: file }),
            Err(fs::TryLockError::WouldBlock) => Err(StoreError::Locked(self.dir.clone())),
            Err(fs::TryLockError::Error(e)) => Err(io_err(&path)(e)),
        }
    }

    /// Writes a fresh campaign from its initial state and `Init` mutation.
    pub fn create(&self, state: &CampaignState, init: &Mutation) -> Result<(), StoreError> {
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        if self.exists() || self.log_path().exists() {
            return Err(StoreError::Exists(self.dir.clone()));
        }
        let log = self.log_path();
        File::create(&log).map_err(io_err(&log))?;
        self.append_entries(&[LogEntry {
            version: state.version,
            recorded_at: None,
            mutation: init.clone(),
        }])?;
        self.write_state(state)
    }

    pub fn load(&self) -> Result<CampaignState, StoreError> {
        let path = self.state_path();
        if !path.exists() {
            return Err(StoreError::Missing(self.dir.clone()));
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let state = CampaignState::from_document(&text).map_err(|source| StoreError::Json {
            line: source.line(),
            path: path.clone(),
            source,
        })?;
        if state.format_version != STATE_FORMAT_VERSION {
            return Err(CampaignError::FormatVersion(state.format_version).into());
        }
        Ok(state)
    }

    /// Appends `mutations` (already applied to reach `state`) to the log and
    /// rewrites the state document. The log is written first, so a crash in
    /// between leaves a log that replays to the newer state.
    pub fn commit(&self, state: &CampaignState, mutations: &[Mutation]) -> Result<(), StoreError> {
        self.commit_at(state, mutations, None)
    }

    /// [`commit`](Self::commit) with every log entry stamped `recorded_at`.
    pub fn commit_at(
        &self,
        state: &CampaignState,
        mutations: &[Mutation],
        recorded_at: Option<u64>,
    ) -> Result<(), StoreError> {
        if mutations.is_empty() {
            return Ok(());
        }
        let first = state.version + 1 - mutations.len() as u64;
        let entries: Vec<LogEntry> = mutations
            .iter()
            .enumerate()
            .map(|(i, m)| LogEntry {
                version: first + i as u64,
                recorded_at,
                mutation: m.clone(),
            })
            .collect();
        self.append_entries(&entries)?;
        self.write_state(state)
    }

    fn append_entries(&self, entries: &[LogEntry]) -> Result<(), StoreError> {
        let path = self.log_path();
        let mut f = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
        let mut buf = Vec::new();
        for e in entries {
            serde_json::to_writer(&mut buf, e).expect("log entry serializes");
            buf.push(b'\n');
        }
        f.write_all(&buf).map_err(io_err(&path))?;
        f.sync_data().map_err(io_err(&path))
    }

    fn write_state(&self, state: &CampaignState) -> Result<(), StoreError> {
        let path = self.state_path();
        let tmp = self.dir.join(format!("{STATE_FILE}.tmp"));
        {
            let mut f = File::create(&tmp).map_err(io_err(&tmp))?;
            f.write_all(state.to_document().as_bytes()).map_err(io_err(&tmp))?;
            f.sync_all().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, &path).map_err(io_err(&path))
    }

    /// Parses every log line, checking that versions run 1, 2, 3, ...
    pub fn read_log(&self) -> Result<Vec<LogEntry>, StoreError> {
        let path = self.log_path();
        let f = File::open(&path).map_err(io_err(&path))?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(io_err(&path))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: LogEntry = serde_json::from_str(&line).map_err(|source| StoreError::Json {
                path: path.clone(),
                line: i + 1,
                source,
            })?;
            let expected = out.len() as u64 + 1;
            if entry.version != expected {
                return Err(StoreError::VersionGap {
                    line: i + 1,
                    expected,
                    found: entry.version,
                });
            }
            out.push(entry);
        }
        Ok(out)
    }

    /// Rebuilds the state from the log alone.
    pub fn replay(&self) -> Result<CampaignState, StoreError> {
        let log = self.read_log()?;
        Ok(replay(log.iter().map(|e| &e.mutation))?)
    }
}
