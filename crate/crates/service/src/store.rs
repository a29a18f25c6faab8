//! Crash-safe session persistence.
//!
//! Each session is one append-only JSON-lines log under `sessions/`. Every
//! append is fsynced before the call returns. `index.json` lists session ids in
//! creation order and is replaced by write-then-rename, so it is always either
//! the old or the new version. Uploaded frames live under `blobs/`, named by
//! their SHA-256 digest.
//!
//! On open, every log is replayed. A trailing line without its newline is the
//! remains of an append that never completed; it is cut off and ignored.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use wirecheck_core::{InspectionResult, Overall};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown session {0}")]
    SessionNotFound(String),
    #[error("unknown event {0}")]
    EventNotFound(String),
    #[error("session {0} is closed")]
    Closed(String),
    #[error("{0}")]
    Conflict(String),
    #[error("session log {path}: {message}")]
    Corrupt { path: String, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type StoreResult<T> = Result<T, StoreError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorAction {
    None,
    ManualPass,
    ManualFail,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InspectionEvent {
    pub event_id: String,
    pub timestamp: DateTime<Utc>,
    /// SHA-256 of each uploaded frame, in view order.
    pub frame_digests: Vec<String>,
    pub result: InspectionResult,
    pub operator_action: OperatorAction,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub pass: u64,
    pub fail: u64,
    pub unclear: u64,
    pub manual_override: u64,
}

impl Counts {
    /// Recomputes the counts from scratch.
    pub fn tally(events: &[InspectionEvent]) -> Self {
        let mut c = Counts::default();
        for e in events {
            match e.result.overall {
                Overall::Pass => c.pass += 1,
                Overall::Fail => c.fail += 1,
                Overall::Unclear => c.unclear += 1,
            }
            if e.operator_action != OperatorAction::None {
                c.manual_override += 1;
            }
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub operator: String,
    pub harness_type: String,
    pub profile_id: String,
    pub started_at: DateTime<Utc>,
    pub ended_at: Option<DateTime<Utc>>,
    pub counts: Counts,
    pub events: Vec<InspectionEvent>,
}

/// One line of a session log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    Open {
        session_id: String,
        operator: String,
        harness_type: String,
        profile_id: String,
        started_at: DateTime<Utc>,
    },
    Event {
        event: InspectionEvent,
    },
    Resolve {
        event_id: String,
        action: OperatorAction,
        at: DateTime<Utc>,
    },
    Close {
        ended_at: DateTime<Utc>,
    },
}

impl SessionRecord {
    pub fn is_open(&self) -> bool {
        self.ended_at.is_none()
    }

    fn from_open(rec: &LogRecord) -> StoreResult<Self> {
        match rec {
            LogRecord::Open { session_id, operator, harness_type, profile_id, started_at } => Ok(Self {
                session_id: session_id.clone(),
                operator: operator.clone(),
                harness_type: harness_type.clone(),
                profile_id: profile_id.clone(),
                started_at: *started_at,
                ended_at: None,
                counts: Counts::default(),
                events: Vec::new(),
            }),
            _ => Err(StoreError::Conflict("session log must start with an open record".into())),
        }
    }

    /// Checks that `rec` is a legal next record without applying it.
    pub fn check(&self, rec: &LogRecord) -> StoreResult<()> {
        let closed = || StoreError::Closed(self.session_id.clone());
        match rec {
            LogRecord::Open { .. } => Err(StoreError::Conflict("session already open".into())),
            LogRecord::Event { event } => {
                if !self.is_open() {
                    return Err(closed());
                }
                if event.operator_action != OperatorAction::None {
                    return Err(StoreError::Conflict("new events carry no operator action".into()));
                }
                if self.events.iter().any(|e| e.event_id == event.event_id) {
                    return Err(StoreError::Conflict(format!("duplicate event {}", event.event_id)));
                }
                Ok(())
            }
            LogRecord::Resolve { event_id, action, .. } => {
                if !self.is_open() {
                    return Err(closed());
                }
                let e = self
                    .events
                    .iter()
                    .find(|e| &e.event_id == event_id)
                    .ok_or_else(|| StoreError::EventNotFound(event_id.clone()))?;
                if *action == OperatorAction::None {
                    return Err(StoreError::Conflict("resolution must be manual_pass or manual_fail".into()));
                }
                if e.result.overall != Overall::Unclear {
                    return Err(StoreError::Conflict(format!("event {event_id} is not unclear")));
                }
                if e.operator_action != OperatorAction::None {
                    return Err(StoreError::Conflict(format!("event {event_id} already resolved")));
                }
                Ok(())
            }
            LogRecord::Close { .. } => {
                if !self.is_open() {
                    return Err(closed());
                }
                Ok(())
            }
        }
    }

    pub fn apply(&mut self, rec: LogRecord) -> StoreResult<()> {
        self.check(&rec)?;
        match rec {
            LogRecord::Open { .. } => unreachable!("rejected by check"),
            LogRecord::Event { event } => {
                match event.result.overall {
                    Overall::Pass => self.counts.pass += 1,
                    Overall::Fail => self.counts.fail += 1,
                    Overall::Unclear => self.counts.unclear += 1,
                }
                self.events.push(event);
            }
            LogRecord::Resolve { event_id, action, .. } => {
                let e = self.events.iter_mut().find(|e| e.event_id == event_id).expect("checked");
                e.operator_action = action;
                self.counts.manual_override += 1;
            }
            LogRecord::Close { ended_at } => self.ended_at = Some(ended_at),
        }
        debug_assert_eq!(self.counts, Counts::tally(&self.events));
        Ok(())
    }
}

struct SessionHandle {
    record: SessionRecord,
    log: File,
}

impl SessionHandle {
    /// Validates, appends and fsyncs, then applies; a failed write leaves memory untouched.
    fn commit(&mut self, rec: LogRecord) -> StoreResult<()> {
        self.record.check(&rec)?;
        let mut line = serde_json::to_vec(&rec)?;
        line.push(b'\n');
        self.log.write_all(&line)?;
        self.log.sync_data()?;
        self.record.apply(rec)
    }
}

#[derive(Default, Serialize, Deserialize)]
struct Index {
    sessions: Vec<String>,
}

pub struct SessionStore {
    root: PathBuf,
    sessions: Mutex<HashMap<String, Arc<Mutex<SessionHandle>>>>,
    order: Mutex<Vec<String>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    // a panic while holding a guard cannot leave a half-applied record: commit applies only after fsync
    m.lock().unwrap_or_else(|p| p.into_inner())
}

fn sync_dir(dir: &Path) -> std::io::Result<()> {
    File::open(dir)?.sync_all()
}

/// Reads complete records, truncating any torn tail in place.
fn replay_log(path: &Path) -> StoreResult<SessionRecord> {
    let corrupt = |message: String| StoreError::Corrupt { path: path.display().to_string(), message };
    let file = File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut good_len = 0u64;
    let mut record: Option<SessionRecord> = None;
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = reader.read_until(b'\n', &mut buf)?;
        if n == 0 {
            break;
        }
        if buf.last() != Some(&b'\n') {
            break;
        }
        let rec: LogRecord =
            serde_json::from_slice(&buf[..n - 1]).map_err(|e| corrupt(format!("line after byte {good_len}: {e}")))?;
        match &mut record {
            None => record = Some(SessionRecord::from_open(&rec)?),
            Some(r) => r.apply(rec).map_err(|e| corrupt(e.to_string()))?,
        }
        good_len += n as u64;
    }
    let len = fs::metadata(path)?.len();
    if len != good_len {
        let f = OpenOptions::new().write(true).open(path)?;
        f.set_len(good_len)?;
        f.sync_all()?;
    }
    record.ok_or_else(|| corrupt("empty log".into()))
}

impl SessionStore {
    pub fn open(root: impl Into<PathBuf>) -> StoreResult<Self> {
        let root = root.into();
        fs::create_dir_all(root.join("sessions"))?;
        fs::create_dir_all(root.join("blobs"))?;
        let index: Index = match fs::read(root.join("index.json")) {
            Ok(bytes) => serde_json::from_slice(&bytes)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Index::default(),
            Err(e) => return Err(e.into()),
        };
        let mut order = index.sessions;
        // logs whose index update never landed are adopted, oldest first
        let mut orphans = Vec::new();
        for entry in fs::read_dir(root.join("sessions"))? {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if let Some(id) = name.strip_suffix(".jsonl") {
                if !order.iter().any(|o| o == id) {
                    orphans.push(id.to_string());
                }
            }
        }
        order.retain(|id| root.join("sessions").join(format!("{id}.jsonl")).exists());
        let mut sessions = HashMap::new();
        let mut kept = Vec::new();
        let mut adopted = Vec::new();
        let candidates = order.iter().map(|id| (id, false)).chain(orphans.iter().map(|id| (id, true)));
        for (id, orphan) in candidates {
            let path = root.join("sessions").join(format!("{id}.jsonl"));
            let record = match replay_log(&path) {
                Ok(r) => r,
                // the open record itself was torn: the session never existed
                Err(StoreError::Corrupt { message, .. }) if message == "empty log" => {
                    fs::remove_file(&path)?;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if orphan {
                adopted.push((record.started_at, id.clone()));
            } else {
                kept.push(id.clone());
            }
            let log = OpenOptions::new().append(true).open(&path)?;
            sessions.insert(id.clone(), Arc::new(Mutex::new(SessionHandle { record, log })));
        }
        adopted.sort();
        kept.extend(adopted.into_iter().map(|(_, id)| id));
        let order = kept;
        let store = Self { root, sessions: Mutex::new(sessions), order: Mutex::new(order) };
        store.write_index(&lock(&store.order))?;
        Ok(store)
    }

    fn write_index(&self, order: &[String]) -> StoreResult<()> {
        let tmp = self.root.join("index.json.tmp");
        let mut f = File::create(&tmp)?;
        f.write_all(&serde_json::to_vec(&Index { sessions: order.to_vec() })?)?;
        f.sync_all()?;
        fs::rename(&tmp, self.root.join("index.json"))?;
        sync_dir(&self.root)?;
        Ok(())
    }

    fn handle(&self, id: &str) -> StoreResult<Arc<Mutex<SessionHandle>>> {
        lock(&self.sessions)
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::SessionNotFound(id.to_string()))
    }

    pub fn create(&self, operator: &str, harness_type: &str, profile_id: &str) -> StoreResult<SessionRecord> {
        let session_id = uuid::Uuid::new_v4().simple().to_string();
        let path = self.root.join("sessions").join(format!("{session_id}.jsonl"));
        let open = LogRecord::Open {
            session_id: session_id.clone(),
            operator: operator.to_string(),
            harness_type: harness_type.to_string(),
            profile_id: profile_id.to_string(),
            started_at: Utc::now(),
        };
        let record = SessionRecord::from_open(&open)?;
        let mut log = OpenOptions::new().create_new(true).append(true).open(&path)?;
        let mut line = serde_json::to_vec(&open)?;
        line.push(b'\n');
        log.write_all(&line)?;
        log.sync_all()?;
        sync_dir(&self.root.join("sessions"))?;

        let mut order = lock(&self.order);
        order.push(session_id.clone());
        self.write_index(&order)?;
        lock(&self.sessions).insert(session_id, Arc::new(Mutex::new(SessionHandle { record: record.clone(), log })));
        Ok(record)
    }

    pub fn list(&self) -> Vec<SessionRecord> {
        let order = lock(&self.order).clone();
        order.iter().filter_map(|id| self.get(id).ok()).collect()
    }

    pub fn get(&self, id: &str) -> StoreResult<SessionRecord> {
        let handle = self.handle(id)?;
        let rec = lock(&handle).record.clone();
        Ok(rec)
    }

    pub fn append_event(
        &self,
        id: &str,
        frame_digests: Vec<String>,
        result: InspectionResult,
    ) -> StoreResult<InspectionEvent> {
        let event = InspectionEvent {
            event_id: uuid::Uuid::new_v4().simple().to_string(),
            timestamp: Utc::now(),
            frame_digests,
            result,
            operator_action: OperatorAction::None,
        };
        let handle = self.handle(id)?;
        lock(&handle).commit(LogRecord::Event { event: event.clone() })?;
        Ok(event)
    }

    pub fn resolve(&self, id: &str, event_id: &str, action: OperatorAction) -> StoreResult<InspectionEvent> {
        let handle = self.handle(id)?;
        let mut h = lock(&handle);
        h.commit(LogRecord::Resolve { event_id: event_id.to_string(), action, at: Utc::now() })?;
        Ok(h.record.events.iter().find(|e| e.event_id == event_id).cloned().expect("just resolved"))
    }

    pub fn close(&self, id: &str) -> StoreResult<SessionRecord> {
        let handle = self.handle(id)?;
        let mut h = lock(&handle);
        h.commit(LogRecord::Close { ended_at: Utc::now() })?;
        Ok(h.record.clone())
    }

    /// Stores `bytes` under its SHA-256 digest and returns the hex digest.
    pub fn put_blob(&self, bytes: &[u8]) -> StoreResult<String> {
        let digest = hex::encode(Sha256::digest(bytes));
        let path = self.root.join("blobs").join(&digest);
        if !path.exists() {
            let tmp = self.root.join("blobs").join(format!("{digest}.{}.tmp", uuid::Uuid::new_v4().simple()));
            let mut f = File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, &path)?;
        }
        Ok(digest)
    }

    pub fn blob_path(&self, digest: &str) -> Option<PathBuf> {
        let ok = digest.len() == 64 && digest.chars().all(|c| c.is_ascii_hexdigit());
        ok.then(|| self.root.join("blobs").join(digest)).filter(|p| p.exists())
    }
}
