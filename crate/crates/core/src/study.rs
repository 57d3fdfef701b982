//! Rating collection for a subjective study.
//!
//! Subjects identify by username, rate items in a per-subject seeded order,
//! may revise the item they just rated, and are capped at a fixed number of
//! accepted ratings per UTC day. All state changes go to an append-only
//! JSON-lines event log; replaying the log rebuilds the same state.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use chrono::{DateTime, NaiveDate, Utc};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{AgavItem, ScoreTriple};
use crate::dimension::Dimension;
use crate::seed::{derive_seed, rng_for};
use crate::subjective::{RatingRecord, dedup_latest, is_valid_score};

pub const DEFAULT_DAILY_CAP: u32 = 60;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("unknown study `{0}`")]
    UnknownStudy(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("unknown item `{0}`")]
    UnknownItem(String),
    #[error("invalid rating: {0}")]
    Validation(String),
    #[error("no previous item: nothing has been rated yet")]
    AtStart,
    #[error("item `{item_id}` is neither the current nor the previous item")]
    Sequence { item_id: String },
    #[error("daily cap of {cap} ratings reached for {day}")]
    DailyCap { cap: u32, day: NaiveDate },
    #[error("invalid study configuration: {0}")]
    Config(String),
    #[error("event log {path}, line {line}: {message}")]
    CorruptLog { path: PathBuf, line: usize, message: String },
    #[error("event log I/O: {0}")]
    Io(#[from] io::Error),
}

impl StudyError {
    /// HTTP status conventionally used for this error.
    pub fn status(&self) -> u16 {
        match self {
            StudyError::UnknownStudy(_) | StudyError::UnknownSession(_) | StudyError::UnknownItem(_) => 404,
            StudyError::Validation(_) => 422,
            StudyError::AtStart | StudyError::Sequence { .. } => 409,
            StudyError::DailyCap { .. } => 429,
            StudyError::Config(_) | StudyError::CorruptLog { .. } | StudyError::Io(_) => 500,
        }
    }
}

pub type Result<T> = std::result::Result<T, StudyError>;

/// Time source, injectable so tests can cross day boundaries.
pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that only moves when told to.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self(Mutex::new(start))
    }

    pub fn set(&self, t: DateTime<Utc>) {
        *lock(&self.0) = t;
    }

    pub fn advance(&self, d: chrono::TimeDelta) {
        let mut t = lock(&self.0);
        *t += d;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *lock(&self.0)
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub study_id: String,
    pub items: Vec<AgavItem>,
    pub daily_cap: u32,
    pub randomization_seed: u64,
}

impl StudyConfig {
    pub fn new(study_id: impl Into<String>, items: Vec<AgavItem>, randomization_seed: u64) -> Self {
        Self {
            study_id: study_id.into(),
            items,
            daily_cap: DEFAULT_DAILY_CAP,
            randomization_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let id_ok = !self.study_id.is_empty()
            && !self.study_id.starts_with('.')
            && self
                .study_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
        if !id_ok {
            return Err(StudyError::Config(format!(
                "study id `{}` must be non-empty [A-Za-z0-9._-] and not start with '.'",
                self.study_id
            )));
        }
        if self.daily_cap == 0 {
            return Err(StudyError::Config("daily cap must be >= 1".into()));
        }
        if self.items.is_empty() {
            return Err(StudyError::Config("item manifest is empty".into()));
        }
        crate::dataset::validate_items(&self.items).map_err(|e| StudyError::Config(e.to_string()))
    }
}

/// Seeded presentation order of `items` for one subject.
pub fn permutation_for(items: &[AgavItem], seed: u64, subject_id: &str) -> Vec<String> {
    let mut ids: Vec<String> = items.iter().map(|i| i.id.clone()).collect();
    ids.shuffle(&mut rng_for(seed, &["permutation", subject_id]));
    ids
}

pub fn session_id_for(study_id: &str, subject_id: &str, seed: u64) -> String {
    format!("{:016x}", derive_seed(seed, &["session", study_id, subject_id]))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: String,
    pub study_id: String,
    pub subject_id: String,
    pub permutation: Vec<String>,
    pub cursor: usize,
    pub completed_today: u32,
    pub day_anchor: NaiveDate,
}

impl Session {
    fn roll_day(&mut self, day: NaiveDate) {
        if day != self.day_anchor {
            self.day_anchor = day;
            self.completed_today = 0;
        }
    }

    fn completed_on(&self, day: NaiveDate) -> u32 {
        if day == self.day_anchor { self.completed_today } else { 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Which {
    Current,
    Previous,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub session_id: String,
    pub subject_id: String,
    pub completed: usize,
    pub total: usize,
    pub completed_today: u32,
    pub daily_cap: u32,
    pub remaining_today: u32,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub item_id: String,
    /// 0-based position in the subject's order.
    pub position: usize,
    pub video_url: String,
    pub audio_url: String,
    /// The subject's latest rating of this item, if any.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rating: Option<ScoreTriple>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NextItem {
    Item { item: ItemView, progress: Progress },
    Complete { progress: Progress },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub item_id: String,
    pub audio_quality: f64,
    pub consistency: f64,
    pub overall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub accepted: bool,
    pub item_id: String,
    /// True when the submission rated the current item and moved on.
    pub advanced: bool,
    pub progress: Progress,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum Event {
    SessionCreated {
        session_id: String,
        subject_id: String,
        at: DateTime<Utc>,
    },
    Rating {
        session_id: String,
        advance: bool,
        record: RatingRecord,
    },
}

struct EventLog {
    path: PathBuf,
    file: File,
}

impl EventLog {
    /// Opens (creating if needed) the log and returns its events. A torn
    /// final line, left by a crash mid-append, is cut off; damage anywhere
    /// else is an error.
    fn open(path: PathBuf) -> Result<(Self, Vec<Event>)> {
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let mut events = Vec::new();
        let mut offset = 0u64;
        let mut torn_at = None;
        {
            let mut reader = BufReader::new(&mut file);
            let mut line = String::new();
            let mut n = 0;
            loop {
                line.clear();
                let read = reader.read_line(&mut line)?;
                if read == 0 {
                    break;
                }
                n += 1;
                let complete = line.ends_with('\n');
                let text = line.trim();
                if text.is_empty() {
                    offset += read as u64;
                    continue;
                }
                if !complete {
                    torn_at = Some(offset);
                    break;
                }
                match serde_json::from_str::<Event>(text) {
                    Ok(ev) => events.push(ev),
                    Err(e) => {
                        return Err(StudyError::CorruptLog {
                            path,
                            line: n,
                            message: e.to_string(),
                        });
                    }
                }
                offset += read as u64;
            }
        }
        if let Some(at) = torn_at {
            file.set_len(at)?;
            file.seek(SeekFrom::End(0))?;
        }
        Ok((Self { path, file }, events))
    }

    fn append(&mut self, event: &Event) -> Result<()> {
        let mut line = serde_json::to_vec(event).map_err(io::Error::other)?;
        line.push(b'\n');
        // one write on an O_APPEND handle keeps the line contiguous
        self.file.write_all(&line)?;
        self.file.sync_data()?;
        Ok(())
    }
}

/// One study's in-memory state plus its log.
struct Study {
    config: StudyConfig,
    items: HashMap<String, usize>,
    sessions: BTreeMap<String, Session>,
    by_subject: HashMap<String, String>,
    records: Vec<RatingRecord>,
    log: Option<EventLog>,
}

impl Study {
    fn new(config: StudyConfig) -> Self {
        let items = config.items.iter().enumerate().map(|(i, it)| (it.id.clone(), i)).collect();
        Self {
            config,
            items,
            sessions: BTreeMap::new(),
            by_subject: HashMap::new(),
            records: Vec::new(),
            log: None,
        }
    }

    fn apply(&mut self, event: &Event) {
        match event {
            Event::SessionCreated {
                session_id,
                subject_id,
                at,
            } => {
                let session = Session {
                    session_id: session_id.clone(),
                    study_id: self.config.study_id.clone(),
                    subject_id: subject_id.clone(),
                    permutation: permutation_for(&self.config.items, self.config.randomization_seed, subject_id),
                    cursor: 0,
                    completed_today: 0,
                    day_anchor: at.date_naive(),
                };
                self.by_subject.insert(subject_id.clone(), session_id.clone());
                self.sessions.insert(session_id.clone(), session);
            }
            Event::Rating {
                session_id,
                advance,
                record,
            } => {
                if let Some(s) = self.sessions.get_mut(session_id) {
                    s.roll_day(record.timestamp.date_naive());
                    s.completed_today += 1;
                    if *advance {
                        s.cursor += 1;
                    }
                }
                self.records.push(record.clone());
            }
        }
    }

    fn commit(&mut self, event: Event) -> Result<()> {
        if let Some(log) = self.log.as_mut() {
            log.append(&event)?;
        }
        self.apply(&event);
        Ok(())
    }

    fn session(&self, session_id: &str) -> Result<&Session> {
        self.sessions
            .get(session_id)
            .ok_or_else(|| StudyError::UnknownSession(session_id.to_string()))
    }

    fn progress(&self, s: &Session, today: NaiveDate) -> Progress {
        let total = s.permutation.len();
        let done_today = s.completed_on(today);
        Progress {
            session_id: s.session_id.clone(),
            subject_id: s.subject_id.clone(),
            completed: s.cursor,
            total,
            completed_today: done_today,
            daily_cap: self.config.daily_cap,
            remaining_today: self.config.daily_cap.saturating_sub(done_today),
            complete: s.cursor >= total,
        }
    }

    fn latest_rating(&self, subject_id: &str, item_id: &str) -> Option<ScoreTriple> {
        self.records
            .iter()
            .rev()
            .find(|r| r.subject_id == subject_id && r.item_id == item_id)
            .map(|r| crate::PerDimension::from_fn(|d| r.score(d)))
    }
}

/// Thread-safe collection of studies. Operations on one study are
/// serialized; different studies proceed independently.
pub struct StudyRegistry {
    clock: Arc<dyn Clock>,
    log_dir: Option<PathBuf>,
    studies: RwLock<BTreeMap<String, Arc<Mutex<Study>>>>,
    session_index: RwLock<HashMap<String, String>>,
}

impl StudyRegistry {
    /// Without a log directory state lives in memory only.
    pub fn new(clock: Arc<dyn Clock>, log_dir: Option<PathBuf>) -> Self {
        Self {
            clock,
            log_dir,
            studies: RwLock::default(),
            session_index: RwLock::default(),
        }
    }

    pub fn log_path(dir: &Path, study_id: &str) -> PathBuf {
        dir.join(format!("{study_id}.events.jsonl"))
    }

    /// Registers a study, replaying its event log when one exists.
    pub fn add_study(&self, config: StudyConfig) -> Result<()> {
        config.validate()?;
        let study_id = config.study_id.clone();
        if self.studies.read().unwrap_or_else(|e| e.into_inner()).contains_key(&study_id) {
            return Err(StudyError::Config(format!("study `{study_id}` registered twice")));
        }
        let mut study = Study::new(config);
        if let Some(dir) = &self.log_dir {
            std::fs::create_dir_all(dir)?;
            let (log, events) = EventLog::open(Self::log_path(dir, &study_id))?;
            for ev in &events {
                if let Event::Rating { record, .. } = ev
                    && !study.items.contains_key(&record.item_id)
                {
                    return Err(StudyError::CorruptLog {
                        path: log.path.clone(),
                        line: 0,
                        message: format!("rating for item `{}` absent from the manifest", record.item_id),
                    });
                }
                study.apply(ev);
            }
            study.log = Some(log);
        }
        let mut index = self.session_index.write().unwrap_or_else(|e| e.into_inner());
        for id in study.sessions.keys() {
            index.insert(id.clone(), study_id.clone());
        }
        self.studies
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(study_id, Arc::new(Mutex::new(study)));
        Ok(())
    }

    pub fn study_ids(&self) -> Vec<String> {
        self.studies.read().unwrap_or_else(|e| e.into_inner()).keys().cloned().collect()
    }

    fn study(&self, study_id: &str) -> Result<Arc<Mutex<Study>>> {
        self.studies
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(study_id)
            .cloned()
            .ok_or_else(|| StudyError::UnknownStudy(study_id.to_string()))
    }

    fn study_of_session(&self, session_id: &str) -> Result<Arc<Mutex<Study>>> {
        let study_id = self
            .session_index
            .read()
            .unwrap_or_else(|e| e.into_inner())
            .get(session_id)
            .cloned()
            .ok_or_else(|| StudyError::UnknownSession(session_id.to_string()))?;
        self.study(&study_id)
    }

    /// Returns the subject's session, creating it on first contact.
    pub fn create_session(&self, study_id: &str, subject_id: &str) -> Result<Session> {
        let subject_id = subject_id.trim();
        if subject_id.is_empty() {
            return Err(StudyError::Validation("subject id must be non-empty".into()));
        }
        let study = self.study(study_id)?;
        let mut study = lock(&study);
        if let Some(sid) = study.by_subject.get(subject_id) {
            return Ok(study.sessions[sid].clone());
        }
        let session_id = session_id_for(study_id, subject_id, study.config.randomization_seed);
        study.commit(Event::SessionCreated {
            session_id: session_id.clone(),
            subject_id: subject_id.to_string(),
            at: self.clock.now(),
        })?;
        self.session_index
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(session_id.clone(), study_id.to_string());
        Ok(study.sessions[&session_id].clone())
    }

    pub fn session(&self, session_id: &str) -> Result<Session> {
        let study = self.study_of_session(session_id)?;
        let study = lock(&study);
        study.session(session_id).cloned()
    }

    /// All sessions of a study, ordered by session id.
    pub fn sessions(&self, study_id: &str) -> Result<Vec<Session>> {
        let study = self.study(study_id)?;
        let study = lock(&study);
        Ok(study.sessions.values().cloned().collect())
    }

    pub fn next_item(&self, session_id: &str, which: Which) -> Result<NextItem> {
        let study = self.study_of_session(session_id)?;
        let study = lock(&study);
        let s = study.session(session_id)?;
        let progress = study.progress(s, self.clock.now().date_naive());
        let position = match which {
            Which::Current if s.cursor >= s.permutation.len() => return Ok(NextItem::Complete { progress }),
            Which::Current => s.cursor,
            Which::Previous if s.cursor == 0 => return Err(StudyError::AtStart),
            Which::Previous => s.cursor - 1,
        };
        let item_id = s.permutation[position].clone();
        let rating = study.latest_rating(&s.subject_id, &item_id);
        Ok(NextItem::Item {
            item: ItemView {
                video_url: format!("/media/{item_id}/video"),
                audio_url: format!("/media/{item_id}/audio"),
                item_id,
                position,
                rating,
            },
            progress,
        })
    }

    pub fn submit_rating(&self, session_id: &str, submission: &Submission) -> Result<Ack> {
        let study = self.study_of_session(session_id)?;
        let mut study = lock(&study);
        let s = study.session(session_id)?;

        for d in Dimension::ALL {
            let v = match d {
                Dimension::AudioQuality => submission.audio_quality,
                Dimension::Consistency => submission.consistency,
                Dimension::Overall => submission.overall,
            };
            if !is_valid_score(v) {
                return Err(StudyError::Validation(format!(
                    "{d} score {v} must lie in [1, 5] on the 0.1 grid"
                )));
            }
        }
        let current = s.permutation.get(s.cursor);
        let previous = s.cursor.checked_sub(1).map(|i| &s.permutation[i]);
        let advance = if current == Some(&submission.item_id) {
            true
        } else if previous == Some(&submission.item_id) {
            false
        } else {
            return Err(StudyError::Sequence {
                item_id: submission.item_id.clone(),
            });
        };
        let now = self.clock.now();
        let today = now.date_naive();
        if s.completed_on(today) >= study.config.daily_cap {
            return Err(StudyError::DailyCap {
                cap: study.config.daily_cap,
                day: today,
            });
        }
        let record = RatingRecord {
            subject_id: s.subject_id.clone(),
            item_id: submission.item_id.clone(),
            audio_quality: submission.audio_quality,
            consistency: submission.consistency,
            overall: submission.overall,
            timestamp: now,
        };
        study.commit(Event::Rating {
            session_id: session_id.to_string(),
            advance,
            record,
        })?;
        let s = study.session(session_id)?;
        Ok(Ack {
            accepted: true,
            item_id: submission.item_id.clone(),
            advanced: advance,
            progress: study.progress(s, today),
        })
    }

    pub fn progress(&self, session_id: &str) -> Result<Progress> {
        let study = self.study_of_session(session_id)?;
        let study = lock(&study);
        let s = study.session(session_id)?;
        Ok(study.progress(s, self.clock.now().date_naive()))
    }

    /// Latest rating per (subject, item), sorted by subject then item.
    pub fn export(&self, study_id: &str) -> Result<Vec<RatingRecord>> {
        let study = self.study(study_id)?;
        let study = lock(&study);
        Ok(dedup_latest(study.records.iter().cloned()))
    }

    /// Looks an item up across all studies.
    pub fn item(&self, item_id: &str) -> Option<AgavItem> {
        let studies = self.studies.read().unwrap_or_else(|e| e.into_inner());
        studies.values().find_map(|s| {
            let s = lock(s);
            s.items.get(item_id).map(|&i| s.config.items[i].clone())
        })
    }
}
