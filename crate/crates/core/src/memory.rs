//! External, versioned memory.
//!
//! Entries are addressed by dotted [`MemoryKey`]s and are never mutated in
//! place: every write appends a new version. Writes made during a cycle are
//! staged and only become visible once [`MemoryStore::commit_cycle`] runs,
//! so every module inside a cycle reads the same [`MemorySnapshot`].

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use chrono::{DateTime, Duration, SecondsFormat, TimeZone, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{Map, Value};
use thiserror::Error;

pub type Payload = Map<String, Value>;

#[derive(Debug, Error, PartialEq)]
pub enum MemoryError {
    #[error("malformed memory key `{key}`: {reason}")]
    MalformedKey { key: String, reason: String },
    #[error("payload for {kind} entry `{key}` does not match its schema: {reason}")]
    SchemaMismatch {
        key: String,
        kind: EntryKind,
        reason: String,
    },
    #[error("unknown memory key `{0}`")]
    UnknownKey(String),
    #[error("illegal status transition on `{key}`: {from} -> {to}")]
    IllegalTransition { key: String, from: String, to: String },
    #[error("persistence failure: {0}")]
    Io(String),
    #[error("corrupt log line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
}

/// First segment of every key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum KeyRoot {
    Obs,
    Prop,
    Act,
    Pending,
    Goal,
    Status,
    Feedback,
}

impl KeyRoot {
    pub fn as_str(self) -> &'static str {
        match self {
            KeyRoot::Obs => "obs",
            KeyRoot::Prop => "prop",
            KeyRoot::Act => "act",
            KeyRoot::Pending => "pending",
            KeyRoot::Goal => "goal",
            KeyRoot::Status => "status",
            KeyRoot::Feedback => "feedback",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "obs" => KeyRoot::Obs,
            "prop" => KeyRoot::Prop,
            "act" => KeyRoot::Act,
            "pending" => KeyRoot::Pending,
            "goal" => KeyRoot::Goal,
            "status" => KeyRoot::Status,
            "feedback" => KeyRoot::Feedback,
            _ => return None,
        })
    }

    pub fn is_root(s: &str) -> bool {
        Self::parse(s).is_some()
    }
}

/// Dotted address such as `obs.Seoul.temp_f` or `goal.choose_colder`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MemoryKey {
    segments: Vec<String>,
}

impl MemoryKey {
    pub fn new<I, S>(segments: I) -> Result<Self, MemoryError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let segments: Vec<String> = segments.into_iter().map(Into::into).collect();
        let rendered = segments.join(".");
        let malformed = |reason: &str| MemoryError::MalformedKey {
            key: rendered.clone(),
            reason: reason.to_string(),
        };
        let first = segments.first().ok_or_else(|| malformed("empty key"))?;
        if !KeyRoot::is_root(first) {
            return Err(malformed(
                "first segment must be one of obs, prop, act, pending, goal, status, feedback",
            ));
        }
        for seg in &segments {
            if seg.is_empty() {
                return Err(malformed("empty segment"));
            }
            if seg.contains('.') || seg.chars().any(char::is_whitespace) {
                return Err(malformed("segments may not contain dots or whitespace"));
            }
        }
        Ok(Self { segments })
    }

    pub fn root(&self) -> KeyRoot {
        KeyRoot::parse(&self.segments[0]).expect("validated at construction")
    }

    pub fn segments(&self) -> &[String] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Appends one segment.
    pub fn child(&self, segment: &str) -> Result<Self, MemoryError> {
        let mut segs = self.segments.clone();
        segs.push(segment.to_string());
        Self::new(segs)
    }

    pub fn is_prefix_of(&self, other: &MemoryKey) -> bool {
        other.segments.len() >= self.segments.len()
            && self.segments.iter().zip(&other.segments).all(|(a, b)| a == b)
    }

    /// Second segment, e.g. `Seoul` for `obs.Seoul.temp_f`.
    pub fn entity(&self) -> Option<&str> {
        self.segments.get(1).map(String::as_str)
    }
}

impl fmt::Display for MemoryKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.segments.join("."))
    }
}

impl FromStr for MemoryKey {
    type Err = MemoryError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s.split('.'))
    }
}

impl Serialize for MemoryKey {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MemoryKey {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntryKind {
    Observation,
    Proposal,
    ActionRecord,
    PendingAction,
    TerminationFlag,
    ControlFeedback,
}

impl fmt::Display for EntryKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            EntryKind::Observation => "observation",
            EntryKind::Proposal => "proposal",
            EntryKind::ActionRecord => "action_record",
            EntryKind::PendingAction => "pending_action",
            EntryKind::TerminationFlag => "termination_flag",
            EntryKind::ControlFeedback => "control_feedback",
        };
        f.write_str(s)
    }
}

impl EntryKind {
    fn allowed_roots(self) -> &'static [KeyRoot] {
        match self {
            // goal.* entries are the static task context written at initialization
            EntryKind::Observation => &[KeyRoot::Obs, KeyRoot::Goal],
            EntryKind::Proposal => &[KeyRoot::Prop],
            EntryKind::ActionRecord => &[KeyRoot::Act],
            EntryKind::PendingAction => &[KeyRoot::Pending],
            EntryKind::TerminationFlag => &[KeyRoot::Status],
            EntryKind::ControlFeedback => &[KeyRoot::Feedback],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionStatus {
    Pending,
    Executed,
    Failed,
}

impl ActionStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            ActionStatus::Pending => "pending",
            ActionStatus::Executed => "executed",
            ActionStatus::Failed => "failed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pending" => Some(ActionStatus::Pending),
            "executed" => Some(ActionStatus::Executed),
            "failed" => Some(ActionStatus::Failed),
            _ => None,
        }
    }
}

/// Target state for [`MemoryStore::update_status`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatusUpdate {
    Action(ActionStatus),
    Terminated(bool),
}

/// A committed, versioned record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub key: MemoryKey,
    pub kind: EntryKind,
    pub payload: Payload,
    pub source: String,
    pub timestamp: String,
    pub version: u64,
}

impl MemoryEntry {
    pub fn action_status(&self) -> Option<ActionStatus> {
        if self.kind != EntryKind::ActionRecord {
            return None;
        }
        self.payload
            .get("status")
            .and_then(Value::as_str)
            .and_then(ActionStatus::parse)
    }

    pub fn terminated(&self) -> Option<bool> {
        if self.kind != EntryKind::TerminationFlag {
            return None;
        }
        self.payload.get("terminated").and_then(Value::as_bool)
    }
}

/// A write request; version and timestamp are assigned by the store.
#[derive(Debug, Clone, PartialEq)]
pub struct NewEntry {
    pub key: MemoryKey,
    pub kind: EntryKind,
    pub payload: Payload,
    pub source: String,
}

impl NewEntry {
    pub fn new(key: MemoryKey, kind: EntryKind, payload: Payload, source: impl Into<String>) -> Self {
        Self {
            key,
            kind,
            payload,
            source: source.into(),
        }
    }

    fn validate(&self) -> Result<(), MemoryError> {
        let mismatch = |reason: String| MemoryError::SchemaMismatch {
            key: self.key.to_string(),
            kind: self.kind,
            reason,
        };
        if !self.kind.allowed_roots().contains(&self.key.root()) {
            return Err(mismatch(format!(
                "key root `{}` not allowed for this kind",
                self.key.root().as_str()
            )));
        }
        let p = &self.payload;
        let need_str = |field: &str| -> Result<(), MemoryError> {
            match p.get(field) {
                Some(Value::String(_)) => Ok(()),
                _ => Err(mismatch(format!("`{field}` must be a string"))),
            }
        };
        match self.kind {
            EntryKind::Observation => {
                if p.is_empty() {
                    return Err(mismatch("observation payload is empty".into()));
                }
            }
            EntryKind::Proposal => {
                need_str("proposition")?;
                match p.get("evidence") {
                    Some(Value::Array(items)) if items.iter().all(Value::is_string) => {}
                    _ => return Err(mismatch("`evidence` must be a list of strings".into())),
                }
            }
            EntryKind::ActionRecord => {
                need_str("name")?;
                match p.get("args") {
                    Some(Value::Array(_)) | Some(Value::Object(_)) => {}
                    _ => return Err(mismatch("`args` must be a list or map".into())),
                }
                match p.get("status").and_then(Value::as_str).and_then(ActionStatus::parse) {
                    Some(_) => {}
                    None => {
                        return Err(mismatch(
                            "`status` must be one of pending, executed, failed".into(),
                        ))
                    }
                }
                if let Some(c) = p.get("confirmation") {
                    if !c.is_string() {
                        return Err(mismatch("`confirmation` must be a string".into()));
                    }
                }
            }
            EntryKind::PendingAction => {
                need_str("name")?;
                match p.get("args") {
                    Some(Value::Array(_)) | Some(Value::Object(_)) => {}
                    _ => return Err(mismatch("`args` must be a list or map".into())),
                }
            }
            EntryKind::TerminationFlag => {
                if !matches!(p.get("terminated"), Some(Value::Bool(_))) {
                    return Err(mismatch("`terminated` must be a bool".into()));
                }
            }
            EntryKind::ControlFeedback => need_str("message")?,
        }
        Ok(())
    }
}

/// Result of [`MemorySnapshot::resolve`]. Absence is a value, not an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolved {
    Value(Value),
    NotFound,
}

impl Resolved {
    pub fn is_found(&self) -> bool {
        matches!(self, Resolved::Value(_))
    }

    pub fn value(&self) -> Option<&Value> {
        match self {
            Resolved::Value(v) => Some(v),
            Resolved::NotFound => None,
        }
    }

    /// Equality that treats `68` and `68.0` as the same number.
    pub fn same_as(&self, other: &Resolved) -> bool {
        match (self, other) {
            (Resolved::NotFound, Resolved::NotFound) => true,
            (Resolved::Value(a), Resolved::Value(b)) => values_equal(a, b),
            _ => false,
        }
    }
}

pub fn values_equal(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.as_f64() == y.as_f64(),
        (Value::Array(x), Value::Array(y)) => {
            x.len() == y.len() && x.iter().zip(y).all(|(a, b)| values_equal(a, b))
        }
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len()
                && x.iter()
                    .all(|(k, v)| y.get(k).is_some_and(|w| values_equal(v, w)))
        }
        _ => a == b,
    }
}

/// Anything that can answer "what is the current value at this key".
pub trait Resolver {
    fn resolve(&self, key: &MemoryKey) -> Resolved;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryQuery {
    pub prefix: Option<MemoryKey>,
    pub kinds: Vec<EntryKind>,
    pub since: Option<String>,
    pub latest_only: bool,
}

impl MemoryQuery {
    pub fn all() -> Self {
        Self {
            prefix: None,
            kinds: Vec::new(),
            since: None,
            latest_only: false,
        }
    }

    pub fn prefix(key: MemoryKey) -> Self {
        Self {
            prefix: Some(key),
            ..Self::all()
        }
    }

    pub fn latest(mut self) -> Self {
        self.latest_only = true;
        self
    }

    pub fn kinds(mut self, kinds: &[EntryKind]) -> Self {
        self.kinds = kinds.to_vec();
        self
    }

    pub fn since(mut self, timestamp: impl Into<String>) -> Self {
        self.since = Some(timestamp.into());
        self
    }
}

/// Immutable view of memory as of a cycle boundary.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MemorySnapshot {
    entries: Arc<BTreeMap<MemoryKey, Vec<MemoryEntry>>>,
}

impl MemorySnapshot {
    /// Builds a snapshot from arbitrary entries, keeping each key's versions in order.
    pub fn from_entries<I: IntoIterator<Item = MemoryEntry>>(entries: I) -> Self {
        let mut map: BTreeMap<MemoryKey, Vec<MemoryEntry>> = BTreeMap::new();
        for e in entries {
            map.entry(e.key.clone()).or_default().push(e);
        }
        for versions in map.values_mut() {
            versions.sort_by_key(|e| e.version);
        }
        Self {
            entries: Arc::new(map),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn latest(&self, key: &MemoryKey) -> Option<&MemoryEntry> {
        self.entries.get(key).and_then(|v| v.last())
    }

    pub fn history(&self, key: &MemoryKey) -> &[MemoryEntry] {
        self.entries.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn version(&self, key: &MemoryKey) -> u64 {
        self.latest(key).map_or(0, |e| e.version)
    }

    pub fn keys(&self) -> impl Iterator<Item = &MemoryKey> {
        self.entries.keys()
    }

    /// Every entry ordered by (key, version).
    pub fn iter(&self) -> impl Iterator<Item = &MemoryEntry> {
        self.entries.values().flatten()
    }

    pub fn read(&self, query: &MemoryQuery) -> Vec<MemoryEntry> {
        let mut out = Vec::new();
        for (key, versions) in self.entries.iter() {
            if let Some(prefix) = &query.prefix {
                if !prefix.is_prefix_of(key) {
                    continue;
                }
            }
            let matches = |e: &&MemoryEntry| {
                (query.kinds.is_empty() || query.kinds.contains(&e.kind))
                    && query.since.as_ref().is_none_or(|s| e.timestamp.as_str() >= s.as_str())
            };
            if query.latest_only {
                if let Some(e) = versions.last().filter(matches) {
                    out.push(e.clone());
                }
            } else {
                out.extend(versions.iter().filter(matches).cloned());
            }
        }
        out
    }

    /// The payload of the longest committed key that prefixes `key`, descended
    /// into by the remaining segments. `temp` falls back to `temp_f`.
    pub fn resolve_key(&self, key: &MemoryKey) -> Resolved {
        for len in (1..=key.len()).rev() {
            let prefix = MemoryKey {
                segments: key.segments[..len].to_vec(),
            };
            if let Some(entry) = self.latest(&prefix) {
                return descend(&entry.payload, &key.segments[len..]);
            }
        }
        Resolved::NotFound
    }
}

impl Resolver for MemorySnapshot {
    fn resolve(&self, key: &MemoryKey) -> Resolved {
        self.resolve_key(key)
    }
}

pub(crate) fn descend(payload: &Payload, path: &[String]) -> Resolved {
    let Some((head, rest)) = path.split_first() else {
        return Resolved::Value(Value::Object(payload.clone()));
    };
    let field = payload
        .get(head.as_str())
        .or_else(|| (head == "temp").then(|| payload.get("temp_f")).flatten());
    let mut current = match field {
        Some(v) => v,
        None => return Resolved::NotFound,
    };
    for seg in rest {
        match current.get(seg.as_str()) {
            Some(v) => current = v,
            None => return Resolved::NotFound,
        }
    }
    Resolved::Value(current.clone())
}

/// Source of entry timestamps.
pub trait Clock: Send {
    fn now(&mut self) -> DateTime<Utc>;
}

/// Deterministic clock advancing a fixed step per reading.
#[derive(Debug, Clone)]
pub struct SteppingClock {
    next: DateTime<Utc>,
    step: Duration,
}

impl SteppingClock {
    pub fn new(start: DateTime<Utc>, step_ms: i64) -> Self {
        Self {
            next: start,
            step: Duration::milliseconds(step_ms),
        }
    }
}

impl Default for SteppingClock {
    fn default() -> Self {
        Self::new(Utc.with_ymd_and_hms(2025, 1, 1, 12, 0, 0).unwrap(), 1_000)
    }
}

impl Clock for SteppingClock {
    fn now(&mut self) -> DateTime<Utc> {
        let t = self.next;
        self.next += self.step;
        t
    }
}

pub fn format_timestamp(t: DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Index of a staged write inside the current cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StagedHandle(pub usize);

struct StagedEntry {
    entry: NewEntry,
    timestamp: String,
}

/// Append-only store with per-cycle staging.
pub struct MemoryStore {
    log: Vec<MemoryEntry>,
    snapshot: MemorySnapshot,
    staged: Vec<StagedEntry>,
    clock: Box<dyn Clock>,
    persist: Option<File>,
}

impl fmt::Debug for MemoryStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MemoryStore")
            .field("committed", &self.log.len())
            .field("staged", &self.staged.len())
            .finish()
    }
}

impl Default for MemoryStore {
    fn default() -> Self {
        Self::new(Box::new(SteppingClock::default()))
    }
}

impl MemoryStore {
    pub fn new(clock: Box<dyn Clock>) -> Self {
        Self {
            log: Vec::new(),
            snapshot: MemorySnapshot::default(),
            staged: Vec::new(),
            clock,
            persist: None,
        }
    }

    /// Mirrors every committed entry to `path` as one JSON object per line.
    pub fn with_persistence(mut self, path: impl AsRef<Path>) -> Result<Self, MemoryError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path.as_ref())
            .map_err(|e| MemoryError::Io(e.to_string()))?;
        self.persist = Some(file);
        Ok(self)
    }

    /// Rebuilds a store from a JSON-lines log.
    pub fn replay(path: impl AsRef<Path>) -> Result<Self, MemoryError> {
        let file = File::open(path.as_ref()).map_err(|e| MemoryError::Io(e.to_string()))?;
        let mut lines = Vec::new();
        for line in BufReader::new(file).lines() {
            lines.push(line.map_err(|e| MemoryError::Io(e.to_string()))?);
        }
        Self::from_jsonl(lines.iter().map(String::as_str))
    }

    pub fn from_jsonl<'a, I: IntoIterator<Item = &'a str>>(lines: I) -> Result<Self, MemoryError> {
        let mut store = Self::default();
        let mut next_version: BTreeMap<MemoryKey, u64> = BTreeMap::new();
        for (i, line) in lines.into_iter().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let corrupt = |reason: String| MemoryError::CorruptLog { line: i + 1, reason };
            let entry: MemoryEntry =
                serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
            let expected = next_version.entry(entry.key.clone()).or_insert(1);
            if entry.version != *expected {
                return Err(corrupt(format!(
                    "version {} of `{}` breaks the gapless sequence (expected {})",
                    entry.version, entry.key, expected
                )));
            }
            *expected += 1;
            store.log.push(entry);
        }
        store.snapshot = MemorySnapshot::from_entries(store.log.iter().cloned());
        Ok(store)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.log {
            out.push_str(&serde_json::to_string(e).expect("entries serialize"));
            out.push('\n');
        }
        out
    }

    pub fn log(&self) -> &[MemoryEntry] {
        &self.log
    }

    pub fn snapshot(&self) -> MemorySnapshot {
        self.snapshot.clone()
    }

    pub fn staged_len(&self) -> usize {
        self.staged.len()
    }

    pub fn write_staged(&mut self, entry: NewEntry) -> Result<StagedHandle, MemoryError> {
        entry.validate()?;
        let timestamp = format_timestamp(self.clock.now());
        self.staged.push(StagedEntry { entry, timestamp });
        Ok(StagedHandle(self.staged.len() - 1))
    }

    /// Reads against the committed snapshot; staged writes are invisible.
    pub fn read(&self, query: &MemoryQuery) -> Vec<MemoryEntry> {
        self.snapshot.read(query)
    }

    pub fn resolve(&self, key: &MemoryKey) -> Resolved {
        self.snapshot.resolve_key(key)
    }

    /// Stages a new version of `key` with its status changed. Sees writes
    /// already staged this cycle.
    pub fn update_status(
        &mut self,
        key: &MemoryKey,
        update: StatusUpdate,
    ) -> Result<StagedHandle, MemoryError> {
        self.update_status_with(key, update, Payload::new())
    }

    /// Like [`update_status`](Self::update_status), also merging `extra`
    /// fields (e.g. a confirmation token) into the new version.
    pub fn update_status_with(
        &mut self,
        key: &MemoryKey,
        update: StatusUpdate,
        extra: Payload,
    ) -> Result<StagedHandle, MemoryError> {
        let (kind, mut payload, source) = match self.staged.iter().rev().find(|s| &s.entry.key == key)
        {
            Some(s) => (s.entry.kind, s.entry.payload.clone(), s.entry.source.clone()),
            None => {
                let e = self
                    .snapshot
                    .latest(key)
                    .ok_or_else(|| MemoryError::UnknownKey(key.to_string()))?;
                (e.kind, e.payload.clone(), e.source.clone())
            }
        };
        let illegal = |from: String, to: String| MemoryError::IllegalTransition {
            key: key.to_string(),
            from,
            to,
        };
        match (kind, update) {
            (EntryKind::ActionRecord, StatusUpdate::Action(to)) => {
                let from = payload
                    .get("status")
                    .and_then(Value::as_str)
                    .and_then(ActionStatus::parse)
                    .ok_or_else(|| illegal("?".into(), to.as_str().into()))?;
                if from != ActionStatus::Pending || to == ActionStatus::Pending {
                    return Err(illegal(from.as_str().into(), to.as_str().into()));
                }
                payload.insert("status".into(), Value::String(to.as_str().into()));
            }
            (EntryKind::TerminationFlag, StatusUpdate::Terminated(to)) => {
                let from = payload.get("terminated").and_then(Value::as_bool).unwrap_or(false);
                if from == to {
                    return Err(illegal(from.to_string(), to.to_string()));
                }
                payload.insert("terminated".into(), Value::Bool(to));
            }
            (kind, update) => {
                return Err(illegal(kind.to_string(), format!("{update:?}")));
            }
        }
        for (k, v) in extra {
            if !matches!(k.as_str(), "status" | "terminated" | "name" | "args") {
                payload.insert(k, v);
            }
        }
        self.write_staged(NewEntry::new(key.clone(), kind, payload, source))
    }

    /// Assigns versions to staged writes, appends them and publishes a new snapshot.
    pub fn commit_cycle(&mut self) -> MemorySnapshot {
        let staged = std::mem::take(&mut self.staged);
        if staged.is_empty() {
            return self.snapshot.clone();
        }
        let mut versions: BTreeMap<MemoryKey, u64> = BTreeMap::new();
        let first_new = self.log.len();
        for StagedEntry { entry, timestamp } in staged {
            let v = versions
                .entry(entry.key.clone())
                .or_insert_with(|| self.snapshot.version(&entry.key));
            *v += 1;
            self.log.push(MemoryEntry {
                key: entry.key,
                kind: entry.kind,
                payload: entry.payload,
                source: entry.source,
                timestamp,
                version: *v,
            });
        }
        if let Some(file) = self.persist.as_mut() {
            for e in &self.log[first_new..] {
                // a failed mirror write must not corrupt in-process state
                let _ = writeln!(file, "{}", serde_json::to_string(e).expect("entries serialize"));
            }
            let _ = file.flush();
        }
        self.snapshot = MemorySnapshot::from_entries(self.log.iter().cloned());
        self.snapshot.clone()
    }

    /// Drops everything staged this cycle.
    pub fn abort_cycle(&mut self) -> MemorySnapshot {
        self.staged.clear();
        self.snapshot.clone()
    }

    /// Entries appended after the log had `log_len` entries.
    pub fn committed_since(&self, log_len: usize) -> &[MemoryEntry] {
        &self.log[log_len.min(self.log.len())..]
    }
}
