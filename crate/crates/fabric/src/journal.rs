//! Append-only experiment journal: a header line followed by one
//! canonical-JSON event per line, each flushed and fsynced on append.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canonical::{to_canonical, SCHEMA_VERSION};
use crate::clock;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JournalHeader {
    pub schema_version: String,
    pub seed: u64,
    pub config_hash: String,
    pub experiment_id: String,
    /// Epoch time of the writing process's clock anchor.
    pub epoch_offset: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ExperimentStarted,
    TrialProposed,
    TaskSubmitted,
    TaskStarted,
    ResultReceived,
    TrialFinalized,
    ModelRefit,
    HvComputed,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JournalEvent {
    pub seq: u64,
    pub wall_time: f64,
    pub kind: EventKind,
    pub payload: Value,
}

#[derive(Debug, Default, Clone)]
pub struct JournalContents {
    pub header: Option<JournalHeader>,
    pub events: Vec<JournalEvent>,
    /// Byte length of the valid prefix.
    pub valid_len: u64,
    /// A torn or corrupt tail was found after the valid prefix.
    pub corrupt_tail: bool,
}

/// Reads the valid prefix of a journal. A missing file reads as empty.
pub fn read_journal(path: &Path) -> io::Result<JournalContents> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(JournalContents::default()),
        Err(e) => return Err(e),
    };
    let mut reader = BufReader::new(file);
    let mut out = JournalContents::default();
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line)?;
        if n == 0 {
            break;
        }
        let ok = line.ends_with('\n')
            && if out.header.is_none() {
                match serde_json::from_str::<JournalHeader>(line.trim_end()) {
                    Ok(h) => {
                        out.header = Some(h);
                        true
                    }
                    Err(_) => false,
                }
            } else {
                match serde_json::from_str::<JournalEvent>(line.trim_end()) {
                    Ok(e) if e.seq == out.events.len() as u64 => {
                        out.events.push(e);
                        true
                    }
                    _ => false,
                }
            };
        if !ok {
            out.corrupt_tail = true;
            break;
        }
        out.valid_len += n as u64;
    }
    Ok(out)
}

pub struct JournalWriter {
    file: File,
    next_seq: u64,
}

impl JournalWriter {
    /// Starts a new journal, replacing any file at `path`.
    pub fn create(path: &Path, header: &JournalHeader) -> io::Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut file = OpenOptions::new().create(true).write(true).truncate(true).open(path)?;
        let line = to_canonical(header).map_err(io::Error::other)?;
        writeln!(file, "{line}")?;
        file.sync_data()?;
        Ok(Self { file, next_seq: 0 })
    }

    /// Reopens for appending after `contents` (from `read_journal`),
    /// cutting off any corrupt tail first.
    pub fn reopen(path: &Path, contents: &JournalContents) -> io::Result<Self> {
        let file = OpenOptions::new().write(true).open(path)?;
        if contents.corrupt_tail {
            warn!("journal {}: truncating corrupt tail after {} events", path.display(), contents.events.len());
        }
        file.set_len(contents.valid_len)?;
        let mut file = OpenOptions::new().append(true).open(path)?;
        file.flush()?;
        Ok(Self { file, next_seq: contents.events.len() as u64 })
    }

    /// Durable append; returns the event's sequence number.
    pub fn append(&mut self, kind: EventKind, payload: Value) -> io::Result<u64> {
        let seq = self.next_seq;
        let event = JournalEvent { seq, wall_time: clock::now(), kind, payload };
        let line = to_canonical(&event).map_err(io::Error::other)?;
        self.file.write_all(line.as_bytes())?;
        self.file.write_all(b"\n")?;
        self.file.sync_data()?;
        self.next_seq += 1;
        Ok(seq)
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }
}

pub fn new_header(seed: u64, config_hash: &str, experiment_id: &str) -> JournalHeader {
    JournalHeader {
        schema_version: SCHEMA_VERSION.into(),
        seed,
        config_hash: config_hash.into(),
        experiment_id: experiment_id.into(),
        epoch_offset: clock::epoch_offset(),
    }
}

fn trial_of(e: &JournalEvent) -> Option<u64> {
    e.payload.get("trial_id").and_then(Value::as_u64)
}

fn str_field<'a>(e: &'a JournalEvent, key: &str) -> Option<&'a str> {
    e.payload.get(key).and_then(Value::as_str)
}

fn f64_field(e: &JournalEvent, key: &str) -> Option<f64> {
    e.payload.get(key).and_then(Value::as_f64)
}

#[derive(Debug, Default, Clone, PartialEq)]
pub struct AuditReport {
    pub violations: Vec<String>,
    pub trials_proposed: usize,
    pub trials_finalized: usize,
    pub duplicate_results: usize,
    pub max_concurrency: usize,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Execution intervals [started_at, finished_at] of accepted results.
pub fn execution_intervals(events: &[JournalEvent]) -> Vec<(f64, f64, String)> {
    events
        .iter()
        .filter(|e| e.kind == EventKind::ResultReceived)
        .filter_map(|e| {
            Some((f64_field(e, "started_at")?, f64_field(e, "finished_at")?, str_field(e, "worker_id")?.to_string()))
        })
        .collect()
}

/// Peak number of overlapping intervals; an interval ending exactly when
/// another starts does not overlap it.
pub fn peak_overlap<'a>(intervals: impl IntoIterator<Item = &'a (f64, f64)>) -> usize {
    let mut edges: Vec<(f64, i32)> = Vec::new();
    for &(s, f) in intervals {
        edges.push((s, 1));
        edges.push((f, -1));
    }
    edges.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let (mut cur, mut peak) = (0i64, 0i64);
    for (_, d) in edges {
        cur += d as i64;
        peak = peak.max(cur);
    }
    peak as usize
}

/// Structural checks over a journal: contiguous sequence numbers, per-trial
/// causality, the proposed/finalized bijection, no result without a
/// submission, monotone hypervolume, and (if given) the concurrency bound.
pub fn audit(events: &[JournalEvent], slot_limit: Option<usize>) -> AuditReport {
    let mut r = AuditReport::default();
    for (i, e) in events.iter().enumerate() {
        if e.seq != i as u64 {
            r.violations.push(format!("sequence gap: event {i} has seq {}", e.seq));
            break;
        }
    }
    let mut proposed: HashMap<u64, u64> = HashMap::new();
    let mut finalized: HashMap<u64, usize> = HashMap::new();
    let mut first_submit: HashMap<u64, u64> = HashMap::new();
    let mut submitted_tasks: HashSet<String> = HashSet::new();
    let mut received: HashMap<u64, u64> = HashMap::new();
    let mut started: HashMap<u64, u64> = HashMap::new();
    let mut last_hv = f64::NEG_INFINITY;
    for e in events {
        let trial = trial_of(e);
        match e.kind {
            EventKind::TrialProposed => {
                let t = trial.unwrap_or(u64::MAX);
                if proposed.insert(t, e.seq).is_some() {
                    r.violations.push(format!("trial {t} proposed twice"));
                }
            }
            EventKind::TaskSubmitted => {
                let t = trial.unwrap_or(u64::MAX);
                if !proposed.contains_key(&t) {
                    r.violations.push(format!("trial {t} submitted before it was proposed (seq {})", e.seq));
                }
                first_submit.entry(t).or_insert(e.seq);
                if let Some(id) = str_field(e, "task_id") {
                    submitted_tasks.insert(id.to_string());
                }
            }
            EventKind::TaskStarted => {
                let t = trial.unwrap_or(u64::MAX);
                if !first_submit.contains_key(&t) {
                    r.violations.push(format!("trial {t} started before it was submitted (seq {})", e.seq));
                }
                started.entry(t).or_insert(e.seq);
            }
            EventKind::ResultReceived => {
                let t = trial.unwrap_or(u64::MAX);
                match str_field(e, "task_id") {
                    Some(id) if submitted_tasks.contains(id) => {}
                    other => r.violations.push(format!("result for never-submitted task {other:?} (seq {})", e.seq)),
                }
                if !started.contains_key(&t) {
                    r.violations.push(format!("trial {t} result received before start (seq {})", e.seq));
                }
                received.entry(t).or_insert(e.seq);
            }
            EventKind::TrialFinalized => {
                let t = trial.unwrap_or(u64::MAX);
                *finalized.entry(t).or_default() += 1;
                if !proposed.contains_key(&t) {
                    r.violations.push(format!("trial {t} finalized without a proposal"));
                }
                if !received.contains_key(&t) {
                    r.violations.push(format!("trial {t} finalized before any result (seq {})", e.seq));
                }
            }
            EventKind::HvComputed => {
                let v = f64_field(e, "hypervolume").unwrap_or(f64::NAN);
                if !(v >= last_hv) {
                    r.violations.push(format!("hypervolume decreased to {v} at seq {}", e.seq));
                }
                last_hv = v.max(last_hv);
            }
            EventKind::Warning => {
                if str_field(e, "code") == Some("duplicate_result") {
                    r.duplicate_results += 1;
                }
            }
            _ => {}
        }
    }
    for (t, n) in &finalized {
        if *n != 1 {
            r.violations.push(format!("trial {t} finalized {n} times"));
        }
    }
    r.trials_proposed = proposed.len();
    r.trials_finalized = finalized.len();
    let intervals: Vec<(f64, f64)> = execution_intervals(events).into_iter().map(|(s, f, _)| (s, f)).collect();
    r.max_concurrency = peak_overlap(&intervals);
    if let Some(limit) = slot_limit {
        if r.max_concurrency > limit {
            r.violations.push(format!("concurrency {} exceeds {limit} slots", r.max_concurrency));
        }
    }
    r
}

/// Per-worker peak concurrency, from accepted result timings.
pub fn per_worker_peak(events: &[JournalEvent]) -> BTreeMap<String, usize> {
    let mut by_worker: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (s, f, w) in execution_intervals(events) {
        by_worker.entry(w).or_default().push((s, f));
    }
    by_worker.into_iter().map(|(w, iv)| (w, peak_overlap(&iv))).collect()
}

/// Final outcome per trial: status and objectives, from trial_finalized
/// events (the last one wins if an audit would flag repeats).
pub fn finalized_outcomes(events: &[JournalEvent]) -> BTreeMap<u64, (String, Option<Vec<f64>>)> {
    events
        .iter()
        .filter(|e| e.kind == EventKind::TrialFinalized)
        .filter_map(|e| {
            let objectives = e.payload.get("objectives").and_then(Value::as_array).map(|a| {
                a.iter().filter_map(Value::as_f64).collect::<Vec<f64>>()
            });
            Some((trial_of(e)?, (str_field(e, "status")?.to_string(), objectives)))
        })
        .collect()
}

/// Seconds from the first task submission to the last accepted result.
pub fn evaluation_span(events: &[JournalEvent]) -> Option<f64> {
    let first = events.iter().find(|e| e.kind == EventKind::TaskSubmitted)?.wall_time;
    let last = events.iter().rev().find(|e| e.kind == EventKind::ResultReceived)?.wall_time;
    Some(last - first)
}
