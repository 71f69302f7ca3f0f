//! Append-only session logs and replay.
//!
//! Line 1 is a JSON header holding the session metadata; every following line
//! is `<seq> <wire record line>` with the record bytes kept verbatim.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Channel;
use crate::protocol::{assign_counterbalance, N_TASKS};
use crate::wire::{decode_record, encode_record, WireError, WireRecord};

pub const LOG_FORMAT: &str = "gazefuse-log/1";

#[derive(Debug, Error)]
pub enum LogError {
    #[error("log io error: {0}")]
    Io(#[from] io::Error),
    #[error("log is already open by another writer")]
    Locked,
    #[error("bad log header: {0}")]
    BadHeader(String),
    #[error("invalid session metadata: {0}")]
    InvalidMeta(String),
    #[error("corrupt log after seq {last_good_seq:?} (line {line}): {reason}")]
    Corrupt { last_good_seq: Option<u64>, line: usize, reason: String },
    #[error("record line must be a single line")]
    Multiline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub session_id: String,
    pub person_id: String,
    pub expertise_hours: f64,
    #[serde(default)]
    pub participant_index: u32,
    /// Task order; defaults to the counterbalanced order for `participant_index`.
    #[serde(default)]
    pub condition_order: Vec<u8>,
    #[serde(default)]
    pub created_ns: i64,
    #[serde(default)]
    pub device_config: BTreeMap<String, String>,
}

impl SessionMeta {
    pub fn validate(&self) -> Result<(), LogError> {
        let bad = |m: String| Err(LogError::InvalidMeta(m));
        if !(self.expertise_hours.is_finite() && self.expertise_hours >= 0.0) {
            return bad(format!("expertise_hours must be >= 0, got {}", self.expertise_hours));
        }
        if self.session_id.is_empty() || self.session_id.contains(char::is_whitespace) {
            return bad("session_id must be a non-empty token".into());
        }
        crate::model::PersonId::new(self.person_id.clone()).map_err(|e| LogError::InvalidMeta(e.to_string()))?;
        if !self.condition_order.is_empty() {
            let mut sorted = self.condition_order.clone();
            sorted.sort_unstable();
            let valid =
                sorted == [1, 2, 3, 4, 5] && self.condition_order[..2] == [1, 2] && self.condition_order[4] == 5;
            if !valid {
                return bad(format!("condition_order {:?} violates the task-order constraints", self.condition_order));
            }
        }
        Ok(())
    }

    pub fn task_order(&self) -> [u8; N_TASKS] {
        match <[u8; N_TASKS]>::try_from(self.condition_order.as_slice()) {
            Ok(order) => order,
            Err(_) => assign_counterbalance(self.participant_index),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    #[serde(flatten)]
    meta: SessionMeta,
}

pub fn encode_header(meta: &SessionMeta) -> String {
    serde_json::to_string(&Header { format: LOG_FORMAT.into(), meta: meta.clone() }).expect("header serializes")
}

/// Single writer: the file is created exclusively and held under an exclusive lock.
#[derive(Debug)]
pub struct LogWriter {
    out: BufWriter<File>,
    path: PathBuf,
    next_seq: u64,
}

impl LogWriter {
    pub fn create(path: impl AsRef<Path>, meta: &SessionMeta) -> Result<Self, LogError> {
        meta.validate()?;
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().write(true).create_new(true).open(&path)?;
        file.try_lock().map_err(|_| LogError::Locked)?;
        let mut out = BufWriter::new(file);
        out.write_all(encode_header(meta).as_bytes())?;
        out.write_all(b"\n")?;
        out.flush()?;
        Ok(LogWriter { out, path, next_seq: 0 })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Appends a record line verbatim. Event records are flushed immediately.
    pub fn append_line(&mut self, line: &str, is_event: bool) -> Result<u64, LogError> {
        if line.contains('\n') {
            return Err(LogError::Multiline);
        }
        let seq = self.next_seq;
        writeln!(self.out, "{seq} {line}")?;
        self.next_seq += 1;
        if is_event {
            self.out.flush()?;
        }
        Ok(seq)
    }

    pub fn append(&mut self, record: &WireRecord) -> Result<u64, LogError> {
        self.append_line(&encode_record(record), record.stream.channel() == Channel::Event)
    }

    pub fn flush(&mut self) -> Result<(), LogError> {
        self.out.flush()?;
        Ok(())
    }

    /// Flushes, syncs and releases the file; returns the number of records.
    pub fn finish(mut self) -> Result<u64, LogError> {
        self.out.flush()?;
        self.out.get_ref().sync_all()?;
        Ok(self.next_seq)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub seq: u64,
    /// Record bytes as logged, without the seq prefix or newline.
    pub line: String,
    pub record: WireRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub meta: SessionMeta,
    pub entries: Vec<LogEntry>,
    /// Set when reading stopped at a damaged line; `entries` holds everything before it.
    pub corruption: Option<(Option<u64>, usize, String)>,
}

impl SessionLog {
    pub fn records(&self) -> impl Iterator<Item = &WireRecord> {
        self.entries.iter().map(|e| &e.record)
    }

    pub fn last_good_seq(&self) -> Option<u64> {
        self.entries.last().map(|e| e.seq)
    }

    /// `Err(Corrupt)` if the log was damaged.
    pub fn require_intact(&self) -> Result<(), LogError> {
        match &self.corruption {
            None => Ok(()),
            Some((last_good_seq, line, reason)) => {
                Err(LogError::Corrupt { last_good_seq: *last_good_seq, line: *line, reason: reason.clone() })
            }
        }
    }
}

fn parse_entry(line: &str, expected: u64) -> Result<LogEntry, String> {
    let (seq, rest) = line.split_once(' ').ok_or("missing seq prefix")?;
    let seq: u64 = seq.parse().map_err(|_| format!("bad seq `{seq}`"))?;
    if seq != expected {
        return Err(format!("seq {seq}, expected {expected}"));
    }
    let record = decode_record(rest.as_bytes()).map_err(|e: WireError| e.to_string())?;
    Ok(LogEntry { seq, line: rest.to_string(), record })
}

/// Reads a log, recovering every complete record before the first damaged line.
pub fn read_log_from(reader: impl Read) -> Result<SessionLog, LogError> {
    let mut reader = BufReader::new(reader);
    let mut header = String::new();
    reader.read_line(&mut header)?;
    let header = header.strip_suffix('\n').ok_or_else(|| LogError::BadHeader("missing header line".into()))?;
    let h: Header = serde_json::from_str(header).map_err(|e| LogError::BadHeader(e.to_string()))?;
    if h.format != LOG_FORMAT {
        return Err(LogError::BadHeader(format!("unsupported format `{}`", h.format)));
    }
    let mut entries = Vec::new();
    let mut corruption = None;
    let mut buf = Vec::new();
    let mut line_no = 1;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line_no += 1;
        let last_good = entries.last().map(|e: &LogEntry| e.seq);
        let Some(body) = buf.strip_suffix(b"\n") else {
            corruption = Some((last_good, line_no, "truncated final line".to_string()));
            break;
        };
        let parsed = std::str::from_utf8(body)
            .map_err(|e| e.to_string())
            .and_then(|line| parse_entry(line, entries.len() as u64));
        match parsed {
            Ok(entry) => entries.push(entry),
            Err(reason) => {
                corruption = Some((last_good, line_no, reason));
                break;
            }
        }
    }
    Ok(SessionLog { meta: h.meta, entries, corruption })
}

pub fn read_log(path: impl AsRef<Path>) -> Result<SessionLog, LogError> {
    let file = File::open(path)?;
    file.try_lock_shared().map_err(|_| LogError::Locked)?;
    read_log_from(file)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReplaySpeed {
    Max,
    Factor(f64),
}

impl std::str::FromStr for ReplaySpeed {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "max" {
            return Ok(ReplaySpeed::Max);
        }
        match s.parse::<f64>() {
            Ok(f) if f.is_finite() && f > 0.0 => Ok(ReplaySpeed::Factor(f)),
            _ => Err(format!("speed must be `max` or a positive number, got `{s}`")),
        }
    }
}

/// Schedules records on absolute time so sleep overruns do not accumulate.
#[derive(Debug)]
pub struct ReplayClock {
    speed: ReplaySpeed,
    origin: Option<(Instant, i64)>,
}

impl ReplayClock {
    pub fn new(speed: ReplaySpeed) -> Self {
        ReplayClock { speed, origin: None }
    }

    /// Wall-clock delay before `host_ns` should be emitted.
    pub fn delay_for(&mut self, host_ns: i64, now: Instant) -> Duration {
        let ReplaySpeed::Factor(f) = self.speed else {
            return Duration::ZERO;
        };
        let (start, first) = *self.origin.get_or_insert((now, host_ns));
        let offset = Duration::from_secs_f64(((host_ns - first).max(0) as f64 / 1e9) / f);
        (start + offset).saturating_duration_since(now)
    }

    pub fn wait_for(&mut self, host_ns: i64) {
        let d = self.delay_for(host_ns, Instant::now());
        if !d.is_zero() {
            std::thread::sleep(d);
        }
    }
}

/// Re-emits entries in seq order at the given speed.
pub fn replay(log: &SessionLog, speed: ReplaySpeed, mut sink: impl FnMut(&LogEntry)) {
    let mut clock = ReplayClock::new(speed);
    for e in &log.entries {
        clock.wait_for(e.record.host_ns());
        sink(e);
    }
}
