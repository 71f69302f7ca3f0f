//! One recording session: normalize → log → pipelines → console hub, with the
//! protocol state machine driven by operator commands and timers.
//!
//! Every call takes the host clock reading `now_ns`. Pipeline outputs depend
//! only on the order of admitted records, so replaying a log through a
//! passthrough session reproduces the live outputs exactly.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use serde::Serialize;
use thiserror::Error;

use crate::console::{Hub, LivePacket, PacketKind};
use crate::ecg::{window_features, EcgConfig, EcgError, EcgWindower, HrvWindow};
use crate::fusion::{AttentionSpan, FusionConfig, FusionEngine, FusionError, FusionMerger, FusionOutput};
use crate::log::{LogError, LogWriter, SessionMeta};
use crate::model::{Channel, Eye, PersonId, NS_PER_MS, NS_PER_SEC};
use crate::normalize::Normalizer;
use crate::protocol::{
    keypoint_record, Command, Emitted, KeypointKind, Protocol, ProtocolConfig, ProtocolError, ProtocolState,
    PROTOCOL_EVENT_KIND,
};
use crate::pupil::{PupilError, PupilProcessor};
use crate::wire::{decode_record, WireError, WireRecord};

pub const DEFAULT_MAX_SKEW_NS: i64 = 500 * NS_PER_MS;
/// A channel with no sample for this long is reported missing.
pub const MISSING_AFTER_NS: i64 = 2 * NS_PER_SEC;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LiveMode {
    /// Operator commands drive the protocol; its events are logged.
    Protocol,
    /// Event records arrive on the wire (replay); commands are refused.
    Passthrough,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiveConfig {
    pub meta: SessionMeta,
    pub mode: LiveMode,
    pub protocol: ProtocolConfig,
    pub fusion: FusionConfig,
    pub pupil_rate_hz: f64,
    pub ecg: EcgConfig,
    pub max_skew_ns: i64,
    /// Keep a full-rate transcript of pipeline outputs.
    pub transcript: bool,
}

impl LiveConfig {
    pub fn new(meta: SessionMeta) -> Self {
        LiveConfig {
            meta,
            mode: LiveMode::Protocol,
            protocol: ProtocolConfig::default(),
            fusion: FusionConfig::default(),
            pupil_rate_hz: 100.0,
            ecg: EcgConfig::new(130.0),
            max_skew_ns: DEFAULT_MAX_SKEW_NS,
            transcript: false,
        }
    }
}

#[derive(Debug, Error)]
pub enum LiveError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Pupil(#[from] PupilError),
    #[error(transparent)]
    Ecg(#[from] EcgError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("session replays logged events; operator commands are disabled")]
    Passthrough,
    #[error("`protocol` events are generated by the session and cannot be ingested")]
    ReservedKind,
    #[error("record for person {0} in a session for {1}")]
    WrongPerson(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Logged(u64),
    /// Processed but not logged: the recording was already finalized or failed.
    Unlogged,
    DroppedLate,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LiveStats {
    pub received: u64,
    pub decode_errors: u64,
    pub dropped_late: u64,
    pub logged: u64,
    pub unlogged: u64,
    pub per_channel: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateView {
    pub session_id: String,
    pub person_id: String,
    pub state: ProtocolState,
    pub label: String,
    pub task_order: Vec<u8>,
    pub completed_tasks: Vec<u8>,
    pub current_task: Option<u8>,
    pub elapsed_ms: i64,
    /// Time left in the current timed phase.
    pub remaining_ms: Option<i64>,
    pub baseline_done: bool,
    pub fixations_done: bool,
    pub aborted: bool,
    pub recording: bool,
    pub laps: u32,
    pub log_alarm: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ack {
    pub state: StateView,
    pub events: Vec<String>,
    pub laps: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityView {
    pub received: u64,
    pub decode_errors: u64,
    pub dropped_late: u64,
    pub unlogged: u64,
    pub missing: Vec<String>,
    pub invalid_gaze: u64,
    pub clients_dropped: u64,
}

const WATCHED: [Channel; 4] = [Channel::Gaze2d, Channel::PupilRaw, Channel::EcgRaw, Channel::Detections];

pub struct LiveSession {
    cfg: LiveConfig,
    person: PersonId,
    protocol: Protocol,
    writer: Option<LogWriter>,
    log_alarm: Option<String>,
    normalizer: Normalizer,
    pupil: BTreeMap<Eye, PupilProcessor>,
    ecg: EcgWindower,
    merger: FusionMerger,
    fusion: FusionEngine,
    hub: Arc<Mutex<Hub>>,
    stats: LiveStats,
    last_seen: BTreeMap<Channel, i64>,
    started_ns: i64,
    laps: u32,
    last_quality_ns: Option<i64>,
    transcript: Vec<String>,
    spans: Vec<AttentionSpan>,
    hrv: Vec<HrvWindow>,
}

impl std::fmt::Debug for LiveSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LiveSession").field("person", &self.person).field("stats", &self.stats).finish()
    }
}

fn eye_label(e: Eye) -> &'static str {
    match e {
        Eye::Left => "left",
        Eye::Right => "right",
        Eye::Mean => "mean",
    }
}

impl LiveSession {
    /// Opens the session; `writer` is `None` for a session that only processes.
    pub fn new(
        cfg: LiveConfig,
        writer: Option<LogWriter>,
        hub: Arc<Mutex<Hub>>,
        now_ns: i64,
    ) -> Result<Self, LiveError> {
        let person = PersonId::new(cfg.meta.person_id.clone()).map_err(|e| LogError::InvalidMeta(e.to_string()))?;
        PupilProcessor::new(cfg.pupil_rate_hz)?;
        let s = LiveSession {
            protocol: Protocol::new(cfg.meta.task_order(), &cfg.protocol),
            writer,
            log_alarm: None,
            normalizer: Normalizer::new(),
            pupil: BTreeMap::new(),
            ecg: EcgWindower::new(cfg.ecg)?,
            merger: FusionMerger::new(person.clone(), Some(cfg.max_skew_ns)),
            fusion: FusionEngine::new(person.clone(), cfg.fusion.clone())?,
            hub,
            stats: LiveStats::default(),
            last_seen: BTreeMap::new(),
            started_ns: now_ns,
            laps: 0,
            last_quality_ns: None,
            transcript: Vec::new(),
            spans: Vec::new(),
            hrv: Vec::new(),
            person,
            cfg,
        };
        s.publish_state(now_ns);
        Ok(s)
    }

    pub fn person(&self) -> &PersonId {
        &self.person
    }

    pub fn stats(&self) -> &LiveStats {
        &self.stats
    }

    pub fn protocol(&self) -> &Protocol {
        &self.protocol
    }

    pub fn hub(&self) -> &Arc<Mutex<Hub>> {
        &self.hub
    }

    pub fn is_recording(&self) -> bool {
        self.writer.is_some()
    }

    /// Full-rate output lines (when enabled in the config).
    pub fn transcript(&self) -> &[String] {
        &self.transcript
    }

    pub fn spans(&self) -> &[AttentionSpan] {
        &self.spans
    }

    pub fn hrv_windows(&self) -> &[HrvWindow] {
        &self.hrv
    }

    fn note(&mut self, line: impl FnOnce() -> String) {
        if self.cfg.transcript {
            self.transcript.push(line());
        }
    }

    fn publish(&self, kind: PacketKind, now_ns: i64, payload: impl Serialize) {
        self.hub.lock().expect("hub lock").publish(LivePacket::new(kind, now_ns, payload));
    }

    fn publish_state(&self, now_ns: i64) {
        self.publish(PacketKind::State, now_ns, self.state_view(now_ns));
    }

    pub fn state_view(&self, now_ns: i64) -> StateView {
        let p = &self.protocol;
        let elapsed = p.elapsed_ns(now_ns);
        let limit = match p.state() {
            ProtocolState::PupilBaseline => Some(self.cfg.protocol.baseline_min_ns),
            ProtocolState::LuminanceFixation { .. } => Some(self.cfg.protocol.fixation_ns),
            ProtocolState::Task { .. } => Some(self.cfg.protocol.task_ns),
            _ => None,
        };
        StateView {
            session_id: self.cfg.meta.session_id.clone(),
            person_id: self.person.to_string(),
            state: p.state(),
            label: p.state().to_string(),
            task_order: p.task_order().to_vec(),
            completed_tasks: p.completed_tasks().to_vec(),
            current_task: p.current_task(),
            elapsed_ms: elapsed / NS_PER_MS,
            remaining_ms: limit.map(|l| (l - elapsed).max(0) / NS_PER_MS),
            baseline_done: p.baseline_done(),
            fixations_done: p.fixations_done(),
            aborted: p.aborted(),
            recording: self.writer.is_some(),
            laps: self.laps,
            log_alarm: self.log_alarm.clone(),
        }
    }

    fn append(&mut self, line: &str, is_event: bool) -> Admission {
        let Some(w) = self.writer.as_mut() else {
            self.stats.unlogged += 1;
            return Admission::Unlogged;
        };
        match w.append_line(line, is_event) {
            Ok(seq) => {
                self.stats.logged += 1;
                Admission::Logged(seq)
            }
            Err(e) => {
                // Recording halts; live processing continues.
                self.log_alarm = Some(e.to_string());
                self.writer = None;
                self.stats.unlogged += 1;
                Admission::Unlogged
            }
        }
    }

    /// Decodes and ingests one wire line.
    pub fn ingest_line(&mut self, line: &str, now_ns: i64) -> Result<Admission, LiveError> {
        let line = line.trim_end_matches(['\r', '\n']);
        match decode_record(line.as_bytes()) {
            Ok(r) => self.ingest_record(&r, line, now_ns),
            Err(e) => {
                self.stats.received += 1;
                self.stats.decode_errors += 1;
                Err(e.into())
            }
        }
    }

    /// Ingests a decoded record whose wire form is `line`.
    pub fn ingest_record(&mut self, r: &WireRecord, line: &str, now_ns: i64) -> Result<Admission, LiveError> {
        self.stats.received += 1;
        if r.stream.person() != &self.person {
            return Err(LiveError::WrongPerson(r.stream.person().to_string(), self.person.to_string()));
        }
        if self.cfg.mode == LiveMode::Protocol && r.event().is_some_and(|e| e.kind == PROTOCOL_EVENT_KIND) {
            return Err(LiveError::ReservedKind);
        }
        self.tick(now_ns)?;
        if !self.normalizer.admit(r) {
            self.stats.dropped_late += 1;
            return Ok(Admission::DroppedLate);
        }
        let channel = r.stream.channel();
        *self.stats.per_channel.entry(channel.name().to_string()).or_default() += 1;
        self.last_seen.insert(channel, now_ns);
        let admission = self.append(line, channel == Channel::Event);
        self.process(r, now_ns)?;
        Ok(admission)
    }

    fn process(&mut self, r: &WireRecord, now_ns: i64) -> Result<(), LiveError> {
        if let Some(s) = r.pupil() {
            let proc = match self.pupil.entry(s.eye) {
                std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::btree_map::Entry::Vacant(v) => {
                    let mut p = PupilProcessor::new(self.cfg.pupil_rate_hz)?;
                    if matches!(self.protocol.state(), ProtocolState::PupilBaseline) {
                        p.begin_baseline();
                    }
                    v.insert(p)
                }
            };
            if let Some(out) = proc.push(&s) {
                let (t, lp) = (out.lowpassed.stamp.host_ns, out.lowpassed.d_lp_mm);
                let filtered = out.filtered.map(|f| f.d_filtered_mm);
                let var = out.stats.map(|w| w.variance_mm2);
                let eye = eye_label(s.eye);
                self.note(|| format!("pupil {eye} {t} {lp} {} {}", opt(filtered), opt(var)));
                self.publish(
                    PacketKind::PupilPoint,
                    now_ns,
                    serde_json::json!({"eye": eye, "t_ns": t, "d_lp_mm": lp, "d_filtered_mm": filtered, "variance_mm2": var}),
                );
            }
        } else if let Some(s) = r.ecg() {
            for job in self.ecg.push(s) {
                self.emit_hrv(window_features(&job.samples, &self.cfg.ecg, job.start_ns, job.end_ns), now_ns);
            }
        } else if self.merger.accepts(r) {
            for m in self.merger.push(r.clone()) {
                let out = self.fusion.push(&m);
                self.emit_fusion(out, now_ns);
            }
        } else if let Some(e) = r.event() {
            let (kind, text) = (e.kind.clone(), e.text.clone());
            self.observe_event(&kind, &text);
        }
        Ok(())
    }

    fn emit_hrv(&mut self, w: HrvWindow, now_ns: i64) {
        self.note(|| {
            format!(
                "hrv {} {} {} {} {} {} {}",
                w.window_start_ns,
                w.window_end.host_ns,
                opt(w.bpm),
                opt(w.sdnn_ms),
                opt(w.rmssd_ms),
                opt(w.breathing_rate_hz),
                w.quality
            )
        });
        self.publish(
            PacketKind::BpmPoint,
            now_ns,
            serde_json::json!({"window_end_ns": w.window_end.host_ns, "bpm": w.bpm, "sdnn_ms": w.sdnn_ms, "rmssd_ms": w.rmssd_ms, "breathing_rate_hz": w.breathing_rate_hz, "quality": w.quality}),
        );
        self.hrv.push(w);
    }

    fn emit_fusion(&mut self, out: FusionOutput, now_ns: i64) {
        if let Some(l) = out.labeled.filter(|_| out.label_changed) {
            self.note(|| format!("label {} {}", l.host_ns, l.label));
            self.publish(
                PacketKind::AttentionEvent,
                now_ns,
                serde_json::json!({"t_ns": l.host_ns, "label": l.label.to_string(), "x": l.x, "y": l.y}),
            );
        }
        for s in out.closed_spans {
            self.note(|| format!("span {} {} {} {}", s.start_ns, s.end_ns, s.label, s.n_samples));
            self.spans.push(s);
        }
    }

    /// Pipeline side effects of protocol events, identical live and on replay.
    fn observe_event(&mut self, kind: &str, text: &str) {
        if kind == KeypointKind::LapCompleted.name() {
            self.laps += 1;
            return;
        }
        if kind != PROTOCOL_EVENT_KIND {
            return;
        }
        let verb = text.split_whitespace().next().unwrap_or("");
        match verb {
            "baseline_started" => self.pupil.values_mut().for_each(PupilProcessor::begin_baseline),
            "baseline_completed" => {
                let mut failures = Vec::new();
                for (eye, p) in &mut self.pupil {
                    if let Err(e) = p.finish_baseline() {
                        failures.push(format!("{} baseline: {e}", eye_label(*eye)));
                    }
                }
                for f in failures {
                    self.note(|| format!("alarm {f}"));
                }
            }
            "task_started" | "task_restarted" => self.laps = 0,
            _ => {}
        }
    }

    fn apply_emitted(&mut self, evs: &[Emitted]) {
        for e in evs {
            let r = e.to_record(&self.person);
            let line = crate::wire::encode_record(&r);
            self.normalizer.admit(&r);
            self.append(&line, true);
            self.observe_event(PROTOCOL_EVENT_KIND, &e.text);
        }
        // An aborted session stops recording at once; a completed one records
        // until the operator stops it.
        if evs.iter().any(|e| e.text == "session_aborted") {
            self.finalize_log();
        }
    }

    fn finalize_log(&mut self) {
        if let Some(w) = self.writer.take() {
            if let Err(e) = w.finish() {
                self.log_alarm = Some(e.to_string());
            }
        }
    }

    /// Fires protocol timers and emits a quality packet at most once a second.
    pub fn tick(&mut self, now_ns: i64) -> Result<Vec<String>, LiveError> {
        let mut texts = Vec::new();
        if self.cfg.mode == LiveMode::Protocol {
            let evs = self.protocol.tick(now_ns)?;
            if !evs.is_empty() {
                self.apply_emitted(&evs);
                self.publish_state(now_ns);
                texts = evs.into_iter().map(|e| e.text).collect();
            }
        }
        if self.last_quality_ns.is_none_or(|q| now_ns - q >= NS_PER_SEC) {
            self.last_quality_ns = Some(now_ns);
            let q = self.quality(now_ns);
            self.publish(PacketKind::Quality, now_ns, q);
        }
        Ok(texts)
    }

    pub fn quality(&self, now_ns: i64) -> QualityView {
        let missing = WATCHED
            .iter()
            .filter(|c| {
                let since = self.last_seen.get(c).copied().unwrap_or(self.started_ns);
                now_ns - since > MISSING_AFTER_NS
            })
            .map(|c| c.name().to_string())
            .collect();
        QualityView {
            received: self.stats.received,
            decode_errors: self.stats.decode_errors,
            dropped_late: self.stats.dropped_late,
            unlogged: self.stats.unlogged,
            missing,
            invalid_gaze: self.fusion.invalid_gaze,
            clients_dropped: self.hub.lock().expect("hub lock").stats().backlog_exceeded,
        }
    }

    pub fn command(&mut self, cmd: Command, now_ns: i64) -> Result<Ack, LiveError> {
        if self.cfg.mode == LiveMode::Passthrough {
            return Err(LiveError::Passthrough);
        }
        let mut events = self.tick(now_ns)?;
        let evs = self.protocol.command(cmd, now_ns)?;
        self.apply_emitted(&evs);
        events.extend(evs.into_iter().map(|e| e.text));
        self.publish_state(now_ns);
        Ok(Ack { state: self.state_view(now_ns), events, laps: None })
    }

    /// Operator keypoint; logged with the current task, then any protocol
    /// consequence (a crash pauses the task).
    pub fn keypoint(&mut self, kind: KeypointKind, text: &str, now_ns: i64) -> Result<Ack, LiveError> {
        if self.cfg.mode == LiveMode::Passthrough {
            return Err(LiveError::Passthrough);
        }
        let mut events = self.tick(now_ns)?;
        let (task, evs) = self.protocol.keypoint(kind, now_ns)?;
        let r = keypoint_record(&self.person, now_ns, kind, text, task);
        self.normalizer.admit(&r);
        self.append(&crate::wire::encode_record(&r), true);
        self.observe_event(kind.name(), text);
        self.apply_emitted(&evs);
        events.extend(evs.into_iter().map(|e| e.text));
        let laps = (kind == KeypointKind::LapCompleted).then_some(self.laps);
        self.publish(
            PacketKind::KeypointAck,
            now_ns,
            serde_json::json!({"kind": kind.name(), "text": text, "task": task, "laps": self.laps}),
        );
        self.publish_state(now_ns);
        Ok(Ack { state: self.state_view(now_ns), events, laps })
    }

    /// Drains the fusion merger and pending ECG window, then closes the log.
    pub fn finish(mut self, now_ns: i64) -> Result<LiveSummary, LiveError> {
        for m in self.merger.finish() {
            let out = self.fusion.push(&m);
            self.emit_fusion(out, now_ns);
        }
        for s in self.fusion.finish() {
            self.note(|| format!("span {} {} {} {}", s.start_ns, s.end_ns, s.label, s.n_samples));
            self.spans.push(s);
        }
        if let Some(job) = self.ecg.finish() {
            self.emit_hrv(window_features(&job.samples, &self.cfg.ecg, job.start_ns, job.end_ns), now_ns);
        }
        let records = self.writer.as_ref().map(|w| w.next_seq());
        self.finalize_log();
        Ok(LiveSummary {
            stats: self.stats,
            records,
            log_alarm: self.log_alarm,
            transcript: self.transcript,
            spans: self.spans,
            hrv: self.hrv,
        })
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_else(|| "-".into())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiveSummary {
    pub stats: LiveStats,
    /// Records in the log if it was still open at the end.
    pub records: Option<u64>,
    pub log_alarm: Option<String>,
    pub transcript: Vec<String>,
    pub spans: Vec<AttentionSpan>,
    pub hrv: Vec<HrvWindow>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::log::read_log;
    use std::sync::mpsc::sync_channel;

    fn meta() -> SessionMeta {
        SessionMeta {
            session_id: "live1".into(),
            person_id: "p1".into(),
            expertise_hours: 2.0,
            participant_index: 0,
            condition_order: vec![],
            created_ns: 1,
            device_config: Default::default(),
        }
    }

    const T0: i64 = 1_700_000_000 * NS_PER_SEC;

    fn session(dir: &std::path::Path) -> LiveSession {
        let w = LogWriter::create(dir.join("s.log"), &meta()).unwrap();
        LiveSession::new(LiveConfig::new(meta()), Some(w), Arc::new(Mutex::new(Hub::new())), T0).unwrap()
    }

    #[test]
    fn start_task_before_baseline_is_illegal_and_state_unchanged() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = session(dir.path());
        let err = s.command(Command::StartTask, T0 + 1).unwrap_err();
        assert!(matches!(err, LiveError::Protocol(ProtocolError::IllegalTransition { .. })), "{err}");
        assert_eq!(s.protocol().state(), ProtocolState::Idle);
    }

    #[test]
    fn abort_finalizes_recording() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = session(dir.path());
        s.command(Command::StartBaseline, T0 + 1).unwrap();
        let ack = s.command(Command::Abort, T0 + 2 * NS_PER_SEC).unwrap();
        assert_eq!(ack.state.state, ProtocolState::Done);
        assert!(ack.state.aborted && !ack.state.recording);
        let log = read_log(dir.path().join("s.log")).unwrap();
        log.require_intact().unwrap();
        let texts: Vec<&str> = log.records().filter_map(|r| r.event()).map(|e| e.text.as_str()).collect();
        assert_eq!(texts, ["baseline_started", "baseline_aborted", "session_aborted"]);
    }

    #[test]
    fn lap_keypoint_ack_counts_laps() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = LiveConfig {
            protocol: ProtocolConfig { fixation_order: vec![], require_fixations: false, ..Default::default() },
            ..LiveConfig::new(meta())
        };
        let w = LogWriter::create(dir.path().join("s.log"), &meta()).unwrap();
        let hub = Arc::new(Mutex::new(Hub::new()));
        let (tx, rx) = sync_channel(100);
        hub.lock().unwrap().subscribe(&[PacketKind::KeypointAck], tx);
        let mut s = LiveSession::new(cfg, Some(w), hub, T0).unwrap();
        assert!(matches!(
            s.keypoint(KeypointKind::Note, "x", T0),
            Err(LiveError::Protocol(ProtocolError::NoActiveSession))
        ));
        s.command(Command::StartBaseline, T0).unwrap();
        s.command(Command::StartTask, T0 + 31 * NS_PER_SEC).unwrap();
        s.keypoint(KeypointKind::LapCompleted, "lap", T0 + 40 * NS_PER_SEC).unwrap();
        let ack = s.keypoint(KeypointKind::LapCompleted, "lap", T0 + 50 * NS_PER_SEC).unwrap();
        assert_eq!(ack.laps, Some(2));
        assert_eq!(ack.state.current_task, Some(1));
        assert_eq!(rx.try_iter().count(), 2);
    }

    #[test]
    fn late_records_dropped_and_bad_lines_counted() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = session(dir.path());
        let line = |t: i64| format!(r#"{{"topic":"/humans/bodies/p1/ecg_raw","host_ns":{t},"payload":{{"mv":0.1}}}}"#);
        assert_eq!(s.ingest_line(&line(T0 + 10), T0 + 10).unwrap(), Admission::Logged(0));
        assert_eq!(s.ingest_line(&line(T0 + 5), T0 + 11).unwrap(), Admission::DroppedLate);
        assert!(s.ingest_line("{\"topic\":", T0 + 12).is_err());
        assert_eq!((s.stats().dropped_late, s.stats().decode_errors, s.stats().logged), (1, 1, 1));
    }
}
