use std::fs::File;
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::Path;

use anyhow::{bail, Context, Result};
use gazefuse_core::log::{ReplayClock, ReplaySpeed};
use gazefuse_core::protocol::PROTOCOL_EVENT_KIND;
use gazefuse_core::study::{synthesize_study, StudySpec};
use gazefuse_core::synth::{synthesize_session, SynthConfig};
use gazefuse_core::wire::{encode_record, WireRecord};
use serde::Deserialize;
use tokio::io::AsyncWriteExt;

/// `[study]` table: turns the signal config into a full protocol session.
#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct StudyTable {
    pub session_id: String,
    pub expertise_hours: f64,
    pub participant_index: u32,
    pub baseline_pupil_mm: f64,
    pub baseline_bpm: f64,
    pub task_pupil_mm: [f64; 5],
    pub task_bpm: [f64; 5],
    pub laps_per_task: u32,
    pub crash_task: Option<u8>,
}

impl Default for StudyTable {
    fn default() -> Self {
        let d = StudySpec::default();
        StudyTable {
            session_id: d.session_id,
            expertise_hours: d.expertise_hours,
            participant_index: d.participant_index,
            baseline_pupil_mm: d.baseline_pupil_mm,
            baseline_bpm: d.baseline_bpm,
            task_pupil_mm: d.task_pupil_mm,
            task_bpm: d.task_bpm,
            laps_per_task: d.laps_per_task,
            crash_task: d.crash_task,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
pub struct SimulateConfig {
    #[serde(flatten)]
    pub signals: SynthConfig,
    pub study: Option<StudyTable>,
}

pub fn load_config(path: &Path) -> Result<SimulateConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn study_spec(cfg: &SimulateConfig, t: &StudyTable) -> StudySpec {
    StudySpec {
        session_id: t.session_id.clone(),
        expertise_hours: t.expertise_hours,
        participant_index: t.participant_index,
        baseline_pupil_mm: t.baseline_pupil_mm,
        baseline_bpm: t.baseline_bpm,
        task_pupil_mm: t.task_pupil_mm,
        task_bpm: t.task_bpm,
        laps_per_task: t.laps_per_task,
        crash_task: t.crash_task,
        signals: cfg.signals.clone(),
        ..Default::default()
    }
}

pub enum Output<'a> {
    Log(&'a Path),
    Lines(&'a Path),
    Tcp(SocketAddr),
}

impl<'a> Output<'a> {
    pub fn parse(s: &'a str) -> Output<'a> {
        if let Ok(addr) = s.parse() {
            Output::Tcp(addr)
        } else if s.ends_with(".log") {
            Output::Log(Path::new(s))
        } else {
            Output::Lines(Path::new(s))
        }
    }
}

/// Emits the configured session; returns the number of records written.
/// A TCP feed is stamped from the current host clock so it lines up with the
/// recorder's protocol timers.
pub async fn run(cfg: &SimulateConfig, out: Output<'_>, speed: ReplaySpeed) -> Result<u64> {
    let mut cfg = cfg.clone();
    if matches!(out, Output::Tcp(_)) {
        cfg.signals.start_ns = crate::host_now_ns();
    }
    let cfg = &cfg;
    let (records, study) = match &cfg.study {
        Some(t) => {
            let st = synthesize_study(&study_spec(cfg, t))?;
            (st.records.clone(), Some(st))
        }
        None => (synthesize_session(&cfg.signals)?.records, None),
    };
    match out {
        Output::Log(path) => {
            let Some(st) = study else { bail!("a session log needs a [study] table in the config") };
            Ok(st.write_log(path)?)
        }
        Output::Lines(path) => {
            let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
            for r in &records {
                writeln!(w, "{}", encode_record(r))?;
            }
            w.flush()?;
            Ok(records.len() as u64)
        }
        Output::Tcp(addr) => stream(&records, addr, speed).await,
    }
}

/// Sends records to a recorder at `speed`. Protocol events are skipped: the
/// recorder's own state machine produces them.
pub async fn stream(records: &[WireRecord], addr: SocketAddr, speed: ReplaySpeed) -> Result<u64> {
    let mut sock = tokio::net::TcpStream::connect(addr).await.with_context(|| format!("connecting to {addr}"))?;
    let mut clock = ReplayClock::new(speed);
    let mut sent = 0;
    for r in records.iter().filter(|r| r.event().is_none_or(|e| e.kind != PROTOCOL_EVENT_KIND)) {
        let delay = clock.delay_for(r.host_ns(), std::time::Instant::now());
        if !delay.is_zero() {
            tokio::time::sleep(delay).await;
        }
        let mut line = encode_record(r);
        line.push('\n');
        sock.write_all(line.as_bytes()).await?;
        sent += 1;
    }
    sock.flush().await?;
    sock.shutdown().await?;
    Ok(sent)
}
