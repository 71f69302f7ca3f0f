//! Complete synthetic study sessions: the protocol state machine is driven
//! through baseline, fixations and all five tasks while the signal generator
//! produces per-phase pupil and heart-rate levels.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::log::{LogError, LogWriter, SessionMeta};
use crate::model::{ObjectClass, PersonId, NS_PER_SEC};
use crate::protocol::{keypoint_record, Command, Emitted, KeypointKind, Protocol, ProtocolConfig, N_TASKS};
use crate::synth::{synthesize_session, Manifest, ScriptedTarget, Segment, SynthConfig, SynthError};
use crate::wire::WireRecord;

#[derive(Debug, Clone, PartialEq)]
pub struct StudySpec {
    pub session_id: String,
    pub expertise_hours: f64,
    pub participant_index: u32,
    /// Baseline length; must reach the protocol minimum.
    pub baseline_s: f64,
    /// Idle time between phases.
    pub gap_s: f64,
    pub baseline_pupil_mm: f64,
    pub baseline_bpm: f64,
    /// Pupil level between phases; the baseline level when absent.
    pub rest_pupil_mm: Option<f64>,
    /// Indexed by task number − 1.
    pub task_pupil_mm: [f64; N_TASKS],
    pub task_bpm: [f64; N_TASKS],
    pub laps_per_task: u32,
    /// Task whose first attempt crashes 20 s in and is restarted 3 s later.
    pub crash_task: Option<u8>,
    /// Length of each scripted gaze dwell during tasks.
    pub dwell_s: f64,
    pub protocol: ProtocolConfig,
    /// Signal settings; duration, segments and targets are overwritten.
    pub signals: SynthConfig,
}

impl Default for StudySpec {
    fn default() -> Self {
        StudySpec {
            session_id: "s1".into(),
            expertise_hours: 20.0,
            participant_index: 0,
            baseline_s: 31.0,
            gap_s: 2.0,
            baseline_pupil_mm: 3.0,
            baseline_bpm: 65.0,
            rest_pupil_mm: None,
            task_pupil_mm: [3.4, 3.5, 3.7, 3.6, 3.9],
            task_bpm: [70.0, 72.0, 78.0, 75.0, 85.0],
            laps_per_task: 3,
            crash_task: None,
            dwell_s: 3.0,
            protocol: ProtocolConfig::default(),
            signals: SynthConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StudySession {
    pub meta: SessionMeta,
    /// Time-ordered records including protocol and keypoint events.
    pub records: Vec<WireRecord>,
    pub manifest: Manifest,
    pub events: Vec<Emitted>,
}

impl StudySession {
    pub fn write_log(&self, path: impl AsRef<Path>) -> Result<u64, LogError> {
        let mut w = LogWriter::create(path, &self.meta)?;
        for r in &self.records {
            w.append(r)?;
        }
        w.finish()
    }
}

const TASK_TARGETS: [Option<ObjectClass>; 5] =
    [Some(ObjectClass::Drone), Some(ObjectClass::Arm), Some(ObjectClass::Rover), Some(ObjectClass::Controller), None];

struct Driver {
    proto: Protocol,
    person: PersonId,
    start_ns: i64,
    events: Vec<Emitted>,
    /// Protocol and keypoint records in emission order.
    records: Vec<WireRecord>,
}

impl Driver {
    fn ns(&self, t_s: f64) -> i64 {
        self.start_ns + (t_s * NS_PER_SEC as f64).round() as i64
    }

    fn command(&mut self, cmd: Command, t_s: f64) {
        let now = self.ns(t_s);
        let out = self.proto.command(cmd, now).unwrap_or_else(|e| panic!("scripted {} failed: {e}", cmd.name()));
        self.emit(out);
    }

    fn tick(&mut self, t_s: f64) {
        let now = self.ns(t_s);
        let out = self.proto.tick(now).expect("monotonic script");
        self.emit(out);
    }

    fn emit(&mut self, out: Vec<Emitted>) {
        self.records.extend(out.iter().map(|e| e.to_record(&self.person)));
        self.events.extend(out);
    }

    fn keypoint(&mut self, kind: KeypointKind, text: &str, t_s: f64) {
        let now = self.ns(t_s);
        let (task, out) = self.proto.keypoint(kind, now).expect("keypoint inside a phase");
        self.records.push(keypoint_record(&self.person, now, kind, text, task));
        self.emit(out);
    }
}

pub fn synthesize_study(spec: &StudySpec) -> Result<StudySession, SynthError> {
    spec.signals.validate()?;
    let person = PersonId::new(spec.signals.person_id.clone()).expect("validated");
    let meta = SessionMeta {
        session_id: spec.session_id.clone(),
        person_id: spec.signals.person_id.clone(),
        expertise_hours: spec.expertise_hours,
        participant_index: spec.participant_index,
        condition_order: Vec::new(),
        created_ns: spec.signals.start_ns,
        device_config: Default::default(),
    };
    meta.validate().map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let cfg = &spec.protocol;
    let s = |ns: i64| ns as f64 / NS_PER_SEC as f64;
    let mut d = Driver {
        proto: Protocol::new(meta.task_order(), cfg),
        person,
        start_ns: spec.signals.start_ns,
        events: Vec::new(),
        records: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.signals.seed ^ 0x5eed);
    let mut pupil = Vec::new();
    let mut bpm = Vec::new();
    let mut targets = Vec::new();

    let mut t = 0.5;
    d.command(Command::StartBaseline, t);
    pupil.push(Segment { start_s: t, end_s: t + spec.baseline_s, value: spec.baseline_pupil_mm });
    bpm.push(Segment { start_s: t, end_s: t + spec.baseline_s, value: spec.baseline_bpm });
    targets.push(ScriptedTarget { start_s: t, end_s: t + spec.baseline_s, target: Some(ObjectClass::Controller) });
    t += spec.baseline_s;

    let n_fix = cfg.fixation_order.len();
    if n_fix > 0 {
        d.command(Command::StartFixation, t);
        for (i, class) in cfg.fixation_order.iter().enumerate() {
            let a = t + i as f64 * s(cfg.fixation_ns);
            targets.push(ScriptedTarget { start_s: a, end_s: a + s(cfg.fixation_ns), target: Some(*class) });
        }
        t += n_fix as f64 * s(cfg.fixation_ns);
        d.tick(t);
    }

    let task_s = s(cfg.task_ns);
    for n in meta.task_order() {
        t += spec.gap_s;
        let attempt_start = t;
        d.command(Command::StartTask, t);
        if spec.crash_task == Some(n) {
            t += 20.0_f64.min(task_s / 2.0);
            d.keypoint(KeypointKind::Crash, "crash", t);
            t += 3.0;
            d.command(Command::ResumeRestart, t);
        }
        let final_start = t;
        for i in 0..spec.laps_per_task {
            let at = final_start + task_s * (i + 1) as f64 / (spec.laps_per_task + 1) as f64;
            d.keypoint(KeypointKind::LapCompleted, &format!("lap {}", i + 1), at);
        }
        t += task_s;
        d.tick(t);
        let idx = (n - 1) as usize;
        pupil.push(Segment { start_s: attempt_start, end_s: t, value: spec.task_pupil_mm[idx] });
        bpm.push(Segment { start_s: attempt_start, end_s: t, value: spec.task_bpm[idx] });
        let mut a = attempt_start;
        while a < t {
            let target = TASK_TARGETS[rng.random_range(0..TASK_TARGETS.len())];
            targets.push(ScriptedTarget { start_s: a, end_s: (a + spec.dwell_s).min(t), target });
            a += spec.dwell_s;
        }
    }

    let signals = SynthConfig {
        duration_s: t + 1.0,
        pupil_mean_mm: spec.rest_pupil_mm.unwrap_or(spec.baseline_pupil_mm),
        pupil_segments: pupil,
        heart_bpm: spec.baseline_bpm,
        heart_bpm_segments: bpm,
        scripted_targets: targets,
        ..spec.signals.clone()
    };
    let data = synthesize_session(&signals)?;

    let mut tagged: Vec<(i64, u8, WireRecord)> = data.records.into_iter().map(|r| (r.host_ns(), 0, r)).collect();
    tagged.extend(d.records.into_iter().map(|r| (r.host_ns(), 1, r)));
    tagged.sort_by_key(|(t, rank, _)| (*t, *rank));
    Ok(StudySession {
        meta,
        records: tagged.into_iter().map(|(_, _, r)| r).collect(),
        manifest: data.manifest,
        events: d.events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::timeline;

    #[test]
    fn study_covers_all_tasks_in_counterbalanced_order() {
        for idx in [0, 1] {
            let spec = StudySpec { participant_index: idx, crash_task: Some(3), ..Default::default() };
            let st = synthesize_study(&spec).unwrap();
            let events: Vec<_> = st.records.iter().filter_map(|r| r.event().map(|e| (r.host_ns(), e))).collect();
            let tl = timeline(events.iter().copied());
            assert_eq!(tl.tasks.len(), 5);
            assert_eq!(tl.fixations.len(), 4);
            assert!((tl.baseline.unwrap().duration_s() - 31.0).abs() < 1e-9);
            for run in tl.tasks.values() {
                assert!((run.interval.duration_s() - 60.0).abs() < 1e-9);
            }
            assert_eq!(tl.tasks[&3].crashes, 1);
            let order: Vec<u8> = st
                .events
                .iter()
                .filter_map(|e| e.text.strip_prefix("task_completed ").map(|n| n.parse().unwrap()))
                .collect();
            assert_eq!(order, spec_order(idx));
            assert_eq!(st.events.last().unwrap().text, "session_done");
        }
    }

    fn spec_order(idx: u32) -> Vec<u8> {
        if idx.is_multiple_of(2) {
            vec![1, 2, 3, 4, 5]
        } else {
            vec![1, 2, 4, 3, 5]
        }
    }

    #[test]
    fn records_sorted_by_host_time() {
        let st = synthesize_study(&StudySpec::default()).unwrap();
        assert!(st.records.windows(2).all(|w| w[0].host_ns() <= w[1].host_ns()));
    }
}
