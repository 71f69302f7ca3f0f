//! Experiment protocol: pupil baseline, luminance fixations, five one-minute
//! tasks with counterbalancing and crash/restart, plus operator keypoints.
//!
//! Every call carries the current host time. Timers (fixation and task
//! deadlines) fire before the command is applied, and completions are stamped
//! at their deadline rather than at the observing call.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Channel, ObjectClass, PersonId, Stamp, StreamId, NS_PER_SEC};
use crate::wire::{Event, Payload, WireRecord};

pub const BASELINE_MIN_NS: i64 = 30 * NS_PER_SEC;
pub const FIXATION_NS: i64 = 10 * NS_PER_SEC;
pub const TASK_NS: i64 = 60 * NS_PER_SEC;
pub const N_TASKS: usize = 5;
pub const DEFAULT_FIXATION_ORDER: [ObjectClass; 4] =
    [ObjectClass::Controller, ObjectClass::Drone, ObjectClass::Rover, ObjectClass::Arm];
/// Event kind used for state-machine records in the log.
pub const PROTOCOL_EVENT_KIND: &str = "protocol";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProtocolError {
    #[error("`{command}` is not allowed in state {state}")]
    IllegalTransition { state: String, command: String },
    #[error("baseline has run {elapsed_ms} ms, needs at least {min_ms} ms")]
    BaselineTooShort { elapsed_ms: i64, min_ms: i64 },
    #[error("no active session")]
    NoActiveSession,
    #[error("time went backwards: {now_ns} < {last_ns}")]
    ClockWentBackwards { now_ns: i64, last_ns: i64 },
    #[error("unknown command `{0}`")]
    UnknownCommand(String),
    #[error("unknown keypoint kind `{0}`")]
    UnknownKeypoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum ProtocolState {
    Idle,
    PupilBaseline,
    LuminanceFixation { target: ObjectClass, index: u8 },
    Task { n: u8 },
    PausedCrash { n: u8 },
    Done,
}

impl fmt::Display for ProtocolState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ProtocolState::Idle => f.write_str("idle"),
            ProtocolState::PupilBaseline => f.write_str("pupil_baseline"),
            ProtocolState::LuminanceFixation { target, index } => write!(f, "luminance_fixation({target}, {index})"),
            ProtocolState::Task { n } => write!(f, "task({n})"),
            ProtocolState::PausedCrash { n } => write!(f, "paused_crash({n})"),
            ProtocolState::Done => f.write_str("done"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    StartBaseline,
    StartFixation,
    StartTask,
    MarkCrash,
    ResumeRestart,
    Abort,
}

impl Command {
    pub const ALL: [Command; 6] = [
        Command::StartBaseline,
        Command::StartFixation,
        Command::StartTask,
        Command::MarkCrash,
        Command::ResumeRestart,
        Command::Abort,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::StartBaseline => "start_baseline",
            Command::StartFixation => "start_fixation",
            Command::StartTask => "start_task",
            Command::MarkCrash => "mark_crash",
            Command::ResumeRestart => "resume_restart",
            Command::Abort => "abort",
        }
    }
}

impl FromStr for Command {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Command::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| ProtocolError::UnknownCommand(s.into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeypointKind {
    Crash,
    LapCompleted,
    Note,
    QualityFlag,
}

impl KeypointKind {
    pub const ALL: [KeypointKind; 4] =
        [KeypointKind::Crash, KeypointKind::LapCompleted, KeypointKind::Note, KeypointKind::QualityFlag];

    pub fn name(self) -> &'static str {
        match self {
            KeypointKind::Crash => "crash",
            KeypointKind::LapCompleted => "lap_completed",
            KeypointKind::Note => "note",
            KeypointKind::QualityFlag => "quality_flag",
        }
    }
}

impl FromStr for KeypointKind {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        KeypointKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| ProtocolError::UnknownKeypoint(s.into()))
    }
}

/// Tasks 3 and 4 swap on odd participant indices; task 5 is always last.
pub fn assign_counterbalance(participant_index: u32) -> [u8; N_TASKS] {
    if participant_index.is_multiple_of(2) {
        [1, 2, 3, 4, 5]
    } else {
        [1, 2, 4, 3, 5]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub baseline_min_ns: i64,
    pub fixation_ns: i64,
    pub task_ns: i64,
    pub fixation_order: Vec<ObjectClass>,
    /// Tasks may only start after the fixation sequence finished.
    pub require_fixations: bool,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            baseline_min_ns: BASELINE_MIN_NS,
            fixation_ns: FIXATION_NS,
            task_ns: TASK_NS,
            fixation_order: DEFAULT_FIXATION_ORDER.to_vec(),
            require_fixations: true,
        }
    }
}

/// A state-machine event, logged as `kind = "protocol"`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Emitted {
    pub host_ns: i64,
    pub text: String,
    pub task: Option<u8>,
}

impl Emitted {
    fn new(host_ns: i64, text: impl Into<String>, task: Option<u8>) -> Self {
        Emitted { host_ns, text: text.into(), task }
    }

    pub fn to_record(&self, person: &PersonId) -> WireRecord {
        WireRecord::new(
            StreamId::body(person, Channel::Event),
            Stamp::host(self.host_ns),
            Payload::Event(Event { kind: PROTOCOL_EVENT_KIND.into(), text: self.text.clone(), task: self.task }),
        )
        .expect("event stream")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Protocol {
    cfg_fixations: Vec<ObjectClass>,
    require_fixations: bool,
    baseline_min_ns: i64,
    fixation_ns: i64,
    task_ns: i64,
    state: ProtocolState,
    /// When the current state (or the current task attempt) began.
    entered_ns: i64,
    last_ns: Option<i64>,
    task_order: [u8; N_TASKS],
    completed: Vec<u8>,
    baseline_done: bool,
    fixations_done: bool,
    aborted: bool,
}

impl Protocol {
    pub fn new(task_order: [u8; N_TASKS], cfg: &ProtocolConfig) -> Self {
        Protocol {
            cfg_fixations: cfg.fixation_order.clone(),
            require_fixations: cfg.require_fixations && !cfg.fixation_order.is_empty(),
            baseline_min_ns: cfg.baseline_min_ns,
            fixation_ns: cfg.fixation_ns,
            task_ns: cfg.task_ns,
            state: ProtocolState::Idle,
            entered_ns: 0,
            last_ns: None,
            task_order,
            completed: Vec::new(),
            baseline_done: false,
            fixations_done: false,
            aborted: false,
        }
    }

    /// The session ended through `abort` rather than by completing task 5.
    pub fn aborted(&self) -> bool {
        self.aborted
    }

    pub fn for_participant(participant_index: u32, cfg: &ProtocolConfig) -> Self {
        Self::new(assign_counterbalance(participant_index), cfg)
    }

    pub fn state(&self) -> ProtocolState {
        self.state
    }

    pub fn task_order(&self) -> [u8; N_TASKS] {
        self.task_order
    }

    pub fn completed_tasks(&self) -> &[u8] {
        &self.completed
    }

    pub fn baseline_done(&self) -> bool {
        self.baseline_done
    }

    pub fn fixations_done(&self) -> bool {
        self.fixations_done
    }

    pub fn entered_ns(&self) -> i64 {
        self.entered_ns
    }

    /// Time spent in the current state (task clock for tasks), `0` when idle.
    pub fn elapsed_ns(&self, now_ns: i64) -> i64 {
        match self.state {
            ProtocolState::Idle | ProtocolState::Done => 0,
            _ => now_ns - self.entered_ns,
        }
    }

    /// The task that would start next.
    pub fn next_task(&self) -> Option<u8> {
        self.task_order.get(self.completed.len()).copied()
    }

    pub fn current_task(&self) -> Option<u8> {
        match self.state {
            ProtocolState::Task { n } | ProtocolState::PausedCrash { n } => Some(n),
            _ => None,
        }
    }

    fn enter(&mut self, state: ProtocolState, at_ns: i64) {
        self.state = state;
        self.entered_ns = at_ns;
    }

    fn check_clock(&mut self, now_ns: i64) -> Result<(), ProtocolError> {
        if let Some(last) = self.last_ns {
            if now_ns < last {
                return Err(ProtocolError::ClockWentBackwards { now_ns, last_ns: last });
            }
        }
        self.last_ns = Some(now_ns);
        Ok(())
    }

    fn fire_timers(&mut self, now_ns: i64, out: &mut Vec<Emitted>) {
        loop {
            match self.state {
                ProtocolState::LuminanceFixation { target, index } => {
                    let deadline = self.entered_ns + self.fixation_ns;
                    if now_ns < deadline {
                        return;
                    }
                    out.push(Emitted::new(deadline, format!("fixation_completed {target} {index}"), None));
                    let next = index as usize + 1;
                    match self.cfg_fixations.get(next) {
                        Some(&t) => {
                            self.enter(ProtocolState::LuminanceFixation { target: t, index: next as u8 }, deadline);
                            out.push(Emitted::new(deadline, format!("fixation_started {t} {next}"), None));
                        }
                        None => {
                            self.fixations_done = true;
                            self.enter(ProtocolState::Idle, deadline);
                            out.push(Emitted::new(deadline, "fixations_completed", None));
                        }
                    }
                }
                ProtocolState::Task { n } => {
                    let deadline = self.entered_ns + self.task_ns;
                    if now_ns < deadline {
                        return;
                    }
                    out.push(Emitted::new(deadline, format!("task_completed {n}"), Some(n)));
                    self.completed.push(n);
                    if self.completed.len() == N_TASKS {
                        self.enter(ProtocolState::Done, deadline);
                        out.push(Emitted::new(deadline, "session_done", None));
                    } else {
                        self.enter(ProtocolState::Idle, deadline);
                    }
                }
                _ => return,
            }
        }
    }

    /// Advances timers to `now_ns`.
    pub fn tick(&mut self, now_ns: i64) -> Result<Vec<Emitted>, ProtocolError> {
        self.check_clock(now_ns)?;
        let mut out = Vec::new();
        self.fire_timers(now_ns, &mut out);
        Ok(out)
    }

    fn illegal(&self, cmd: Command) -> ProtocolError {
        ProtocolError::IllegalTransition { state: self.state.to_string(), command: cmd.name().into() }
    }

    /// Applies an operator command at `now_ns`. On error the state is left as it
    /// was after firing timers; the timer events are lost only from the returned
    /// value, so callers should `tick` first when they need them.
    pub fn command(&mut self, cmd: Command, now_ns: i64) -> Result<Vec<Emitted>, ProtocolError> {
        let snapshot = self.clone();
        let result = self.command_inner(cmd, now_ns);
        if result.is_err() {
            *self = snapshot;
        }
        result
    }

    fn command_inner(&mut self, cmd: Command, now_ns: i64) -> Result<Vec<Emitted>, ProtocolError> {
        self.check_clock(now_ns)?;
        let mut out = Vec::new();
        self.fire_timers(now_ns, &mut out);
        use ProtocolState as S;
        match (self.state, cmd) {
            (S::Idle, Command::StartBaseline) if self.completed.is_empty() => {
                self.baseline_done = false;
                self.fixations_done = false;
                self.enter(S::PupilBaseline, now_ns);
                out.push(Emitted::new(now_ns, "baseline_started", None));
            }
            (S::PupilBaseline, Command::StartFixation | Command::StartTask) => {
                let elapsed = now_ns - self.entered_ns;
                if elapsed < self.baseline_min_ns {
                    return Err(ProtocolError::BaselineTooShort {
                        elapsed_ms: elapsed / 1_000_000,
                        min_ms: self.baseline_min_ns / 1_000_000,
                    });
                }
                if cmd == Command::StartTask && self.require_fixations {
                    return Err(self.illegal(cmd));
                }
                self.baseline_done = true;
                out.push(Emitted::new(now_ns, "baseline_completed", None));
                self.enter(S::Idle, now_ns);
                return self.command_inner(cmd, now_ns).map(|mut more| {
                    out.append(&mut more);
                    out
                });
            }
            (S::Idle, Command::StartFixation) if self.baseline_done && self.completed.is_empty() => {
                let Some(&target) = self.cfg_fixations.first() else {
                    return Err(self.illegal(cmd));
                };
                self.fixations_done = false;
                self.enter(S::LuminanceFixation { target, index: 0 }, now_ns);
                out.push(Emitted::new(now_ns, format!("fixation_started {target} 0"), None));
            }
            (S::Idle, Command::StartTask) if self.baseline_done && (self.fixations_done || !self.require_fixations) => {
                let n = self.next_task().ok_or_else(|| self.illegal(cmd))?;
                self.enter(S::Task { n }, now_ns);
                out.push(Emitted::new(now_ns, format!("task_started {n}"), Some(n)));
            }
            (S::Task { n }, Command::MarkCrash) => {
                self.enter(S::PausedCrash { n }, now_ns);
                out.push(Emitted::new(now_ns, format!("task_crashed {n}"), Some(n)));
            }
            (S::PausedCrash { n }, Command::ResumeRestart) => {
                self.enter(S::Task { n }, now_ns);
                out.push(Emitted::new(now_ns, format!("task_restarted {n}"), Some(n)));
            }
            (S::Done, Command::Abort) => return Err(self.illegal(cmd)),
            (state, Command::Abort) => {
                match state {
                    S::PupilBaseline => out.push(Emitted::new(now_ns, "baseline_aborted", None)),
                    S::LuminanceFixation { .. } => out.push(Emitted::new(now_ns, "fixations_aborted", None)),
                    S::Task { n } | S::PausedCrash { n } => {
                        out.push(Emitted::new(now_ns, format!("task_aborted {n}"), Some(n)))
                    }
                    _ => {}
                }
                self.enter(S::Done, now_ns);
                self.aborted = true;
                out.push(Emitted::new(now_ns, "session_aborted", None));
            }
            _ => return Err(self.illegal(cmd)),
        }
        Ok(out)
    }

    /// Validates an operator keypoint. A crash keypoint also pauses the task.
    pub fn keypoint(&mut self, kind: KeypointKind, now_ns: i64) -> Result<(Option<u8>, Vec<Emitted>), ProtocolError> {
        let snapshot = self.clone();
        self.check_clock(now_ns)?;
        let mut out = Vec::new();
        self.fire_timers(now_ns, &mut out);
        if matches!(self.state, ProtocolState::Idle | ProtocolState::Done) {
            *self = snapshot;
            return Err(ProtocolError::NoActiveSession);
        }
        let task = self.current_task();
        if kind == KeypointKind::Crash {
            match self.command_inner(Command::MarkCrash, now_ns) {
                Ok(mut more) => out.append(&mut more),
                Err(e) => {
                    *self = snapshot;
                    return Err(e);
                }
            }
        }
        Ok((task, out))
    }
}

pub fn keypoint_record(
    person: &PersonId,
    host_ns: i64,
    kind: KeypointKind,
    text: &str,
    task: Option<u8>,
) -> WireRecord {
    WireRecord::new(
        StreamId::body(person, Channel::Event),
        Stamp::host(host_ns),
        Payload::Event(Event { kind: kind.name().into(), text: text.into(), task }),
    )
    .expect("event stream")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interval {
    pub start_ns: i64,
    pub end_ns: i64,
}

impl Interval {
    pub fn contains(&self, t: i64) -> bool {
        t >= self.start_ns && t < self.end_ns
    }

    pub fn duration_s(&self) -> f64 {
        (self.end_ns - self.start_ns) as f64 / 1e9
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TaskRun {
    /// Final (post-restart) attempt.
    pub interval: Interval,
    pub crashes: u32,
}

/// Protocol timeline reconstructed from logged event records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Timeline {
    pub baseline: Option<Interval>,
    pub fixations: Vec<(ObjectClass, Interval)>,
    pub tasks: BTreeMap<u8, TaskRun>,
}

pub fn timeline<'a>(events: impl IntoIterator<Item = (i64, &'a Event)>) -> Timeline {
    let mut tl = Timeline::default();
    let mut baseline_start = None;
    let mut fixation_start: Option<(ObjectClass, i64)> = None;
    let mut attempt: BTreeMap<u8, (i64, u32)> = BTreeMap::new();
    for (t, e) in events {
        if e.kind != PROTOCOL_EVENT_KIND {
            continue;
        }
        let mut words = e.text.split_whitespace();
        let verb = words.next().unwrap_or("");
        let arg = words.next();
        let task = arg.and_then(|a| a.parse::<u8>().ok());
        match verb {
            "baseline_started" => baseline_start = Some(t),
            "baseline_completed" => {
                if let Some(s) = baseline_start.take() {
                    tl.baseline = Some(Interval { start_ns: s, end_ns: t });
                }
            }
            "fixation_started" => fixation_start = arg.and_then(ObjectClass::from_name).map(|c| (c, t)),
            "fixation_completed" => {
                if let Some((c, s)) = fixation_start.take() {
                    tl.fixations.push((c, Interval { start_ns: s, end_ns: t }));
                }
            }
            "task_started" => {
                if let Some(n) = task {
                    attempt.insert(n, (t, 0));
                }
            }
            "task_restarted" => {
                if let Some(n) = task {
                    let crashes = attempt.get(&n).map_or(0, |a| a.1);
                    attempt.insert(n, (t, crashes));
                }
            }
            "task_crashed" => {
                if let Some(a) = task.and_then(|n| attempt.get_mut(&n)) {
                    a.1 += 1;
                }
            }
            "task_completed" => {
                if let Some((s, crashes)) = task.and_then(|n| attempt.remove(&n)) {
                    tl.tasks.insert(
                        task.expect("parsed"),
                        TaskRun { interval: Interval { start_ns: s, end_ns: t }, crashes },
                    );
                }
            }
            "task_aborted" => {
                if let Some(n) = task {
                    attempt.remove(&n);
                }
            }
            _ => {}
        }
    }
    tl
}

/// Lap keypoints inside the interval.
pub fn lap_count<'a>(events: impl IntoIterator<Item = (i64, &'a Event)>, interval: Interval) -> u32 {
    events.into_iter().filter(|(t, e)| e.kind == KeypointKind::LapCompleted.name() && interval.contains(*t)).count()
        as u32
}
