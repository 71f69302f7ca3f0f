//! Post-session analysis of session logs: per-task metrics, expert/novice
//! summaries and file exports.
//!
//! Every metric is computed over a task's final (post-restart) interval. The
//! pupil chain and fusion run over the whole log first (so filter state and
//! spans match the live run) and are then sliced; ECG windows are computed on
//! the raw samples inside the interval.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::ecg::{ecg_windows, EcgConfig, HrvWindow};
use crate::exec::par_map;
use crate::fusion::{
    accumulate_heatmap, dwell_and_shifts, frame_coverage, run_fusion, spans_csv, AttentionLabel, AttentionSpan,
    DwellSummary, FusionConfig, Heatmap, HEATMAP_GRID, HEATMAP_SIGMA_CELLS, ROBOT_CLASSES,
};
use crate::log::{SessionLog, SessionMeta};
use crate::model::{Channel, DetectionFrame, EcgSample, Eye, GazeSample, ObjectClass, PersonId, PupilSample};
use crate::protocol::{lap_count, timeline, Interval, Timeline, N_TASKS};
use crate::pupil::{
    gate_accepts, mean_and_population_variance, subtract_baseline, BaselineAccumulator, FilteredPupilSample,
    PupilBaseline, PupilLowpass, PupilWindow,
};
use crate::wire::Event;

pub const DEFAULT_EXPERT_THRESHOLD_HOURS: f64 = 15.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("log has no completed interval for task {0}")]
    MissingTask(u8),
    #[error("invalid person id in log header: {0}")]
    BadPerson(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub fusion: FusionConfig,
    pub heatmap_grid: usize,
    pub heatmap_sigma_cells: f64,
    pub coverage_classes: Vec<ObjectClass>,
    pub coverage_k: usize,
    pub expert_threshold_hours: f64,
    pub notch_hz: Option<f64>,
    /// Tasks to analyse; all five when empty.
    pub tasks: Vec<u8>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            fusion: FusionConfig::default(),
            heatmap_grid: HEATMAP_GRID,
            heatmap_sigma_cells: HEATMAP_SIGMA_CELLS,
            coverage_classes: ROBOT_CLASSES.to_vec(),
            coverage_k: 2,
            expert_threshold_hours: DEFAULT_EXPERT_THRESHOLD_HOURS,
            notch_hz: Some(50.0),
            tasks: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum MetricIssue {
    MissingStream(Channel),
    NoBaseline(String),
    BadRate(Channel),
}

impl fmt::Display for MetricIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricIssue::MissingStream(c) => write!(f, "missing_stream:{c}"),
            MetricIssue::NoBaseline(why) => write!(f, "no_baseline:{why}"),
            MetricIssue::BadRate(c) => write!(f, "bad_rate:{c}"),
        }
    }
}

/// Labels exported as dwell columns, in column order.
pub const DWELL_LABELS: [AttentionLabel; 6] = [
    AttentionLabel::Object(ObjectClass::Drone),
    AttentionLabel::Object(ObjectClass::Arm),
    AttentionLabel::Object(ObjectClass::Rover),
    AttentionLabel::Object(ObjectClass::Controller),
    AttentionLabel::RoiOnly,
    AttentionLabel::None,
];

#[derive(Debug, Clone, PartialEq)]
pub struct TaskMetrics {
    pub task: u8,
    pub interval: Interval,
    pub crashes: u32,
    pub mean_pupil_filtered_mm: Option<f64>,
    /// Mean of the 1 s trailing-window variances over the interval.
    pub pupil_variance_mm2: Option<f64>,
    pub mean_bpm: Option<f64>,
    pub mean_sdnn_ms: Option<f64>,
    pub mean_rmssd_ms: Option<f64>,
    pub breathing_rate_hz: Option<f64>,
    pub dwell: Option<DwellSummary>,
    pub laps: u32,
    pub frames: u64,
    pub covered_frames: u64,
    pub frame_coverage: Option<f64>,
    pub heatmap: Option<Heatmap>,
    pub hrv_windows: Vec<HrvWindow>,
    pub issues: Vec<MetricIssue>,
}

impl TaskMetrics {
    /// Exported scalar columns, in order.
    pub fn scalars(&self) -> Vec<(String, Option<f64>)> {
        let mut v = vec![
            ("mean_pupil_filtered_mm".to_string(), self.mean_pupil_filtered_mm),
            ("pupil_variance_mm2".to_string(), self.pupil_variance_mm2),
            ("mean_bpm".to_string(), self.mean_bpm),
            ("mean_sdnn_ms".to_string(), self.mean_sdnn_ms),
            ("mean_rmssd_ms".to_string(), self.mean_rmssd_ms),
            ("breathing_rate_hz".to_string(), self.breathing_rate_hz),
        ];
        for l in DWELL_LABELS {
            v.push((format!("dwell_{l}_s"), self.dwell.as_ref().map(|d| d.dwell(l))));
        }
        v.push(("gaze_shift_count".into(), self.dwell.as_ref().map(|d| d.shifts as f64)));
        v.push(("gaze_shift_per_min".into(), self.dwell.as_ref().map(|d| d.shifts_per_min)));
        v.push(("laps".into(), Some(self.laps as f64)));
        v.push(("frame_coverage".into(), self.frame_coverage));
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionAnalysis {
    pub meta: SessionMeta,
    pub timeline: Timeline,
    pub tasks: Vec<TaskMetrics>,
    pub missing_tasks: Vec<u8>,
    pub spans: Vec<AttentionSpan>,
    pub baseline: Option<PupilBaseline>,
}

/// A log's streams for its person, decoded once.
struct Prepared<'a> {
    pupil: Vec<PupilSample>,
    ecg: Vec<EcgSample>,
    gaze: Vec<GazeSample>,
    frames: Vec<DetectionFrame>,
    events: Vec<(i64, &'a Event)>,
    timeline: Timeline,
    issues: Vec<MetricIssue>,
    baseline: Option<PupilBaseline>,
    filtered: Vec<FilteredPupilSample>,
    window_var: Vec<f64>,
    spans: Vec<AttentionSpan>,
    ecg_rate: Option<f64>,
}

/// Nominal rate from the median stamp difference.
pub fn estimate_rate_hz(stamps: impl Iterator<Item = i64>) -> Option<f64> {
    let s: Vec<i64> = stamps.collect();
    let mut d: Vec<f64> = s.windows(2).map(|w| (w[1] - w[0]) as f64).filter(|d| *d > 0.0).collect();
    crate::pupil::median(&mut d).map(|m| 1e9 / m)
}

/// Pupil stream used for analysis: the binocular mean when present, else left, else right.
fn select_eye(samples: Vec<PupilSample>) -> Vec<PupilSample> {
    for eye in [Eye::Mean, Eye::Left, Eye::Right] {
        if samples.iter().any(|s| s.eye == eye) {
            return samples.into_iter().filter(|s| s.eye == eye).collect();
        }
    }
    samples
}

fn prepare<'a>(log: &'a SessionLog, person: &PersonId, cfg: &AnalysisConfig) -> Prepared<'a> {
    let mine = || log.records().filter(move |r| r.stream.person() == person);
    let pupil = select_eye(mine().filter_map(|r| r.pupil()).collect());
    let ecg: Vec<EcgSample> = mine().filter_map(|r| r.ecg()).collect();
    let gaze: Vec<GazeSample> = mine().filter_map(|r| r.gaze()).collect();
    let frames: Vec<DetectionFrame> = mine().filter_map(|r| r.detections()).collect();
    let events: Vec<(i64, &Event)> = mine().filter_map(|r| r.event().map(|e| (r.host_ns(), e))).collect();
    let tl = timeline(events.iter().copied());
    let mut issues = Vec::new();

    // Pupil: gate, low-pass the whole stream, subtract the baseline-interval median.
    let gated: Vec<PupilSample> = pupil.iter().filter(|s| gate_accepts(s.diameter_mm)).copied().collect();
    let mut baseline = None;
    let mut filtered = Vec::new();
    let mut window_var = Vec::new();
    if !gated.is_empty() {
        let lp = estimate_rate_hz(gated.iter().map(|s| s.stamp.host_ns)).and_then(|r| PupilLowpass::new(r).ok());
        match (lp, tl.baseline) {
            (None, _) => issues.push(MetricIssue::BadRate(Channel::PupilRaw)),
            (Some(_), None) => issues.push(MetricIssue::NoBaseline("no baseline interval".into())),
            (Some(mut lp), Some(b)) => {
                let mut acc = BaselineAccumulator::new();
                gated.iter().filter(|s| b.contains(s.stamp.host_ns)).for_each(|s| acc.push(s));
                match acc.finalize() {
                    Ok(base) => {
                        let mut w = PupilWindow::new();
                        for s in &gated {
                            let f = subtract_baseline(&lp.process(s), &base);
                            window_var.push(w.push(&f).variance_mm2);
                            filtered.push(f);
                        }
                        baseline = Some(base);
                    }
                    Err(e) => issues.push(MetricIssue::NoBaseline(e.to_string())),
                }
            }
        }
    }

    let spans = run_fusion(log.records(), person, cfg.fusion.clone()).map(|r| r.spans).unwrap_or_default();
    let ecg_rate = estimate_rate_hz(ecg.iter().map(|s| s.stamp.host_ns));
    Prepared { pupil, ecg, gaze, frames, events, timeline: tl, issues, baseline, filtered, window_var, spans, ecg_rate }
}

fn mean_of(values: impl Iterator<Item = f64> + Clone) -> Option<f64> {
    mean_and_population_variance(values).map(|(m, _, _)| m)
}

fn metrics_for(p: &Prepared, task: u8, cfg: &AnalysisConfig) -> Result<TaskMetrics, AnalysisError> {
    let run = p.timeline.tasks.get(&task).ok_or(AnalysisError::MissingTask(task))?;
    let iv = run.interval;
    let mut issues = Vec::new();
    let inside = |t: i64| iv.contains(t);

    let (mut mean_pupil, mut pupil_var) = (None, None);
    if !p.pupil.iter().any(|s| inside(s.stamp.host_ns)) {
        issues.push(MetricIssue::MissingStream(Channel::PupilRaw));
    } else if p.baseline.is_none() {
        issues.extend(p.issues.iter().cloned());
    } else {
        let idx: Vec<usize> = (0..p.filtered.len()).filter(|&i| inside(p.filtered[i].stamp.host_ns)).collect();
        mean_pupil = mean_of(idx.iter().map(|&i| p.filtered[i].d_filtered_mm));
        pupil_var = mean_of(idx.iter().map(|&i| p.window_var[i]));
    }

    let ecg: Vec<EcgSample> = p.ecg.iter().filter(|s| inside(s.stamp.host_ns)).copied().collect();
    let mut hrv_windows = Vec::new();
    if ecg.is_empty() {
        issues.push(MetricIssue::MissingStream(Channel::EcgRaw));
    } else {
        let ecg_cfg = p.ecg_rate.map(|r| EcgConfig { notch_hz: cfg.notch_hz, ..EcgConfig::new(r) });
        match ecg_cfg.and_then(|c| ecg_windows(&ecg, &c).ok()) {
            Some(w) => hrv_windows = w,
            None => issues.push(MetricIssue::BadRate(Channel::EcgRaw)),
        }
    }
    let over = |f: fn(&HrvWindow) -> Option<f64>| mean_of(hrv_windows.iter().filter_map(f));

    let gaze: Vec<&GazeSample> = p.gaze.iter().filter(|g| inside(g.stamp.host_ns)).collect();
    let (dwell, heatmap) = if gaze.is_empty() {
        issues.push(MetricIssue::MissingStream(Channel::Gaze2d));
        (None, None)
    } else {
        let h = accumulate_heatmap(
            gaze.iter().filter(|g| g.valid).map(|g| (g.x, g.y)),
            cfg.heatmap_grid,
            cfg.heatmap_sigma_cells,
        );
        (Some(dwell_and_shifts(&p.spans, iv.start_ns, iv.end_ns)), Some(h))
    };

    let frames: Vec<&DetectionFrame> = p.frames.iter().filter(|f| inside(f.stamp.host_ns)).collect();
    if frames.is_empty() {
        issues.push(MetricIssue::MissingStream(Channel::Detections));
    }
    let coverage = frame_coverage(frames.iter().copied(), &cfg.coverage_classes, cfg.coverage_k);
    let covered = coverage.map_or(0, |c| (c * frames.len() as f64).round() as u64);

    Ok(TaskMetrics {
        task,
        interval: iv,
        crashes: run.crashes,
        mean_pupil_filtered_mm: mean_pupil,
        pupil_variance_mm2: pupil_var,
        mean_bpm: over(|w| w.bpm),
        mean_sdnn_ms: over(|w| w.sdnn_ms),
        mean_rmssd_ms: over(|w| w.rmssd_ms),
        breathing_rate_hz: over(|w| w.breathing_rate_hz),
        dwell,
        laps: lap_count(p.events.iter().copied(), iv),
        frames: frames.len() as u64,
        covered_frames: covered,
        frame_coverage: coverage,
        heatmap,
        hrv_windows,
        issues,
    })
}

fn person_of(log: &SessionLog) -> Result<PersonId, AnalysisError> {
    PersonId::new(log.meta.person_id.clone()).map_err(|e| AnalysisError::BadPerson(e.to_string()))
}

pub fn task_metrics(log: &SessionLog, task: u8, cfg: &AnalysisConfig) -> Result<TaskMetrics, AnalysisError> {
    let person = person_of(log)?;
    metrics_for(&prepare(log, &person, cfg), task, cfg)
}

pub fn analyze_session(log: &SessionLog, cfg: &AnalysisConfig) -> Result<SessionAnalysis, AnalysisError> {
    let person = person_of(log)?;
    let p = prepare(log, &person, cfg);
    let wanted: Vec<u8> = if cfg.tasks.is_empty() { (1..=N_TASKS as u8).collect() } else { cfg.tasks.clone() };
    let mut tasks = Vec::new();
    let mut missing_tasks = Vec::new();
    for n in wanted {
        match metrics_for(&p, n, cfg) {
            Ok(m) => tasks.push(m),
            Err(AnalysisError::MissingTask(n)) => missing_tasks.push(n),
            Err(e) => return Err(e),
        }
    }
    Ok(SessionAnalysis {
        meta: log.meta.clone(),
        timeline: p.timeline.clone(),
        tasks,
        missing_tasks,
        spans: p.spans.clone(),
        baseline: p.baseline,
    })
}

/// Sessions are independent, so they are analysed in parallel.
pub fn analyze_sessions(logs: &[SessionLog], cfg: &AnalysisConfig) -> Vec<Result<SessionAnalysis, AnalysisError>> {
    par_map(logs, |l| analyze_session(l, cfg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Group {
    Expert,
    Novice,
}

impl Group {
    pub fn of(expertise_hours: f64, threshold_hours: f64) -> Group {
        if expertise_hours >= threshold_hours {
            Group::Expert
        } else {
            Group::Novice
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Group::Expert => "expert",
            Group::Novice => "novice",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSd {
    pub n: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub group: Group,
    pub task: u8,
    pub n: usize,
    pub stats: Vec<(String, Option<MeanSd>)>,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("no sessions in the {} group for task {task}", group.name())]
pub struct EmptyGroup {
    pub group: Group,
    pub task: u8,
}

/// Expert and novice summaries for one task; an empty group is reported
/// instead of producing a row.
pub fn group_summary(
    sessions: &[SessionAnalysis],
    task: u8,
    threshold_hours: f64,
) -> Vec<Result<GroupSummary, EmptyGroup>> {
    [Group::Expert, Group::Novice]
        .into_iter()
        .map(|group| {
            let members: Vec<&TaskMetrics> = sessions
                .iter()
                .filter(|s| Group::of(s.meta.expertise_hours, threshold_hours) == group)
                .filter_map(|s| s.tasks.iter().find(|t| t.task == task))
                .collect();
            if members.is_empty() {
                return Err(EmptyGroup { group, task });
            }
            let names: Vec<String> = members[0].scalars().into_iter().map(|(n, _)| n).collect();
            let stats = names
                .iter()
                .enumerate()
                .map(|(i, name)| {
                    let vals: Vec<f64> = members.iter().filter_map(|m| m.scalars()[i].1).collect();
                    let s = mean_and_population_variance(vals.iter().copied()).map(|(mean, var, n)| MeanSd {
                        n,
                        mean,
                        sd: var.sqrt(),
                    });
                    (name.clone(), s)
                })
                .collect();
            Ok(GroupSummary { group, task, n: members.len(), stats })
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn scalar_names() -> Vec<String> {
    let empty = TaskMetrics {
        task: 0,
        interval: Interval { start_ns: 0, end_ns: 0 },
        crashes: 0,
        mean_pupil_filtered_mm: None,
        pupil_variance_mm2: None,
        mean_bpm: None,
        mean_sdnn_ms: None,
        mean_rmssd_ms: None,
        breathing_rate_hz: None,
        dwell: None,
        laps: 0,
        frames: 0,
        covered_frames: 0,
        frame_coverage: None,
        heatmap: None,
        hrv_windows: Vec::new(),
        issues: Vec::new(),
    };
    empty.scalars().into_iter().map(|(n, _)| n).collect()
}

/// Column order of `metrics.csv`.
pub fn metrics_header() -> Vec<String> {
    let mut h: Vec<String> =
        ["session_id", "person_id", "expertise_hours", "group", "task", "start_ns", "end_ns", "crashes"]
            .map(String::from)
            .to_vec();
    h.extend(scalar_names());
    h.push("issues".into());
    h
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

/// Writes `metrics.csv`, `summary.csv`, `coverage.csv`, `hrv_windows.csv`,
/// per-person span CSVs and per-task heatmaps. Returns the written paths.
pub fn export(sessions: &[SessionAnalysis], cfg: &AnalysisConfig, out_dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let threshold = cfg.expert_threshold_hours;

    let path = out_dir.join("metrics.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(metrics_header()).map_err(csv_err)?;
    for s in sessions {
        for t in &s.tasks {
            let mut row = vec![
                s.meta.session_id.clone(),
                s.meta.person_id.clone(),
                s.meta.expertise_hours.to_string(),
                Group::of(s.meta.expertise_hours, threshold).name().to_string(),
                t.task.to_string(),
                t.interval.start_ns.to_string(),
                t.interval.end_ns.to_string(),
                t.crashes.to_string(),
            ];
            row.extend(t.scalars().into_iter().map(|(_, v)| cell(v)));
            row.push(t.issues.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";"));
            w.write_record(row).map_err(csv_err)?;
        }
    }
    w.flush()?;
    written.push(path);

    let path = out_dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    let mut header = vec!["group".to_string(), "task".into(), "n".into()];
    for n in scalar_names() {
        header.push(format!("{n}_mean"));
        header.push(format!("{n}_sd"));
    }
    w.write_record(&header).map_err(csv_err)?;
    let tasks: Vec<u8> = if cfg.tasks.is_empty() { (1..=N_TASKS as u8).collect() } else { cfg.tasks.clone() };
    for task in tasks {
        for g in group_summary(sessions, task, threshold).into_iter().flatten() {
            let mut row = vec![g.group.name().to_string(), task.to_string(), g.n.to_string()];
            for (_, st) in &g.stats {
                row.push(cell(st.map(|s| s.mean)));
                row.push(cell(st.map(|s| s.sd)));
            }
            w.write_record(row).map_err(csv_err)?;
        }
    }
    w.flush()?;
    written.push(path);

    let path = out_dir.join("coverage.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record(["session_id", "person_id", "task", "frames", "covered_frames", "frame_coverage"])
        .map_err(csv_err)?;
    for s in sessions {
        for t in &s.tasks {
            w.write_record([
                s.meta.session_id.clone(),
                s.meta.person_id.clone(),
                t.task.to_string(),
                t.frames.to_string(),
                t.covered_frames.to_string(),
                cell(t.frame_coverage),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    written.push(path);

    let path = out_dir.join("hrv_windows.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
    w.write_record([
        "session_id",
        "person_id",
        "task",
        "window_start_ns",
        "window_end_ns",
        "n_rr",
        "rr_artifacts",
        "bpm",
        "sdnn_ms",
        "rmssd_ms",
        "breathing_rate_hz",
        "quality",
    ])
    .map_err(csv_err)?;
    for s in sessions {
        for t in &s.tasks {
            for h in &t.hrv_windows {
                w.write_record([
                    s.meta.session_id.clone(),
                    s.meta.person_id.clone(),
                    t.task.to_string(),
                    h.window_start_ns.to_string(),
                    h.window_end.host_ns.to_string(),
                    h.rr.rr_ms.len().to_string(),
                    h.rr.artifacts.to_string(),
                    cell(h.bpm),
                    cell(h.sdnn_ms),
                    cell(h.rmssd_ms),
                    cell(h.breathing_rate_hz),
                    h.quality.to_string(),
                ])
                .map_err(csv_err)?;
            }
        }
    }
    w.flush()?;
    written.push(path);

    let mut by_person: BTreeMap<String, Vec<AttentionSpan>> = BTreeMap::new();
    for s in sessions {
        by_person.entry(format!("{}_{}", s.meta.session_id, s.meta.person_id)).or_default().extend(&s.spans);
        for t in &s.tasks {
            if let Some(h) = &t.heatmap {
                let stem = format!("heatmap_task{}_{}", t.task, s.meta.person_id);
                let pgm = out_dir.join(format!("{stem}.pgm"));
                fs::write(&pgm, h.to_pgm())?;
                let txt = out_dir.join(format!("{stem}.txt"));
                fs::write(&txt, h.to_text())?;
                written.push(pgm);
                written.push(txt);
            }
        }
    }
    for (key, spans) in by_person {
        let path = out_dir.join(format!("spans_{key}.csv"));
        fs::write(&path, spans_csv(&spans))?;
        written.push(path);
    }
    Ok(written)
}
