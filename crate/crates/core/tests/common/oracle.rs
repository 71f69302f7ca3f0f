//! Brute-force recomputation of task metrics from a session log, written
//! against the definitions rather than the library's streaming code.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use gazefuse_core::analysis::DWELL_LABELS;
use gazefuse_core::ecg::{ecg_windows, EcgConfig};
use gazefuse_core::fusion::{run_fusion, FusionConfig, ROBOT_CLASSES};
use gazefuse_core::log::SessionLog;
use gazefuse_core::model::{DetectionFrame, EcgSample, PersonId, PupilSample};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn pop_var(v: &[f64]) -> f64 {
    let m = mean(v).unwrap();
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}

fn rate_hz(stamps: &[i64]) -> f64 {
    let d: Vec<f64> = stamps.windows(2).map(|w| (w[1] - w[0]) as f64).filter(|d| *d > 0.0).collect();
    1e9 / median(d)
}

/// Direct-form I Butterworth low-pass (RBJ cookbook, Q = 1/sqrt 2), restarted
/// from steady state on the first sample and after gaps over 0.5 s.
pub fn lowpass_df1(samples: &[(i64, f64)], fc: f64, fs: f64) -> Vec<f64> {
    let w0 = 2.0 * PI * fc / fs;
    let alpha = w0.sin() / (2.0 * std::f64::consts::FRAC_1_SQRT_2);
    let a0 = 1.0 + alpha;
    let b = [(1.0 - w0.cos()) / 2.0 / a0, (1.0 - w0.cos()) / a0, (1.0 - w0.cos()) / 2.0 / a0];
    let a = [-2.0 * w0.cos() / a0, (1.0 - alpha) / a0];
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    let mut last: Option<i64> = None;
    let mut out = Vec::with_capacity(samples.len());
    for &(t, x) in samples {
        if last.is_none_or(|l| t - l > 500_000_000) {
            (x1, x2, y1, y2) = (x, x, x, x);
        }
        last = Some(t);
        let y = b[0] * x + b[1] * x1 + b[2] * x2 - a[0] * y1 - a[1] * y2;
        (x2, x1, y2, y1) = (x1, x, y1, y);
        out.push(y);
    }
    out
}

struct Phases {
    baseline: (i64, i64),
    tasks: BTreeMap<u8, (i64, i64)>,
}

fn phases(log: &SessionLog) -> Phases {
    let mut baseline = (0, 0);
    let mut open: BTreeMap<u8, i64> = BTreeMap::new();
    let mut tasks = BTreeMap::new();
    for r in log.records() {
        let Some(e) = r.event() else { continue };
        if e.kind != "protocol" {
            continue;
        }
        let t = r.host_ns();
        let parts: Vec<&str> = e.text.split(' ').collect();
        match parts.as_slice() {
            ["baseline_started"] => baseline.0 = t,
            ["baseline_completed"] => baseline.1 = t,
            ["task_started" | "task_restarted", n] => {
                open.insert(n.parse().unwrap(), t);
            }
            ["task_completed", n] => {
                let n: u8 = n.parse().unwrap();
                tasks.insert(n, (open[&n], t));
            }
            _ => {}
        }
    }
    Phases { baseline, tasks }
}

/// Scalars keyed by their export names.
pub fn task_scalars(log: &SessionLog, task: u8, coverage_k: usize) -> BTreeMap<String, Option<f64>> {
    let ph = phases(log);
    let (lo, hi) = ph.tasks[&task];
    let inside = |t: i64| t >= lo && t < hi;
    let mut out = BTreeMap::new();

    let pupil: Vec<PupilSample> = log.records().filter_map(|r| r.pupil()).collect();
    let gated: Vec<(i64, f64)> = pupil
        .iter()
        .filter(|s| s.diameter_mm > 1.0 && s.diameter_mm < 9.0)
        .map(|s| (s.stamp.host_ns, s.diameter_mm))
        .collect();
    let fs = rate_hz(&gated.iter().map(|s| s.0).collect::<Vec<_>>());
    let base = median(gated.iter().filter(|s| s.0 >= ph.baseline.0 && s.0 < ph.baseline.1).map(|s| s.1).collect());
    let lp = lowpass_df1(&gated, 4.0, fs);
    let filtered: Vec<f64> = lp.iter().map(|v| v - base).collect();
    let mut in_task = Vec::new();
    let mut variances = Vec::new();
    for i in 0..gated.len() {
        let t = gated[i].0;
        if !inside(t) {
            continue;
        }
        in_task.push(filtered[i]);
        let window: Vec<f64> = (0..=i).filter(|&j| gated[j].0 > t - 1_000_000_000).map(|j| filtered[j]).collect();
        variances.push(pop_var(&window));
    }
    out.insert("mean_pupil_filtered_mm".into(), mean(&in_task));
    out.insert("pupil_variance_mm2".into(), mean(&variances));

    let ecg: Vec<EcgSample> = log.records().filter_map(|r| r.ecg()).filter(|s| inside(s.stamp.host_ns)).collect();
    let ecg_rate = rate_hz(&ecg.iter().map(|s| s.stamp.host_ns).collect::<Vec<_>>());
    let windows = ecg_windows(&ecg, &EcgConfig::new(ecg_rate)).unwrap();
    let (mut bpm, mut sdnn, mut rmssd, mut br) = (vec![], vec![], vec![], vec![]);
    for w in windows.iter().filter(|w| w.quality >= 0.8 && w.rr.rr_ms.len() >= 2) {
        let rr = &w.rr.rr_ms;
        let n = rr.len() as f64;
        let m = rr.iter().sum::<f64>() / n;
        bpm.push(60_000.0 / m);
        sdnn.push((rr.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt());
        rmssd.push((rr.windows(2).map(|p| (p[1] - p[0]).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        br.extend(w.breathing_rate_hz);
    }
    out.insert("mean_bpm".into(), mean(&bpm));
    out.insert("mean_sdnn_ms".into(), mean(&sdnn));
    out.insert("mean_rmssd_ms".into(), mean(&rmssd));
    out.insert("breathing_rate_hz".into(), mean(&br));

    let person = PersonId::new(log.meta.person_id.clone()).unwrap();
    let spans = run_fusion(log.records(), &person, FusionConfig::default()).unwrap().spans;
    let mut dwell: BTreeMap<String, f64> = BTreeMap::new();
    let mut labels = Vec::new();
    for s in &spans {
        let overlap = s.end_ns.min(hi) - s.start_ns.max(lo);
        if overlap > 0 {
            *dwell.entry(s.label.to_string()).or_default() += overlap as f64 / 1e9;
            labels.push(s.label);
        }
    }
    for l in DWELL_LABELS {
        out.insert(format!("dwell_{l}_s"), Some(dwell.get(&l.to_string()).copied().unwrap_or(0.0)));
    }
    let shifts = labels.windows(2).filter(|p| p[0] != p[1]).count() as f64;
    out.insert("gaze_shift_count".into(), Some(shifts));
    out.insert("gaze_shift_per_min".into(), Some(shifts / ((hi - lo) as f64 / 60e9)));

    let laps =
        log.records().filter(|r| inside(r.host_ns()) && r.event().is_some_and(|e| e.kind == "lap_completed")).count();
    out.insert("laps".into(), Some(laps as f64));

    let frames: Vec<DetectionFrame> =
        log.records().filter_map(|r| r.detections()).filter(|f| inside(f.stamp.host_ns)).collect();
    let covered = frames
        .iter()
        .filter(|f| {
            let mut classes: Vec<_> = f.items.iter().map(|d| d.class).filter(|c| ROBOT_CLASSES.contains(c)).collect();
            classes.sort();
            classes.dedup();
            classes.len() >= coverage_k
        })
        .count();
    out.insert("frame_coverage".into(), (!frames.is_empty()).then(|| covered as f64 / frames.len() as f64));
    out
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    a == b || (a - b).abs() <= tol * a.abs().max(b.abs())
}
