mod common;

use std::fs;
use std::path::Path;

use common::oracle::{rel_close, task_scalars};
use gazefuse_core::analysis::{
    analyze_session, analyze_sessions, export, group_summary, metrics_header, task_metrics, AnalysisConfig,
    AnalysisError, Group, MetricIssue,
};
use gazefuse_core::log::{read_log, SessionLog};
use gazefuse_core::model::Channel;
use gazefuse_core::study::{synthesize_study, StudySpec};
use gazefuse_core::synth::SynthConfig;

fn log_for(spec: &StudySpec, dir: &Path) -> SessionLog {
    let st = synthesize_study(spec).unwrap();
    let path = dir.join(format!("{}.log", spec.session_id));
    st.write_log(&path).unwrap();
    read_log(&path).unwrap()
}

fn spec(session: &str, person: &str, hours: f64, idx: u32, seed: u64) -> StudySpec {
    StudySpec {
        session_id: session.into(),
        expertise_hours: hours,
        participant_index: idx,
        signals: SynthConfig { seed, person_id: person.into(), ..Default::default() },
        ..Default::default()
    }
}

#[test]
fn constant_pupil_gives_baseline_offset_and_no_variance() {
    let dir = tempfile::tempdir().unwrap();
    let s = StudySpec {
        baseline_pupil_mm: 3.0,
        task_pupil_mm: [3.5; 5],
        rest_pupil_mm: Some(3.5),
        signals: SynthConfig { pupil_noise_mm: 0.0, ..Default::default() },
        ..Default::default()
    };
    let log = log_for(&s, dir.path());
    let m = task_metrics(&log, 2, &AnalysisConfig::default()).unwrap();
    let mean = m.mean_pupil_filtered_mm.unwrap();
    assert!((mean - 0.5).abs() < 0.01, "{mean}");
    assert!(m.pupil_variance_mm2.unwrap() < 1e-4, "{:?}", m.pupil_variance_mm2);
}

#[test]
fn sixty_bpm_task_mean_within_two() {
    let dir = tempfile::tempdir().unwrap();
    let s = StudySpec { task_bpm: [60.0; 5], baseline_bpm: 60.0, ..Default::default() };
    let log = log_for(&s, dir.path());
    for task in 1..=5 {
        let m = task_metrics(&log, task, &AnalysisConfig::default()).unwrap();
        let bpm = m.mean_bpm.unwrap();
        assert!((bpm - 60.0).abs() <= 2.0, "task {task}: {bpm}");
        assert_eq!(m.laps, 3);
    }
}

#[test]
fn missing_ecg_is_reported_and_other_fields_populated() {
    let dir = tempfile::tempdir().unwrap();
    let s = StudySpec { signals: SynthConfig { emit_ecg: false, ..Default::default() }, ..Default::default() };
    let log = log_for(&s, dir.path());
    let m = task_metrics(&log, 1, &AnalysisConfig::default()).unwrap();
    assert_eq!(m.issues, vec![MetricIssue::MissingStream(Channel::EcgRaw)]);
    assert_eq!(m.issues[0].to_string(), "missing_stream:ecg_raw");
    assert!(m.mean_bpm.is_none() && m.mean_sdnn_ms.is_none() && m.breathing_rate_hz.is_none());
    assert!(m.mean_pupil_filtered_mm.is_some() && m.dwell.is_some() && m.frame_coverage.is_some());
}

#[test]
fn missing_task_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let log = log_for(&StudySpec::default(), dir.path());
    assert_eq!(task_metrics(&log, 6, &AnalysisConfig::default()), Err(AnalysisError::MissingTask(6)));
}

#[test]
fn crashed_task_uses_the_restarted_interval() {
    let dir = tempfile::tempdir().unwrap();
    let log = log_for(&StudySpec { crash_task: Some(4), ..Default::default() }, dir.path());
    let m = task_metrics(&log, 4, &AnalysisConfig::default()).unwrap();
    assert_eq!(m.crashes, 1);
    assert!((m.interval.duration_s() - 60.0).abs() < 1e-9);
    assert_eq!(m.laps, 3);
}

#[test]
fn scalars_match_brute_force_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    let log = log_for(&StudySpec { crash_task: Some(3), ..spec("s9", "p9", 4.0, 1, 9) }, dir.path());
    let analysis = analyze_session(&log, &AnalysisConfig::default()).unwrap();
    for m in &analysis.tasks {
        let oracle = task_scalars(&log, m.task, 2);
        for (name, got) in m.scalars() {
            let want = oracle[&name];
            match (got, want) {
                (Some(g), Some(w)) => assert!(rel_close(g, w, 1e-9), "task {} {name}: {g} vs {w}", m.task),
                (g, w) => assert_eq!(g, w, "task {} {name}", m.task),
            }
        }
    }
}

#[test]
fn group_split_and_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = AnalysisConfig::default();
    let logs =
        vec![log_for(&spec("a", "p1", 20.0, 0, 1), dir.path()), log_for(&spec("b", "p2", 3.0, 1, 2), dir.path())];
    let sessions: Vec<_> = analyze_sessions(&logs, &cfg).into_iter().map(Result::unwrap).collect();
    let rows = group_summary(&sessions, 1, 15.0);
    assert_eq!(rows.len(), 2);
    for r in &rows {
        assert_eq!(r.as_ref().unwrap().n, 1);
    }

    // Identical sessions within one group have zero spread.
    let twins = vec![sessions[0].clone(), sessions[0].clone()];
    let rows = group_summary(&twins, 2, 15.0);
    let expert = rows[0].as_ref().unwrap();
    assert_eq!((expert.group, expert.n), (Group::Expert, 2));
    for (name, st) in &expert.stats {
        if let Some(st) = st {
            assert_eq!(st.sd, 0.0, "{name}");
        }
    }
    assert!(rows[1].is_err(), "novice group is empty");
}

#[test]
fn eight_participants_export_forty_rows_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let logs: Vec<SessionLog> = (0..8)
        .map(|i| {
            let hours = if i < 4 { 15.0 + i as f64 } else { i as f64 };
            log_for(&spec(&format!("s{i}"), &format!("p{i}"), hours, i, i as u64), dir.path())
        })
        .collect();
    let cfg = AnalysisConfig::default();
    let sessions: Vec<_> = analyze_sessions(&logs, &cfg).into_iter().map(Result::unwrap).collect();

    let a = dir.path().join("out_a");
    let b = dir.path().join("out_b");
    let files = export(&sessions, &cfg, &a).unwrap();
    export(&sessions, &cfg, &b).unwrap();
    let metrics = fs::read_to_string(a.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 41);
    assert_eq!(metrics.lines().next().unwrap(), metrics_header().join(","));
    let summary = fs::read_to_string(a.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 10);
    assert!(summary.lines().nth(1).unwrap().starts_with("expert,1,4,"));
    assert!(a.join("heatmap_task5_p7.pgm").exists() && a.join("heatmap_task5_p7.txt").exists());
    for f in &files {
        let name = f.file_name().unwrap();
        assert_eq!(fs::read(f).unwrap(), fs::read(b.join(name)).unwrap(), "{name:?}");
    }
}

#[test]
fn empty_session_list_exports_headers_only() {
    let dir = tempfile::tempdir().unwrap();
    export(&[], &AnalysisConfig::default(), dir.path()).unwrap();
    for name in ["metrics.csv", "summary.csv", "coverage.csv", "hrv_windows.csv"] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        assert_eq!(text.lines().count(), 1, "{name}");
    }
}
