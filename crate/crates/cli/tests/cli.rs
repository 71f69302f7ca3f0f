use std::process::Command;
use std::time::Duration;

use gazefuse_cli::replay::{emit, Target};
use gazefuse_cli::server::{start, ServerConfig};
use gazefuse_core::live::LiveMode;
use gazefuse_core::log::{read_log, ReplaySpeed};
use gazefuse_core::study::{synthesize_study, StudySpec};

fn study_log(dir: &std::path::Path, id: &str, index: u32, hours: f64) -> std::path::PathBuf {
    let spec =
        StudySpec { session_id: id.into(), participant_index: index, expertise_hours: hours, ..Default::default() };
    let path = dir.join(format!("{id}.log"));
    synthesize_study(&spec).unwrap().write_log(&path).unwrap();
    path
}

#[test]
fn analyze_command_writes_metrics_for_every_task() {
    let dir = tempfile::tempdir().unwrap();
    let a = study_log(dir.path(), "a", 0, 20.0);
    let b = study_log(dir.path(), "b", 1, 3.0);
    let out = dir.path().join("results");
    let status = Command::new(env!("CARGO_BIN_EXE_gazefuse"))
        .args(["analyze", a.to_str().unwrap(), b.to_str().unwrap(), "--tasks", "1..5", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(metrics.lines().count(), 11);
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("expert,3,1,")), "{summary}");
    assert!(summary.lines().any(|l| l.starts_with("novice,3,1,")), "{summary}");
}

#[test]
fn bad_task_range_is_rejected() {
    let out =
        Command::new(env!("CARGO_BIN_EXE_gazefuse")).args(["analyze", "x.log", "--tasks", "0..9"]).output().unwrap();
    assert!(!out.status.success());
}

#[tokio::test(flavor = "multi_thread")]
async fn replay_into_passthrough_recorder_reproduces_log() {
    let dir = tempfile::tempdir().unwrap();
    let src = study_log(dir.path(), "orig", 2, 8.0);
    let original = read_log(&src).unwrap();

    let rec_dir = dir.path().join("rec");
    let mut meta = original.meta.clone();
    meta.session_id = "copy".into();
    let any = "127.0.0.1:0".parse().unwrap();
    let mut cfg = ServerConfig::new(meta, rec_dir, any, any);
    cfg.mode = LiveMode::Passthrough;
    let mut r = start(cfg).await.unwrap();

    let sent = emit(&original, ReplaySpeed::Max, Target::Tcp(r.ingest_addr)).await.unwrap();
    assert_eq!(sent as usize, original.entries.len());
    let q = format!("http://{}/session/quality", r.http_addr);
    let deadline = tokio::time::Instant::now() + Duration::from_secs(60);
    loop {
        let v: serde_json::Value = reqwest::get(&q).await.unwrap().json().await.unwrap();
        if v["received"].as_u64() == Some(sent) {
            break;
        }
        assert!(tokio::time::Instant::now() < deadline, "{v}");
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    let summary = r.stop().await.unwrap();
    assert_eq!(summary.stats.logged, sent);
    let copy = read_log(&r.log_path).unwrap();
    let body =
        |l: &gazefuse_core::log::SessionLog| l.entries.iter().map(|e| (e.seq, e.line.clone())).collect::<Vec<_>>();
    assert!(body(&copy) == body(&original));
}
