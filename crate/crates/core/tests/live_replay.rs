mod common;

use std::fs;
use std::sync::{Arc, Mutex};

use common::{drive_live, replay_into};
use gazefuse_core::analysis::{analyze_session, export, AnalysisConfig};
use gazefuse_core::console::Hub;
use gazefuse_core::live::{LiveConfig, LiveSession};
use gazefuse_core::log::{read_log, LogWriter};
use gazefuse_core::study::{synthesize_study, StudySpec};

fn body_lines(path: &std::path::Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(String::from).collect()
}

#[test]
fn live_run_and_replay_agree() {
    let dir = tempfile::tempdir().unwrap();
    let study = synthesize_study(&StudySpec { crash_task: Some(2), ..Default::default() }).unwrap();
    let live_path = dir.path().join("live.log");
    let cfg = LiveConfig { transcript: true, ..LiveConfig::new(study.meta.clone()) };
    let hub = Arc::new(Mutex::new(Hub::new()));
    let t0 = study.records[0].host_ns();
    let mut live = LiveSession::new(cfg, Some(LogWriter::create(&live_path, &study.meta).unwrap()), hub, t0).unwrap();
    drive_live(&study, &mut live);
    assert!(live.is_recording(), "a completed session keeps recording until stopped");
    let live_sum = live.finish(study.records.last().unwrap().host_ns()).unwrap();

    // The live session regenerated the same protocol history.
    let log = read_log(&live_path).unwrap();
    log.require_intact().unwrap();
    let events = |recs: &mut dyn Iterator<Item = &gazefuse_core::wire::WireRecord>| -> Vec<(i64, String)> {
        recs.filter_map(|r| r.event().map(|e| (r.host_ns(), format!("{} {}", e.kind, e.text)))).collect()
    };
    assert_eq!(events(&mut log.records()), events(&mut study.records.iter()));

    let replay_path = dir.path().join("replay.log");
    let replay_sum = replay_into(&log, &replay_path, true);
    assert_eq!(body_lines(&live_path), body_lines(&replay_path));
    assert_eq!(live_sum.transcript, replay_sum.transcript);
    assert_eq!(live_sum.spans, replay_sum.spans);

    let cfg = AnalysisConfig::default();
    let a = analyze_session(&log, &cfg).unwrap();
    let b = analyze_session(&read_log(&replay_path).unwrap(), &cfg).unwrap();
    let (out_a, out_b) = (dir.path().join("a"), dir.path().join("b"));
    let files = export(&[a], &cfg, &out_a).unwrap();
    export(&[b], &cfg, &out_b).unwrap();
    for f in files {
        assert_eq!(fs::read(&f).unwrap(), fs::read(out_b.join(f.file_name().unwrap())).unwrap());
    }
}

#[test]
fn stalled_console_client_changes_nothing() {
    use gazefuse_core::console::PacketKind;
    let dir = tempfile::tempdir().unwrap();
    let study = synthesize_study(&StudySpec { crash_task: Some(4), ..Default::default() }).unwrap();
    let t0 = study.records[0].host_ns();
    let run = |path: &std::path::Path, stall: bool| {
        let hub = Arc::new(Mutex::new(Hub::new()));
        let (tx, rx) = std::sync::mpsc::sync_channel::<String>(2);
        let id = stall.then(|| hub.lock().unwrap().subscribe(&PacketKind::ALL, tx));
        let cfg = LiveConfig { transcript: true, ..LiveConfig::new(study.meta.clone()) };
        let mut live =
            LiveSession::new(cfg, Some(LogWriter::create(path, &study.meta).unwrap()), hub.clone(), t0).unwrap();
        drive_live(&study, &mut live);
        let sum = live.finish(study.records.last().unwrap().host_ns()).unwrap();
        if let Some(id) = id {
            assert!(!hub.lock().unwrap().is_connected(id), "stalled client is dropped");
            assert!(hub.lock().unwrap().stats().backlog_exceeded >= 1);
        }
        drop(rx);
        sum
    };
    let (a, b) = (dir.path().join("a.log"), dir.path().join("b.log"));
    let plain = run(&a, false);
    let stalled = run(&b, true);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(plain.transcript, stalled.transcript);
    assert_eq!(plain.spans, stalled.spans);
}
