#![allow(dead_code)]

pub mod oracle;

use gazefuse_core::fusion::RoiPolygon;
use gazefuse_core::model::{clip_bbox, Detection, DetectionFrame, ObjectClass, Point, Stamp};
use gazefuse_core::wire::WireRecord;
use rand::seq::SliceRandom;
use rand::Rng;

fn is_left(a: Point, b: Point, p: Point) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y)
}

/// Winding number of `poly` around `p` (non-zero means inside).
pub fn winding_number(p: Point, poly: &[Point]) -> i32 {
    let mut wn = 0;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        if a.y <= p.y {
            if b.y > p.y && is_left(a, b, p) > 0.0 {
                wn += 1;
            }
        } else if b.y <= p.y && is_left(a, b, p) < 0.0 {
            wn -= 1;
        }
    }
    wn
}

pub fn distance_to_boundary(p: Point, poly: &[Point]) -> f64 {
    (0..poly.len())
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
            let (dx, dy) = (b.x - a.x, b.y - a.y);
            let len2 = dx * dx + dy * dy;
            let t = if len2 > 0.0 { (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
            (p.x - a.x - t * dx).hypot(p.y - a.y - t * dy)
        })
        .fold(f64::INFINITY, f64::min)
}

/// Random simple polygon: vertices at sorted distinct angles around a centre.
pub fn random_star_polygon(rng: &mut impl Rng) -> RoiPolygon {
    let n = rng.random_range(3..12);
    let (cx, cy) = (rng.random_range(0.3..0.7), rng.random_range(0.3..0.7));
    let mut angles: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    angles.dedup_by(|a, b| (*a - *b).abs() < 1e-3);
    while angles.len() < 3 {
        angles = vec![0.0, 2.0, 4.0];
    }
    let vertices = angles
        .iter()
        .map(|t| {
            let r = rng.random_range(0.05..0.3);
            Point::new(cx + r * t.cos(), cy + r * t.sin())
        })
        .collect();
    RoiPolygon { vertices, source_frame_seq: 0 }
}

pub fn random_frame(rng: &mut impl Rng, seq: u64, t_ns: i64) -> DetectionFrame {
    let n = rng.random_range(0..7);
    let items = (0..n)
        .map(|_| {
            let class = ObjectClass::ALL[rng.random_range(0..4)];
            let bbox = clip_bbox(
                rng.random_range(0.0..=1.0),
                rng.random_range(0.0..=1.0),
                rng.random_range(0.01..=0.6),
                rng.random_range(0.01..=0.6),
            )
            .expect("positive size");
            Detection { class, confidence: rng.random_range(0.0..=1.0), bbox }
        })
        .collect();
    DetectionFrame { stamp: Stamp::host(t_ns), frame_seq: seq, items }
}

/// Random merge of per-source ordered streams, preserving order within each source.
pub fn random_interleaving(rng: &mut impl Rng, sources: &[Vec<WireRecord>]) -> Vec<WireRecord> {
    let mut picks: Vec<usize> = sources.iter().enumerate().flat_map(|(i, s)| std::iter::repeat_n(i, s.len())).collect();
    picks.shuffle(rng);
    let mut idx = vec![0; sources.len()];
    picks
        .into_iter()
        .map(|s| {
            let r = sources[s][idx[s]].clone();
            idx[s] += 1;
            r
        })
        .collect()
}

/// Feeds a synthetic study into a protocol-mode live session as an operator
/// would: protocol events in the study become the commands that caused them,
/// keypoint records become keypoint calls, everything else is ingested. The
/// host clock equals each record's stamp.
pub fn drive_live(study: &gazefuse_core::study::StudySession, session: &mut gazefuse_core::live::LiveSession) {
    use gazefuse_core::protocol::{Command, KeypointKind};
    for r in &study.records {
        let t = r.host_ns();
        match r.event() {
            Some(e) if e.kind == "protocol" => {
                let cmd = match e.text.split(' ').next().unwrap() {
                    "baseline_started" => Some(Command::StartBaseline),
                    "fixation_started" if e.text.ends_with(" 0") => Some(Command::StartFixation),
                    "task_started" => Some(Command::StartTask),
                    "task_restarted" => Some(Command::ResumeRestart),
                    _ => None,
                };
                match cmd {
                    Some(c) => drop(session.command(c, t).unwrap()),
                    None => drop(session.tick(t).unwrap()),
                }
            }
            Some(e) => {
                let kind: KeypointKind = e.kind.parse().unwrap();
                session.keypoint(kind, &e.text, t).unwrap();
            }
            None => {
                session.ingest_line(&gazefuse_core::wire::encode_record(r), t).unwrap();
            }
        }
    }
}

/// Replays a log into a passthrough session that records a new log.
pub fn replay_into(
    log: &gazefuse_core::log::SessionLog,
    out: &std::path::Path,
    transcript: bool,
) -> gazefuse_core::live::LiveSummary {
    use gazefuse_core::live::{LiveConfig, LiveMode, LiveSession};
    use gazefuse_core::log::{replay, LogWriter, ReplaySpeed};
    let cfg = LiveConfig { mode: LiveMode::Passthrough, transcript, ..LiveConfig::new(log.meta.clone()) };
    let writer = LogWriter::create(out, &log.meta).unwrap();
    let hub = std::sync::Arc::new(std::sync::Mutex::new(gazefuse_core::console::Hub::new()));
    let first = log.entries.first().map_or(1, |e| e.record.host_ns());
    let mut s = LiveSession::new(cfg, Some(writer), hub, first).unwrap();
    replay(log, ReplaySpeed::Max, |e| {
        s.ingest_line(&e.line, e.record.host_ns()).unwrap();
    });
    let last = log.entries.last().map_or(1, |e| e.record.host_ns());
    s.finish(last).unwrap()
}
