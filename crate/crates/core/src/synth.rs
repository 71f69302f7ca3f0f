//! Deterministic synthetic sessions with a ground-truth manifest.
//!
//! ECG beats are sums of Gaussian P/Q/R/S/T components placed at R-peak
//! times that follow `heart_bpm` with respiratory sinus arrhythmia at
//! `breathing_hz` plus seeded jitter. Gaze follows a scripted target
//! timeline; detections report every object of a fixed scene layout where the
//! drone drifts slowly so the ROI moves.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{clip_bbox, BBox, Channel, Detection, Eye, ObjectClass, PersonId, Stamp, StreamId, NS_PER_SEC};
use crate::wire::{Detections, EcgRaw, Gaze2d, Payload, PupilRaw, WireRecord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedTarget {
    pub start_s: f64,
    pub end_s: f64,
    /// `None` looks away from every object.
    pub target: Option<ObjectClass>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start_s: f64,
    pub end_s: f64,
    pub value: f64,
}

fn lookup(segments: &[Segment], t: f64, default: f64) -> f64 {
    segments.iter().rev().find(|s| t >= s.start_s && t < s.end_s).map_or(default, |s| s.value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub person_id: String,
    pub start_ns: i64,
    pub duration_s: f64,
    pub gaze_rate_hz: f64,
    pub pupil_rate_hz: f64,
    pub ecg_rate_hz: f64,
    pub detection_rate_hz: f64,
    pub heart_bpm: f64,
    /// Piecewise overrides of `heart_bpm`.
    pub heart_bpm_segments: Vec<Segment>,
    pub breathing_hz: f64,
    /// Fractional RR modulation depth at the breathing frequency.
    pub rsa_depth: f64,
    pub rr_jitter_ms: f64,
    pub ecg_amplitude_mv: f64,
    pub ecg_noise_mv: f64,
    pub baseline_wander_mv: f64,
    pub mains_mv: f64,
    /// Beat indices rendered at twice the R amplitude.
    pub doubled_beats: Vec<usize>,
    pub pupil_mean_mm: f64,
    pub pupil_segments: Vec<Segment>,
    pub pupil_noise_mm: f64,
    pub gaze_noise: f64,
    pub detection_miss_prob: f64,
    pub scripted_targets: Vec<ScriptedTarget>,
    pub emit_gaze: bool,
    pub emit_pupil: bool,
    pub emit_ecg: bool,
    pub emit_detections: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            person_id: "p1".into(),
            start_ns: 1_700_000_000 * NS_PER_SEC,
            duration_s: 60.0,
            gaze_rate_hz: 100.0,
            pupil_rate_hz: 100.0,
            ecg_rate_hz: 130.0,
            detection_rate_hz: 25.0,
            heart_bpm: 60.0,
            heart_bpm_segments: Vec::new(),
            breathing_hz: 0.25,
            rsa_depth: 0.04,
            rr_jitter_ms: 5.0,
            ecg_amplitude_mv: 1.0,
            ecg_noise_mv: 0.01,
            baseline_wander_mv: 0.05,
            mains_mv: 0.0,
            doubled_beats: Vec::new(),
            pupil_mean_mm: 3.5,
            pupil_segments: Vec::new(),
            pupil_noise_mm: 0.05,
            gaze_noise: 0.004,
            detection_miss_prob: 0.0,
            scripted_targets: Vec::new(),
            emit_gaze: true,
            emit_pupil: true,
            emit_ecg: true,
            emit_detections: true,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidConfig(m.into()));
        let rates = [self.gaze_rate_hz, self.pupil_rate_hz, self.ecg_rate_hz, self.detection_rate_hz];
        if rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return bad("all rates must be positive");
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return bad("duration_s must be positive");
        }
        if !(self.heart_bpm > 0.0) || self.heart_bpm_segments.iter().any(|s| !(s.value > 0.0)) {
            return bad("heart_bpm must be positive");
        }
        if self.start_ns <= 0 {
            return bad("start_ns must be positive");
        }
        PersonId::new(self.person_id.clone()).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    fn t_ns(&self, t_s: f64) -> i64 {
        self.start_ns + (t_s * NS_PER_SEC as f64).round() as i64
    }
}

/// Object geometry at time `t` (seconds from session start).
pub fn scene_layout(t: f64) -> [(ObjectClass, BBox); 4] {
    let b = |cx: f64, cy: f64, w: f64, h: f64| clip_bbox(cx, cy, w, h).expect("layout boxes are inside the frame");
    [
        (
            ObjectClass::Drone,
            b(0.30 + 0.08 * (2.0 * PI * 0.05 * t).sin(), 0.30 + 0.04 * (2.0 * PI * 0.07 * t).cos(), 0.10, 0.07),
        ),
        (ObjectClass::Arm, b(0.66, 0.42, 0.08, 0.20)),
        (ObjectClass::Rover, b(0.66, 0.62, 0.26, 0.14)),
        (ObjectClass::Controller, b(0.50, 0.88, 0.18, 0.12)),
    ]
}

/// Fixation point when looking at nothing.
pub const AWAY_POINT: (f64, f64) = (0.92, 0.08);

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub r_peaks_ns: Vec<i64>,
    pub true_rr_ms: Vec<f64>,
    pub attended: Vec<ScriptedTarget>,
    pub pupil_mean_mm: f64,
}

#[derive(Debug, Clone)]
pub struct SynthSession {
    pub records: Vec<WireRecord>,
    pub manifest: Manifest,
}

struct Beat {
    t: f64,
    rr: f64,
    amplitude: f64,
}

fn beat_times(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Beat> {
    let jitter = Normal::new(0.0, cfg.rr_jitter_ms.max(0.0) / 1000.0).expect("finite sigma");
    let mut beats = Vec::new();
    let mut t = 0.4 + rng.random::<f64>() * 0.3;
    let mut idx = 0;
    while t < cfg.duration_s {
        let base = 60.0 / lookup(&cfg.heart_bpm_segments, t, cfg.heart_bpm);
        let rr = (base * (1.0 + cfg.rsa_depth * (2.0 * PI * cfg.breathing_hz * t).sin()) + jitter.sample(rng))
            .clamp(0.35, 1.9);
        let amplitude = cfg.ecg_amplitude_mv * if cfg.doubled_beats.contains(&idx) { 2.0 } else { 1.0 };
        beats.push(Beat { t, rr, amplitude });
        t += rr;
        idx += 1;
    }
    beats
}

fn gauss(t: f64, mu: f64, sigma: f64) -> f64 {
    let z = (t - mu) / sigma;
    (-0.5 * z * z).exp()
}

fn beat_waveform(b: &Beat, t: f64) -> f64 {
    let a = b.amplitude;
    let t_wave = 0.25 * b.rr.sqrt();
    0.12 * a * gauss(t, b.t - 0.20, 0.025) - 0.12 * a * gauss(t, b.t - 0.03, 0.010) + a * gauss(t, b.t, 0.010)
        - 0.25 * a * gauss(t, b.t + 0.03, 0.010)
        + 0.3 * a * gauss(t, b.t + t_wave, 0.040)
}

fn sample_times(cfg: &SynthConfig, rate: f64) -> impl Iterator<Item = f64> + '_ {
    let n = (cfg.duration_s * rate).floor() as usize;
    (0..n).map(move |i| i as f64 / rate)
}

fn target_at(script: &[ScriptedTarget], t: f64) -> Option<Option<ObjectClass>> {
    script.iter().rev().find(|s| t >= s.start_s && t < s.end_s).map(|s| s.target)
}

pub fn synthesize_session(cfg: &SynthConfig) -> Result<SynthSession, SynthError> {
    cfg.validate()?;
    let person = PersonId::new(cfg.person_id.clone()).expect("validated");
    let mut records: Vec<(i64, u8, WireRecord)> = Vec::new();
    let mut push = |rank: u8, stream: &StreamId, t_ns: i64, payload: Payload| {
        let r = WireRecord::new(stream.clone(), Stamp::host(t_ns), payload).expect("generator emits valid records");
        records.push((t_ns, rank, r));
    };

    // Independent RNG streams per signal.
    let mut ecg_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(4).wrapping_add(1));
    let mut pupil_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(4).wrapping_add(2));
    let mut gaze_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(4).wrapping_add(3));
    let mut det_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(4).wrapping_add(4));

    let beats = beat_times(cfg, &mut ecg_rng);
    let mut manifest =
        Manifest { attended: cfg.scripted_targets.clone(), pupil_mean_mm: cfg.pupil_mean_mm, ..Default::default() };
    // Only beats whose QRS lies fully inside the recording count as truth.
    let truth: Vec<&Beat> = beats.iter().filter(|b| b.t >= 0.1 && b.t <= cfg.duration_s - 0.1).collect();
    manifest.r_peaks_ns = truth.iter().map(|b| cfg.t_ns(b.t)).collect();
    manifest.true_rr_ms = truth.windows(2).map(|w| (w[1].t - w[0].t) * 1000.0).collect();

    if cfg.emit_ecg {
        let stream = StreamId::body(&person, Channel::EcgRaw);
        let noise = Normal::new(0.0, cfg.ecg_noise_mv.max(0.0)).expect("finite sigma");
        let mut first = 0;
        for t in sample_times(cfg, cfg.ecg_rate_hz) {
            while first < beats.len() && beats[first].t < t - 1.0 {
                first += 1;
            }
            let mut v: f64 = beats[first..].iter().take_while(|b| b.t < t + 1.0).map(|b| beat_waveform(b, t)).sum();
            v += cfg.baseline_wander_mv * (2.0 * PI * cfg.breathing_hz * t).sin();
            v += cfg.mains_mv * (2.0 * PI * 50.0 * t).sin();
            v += noise.sample(&mut ecg_rng);
            push(2, &stream, cfg.t_ns(t), Payload::EcgRaw(EcgRaw { mv: v }));
        }
    }

    if cfg.emit_pupil {
        let stream = StreamId::eyes(&person, Channel::PupilRaw);
        let noise = Normal::new(0.0, cfg.pupil_noise_mm.max(0.0)).expect("finite sigma");
        for t in sample_times(cfg, cfg.pupil_rate_hz) {
            let d = (lookup(&cfg.pupil_segments, t, cfg.pupil_mean_mm) + noise.sample(&mut pupil_rng)).max(0.0);
            push(1, &stream, cfg.t_ns(t), Payload::PupilRaw(PupilRaw { diameter_mm: d, eye: Eye::Mean }));
        }
    }

    if cfg.emit_gaze {
        let stream = StreamId::eyes(&person, Channel::Gaze2d);
        let noise = Normal::new(0.0, cfg.gaze_noise.max(0.0)).expect("finite sigma");
        for t in sample_times(cfg, cfg.gaze_rate_hz) {
            let (cx, cy, spread) = match target_at(&cfg.scripted_targets, t).flatten() {
                Some(class) => {
                    let b = scene_layout(t).into_iter().find(|(c, _)| *c == class).expect("class in layout").1;
                    (b.cx, b.cy, 1.0)
                }
                None => (AWAY_POINT.0, AWAY_POINT.1, 1.0),
            };
            let x = (cx + spread * noise.sample(&mut gaze_rng)).clamp(0.0, 1.0);
            let y = (cy + spread * noise.sample(&mut gaze_rng)).clamp(0.0, 1.0);
            push(3, &stream, cfg.t_ns(t), Payload::Gaze2d(Gaze2d { x, y, valid: true }));
        }
    }

    if cfg.emit_detections {
        let stream = StreamId::eyes(&person, Channel::Detections);
        for (seq, t) in sample_times(cfg, cfg.detection_rate_hz).enumerate() {
            let items = scene_layout(t)
                .into_iter()
                .filter_map(|(class, bbox)| {
                    let miss = det_rng.random::<f64>() < cfg.detection_miss_prob;
                    let confidence = 0.80 + 0.19 * det_rng.random::<f64>();
                    (!miss).then_some(Detection { class, confidence, bbox })
                })
                .collect();
            push(0, &stream, cfg.t_ns(t), Payload::Detections(Detections { frame_seq: seq as u64, items }));
        }
    }

    records.sort_by_key(|(t, rank, _)| (*t, *rank));
    Ok(SynthSession { records: records.into_iter().map(|(_, _, r)| r).collect(), manifest })
}
