use gazefuse_core::ecg::{clean_ecg, detect_r_peaks, ecg_windows, EcgConfig};
use gazefuse_core::model::{EcgSample, Stamp, NS_PER_MS};
use gazefuse_core::synth::{synthesize_session, SynthConfig};
use proptest::prelude::*;

const RATE: f64 = 130.0;

fn ecg_session(seed: u64, bpm: f64, duration_s: f64) -> (Vec<EcgSample>, Vec<i64>) {
    ecg_session_with(SynthConfig { seed, heart_bpm: bpm, duration_s, ..ecg_only() })
}

fn ecg_only() -> SynthConfig {
    SynthConfig { emit_gaze: false, emit_pupil: false, emit_detections: false, ecg_rate_hz: RATE, ..Default::default() }
}

fn ecg_session_with(cfg: SynthConfig) -> (Vec<EcgSample>, Vec<i64>) {
    let s = synthesize_session(&cfg).unwrap();
    let samples = s.records.iter().filter_map(|r| r.ecg()).collect();
    (samples, s.manifest.r_peaks_ns)
}

fn detect(samples: &[EcgSample]) -> Vec<i64> {
    detect_r_peaks(&clean_ecg(samples, RATE).unwrap(), RATE).unwrap()
}

/// Greedy one-to-one matching within `tol_ns`; returns (matched, abs errors).
fn match_peaks(truth: &[i64], found: &[i64], tol_ns: i64) -> (usize, Vec<i64>) {
    let mut used = vec![false; found.len()];
    let mut errors = Vec::new();
    for &t in truth {
        let best = found
            .iter()
            .enumerate()
            .filter(|(i, f)| !used[*i] && (**f - t).abs() <= tol_ns)
            .min_by_key(|(_, f)| (**f - t).abs());
        if let Some((i, f)) = best {
            used[i] = true;
            errors.push((f - t).abs());
        }
    }
    (errors.len(), errors)
}

#[test]
fn sixty_bpm_thirty_seconds_matches_manifest() {
    let (samples, truth) = ecg_session(0, 60.0, 30.0);
    let found = detect(&samples);
    assert!((29..=31).contains(&found.len()), "{} peaks", found.len());
    let (matched, _) = match_peaks(&truth, &found, 20 * NS_PER_MS);
    assert_eq!(matched, found.len());
    assert_eq!(matched, truth.len());
}

#[test]
fn doubled_beat_keeps_peak_count() {
    let base = SynthConfig { heart_bpm: 60.0, duration_s: 30.0, ..ecg_only() };
    let (plain, _) = ecg_session_with(base.clone());
    let (doubled, truth) = ecg_session_with(SynthConfig { doubled_beats: vec![12], ..base });
    let a = detect(&plain);
    let b = detect(&doubled);
    assert_eq!(a.len(), b.len());
    assert_eq!(match_peaks(&truth, &b, 20 * NS_PER_MS).0, truth.len());
}

#[test]
fn r_peak_energy_preserved_by_cleaning() {
    let (samples, truth) = ecg_session(3, 70.0, 30.0);
    let cleaned = clean_ecg(&samples, RATE).unwrap();
    let near = |t: i64, ms: i64| truth.iter().any(|p| (t - p).abs() <= ms * NS_PER_MS);
    let rms = |xs: Vec<f64>| (xs.iter().map(|v| v * v).sum::<f64>() / xs.len() as f64).sqrt();
    let peak: Vec<f64> =
        cleaned.stamps_ns.iter().zip(&cleaned.values).filter(|(t, _)| near(**t, 40)).map(|(_, v)| *v).collect();
    let base: Vec<f64> =
        cleaned.stamps_ns.iter().zip(&cleaned.values).filter(|(t, _)| !near(**t, 150)).map(|(_, v)| *v).collect();
    let (p, b) = (rms(peak), rms(base));
    assert!(p >= 3.0 * b, "peak rms {p} base rms {b}");
}

#[test]
fn f1_across_rates_and_seeds() {
    let (mut tp, mut n_found, mut n_truth) = (0usize, 0usize, 0usize);
    let mut errors = Vec::new();
    for bpm in [50.0, 60.0, 80.0, 100.0, 120.0] {
        for seed in 0..10 {
            let (samples, truth) = ecg_session(seed, bpm, 60.0);
            let found = detect(&samples);
            let (m, e) = match_peaks(&truth, &found, 20 * NS_PER_MS);
            tp += m;
            n_found += found.len();
            n_truth += truth.len();
            errors.extend(e);
        }
    }
    let precision = tp as f64 / n_found as f64;
    let recall = tp as f64 / n_truth as f64;
    let f1 = 2.0 * precision * recall / (precision + recall);
    assert!(f1 >= 0.99, "f1 {f1} (p {precision}, r {recall})");
    assert!(errors.iter().all(|e| *e <= 20 * NS_PER_MS));
}

#[test]
fn sixty_five_bpm_windows_within_two_bpm() {
    let cfg = SynthConfig { heart_bpm: 65.0, duration_s: 60.0, rsa_depth: 0.0, rr_jitter_ms: 2.0, ..ecg_only() };
    let (samples, _) = ecg_session_with(cfg);
    let windows = ecg_windows(&samples, &EcgConfig::new(RATE)).unwrap();
    assert_eq!(windows.len(), 31);
    for w in &windows {
        let bpm = w.bpm.expect("clean window has bpm");
        assert!((bpm - 65.0).abs() <= 2.0, "{bpm}");
    }
}

#[test]
fn breathing_rate_recovered_from_rsa() {
    let cfg = SynthConfig { heart_bpm: 70.0, duration_s: 60.0, rsa_depth: 0.06, breathing_hz: 0.25, ..ecg_only() };
    let (samples, _) = ecg_session_with(cfg);
    let windows = ecg_windows(&samples, &EcgConfig::new(RATE)).unwrap();
    let rates: Vec<f64> = windows.iter().filter_map(|w| w.breathing_rate_hz).collect();
    assert!(rates.len() * 10 >= windows.len() * 9, "{} of {}", rates.len(), windows.len());
    assert!(rates.iter().all(|f| (f - 0.25).abs() <= 0.03), "{rates:?}");
}

fn transform(samples: &[EcgSample], scale: f64, shift_ns: i64) -> Vec<EcgSample> {
    samples
        .iter()
        .map(|s| EcgSample {
            stamp: Stamp { host_ns: s.stamp.host_ns + shift_ns, device_ns: s.stamp.device_ns.map(|d| d + shift_ns) },
            mv: s.mv * scale,
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn peaks_are_time_shift_equivariant(seed in 0u64..50, shift_ms in -100_000i64..100_000) {
        let (samples, _) = ecg_session(seed, 75.0, 20.0);
        let shift = shift_ms * NS_PER_MS + 17;
        let base = detect(&samples);
        let moved = detect(&transform(&samples, 1.0, shift));
        prop_assert_eq!(moved, base.iter().map(|t| t + shift).collect::<Vec<_>>());
    }

    #[test]
    fn peaks_are_amplitude_scale_invariant(seed in 0u64..50, log_c in -6.0f64..6.0) {
        let (samples, _) = ecg_session(seed, 75.0, 20.0);
        let c = log_c.exp();
        prop_assert_eq!(detect(&transform(&samples, c, 0)), detect(&samples));
    }
}
