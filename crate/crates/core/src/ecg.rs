//! ECG processing over 30 s trailing windows: cleaning, R-peak detection,
//! RR intervals and time-domain HRV features, breathing rate.
//!
//! The QRS detector is the classical derivative / squaring / moving-window
//! integration scheme with adaptive signal and noise levels:
//!
//! 1. centered derivative of the cleaned signal
//! 2. squaring
//! 3. 150 ms moving-window integration
//! 4. adaptive threshold `NPKI + 0.25 (SPKI - NPKI)` with search-back at half
//!    threshold after 1.66 mean RR without a beat
//! 5. 250 ms refractory period
//! 6. refinement to the cleaned-signal maximum within ±50 ms, then to the
//!    vertex of a parabola through it and its neighbours

use std::collections::VecDeque;
use std::f64::consts::PI;

use thiserror::Error;

use crate::dsp::{Cascade, Coefficients};
use crate::model::{EcgSample, Stamp, NS_PER_MS, NS_PER_SEC};

pub const WINDOW_NS: i64 = 30 * NS_PER_SEC;
pub const HOP_NS: i64 = NS_PER_SEC;
pub const MIN_QUALITY: f64 = 0.8;
pub const RR_MIN_MS: f64 = 300.0;
pub const RR_MAX_MS: f64 = 2000.0;
pub const BREATHING_MIN_HZ: f64 = 0.1;
pub const BREATHING_MAX_HZ: f64 = 0.5;

const INTEGRATION_S: f64 = 0.150;
const REFRACTORY_S: f64 = 0.250;
const REFINE_S: f64 = 0.050;
const LEARNING_S: f64 = 2.0;
const MIN_DETECT_S: f64 = 5.0;
const TACHOGRAM_HZ: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EcgError {
    #[error("ECG rate {0} Hz is below 100 Hz")]
    BadRate(f64),
    #[error("detection window of {0:.2} s is shorter than 5 s")]
    WindowTooShort(f64),
    #[error("not enough beats")]
    NotEnoughBeats,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcgConfig {
    pub rate_hz: f64,
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    /// Mains notch frequency (50 or 60 Hz); `None` disables it.
    pub notch_hz: Option<f64>,
    pub notch_q: f64,
}

impl EcgConfig {
    pub fn new(rate_hz: f64) -> Self {
        EcgConfig { rate_hz, band_low_hz: 5.0, band_high_hz: 15.0, notch_hz: Some(50.0), notch_q: 30.0 }
    }

    fn cascade(&self) -> Cascade {
        let mut sections = vec![
            Coefficients::butter_highpass(self.band_low_hz, self.rate_hz),
            Coefficients::butter_lowpass(self.band_high_hz, self.rate_hz),
        ];
        if let Some(f) = self.notch_hz.filter(|f| *f < 0.45 * self.rate_hz) {
            sections.push(Coefficients::notch(f, self.notch_q, self.rate_hz));
        }
        Cascade::new(sections)
    }

    /// Samples by which the cleaned output is advanced to undo the band-pass
    /// delay: the lag of the response peak to a QRS-width (10 ms) Gaussian pulse.
    pub fn delay_samples(&self) -> usize {
        let n = (2.0 * self.rate_hz).ceil() as usize;
        let center = n / 2;
        let sigma = 0.010 * self.rate_hz;
        let mut filter = self.cascade();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let z = (i as f64 - center as f64) / sigma;
                filter.process((-0.5 * z * z).exp())
            })
            .collect();
        let peak = (0..n).max_by(|a, b| y[*a].total_cmp(&y[*b])).unwrap_or(center);
        peak.saturating_sub(center)
    }
}

/// Cleaned signal aligned to the input stamps.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CleanedEcg {
    pub stamps_ns: Vec<i64>,
    pub values: Vec<f64>,
}

impl CleanedEcg {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn clean_ecg_with(samples: &[EcgSample], cfg: &EcgConfig) -> Result<CleanedEcg, EcgError> {
    if !(cfg.rate_hz >= 100.0) {
        return Err(EcgError::BadRate(cfg.rate_hz));
    }
    let mut filter = cfg.cascade();
    if let Some(first) = samples.first() {
        filter.prime(first.mv);
    }
    let raw: Vec<f64> = samples.iter().map(|s| filter.process(s.mv)).collect();
    let delay = cfg.delay_samples().min(raw.len().saturating_sub(1));
    let values = if raw.is_empty() {
        raw
    } else {
        let tail = *raw.last().expect("non-empty");
        raw[delay..].iter().copied().chain(std::iter::repeat_n(tail, delay)).collect()
    };
    Ok(CleanedEcg { stamps_ns: samples.iter().map(|s| s.stamp.host_ns).collect(), values })
}

/// Band-pass 5–15 Hz plus 50 Hz notch.
pub fn clean_ecg(samples: &[EcgSample], rate_hz: f64) -> Result<CleanedEcg, EcgError> {
    clean_ecg_with(samples, &EcgConfig::new(rate_hz))
}

fn moving_integration(x: &[f64], width: usize) -> Vec<f64> {
    let n = x.len();
    let half = width / 2;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().expect("seeded") + v);
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            (prefix[hi] - prefix[lo]) / width as f64
        })
        .collect()
}

/// Detector intermediate: the integrated energy signal.
pub fn integrated_energy(cleaned: &CleanedEcg, rate_hz: f64) -> Vec<f64> {
    let x = &cleaned.values;
    let n = x.len();
    let mut sq = vec![0.0; n];
    for i in 1..n.saturating_sub(1) {
        let d = (x[i + 1] - x[i - 1]) * rate_hz / 2.0;
        sq[i] = d * d;
    }
    let width = ((INTEGRATION_S * rate_hz).round() as usize).max(1);
    moving_integration(&sq, width)
}

struct Levels {
    spki: f64,
    npki: f64,
}

impl Levels {
    fn threshold(&self) -> f64 {
        self.npki + 0.25 * (self.spki - self.npki)
    }
}

/// Returns R-peak stamps (host ns) in increasing order.
pub fn detect_r_peaks(cleaned: &CleanedEcg, rate_hz: f64) -> Result<Vec<i64>, EcgError> {
    let n = cleaned.len();
    let span_s = match (cleaned.stamps_ns.first(), cleaned.stamps_ns.last()) {
        (Some(a), Some(b)) => (b - a) as f64 / NS_PER_SEC as f64,
        _ => 0.0,
    };
    if span_s < MIN_DETECT_S {
        return Err(EcgError::WindowTooShort(span_s));
    }
    let m = integrated_energy(cleaned, rate_hz);
    let refractory = (REFRACTORY_S * rate_hz).round() as usize;
    let learn = ((LEARNING_S * rate_hz) as usize).min(n);
    let max0 = m[..learn].iter().copied().fold(0.0f64, f64::max);
    let mean0 = m[..learn].iter().sum::<f64>() / learn as f64;
    let mut levels = Levels { spki: max0 / 3.0, npki: mean0 / 2.0 };
    if !(levels.spki > 0.0) {
        return Ok(Vec::new());
    }

    let candidates: Vec<usize> = (1..n.saturating_sub(1)).filter(|&i| m[i] > m[i - 1] && m[i] >= m[i + 1]).collect();

    let mut peaks: Vec<usize> = Vec::new();
    let mut recent_rr: VecDeque<usize> = VecDeque::with_capacity(8);
    // Noise candidates since the last accepted beat, for search-back.
    let mut since_last: Vec<usize> = Vec::new();

    let accept = |i: usize, peaks: &mut Vec<usize>, recent_rr: &mut VecDeque<usize>| {
        if let Some(&last) = peaks.last() {
            if recent_rr.len() == 8 {
                recent_rr.pop_front();
            }
            recent_rr.push_back(i - last);
        }
        peaks.push(i);
    };

    for &c in &candidates {
        if let (Some(&last), false) = (peaks.last(), recent_rr.is_empty()) {
            let rr_avg = recent_rr.iter().sum::<usize>() as f64 / recent_rr.len() as f64;
            if (c - last) as f64 > 1.66 * rr_avg {
                let thr2 = 0.5 * levels.threshold();
                let best = since_last
                    .iter()
                    .copied()
                    .filter(|&j| j > last + refractory && c > j + refractory && m[j] > thr2)
                    .max_by(|&a, &b| m[a].total_cmp(&m[b]).then(b.cmp(&a)));
                if let Some(j) = best {
                    levels.spki = 0.25 * m[j] + 0.75 * levels.spki;
                    accept(j, &mut peaks, &mut recent_rr);
                    since_last.retain(|&k| k > j);
                }
            }
        }

        let in_refractory = peaks.last().is_some_and(|&last| c - last <= refractory);
        if in_refractory {
            let last = *peaks.last().expect("checked");
            if m[c] > m[last] && m[c] > levels.threshold() {
                // Larger energy inside the refractory period: the earlier
                // candidate was a shoulder of this complex.
                peaks.pop();
                if let Some(&prev) = peaks.last() {
                    recent_rr.pop_back();
                    if recent_rr.len() == 8 {
                        recent_rr.pop_front();
                    }
                    recent_rr.push_back(c - prev);
                }
                peaks.push(c);
                levels.spki = 0.125 * m[c] + 0.875 * levels.spki;
            }
            continue;
        }
        if m[c] > levels.threshold() {
            levels.spki = 0.125 * m[c] + 0.875 * levels.spki;
            accept(c, &mut peaks, &mut recent_rr);
            since_last.clear();
        } else {
            levels.npki = 0.125 * m[c] + 0.875 * levels.npki;
            since_last.push(c);
        }
    }

    let radius = (REFINE_S * rate_hz).round() as usize;
    let x = &cleaned.values;
    let mut out: Vec<i64> = peaks
        .iter()
        .map(|&p| {
            let lo = p.saturating_sub(radius);
            let hi = (p + radius).min(n - 1);
            let best = (lo..=hi).max_by(|&a, &b| x[a].total_cmp(&x[b]).then(b.cmp(&a))).expect("non-empty range");
            // Parabolic vertex through the maximum and its neighbours; without
            // it RR is quantized to the sample period.
            if best == 0 || best + 1 >= n {
                return cleaned.stamps_ns[best];
            }
            let (y0, y1, y2) = (x[best - 1], x[best], x[best + 1]);
            let curvature = y0 - 2.0 * y1 + y2;
            if !(curvature < 0.0) {
                return cleaned.stamps_ns[best];
            }
            let delta = (0.5 * (y0 - y2) / curvature).clamp(-0.5, 0.5);
            let half_span = (cleaned.stamps_ns[best + 1] - cleaned.stamps_ns[best - 1]) as f64 / 2.0;
            cleaned.stamps_ns[best] + (delta * half_span).round() as i64
        })
        .collect();
    out.dedup();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RrSeries {
    pub peak_times_ns: Vec<i64>,
    /// Retained intervals, in milliseconds.
    pub rr_ms: Vec<f64>,
    /// Stamp of the peak closing each retained interval.
    pub rr_end_ns: Vec<i64>,
    /// Intervals removed by the physiological gate.
    pub artifacts: usize,
}

/// Successive differences, gated to `[300, 2000]` ms.
///
/// `rr_ms.len() + artifacts == peak_times_ns.len() - 1` for non-empty input.
pub fn rr_from_peaks(peak_times_ns: &[i64]) -> RrSeries {
    let mut rr = RrSeries { peak_times_ns: peak_times_ns.to_vec(), ..Default::default() };
    for w in peak_times_ns.windows(2) {
        let ms = (w[1] - w[0]) as f64 / NS_PER_MS as f64;
        if (RR_MIN_MS..=RR_MAX_MS).contains(&ms) {
            rr.rr_ms.push(ms);
            rr.rr_end_ns.push(w[1]);
        } else {
            rr.artifacts += 1;
        }
    }
    rr
}

pub fn mean_bpm(rr_ms: &[f64]) -> Result<f64, EcgError> {
    if rr_ms.is_empty() {
        return Err(EcgError::NotEnoughBeats);
    }
    Ok(60_000.0 / (rr_ms.iter().sum::<f64>() / rr_ms.len() as f64))
}

/// Population standard deviation of RR.
pub fn sdnn(rr_ms: &[f64]) -> Result<f64, EcgError> {
    if rr_ms.len() < 2 {
        return Err(EcgError::NotEnoughBeats);
    }
    let n = rr_ms.len() as f64;
    let mean = rr_ms.iter().sum::<f64>() / n;
    Ok((rr_ms.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt())
}

pub fn rmssd(rr_ms: &[f64]) -> Result<f64, EcgError> {
    if rr_ms.len() < 2 {
        return Err(EcgError::NotEnoughBeats);
    }
    let sq: f64 = rr_ms.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum();
    Ok((sq / (rr_ms.len() - 1) as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HrvFeatures {
    pub bpm: f64,
    pub sdnn_ms: f64,
    pub rmssd_ms: f64,
}

pub fn hrv_features(rr: &RrSeries) -> Result<HrvFeatures, EcgError> {
    Ok(HrvFeatures { bpm: mean_bpm(&rr.rr_ms)?, sdnn_ms: sdnn(&rr.rr_ms)?, rmssd_ms: rmssd(&rr.rr_ms)? })
}

/// Uniformly resampled RR series (linear interpolation), as `(t0_ns, values)`.
pub fn tachogram(rr: &RrSeries, rate_hz: f64) -> Vec<f64> {
    let (Some(&t0), Some(&t1)) = (rr.rr_end_ns.first(), rr.rr_end_ns.last()) else {
        return Vec::new();
    };
    let step = NS_PER_SEC as f64 / rate_hz;
    let n = ((t1 - t0) as f64 / step).floor() as usize + 1;
    let mut k = 0;
    (0..n)
        .map(|i| {
            let t = t0 as f64 + i as f64 * step;
            while k + 1 < rr.rr_end_ns.len() - 1 && (rr.rr_end_ns[k + 1] as f64) < t {
                k += 1;
            }
            if rr.rr_end_ns.len() == 1 {
                return rr.rr_ms[0];
            }
            let (ta, tb) = (rr.rr_end_ns[k] as f64, rr.rr_end_ns[k + 1] as f64);
            let f = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
            rr.rr_ms[k] + f * (rr.rr_ms[k + 1] - rr.rr_ms[k])
        })
        .collect()
}

/// Hann-windowed periodogram of `x` (sampled at `rate_hz`) at frequency `f`.
pub fn periodogram_at(x: &[f64], rate_hz: f64, f: f64) -> f64 {
    let n = x.len();
    let (mut re, mut im) = (0.0, 0.0);
    for (i, v) in x.iter().enumerate() {
        let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1).max(1) as f64).cos();
        let (s, c) = (2.0 * PI * f * i as f64 / rate_hz).sin_cos();
        re += v * w * c;
        im -= v * w * s;
    }
    (re * re + im * im) / n as f64
}

const SPECTRUM_LOW_HZ: f64 = 0.04;
const SPECTRUM_HIGH_HZ: f64 = 1.0;
const SPECTRUM_STEP_HZ: f64 = 0.005;
const MIN_BEATS: usize = 10;
/// Below this the tachogram holds only residual peak-timing error.
const MIN_TACHOGRAM_RMS_MS: f64 = 1.0;

/// Respiratory rate from RR modulation, or `None` when no clear in-band peak.
///
/// The tachogram (4 Hz) is mean-detrended and Hann-windowed; its periodogram
/// is evaluated on a 0.005 Hz grid over 0.04–1 Hz. The global peak must fall
/// inside 0.1–0.5 Hz and exceed twice the median in-band power. A tachogram
/// with under 1 ms RMS variation counts as unmodulated.
pub fn breathing_rate(rr: &RrSeries, window_span_s: f64) -> Option<f64> {
    if window_span_s < 30.0 - 1e-9 || rr.rr_ms.len() + 1 < MIN_BEATS {
        return None;
    }
    let mut x = tachogram(rr, TACHOGRAM_HZ);
    if x.len() < 8 {
        return None;
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter_mut().for_each(|v| *v -= mean);
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
    if rms < MIN_TACHOGRAM_RMS_MS {
        return None;
    }
    let steps = ((SPECTRUM_HIGH_HZ - SPECTRUM_LOW_HZ) / SPECTRUM_STEP_HZ).round() as usize;
    let spectrum: Vec<(f64, f64)> = (0..=steps)
        .map(|i| SPECTRUM_LOW_HZ + i as f64 * SPECTRUM_STEP_HZ)
        .map(|f| (f, periodogram_at(&x, TACHOGRAM_HZ, f)))
        .collect();
    let &(peak_f, peak_p) = spectrum.iter().max_by(|a, b| a.1.total_cmp(&b.1))?;
    let in_band = |f: f64| (BREATHING_MIN_HZ - 1e-12..=BREATHING_MAX_HZ + 1e-12).contains(&f);
    if !in_band(peak_f) {
        return None;
    }
    let mut band: Vec<f64> = spectrum.iter().filter(|(f, _)| in_band(*f)).map(|(_, p)| *p).collect();
    let median = crate::pupil::median(&mut band)?;
    (peak_p >= 2.0 * median).then_some(peak_f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HrvWindow {
    pub window_start_ns: i64,
    pub window_end: Stamp,
    pub rr: RrSeries,
    pub bpm: Option<f64>,
    pub sdnn_ms: Option<f64>,
    pub rmssd_ms: Option<f64>,
    pub breathing_rate_hz: Option<f64>,
    pub quality: f64,
}

/// Computes features for one window's samples. `quality` below 0.8 leaves
/// every feature absent.
pub fn window_features(samples: &[EcgSample], cfg: &EcgConfig, start_ns: i64, end_ns: i64) -> HrvWindow {
    let span_ns = end_ns - start_ns;
    let quality = (samples.len() as f64 / cfg.rate_hz * NS_PER_SEC as f64 / span_ns as f64).min(1.0);
    let mut w = HrvWindow {
        window_start_ns: start_ns,
        window_end: Stamp::host(end_ns),
        rr: RrSeries::default(),
        bpm: None,
        sdnn_ms: None,
        rmssd_ms: None,
        breathing_rate_hz: None,
        quality,
    };
    if quality < MIN_QUALITY {
        return w;
    }
    let Ok(peaks) = clean_ecg_with(samples, cfg).and_then(|c| detect_r_peaks(&c, cfg.rate_hz)) else {
        return w;
    };
    w.rr = rr_from_peaks(&peaks);
    w.bpm = mean_bpm(&w.rr.rr_ms).ok();
    w.sdnn_ms = sdnn(&w.rr.rr_ms).ok();
    w.rmssd_ms = rmssd(&w.rr.rr_ms).ok();
    w.breathing_rate_hz = breathing_rate(&w.rr, span_ns as f64 / NS_PER_SEC as f64);
    w
}

/// Window boundaries due for computation; features may be computed elsewhere.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowJob {
    pub start_ns: i64,
    pub end_ns: i64,
    pub samples: Vec<EcgSample>,
}

/// Trailing 30 s window with 1 s hop, anchored at the first sample.
#[derive(Debug, Clone)]
pub struct EcgWindower {
    cfg: EcgConfig,
    buffer: VecDeque<EcgSample>,
    next_end_ns: Option<i64>,
    last_ns: Option<i64>,
}

impl EcgWindower {
    pub fn new(cfg: EcgConfig) -> Result<Self, EcgError> {
        if !(cfg.rate_hz >= 100.0) {
            return Err(EcgError::BadRate(cfg.rate_hz));
        }
        Ok(EcgWindower { cfg, buffer: VecDeque::new(), next_end_ns: None, last_ns: None })
    }

    pub fn config(&self) -> &EcgConfig {
        &self.cfg
    }

    fn take_window(&mut self, end: i64) -> WindowJob {
        let start = end - WINDOW_NS;
        while self.buffer.front().is_some_and(|s| s.stamp.host_ns <= start) {
            self.buffer.pop_front();
        }
        let samples = self.buffer.iter().filter(|s| s.stamp.host_ns <= end).copied().collect();
        WindowJob { start_ns: start, end_ns: end, samples }
    }

    /// Feeds one sample; returns the windows (start, end] closed by it.
    pub fn push(&mut self, s: EcgSample) -> Vec<WindowJob> {
        let t = s.stamp.host_ns;
        let next = *self.next_end_ns.get_or_insert(t + WINDOW_NS);
        let mut jobs = Vec::new();
        self.buffer.push_back(s);
        self.last_ns = Some(t);
        let mut end = next;
        while t >= end {
            jobs.push(self.take_window(end));
            end += HOP_NS;
        }
        self.next_end_ns = Some(end);
        jobs
    }

    /// Closes the pending window if the stream reached its end to within 1.5 sample periods.
    pub fn finish(&mut self) -> Option<WindowJob> {
        let (end, last) = (self.next_end_ns?, self.last_ns?);
        let slack = (1.5 * NS_PER_SEC as f64 / self.cfg.rate_hz) as i64;
        if last + slack >= end {
            self.next_end_ns = Some(end + HOP_NS);
            Some(self.take_window(end))
        } else {
            None
        }
    }
}

pub fn ecg_windows(samples: &[EcgSample], cfg: &EcgConfig) -> Result<Vec<HrvWindow>, EcgError> {
    let mut w = EcgWindower::new(*cfg)?;
    let mut jobs: Vec<WindowJob> = samples.iter().flat_map(|s| w.push(*s)).collect();
    jobs.extend(w.finish());
    Ok(jobs.iter().map(|j| window_features(&j.samples, cfg, j.start_ns, j.end_ns)).collect())
}
