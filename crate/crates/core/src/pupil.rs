//! Pupil processing: outlier gate, 4 Hz causal low-pass, baseline-median
//! subtraction and 1 s trailing-window statistics.

use std::collections::VecDeque;

use thiserror::Error;

use crate::dsp::{Biquad, Coefficients};
use crate::model::{PupilSample, Stamp, NS_PER_SEC};

pub const GATE_MIN_MM: f64 = 1.0;
pub const GATE_MAX_MM: f64 = 9.0;
pub const LOWPASS_CUTOFF_HZ: f64 = 4.0;
pub const MIN_BASELINE_S: f64 = 30.0;
pub const WINDOW_NS: i64 = NS_PER_SEC;
pub const DEFAULT_GAP_RESET_NS: i64 = NS_PER_SEC / 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PupilError {
    #[error("sampling rate {0} Hz must exceed 8 Hz")]
    BadRate(f64),
    #[error("baseline spans {span_s:.1} s, need at least 30 s")]
    BaselineTooShort { span_s: f64 },
    #[error("baseline has no accepted samples")]
    BaselineEmpty,
    #[error("no baseline recorded")]
    NoBaseline,
}

/// Accepts `1 < d < 9` mm, strict on both ends.
pub fn gate_accepts(diameter_mm: f64) -> bool {
    diameter_mm > GATE_MIN_MM && diameter_mm < GATE_MAX_MM
}

#[derive(Debug, Default, Clone)]
pub struct PupilGate {
    pub accepted: u64,
    pub rejected: u64,
}

impl PupilGate {
    pub fn gate(&mut self, s: PupilSample) -> Option<PupilSample> {
        if gate_accepts(s.diameter_mm) {
            self.accepted += 1;
            Some(s)
        } else {
            self.rejected += 1;
            None
        }
    }
}

pub fn gate_pupil(s: PupilSample) -> Option<PupilSample> {
    gate_accepts(s.diameter_mm).then_some(s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LowpassedSample {
    pub stamp: Stamp,
    pub d_lp_mm: f64,
}

/// Causal second-order Butterworth at 4 Hz. The state is re-primed with the
/// first sample after any gap longer than `gap_reset_ns`.
#[derive(Debug, Clone)]
pub struct PupilLowpass {
    filter: Biquad,
    gap_reset_ns: i64,
    last_ns: Option<i64>,
    pub resets: u64,
}

impl PupilLowpass {
    pub fn new(nominal_rate_hz: f64) -> Result<Self, PupilError> {
        Self::with_gap(nominal_rate_hz, DEFAULT_GAP_RESET_NS)
    }

    pub fn with_gap(nominal_rate_hz: f64, gap_reset_ns: i64) -> Result<Self, PupilError> {
        if !(nominal_rate_hz > 2.0 * LOWPASS_CUTOFF_HZ) || !nominal_rate_hz.is_finite() {
            return Err(PupilError::BadRate(nominal_rate_hz));
        }
        Ok(PupilLowpass {
            filter: Biquad::new(Coefficients::butter_lowpass(LOWPASS_CUTOFF_HZ, nominal_rate_hz)),
            gap_reset_ns,
            last_ns: None,
            resets: 0,
        })
    }

    pub fn coefficients(&self) -> Coefficients {
        self.filter.coefficients()
    }

    pub fn process(&mut self, s: &PupilSample) -> LowpassedSample {
        let t = s.stamp.host_ns;
        let restart = match self.last_ns {
            None => true,
            Some(last) => t - last > self.gap_reset_ns,
        };
        if restart {
            if self.last_ns.is_some() {
                self.resets += 1;
            }
            self.filter.prime(s.diameter_mm);
        }
        self.last_ns = Some(t);
        LowpassedSample { stamp: s.stamp, d_lp_mm: self.filter.process(s.diameter_mm) }
    }
}

pub fn lowpass_pupil(samples: &[PupilSample], nominal_rate_hz: f64) -> Result<Vec<LowpassedSample>, PupilError> {
    let mut lp = PupilLowpass::new(nominal_rate_hz)?;
    Ok(samples.iter().map(|s| lp.process(s)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PupilBaseline {
    pub median_mm: f64,
    pub n_samples: usize,
    pub span_s: f64,
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 { values[n / 2] } else { (values[n / 2 - 1] + values[n / 2]) / 2.0 })
}

/// Collects calibration samples; gating happens on push.
#[derive(Debug, Default, Clone)]
pub struct BaselineAccumulator {
    values: Vec<f64>,
    first_ns: Option<i64>,
    last_ns: Option<i64>,
}

impl BaselineAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, s: &PupilSample) {
        if !gate_accepts(s.diameter_mm) {
            return;
        }
        let t = s.stamp.host_ns;
        self.first_ns.get_or_insert(t);
        self.last_ns = Some(t);
        self.values.push(s.diameter_mm);
    }

    pub fn span_s(&self) -> f64 {
        match (self.first_ns, self.last_ns) {
            (Some(a), Some(b)) => (b - a) as f64 / NS_PER_SEC as f64,
            _ => 0.0,
        }
    }

    pub fn finalize(&self) -> Result<PupilBaseline, PupilError> {
        if self.values.is_empty() {
            return Err(PupilError::BaselineEmpty);
        }
        let span_s = self.span_s();
        if span_s < MIN_BASELINE_S {
            return Err(PupilError::BaselineTooShort { span_s });
        }
        let mut v = self.values.clone();
        Ok(PupilBaseline { median_mm: median(&mut v).expect("non-empty"), n_samples: v.len(), span_s })
    }
}

pub fn baseline_median(samples: &[PupilSample]) -> Result<PupilBaseline, PupilError> {
    let mut acc = BaselineAccumulator::new();
    samples.iter().for_each(|s| acc.push(s));
    acc.finalize()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilteredPupilSample {
    pub stamp: Stamp,
    pub d_lp_mm: f64,
    pub d_filtered_mm: f64,
}

pub fn subtract_baseline(s: &LowpassedSample, baseline: &PupilBaseline) -> FilteredPupilSample {
    FilteredPupilSample { stamp: s.stamp, d_lp_mm: s.d_lp_mm, d_filtered_mm: s.d_lp_mm - baseline.median_mm }
}

pub fn filter_pupil(
    samples: &[LowpassedSample],
    baseline: Option<&PupilBaseline>,
) -> Result<Vec<FilteredPupilSample>, PupilError> {
    let baseline = baseline.ok_or(PupilError::NoBaseline)?;
    Ok(samples.iter().map(|s| subtract_baseline(s, baseline)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PupilWindowStats {
    pub window_end: Stamp,
    pub mean_mm: f64,
    pub variance_mm2: f64,
    pub n: usize,
}

pub fn mean_and_population_variance(values: impl Iterator<Item = f64> + Clone) -> Option<(f64, f64, usize)> {
    let n = values.clone().count();
    if n == 0 {
        return None;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    Some((mean, var, n))
}

/// Trailing 1 s window over `d_filtered`; one emission per sample.
#[derive(Debug, Clone, Default)]
pub struct PupilWindow {
    window: VecDeque<(i64, f64)>,
}

impl PupilWindow {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, s: &FilteredPupilSample) -> PupilWindowStats {
        let t = s.stamp.host_ns;
        self.window.push_back((t, s.d_filtered_mm));
        while let Some(&(front, _)) = self.window.front() {
            if front <= t - WINDOW_NS {
                self.window.pop_front();
            } else {
                break;
            }
        }
        let (mean_mm, variance_mm2, n) =
            mean_and_population_variance(self.window.iter().map(|&(_, v)| v)).expect("window holds current sample");
        PupilWindowStats { window_end: s.stamp, mean_mm, variance_mm2, n }
    }
}

pub fn pupil_window_stats(samples: &[FilteredPupilSample]) -> Vec<PupilWindowStats> {
    let mut w = PupilWindow::new();
    samples.iter().map(|s| w.push(s)).collect()
}

/// Whole chain for one (person, eye) stream.
#[derive(Debug, Clone)]
pub struct PupilProcessor {
    pub gate: PupilGate,
    lowpass: PupilLowpass,
    baseline: Option<PupilBaseline>,
    calibration: Option<BaselineAccumulator>,
    window: PupilWindow,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PupilOutput {
    pub lowpassed: LowpassedSample,
    pub filtered: Option<FilteredPupilSample>,
    pub stats: Option<PupilWindowStats>,
}

impl PupilProcessor {
    pub fn new(nominal_rate_hz: f64) -> Result<Self, PupilError> {
        Ok(PupilProcessor {
            gate: PupilGate::default(),
            lowpass: PupilLowpass::new(nominal_rate_hz)?,
            baseline: None,
            calibration: None,
            window: PupilWindow::new(),
        })
    }

    pub fn begin_baseline(&mut self) {
        self.calibration = Some(BaselineAccumulator::new());
    }

    /// Ends calibration; the previous baseline (if any) is kept on failure.
    pub fn finish_baseline(&mut self) -> Result<PupilBaseline, PupilError> {
        let acc = self.calibration.take().ok_or(PupilError::BaselineEmpty)?;
        let b = acc.finalize()?;
        self.baseline = Some(b);
        Ok(b)
    }

    pub fn set_baseline(&mut self, baseline: PupilBaseline) {
        self.baseline = Some(baseline);
    }

    pub fn baseline(&self) -> Option<&PupilBaseline> {
        self.baseline.as_ref()
    }

    pub fn baseline_elapsed_s(&self) -> Option<f64> {
        self.calibration.as_ref().map(BaselineAccumulator::span_s)
    }

    /// Returns `None` when the sample is gated out.
    pub fn push(&mut self, s: &PupilSample) -> Option<PupilOutput> {
        let s = self.gate.gate(*s)?;
        if let Some(acc) = &mut self.calibration {
            acc.push(&s);
        }
        let lowpassed = self.lowpass.process(&s);
        let filtered = self.baseline.as_ref().map(|b| subtract_baseline(&lowpassed, b));
        let stats = filtered.as_ref().map(|f| self.window.push(f));
        Some(PupilOutput { lowpassed, filtered, stats })
    }
}
