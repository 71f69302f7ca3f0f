//! Second-order IIR sections (transposed direct form II) and filter design.

use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Coefficients {
    fn normalized(b0: f64, b1: f64, b2: f64, a0: f64, a1: f64, a2: f64) -> Self {
        Coefficients { b0: b0 / a0, b1: b1 / a0, b2: b2 / a0, a1: a1 / a0, a2: a2 / a0 }
    }

    /// Butterworth low-pass (Q = 1/sqrt 2), bilinear with prewarping at `cutoff_hz`.
    pub fn butter_lowpass(cutoff_hz: f64, rate_hz: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / rate_hz;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * std::f64::consts::FRAC_1_SQRT_2);
        Self::normalized((1.0 - c) / 2.0, 1.0 - c, (1.0 - c) / 2.0, 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    pub fn butter_highpass(cutoff_hz: f64, rate_hz: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / rate_hz;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * std::f64::consts::FRAC_1_SQRT_2);
        Self::normalized((1.0 + c) / 2.0, -(1.0 + c), (1.0 + c) / 2.0, 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    pub fn notch(center_hz: f64, q: f64, rate_hz: f64) -> Self {
        let w0 = 2.0 * PI * center_hz / rate_hz;
        let (s, c) = w0.sin_cos();
        let alpha = s / (2.0 * q);
        Self::normalized(1.0, -2.0 * c, 1.0, 1.0 + alpha, -2.0 * c, 1.0 - alpha)
    }

    pub fn dc_gain(&self) -> f64 {
        (self.b0 + self.b1 + self.b2) / (1.0 + self.a1 + self.a2)
    }

    /// Complex response `(re, im)` at `freq_hz`.
    pub fn response(&self, freq_hz: f64, rate_hz: f64) -> (f64, f64) {
        let w = 2.0 * PI * freq_hz / rate_hz;
        // z^-1 = e^{-jw}
        let (s1, c1) = (-w).sin_cos();
        let (s2, c2) = (-2.0 * w).sin_cos();
        let num = (self.b0 + self.b1 * c1 + self.b2 * c2, self.b1 * s1 + self.b2 * s2);
        let den = (1.0 + self.a1 * c1 + self.a2 * c2, self.a1 * s1 + self.a2 * s2);
        complex_div(num, den)
    }
}

fn complex_div(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    let d = b.0 * b.0 + b.1 * b.1;
    ((a.0 * b.0 + a.1 * b.1) / d, (a.1 * b.0 - a.0 * b.1) / d)
}

fn complex_mul(a: (f64, f64), b: (f64, f64)) -> (f64, f64) {
    (a.0 * b.0 - a.1 * b.1, a.0 * b.1 + a.1 * b.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    c: Coefficients,
    s1: f64,
    s2: f64,
}

impl Biquad {
    pub fn new(c: Coefficients) -> Self {
        Biquad { c, s1: 0.0, s2: 0.0 }
    }

    pub fn coefficients(&self) -> Coefficients {
        self.c
    }

    pub fn reset(&mut self) {
        self.s1 = 0.0;
        self.s2 = 0.0;
    }

    /// Loads the state that a constant input `x` would settle to, so the
    /// next call with `x` returns `dc_gain * x`.
    pub fn prime(&mut self, x: f64) {
        let y = self.c.dc_gain() * x;
        self.s2 = self.c.b2 * x - self.c.a2 * y;
        self.s1 = self.c.b1 * x - self.c.a1 * y + self.s2;
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        let y = self.c.b0 * x + self.s1;
        self.s1 = self.c.b1 * x - self.c.a1 * y + self.s2;
        self.s2 = self.c.b2 * x - self.c.a2 * y;
        y
    }
}

/// Sections applied in series.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Cascade {
    sections: Vec<Biquad>,
}

impl Cascade {
    pub fn new(coefficients: impl IntoIterator<Item = Coefficients>) -> Self {
        Cascade { sections: coefficients.into_iter().map(Biquad::new).collect() }
    }

    pub fn prime(&mut self, x: f64) {
        let mut v = x;
        for s in &mut self.sections {
            s.prime(v);
            v *= s.coefficients().dc_gain();
        }
    }

    pub fn reset(&mut self) {
        self.sections.iter_mut().for_each(Biquad::reset);
    }

    #[inline]
    pub fn process(&mut self, x: f64) -> f64 {
        self.sections.iter_mut().fold(x, |v, s| s.process(v))
    }

    pub fn response(&self, freq_hz: f64, rate_hz: f64) -> (f64, f64) {
        self.sections.iter().fold((1.0, 0.0), |acc, s| complex_mul(acc, s.coefficients().response(freq_hz, rate_hz)))
    }

    pub fn magnitude(&self, freq_hz: f64, rate_hz: f64) -> f64 {
        let (re, im) = self.response(freq_hz, rate_hz);
        re.hypot(im)
    }

    /// Group delay in seconds at `freq_hz`, by central difference of the unwrapped phase.
    pub fn group_delay(&self, freq_hz: f64, rate_hz: f64) -> f64 {
        let df = 1e-4 * rate_hz;
        let phase = |f: f64| {
            let (re, im) = self.response(f, rate_hz);
            im.atan2(re)
        };
        let mut dphi = phase(freq_hz + df) - phase(freq_hz - df);
        while dphi > PI {
            dphi -= 2.0 * PI;
        }
        while dphi < -PI {
            dphi += 2.0 * PI;
        }
        -dphi / (2.0 * PI * 2.0 * df)
    }
}
