//! Butterworth lowpass design (bilinear transform, cascaded biquads) and
//! zero-phase forward-backward application.

use std::f64::consts::PI;

use super::SignalError;
use crate::series::TimeSeries;

/// One second-order section, `a0` normalized to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct form II state that holds a constant input `x` steady.
    fn steady_state(&self, x: f64) -> [f64; 2] {
        let y = self.dc_gain() * x;
        let s2 = self.b[2] * x - self.a[1] * y;
        let s1 = self.b[1] * x - self.a[0] * y + s2;
        [s1, s2]
    }
}

/// Digital Butterworth lowpass as a cascade of biquads with unit DC gain.
#[derive(Debug, Clone, PartialEq)]
pub struct ButterworthLowpass {
    sections: Vec<Biquad>,
    cutoff: f64,
    sample_rate: f64,
}

impl ButterworthLowpass {
    /// Designs an even-order filter. The analog cutoff is prewarped so the
    /// digital response is exactly -3 dB at `cutoff`.
    pub fn design(cutoff: f64, order: usize, sample_rate: f64) -> Result<Self, SignalError> {
        if order < 2 || order % 2 != 0 {
            return Err(SignalError::Argument(format!("filter order must be even and >= 2, got {order}")));
        }
        if !(sample_rate > 0.0) {
            return Err(SignalError::Argument(format!("sample rate must be positive, got {sample_rate}")));
        }
        let nyquist = sample_rate / 2.0;
        if !(cutoff > 0.0 && cutoff < nyquist) {
            return Err(SignalError::Argument(format!("cutoff {cutoff} Hz must lie in (0, {nyquist}) Hz")));
        }
        let k = (PI * cutoff / sample_rate).tan();
        let k2 = k * k;
        let sections = (0..order / 2)
            .map(|i| {
                // damping of the i-th analog pole pair
                let zeta = (PI * (2 * i + 1) as f64 / (2 * order) as f64).sin();
                let a0 = 1.0 + 2.0 * zeta * k + k2;
                Biquad {
                    b: [k2 / a0, 2.0 * k2 / a0, k2 / a0],
                    a: [2.0 * (k2 - 1.0) / a0, (1.0 - 2.0 * zeta * k + k2) / a0],
                }
            })
            .collect();
        Ok(Self { sections, cutoff, sample_rate })
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    pub fn order(&self) -> usize {
        self.sections.len() * 2
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Single-pass magnitude response at `freq` Hz.
    pub fn magnitude(&self, freq: f64) -> f64 {
        let w = 2.0 * PI * freq / self.sample_rate;
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        self.sections.iter().fold(1.0, |g, s| {
            let num = (s.b[0] + s.b[1] * c1 + s.b[2] * c2, s.b[1] * s1 + s.b[2] * s2);
            let den = (1.0 + s.a[0] * c1 + s.a[1] * c2, s.a[0] * s1 + s.a[1] * s2);
            g * num.0.hypot(num.1) / den.0.hypot(den.1)
        })
    }

    /// Causal pass over `x`, with every section started in the steady state of
    /// `x[0]`.
    fn run(&self, x: &mut [f64]) {
        let Some(&first) = x.first() else { return };
        let mut level = first;
        for sec in &self.sections {
            let [mut s1, mut s2] = sec.steady_state(level);
            level *= sec.dc_gain();
            for v in x.iter_mut() {
                let input = *v;
                let y = sec.b[0] * input + s1;
                s1 = sec.b[1] * input - sec.a[0] * y + s2;
                s2 = sec.b[2] * input - sec.a[1] * y;
                *v = y;
            }
        }
    }

    /// Forward-backward application with odd reflective padding of
    /// `3 × order` samples at each end.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = (3 * self.order()).min(n - 1);
        let mut buf = Vec::with_capacity(n + 2 * pad);
        buf.extend((1..=pad).rev().map(|j| 2.0 * x[0] - x[j]));
        buf.extend_from_slice(x);
        buf.extend((1..=pad).map(|j| 2.0 * x[n - 1] - x[n - 1 - j]));
        self.run(&mut buf);
        buf.reverse();
        self.run(&mut buf);
        buf.reverse();
        buf[pad..pad + n].to_vec()
    }
}

/// Zero-phase Butterworth lowpass of `series`.
pub fn butterworth_lowpass(series: &TimeSeries, cutoff: f64, order: usize) -> Result<TimeSeries, SignalError> {
    let filter = ButterworthLowpass::design(cutoff, order, series.sample_rate())?;
    Ok(series.with_samples(filter.filtfilt(series.samples())))
}
