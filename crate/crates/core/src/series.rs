//! Uniformly sampled scalar time series and planar vectors.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SeriesError {
    #[error("sample rate must be positive and finite, got {0}")]
    BadRate(f64),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
}

/// A uniformly sampled scalar signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    sample_rate: f64,
    start_time: f64,
    samples: Vec<f64>,
}

impl TimeSeries {
    pub fn new(sample_rate: f64, start_time: f64, samples: Vec<f64>) -> Result<Self, SeriesError> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(SeriesError::BadRate(sample_rate));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(SeriesError::NonFinite(i));
        }
        Ok(Self { sample_rate, start_time, samples })
    }

    /// Samples `f(t)` at `start + k / rate` for `k in 0..n`.
    pub fn from_fn(sample_rate: f64, start_time: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self, SeriesError> {
        let samples = (0..n).map(|k| f(start_time + k as f64 / sample_rate)).collect();
        Self::new(sample_rate, start_time, samples)
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn time(&self, index: usize) -> f64 {
        self.start_time + index as f64 / self.sample_rate
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(move |k| self.time(k))
    }

    /// Time of the last sample, or `start_time` when empty.
    pub fn end_time(&self) -> f64 {
        self.time(self.samples.len().saturating_sub(1))
    }

    /// Same timing, new values. Values are not re-validated.
    pub(crate) fn with_samples(&self, samples: Vec<f64>) -> Self {
        debug_assert_eq!(samples.len(), self.samples.len());
        Self { sample_rate: self.sample_rate, start_time: self.start_time, samples }
    }

    /// Values whose sample time lies in `[start, end)`.
    pub fn window(&self, start: f64, end: f64) -> &[f64] {
        let first = ((start - self.start_time) * self.sample_rate - 1e-9).ceil().max(0.0) as usize;
        let last = ((end - self.start_time) * self.sample_rate - 1e-9).ceil().max(0.0) as usize;
        let first = first.min(self.samples.len());
        let last = last.clamp(first, self.samples.len());
        &self.samples[first..last]
    }

    pub fn peak_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// A point or vector in the sagittal plane: `x` anterior, `z` vertical.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub z: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, z: 0.0 };

    pub const fn new(x: f64, z: f64) -> Self {
        Self { x, z }
    }

    /// Mediolateral component of `self × other` with the +y axis pointing to the
    /// subject's left, so a positive value is a forward pitch.
    pub fn cross_sagittal(self, other: Vec2) -> f64 {
        self.z * other.x - self.x * other.z
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.z.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.z + rhs.z)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.z - rhs.z)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.z * rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_rate_and_nan() {
        assert!(TimeSeries::new(0.0, 0.0, vec![1.0]).is_err());
        assert_eq!(TimeSeries::new(10.0, 0.0, vec![1.0, f64::NAN]), Err(SeriesError::NonFinite(1)));
    }

    #[test]
    fn window_is_closed_open() {
        let s = TimeSeries::from_fn(10.0, 0.0, 20, |t| t).unwrap();
        let w = s.window(0.3, 0.6);
        assert_eq!(w.len(), 3);
        assert!((w[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn forward_pitch_is_positive() {
        // point above the COM moving forward
        assert!(Vec2::new(0.0, 1.0).cross_sagittal(Vec2::new(1.0, 0.0)) > 0.0);
    }
}
