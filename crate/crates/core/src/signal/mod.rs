//! Filtering, differentiation and gait events from ground reaction forces.

mod butterworth;
mod events;

use thiserror::Error;

pub use butterworth::{butterworth_lowpass, Biquad, ButterworthLowpass};
pub use events::{
    detect_gait_events, estimate_gait_phase, EventDetector, FootEvents, GaitEvents, PhaseReference, Side,
    DEFAULT_DEBOUNCE_S, DEFAULT_THRESHOLD_N,
};

use crate::series::TimeSeries;

pub const DEFAULT_FILTER_ORDER: usize = 4;
pub const DEFAULT_CUTOFF_HZ: f64 = 6.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SignalError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("gait events invalid: {0}")]
    Validation(String),
    #[error("gait phase unavailable: {0}")]
    PhaseUnavailable(String),
}

/// Time derivative: central differences inside, second-order one-sided
/// differences at both ends.
pub fn differentiate(series: &TimeSeries) -> Result<TimeSeries, SignalError> {
    let x = series.samples();
    let n = x.len();
    if n < 3 {
        return Err(SignalError::Argument(format!("differentiation needs at least 3 samples, got {n}")));
    }
    let rate = series.sample_rate();
    let mut d = Vec::with_capacity(n);
    d.push((4.0 * (x[1] - x[0]) - (x[2] - x[0])) * 0.5 * rate);
    d.extend(x.windows(3).map(|w| (w[2] - w[0]) * 0.5 * rate));
    d.push((4.0 * (x[n - 1] - x[n - 2]) - (x[n - 1] - x[n - 3])) * 0.5 * rate);
    Ok(series.with_samples(d))
}
