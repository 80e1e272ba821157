//! Phase-indexed baseline profile: a shape-preserving cubic Hermite spline
//! through five nodes set by eight parameters.

use serde::{Deserialize, Serialize};

use super::ControllerError;

/// Monotone piecewise cubic Hermite interpolant (Fritsch–Carlson slopes with
/// the three-point end condition). Between data points it never leaves the
/// range of the two bracketing values.
#[derive(Debug, Clone, PartialEq)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self, ControllerError> {
        if x.len() != y.len() || x.len() < 2 {
            return Err(ControllerError::Configuration(format!(
                "spline needs >= 2 matching nodes, got {} x and {} y",
                x.len(),
                y.len()
            )));
        }
        if x.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ControllerError::Configuration("spline nodes must be strictly increasing".into()));
        }
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d = vec![delta[0]; 2];
        } else {
            for k in 1..n - 1 {
                if delta[k - 1] * delta[k] > 0.0 {
                    let w1 = 2.0 * h[k] + h[k - 1];
                    let w2 = h[k] + 2.0 * h[k - 1];
                    d[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
                }
            }
            d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Ok(Self { x, y, d })
    }

    /// Value at `t`; constant extension beyond the end nodes.
    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        if t <= self.x[0] {
            return self.y[0];
        }
        if t >= self.x[n - 1] {
            return self.y[n - 1];
        }
        let k = self.x.partition_point(|&v| v <= t) - 1;
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[k] + h10 * h * self.d[k] + h01 * self.y[k + 1] + h11 * h * self.d[k + 1]
    }
}

fn end_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() || m0 == 0.0 {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

/// Sign of the baseline torque burst. Positive joint torque is extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TorqueDirection {
    Flexion,
    Extension,
}

impl TorqueDirection {
    pub fn sign(self) -> f64 {
        match self {
            TorqueDirection::Flexion => -1.0,
            TorqueDirection::Extension => 1.0,
        }
    }
}

/// Eight-parameter baseline profile. Phases are stride fractions. The four
/// shape values place the rise and fall shoulder nodes: `*_time` as a
/// fraction of the rise (fall) interval and `*_height` as a fraction of peak.
///
/// The shipped defaults are placeholders for playback, not fitted values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplineBaselineParams {
    pub onset_phase: f64,
    pub peak_phase: f64,
    pub offset_phase: f64,
    pub peak_torque_fraction: f64,
    pub rise_time: f64,
    pub rise_height: f64,
    pub fall_time: f64,
    pub fall_height: f64,
    pub direction: TorqueDirection,
}

impl Default for SplineBaselineParams {
    fn default() -> Self {
        Self {
            onset_phase: 0.0,
            peak_phase: 0.12,
            offset_phase: 0.35,
            peak_torque_fraction: 0.20,
            rise_time: 0.5,
            rise_height: 0.5,
            fall_time: 0.5,
            fall_height: 0.5,
            direction: TorqueDirection::Flexion,
        }
    }
}

impl SplineBaselineParams {
    pub fn validate(&self) -> Result<(), ControllerError> {
        let (a, b, c) = (self.onset_phase, self.peak_phase, self.offset_phase);
        if !(0.0 <= a && a < b && b < c && c <= 1.0) {
            return Err(ControllerError::Configuration(format!(
                "spline phases must satisfy 0 <= onset < peak < offset <= 1, got {a}, {b}, {c}"
            )));
        }
        if !(self.peak_torque_fraction >= 0.0 && self.peak_torque_fraction.is_finite()) {
            return Err(ControllerError::Configuration(format!(
                "peak torque fraction must be non-negative, got {}",
                self.peak_torque_fraction
            )));
        }
        for (name, v) in [
            ("rise_time", self.rise_time),
            ("rise_height", self.rise_height),
            ("fall_time", self.fall_time),
            ("fall_height", self.fall_height),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(ControllerError::Configuration(format!("spline shape {name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }

    /// Node abscissae (phase) and ordinates (fraction of peak).
    pub fn nodes(&self) -> ([f64; 5], [f64; 5]) {
        let (a, b, c) = (self.onset_phase, self.peak_phase, self.offset_phase);
        (
            [a, a + self.rise_time * (b - a), b, b + self.fall_time * (c - b), c],
            [0.0, self.rise_height, 1.0, self.fall_height, 0.0],
        )
    }

    /// Interpolant of the unsigned, peak-normalized shape.
    pub fn shape(&self) -> Result<Pchip, ControllerError> {
        self.validate()?;
        let (x, y) = self.nodes();
        Pchip::new(x.to_vec(), y.to_vec())
    }
}

/// Signed baseline torque at stride `phase`, zero outside
/// `[onset_phase, offset_phase]`.
pub fn spline_torque(phase: f64, params: &SplineBaselineParams, peak_bio_torque: f64) -> Result<f64, ControllerError> {
    let shape = params.shape()?;
    Ok(spline_torque_with(&shape, phase, params, peak_bio_torque))
}

pub(crate) fn spline_torque_with(
    shape: &Pchip,
    phase: f64,
    params: &SplineBaselineParams,
    peak_bio_torque: f64,
) -> f64 {
    if phase < params.onset_phase || phase > params.offset_phase {
        return 0.0;
    }
    params.direction.sign() * params.peak_torque_fraction * peak_bio_torque * shape.eval(phase)
}
