//! Assistance torque commands: trapezoidal profile, phase-indexed spline
//! baseline, onset latency and actuator saturation.

mod spline;

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use spline::{spline_torque, Pchip, SplineBaselineParams, TorqueDirection};

use crate::series::TimeSeries;
use crate::signal::{PhaseReference, Side, SignalError};

/// Latency between perturbation onset and the start of assistance, s.
pub const ONSET_DELAY_S: f64 = 0.010;
/// Actuator torque limit, Nm.
pub const SATURATION_NM: f64 = 18.0;
pub const DEFAULT_PERTURBATION_LENGTH_S: f64 = 0.3;
/// Peak biological hip extension moment, Nm/kg.
pub const DEFAULT_PEAK_BIO_MOMENT: f64 = 1.1;
pub const MAGNITUDE_LEVELS: [f64; 5] = [0.05, 0.10, 0.15, 0.20, 0.25];
pub const DURATION_LEVELS: [f64; 5] = [0.5, 1.0, 2.0, 3.0, 4.0];
/// Largest magnitude fraction accepted for synthesis.
pub const MAX_MAGNITUDE_FRACTION: f64 = 0.30;
/// Largest duration multiple accepted for synthesis.
pub const MAX_DURATION_MULTIPLE: f64 = 6.0;
/// Stride periods of baseline playback after onset.
pub const SPLINE_PLAYBACK_STRIDES: f64 = 2.0;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid configuration: {0}")]
    Configuration(String),
    #[error("baseline playback needs gait phase: {0}")]
    Phase(#[from] SignalError),
    #[error("writing command series: {0}")]
    Csv(#[from] csv::Error),
    #[error("writing command series: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapezoidProfile {
    /// Plateau torque, Nm.
    pub t_max: f64,
    /// Total duration, s.
    pub duration: f64,
}

impl TrapezoidProfile {
    pub fn new(t_max: f64, duration: f64) -> Result<Self, ControllerError> {
        if !(t_max >= 0.0 && t_max.is_finite()) {
            return Err(ControllerError::Argument(format!("T_max must be non-negative, got {t_max}")));
        }
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(ControllerError::Argument(format!("duration must be positive, got {duration}")));
        }
        Ok(Self { t_max, duration })
    }
}

/// Trapezoid with 20 % linear ramps at each end. `t` is measured from the
/// start of assistance; zero outside `[0, D]`.
pub fn trapezoid_torque(t: f64, profile: &TrapezoidProfile) -> f64 {
    let (tm, d) = (profile.t_max, profile.duration);
    let ramp = 0.2 * d;
    if !(0.0..=d).contains(&t) {
        0.0
    } else if t <= ramp {
        tm * (t / ramp)
    } else if t < 0.8 * d {
        tm
    } else {
        tm * (1.0 - (t - 0.8 * d) / ramp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Trapezoid,
    SplineBaseline,
    /// Device worn, no torque.
    NoAssist,
    /// Device not worn.
    NoExoskeleton,
}

/// One experimental condition. Magnitude and duration are meaningful only for
/// the trapezoid and are zero otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssistanceCondition {
    pub profile: ProfileKind,
    pub magnitude_fraction: f64,
    pub duration_multiple: f64,
}

impl AssistanceCondition {
    pub fn trapezoid(magnitude_fraction: f64, duration_multiple: f64) -> Result<Self, ControllerError> {
        let c = Self { profile: ProfileKind::Trapezoid, magnitude_fraction, duration_multiple };
        c.validate()?;
        Ok(c)
    }

    pub const fn spline_baseline() -> Self {
        Self { profile: ProfileKind::SplineBaseline, magnitude_fraction: 0.0, duration_multiple: 0.0 }
    }

    pub const fn no_assist() -> Self {
        Self { profile: ProfileKind::NoAssist, magnitude_fraction: 0.0, duration_multiple: 0.0 }
    }

    pub const fn no_exoskeleton() -> Self {
        Self { profile: ProfileKind::NoExoskeleton, magnitude_fraction: 0.0, duration_multiple: 0.0 }
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        if self.profile != ProfileKind::Trapezoid {
            return Ok(());
        }
        let (m, d) = (self.magnitude_fraction, self.duration_multiple);
        if !(0.0..=MAX_MAGNITUDE_FRACTION).contains(&m) {
            return Err(ControllerError::Argument(format!(
                "magnitude fraction {m} outside [0, {MAX_MAGNITUDE_FRACTION}]"
            )));
        }
        if !(d > 0.0 && d <= MAX_DURATION_MULTIPLE) {
            return Err(ControllerError::Argument(format!(
                "duration multiple {d} outside (0, {MAX_DURATION_MULTIPLE}]"
            )));
        }
        Ok(())
    }

    pub fn is_trapezoid(&self) -> bool {
        self.profile == ProfileKind::Trapezoid
    }

    pub fn wears_exoskeleton(&self) -> bool {
        self.profile != ProfileKind::NoExoskeleton
    }

    /// Stable identifier, e.g. `trap_m0.15_d3` or `no_assist`.
    pub fn key(&self) -> String {
        match self.profile {
            ProfileKind::Trapezoid => format!("trap_m{}_d{}", self.magnitude_fraction, self.duration_multiple),
            ProfileKind::SplineBaseline => "spline_baseline".into(),
            ProfileKind::NoAssist => "no_assist".into(),
            ProfileKind::NoExoskeleton => "no_exo".into(),
        }
    }
}

impl fmt::Display for AssistanceCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.key())
    }
}

/// Trapezoid cells for every (magnitude, duration) pair followed by the
/// spline baseline, no-assist and no-exoskeleton controls.
pub fn condition_grid(magnitudes: &[f64], durations: &[f64]) -> Result<Vec<AssistanceCondition>, ControllerError> {
    let mut out = Vec::with_capacity(magnitudes.len() * durations.len() + 3);
    for &m in magnitudes {
        for &d in durations {
            out.push(AssistanceCondition::trapezoid(m, d)?);
        }
    }
    out.extend([
        AssistanceCondition::spline_baseline(),
        AssistanceCondition::no_assist(),
        AssistanceCondition::no_exoskeleton(),
    ]);
    Ok(out)
}

/// The 5 × 5 trapezoid grid plus three controls (28 conditions).
pub fn standard_condition_grid() -> Vec<AssistanceCondition> {
    condition_grid(&MAGNITUDE_LEVELS, &DURATION_LEVELS).expect("standard levels are valid")
}

/// Inputs for one trial's command series.
#[derive(Debug, Clone)]
pub struct ScheduleRequest {
    /// Perturbation onset, s.
    pub onset: f64,
    pub condition: AssistanceCondition,
    pub perturbation_length: f64,
    /// Nm/kg.
    pub peak_bio_moment: f64,
    pub body_mass: f64,
    pub rate: f64,
    /// Series covers `[0, trial_length)`.
    pub trial_length: f64,
    pub perturbed_side: Side,
    pub spline: SplineBaselineParams,
    /// Required for spline playback.
    pub phase: Option<PhaseReference>,
}

impl ScheduleRequest {
    pub fn new(
        onset: f64,
        condition: AssistanceCondition,
        perturbation_length: f64,
        peak_bio_moment: f64,
        body_mass: f64,
        rate: f64,
    ) -> Self {
        Self {
            onset,
            condition,
            perturbation_length,
            peak_bio_moment,
            body_mass,
            rate,
            trial_length: 15.0,
            perturbed_side: Side::Left,
            spline: SplineBaselineParams::default(),
            phase: None,
        }
    }

    fn validate(&self) -> Result<(), ControllerError> {
        let positive = [
            ("perturbation length", self.perturbation_length),
            ("rate", self.rate),
            ("body mass", self.body_mass),
            ("trial length", self.trial_length),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ControllerError::Argument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.peak_bio_moment >= 0.0 && self.peak_bio_moment.is_finite()) {
            return Err(ControllerError::Argument(format!(
                "peak biological moment must be non-negative, got {}",
                self.peak_bio_moment
            )));
        }
        if !self.onset.is_finite() {
            return Err(ControllerError::Argument("onset must be finite".into()));
        }
        self.condition.validate()
    }
}

/// Commanded hip torques, Nm, positive extension.
#[derive(Debug, Clone, PartialEq)]
pub struct TorqueCommandSeries {
    pub left: TimeSeries,
    pub right: TimeSeries,
    pub onset_delay: f64,
    pub saturation: f64,
}

impl TorqueCommandSeries {
    pub fn side(&self, side: Side) -> &TimeSeries {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    /// CSV with columns `time_s, torque_left_Nm, torque_right_Nm`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ControllerError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["time_s", "torque_left_Nm", "torque_right_Nm"])?;
        for (k, (l, r)) in self.left.samples().iter().zip(self.right.samples()).enumerate() {
            w.write_record([self.left.time(k).to_string(), l.to_string(), r.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Builds the perturbed hip's command series. The trapezoid starts
/// [`ONSET_DELAY_S`] after onset with `T_max = magnitude × moment × mass`
/// and `D = duration × perturbation length`; the spline baseline plays back
/// against the pre-onset stride period for [`SPLINE_PLAYBACK_STRIDES`]
/// strides. Every sample is clamped to ±[`SATURATION_NM`].
pub fn schedule_assistance(req: &ScheduleRequest) -> Result<TorqueCommandSeries, ControllerError> {
    req.validate()?;
    let n = (req.trial_length * req.rate).round() as usize;
    let start = req.onset + ONSET_DELAY_S;
    let peak_bio_torque = req.peak_bio_moment * req.body_mass;
    let time = |k: usize| k as f64 / req.rate;
    let active: Vec<f64> = match req.condition.profile {
        ProfileKind::NoAssist | ProfileKind::NoExoskeleton => vec![0.0; n],
        ProfileKind::Trapezoid => {
            let profile = TrapezoidProfile::new(
                req.condition.magnitude_fraction * peak_bio_torque,
                req.condition.duration_multiple * req.perturbation_length,
            )?;
            (0..n).map(|k| trapezoid_torque(time(k) - start, &profile)).collect()
        }
        ProfileKind::SplineBaseline => {
            let phase = req.phase.as_ref().ok_or_else(|| {
                ControllerError::Configuration("spline baseline requires a pre-onset phase reference".into())
            })?;
            let shape = req.spline.shape()?;
            let end = start + SPLINE_PLAYBACK_STRIDES * phase.period();
            (0..n)
                .map(|k| {
                    let t = time(k);
                    if t < start || t >= end {
                        return 0.0;
                    }
                    phase.phase(t).map_or(0.0, |p| spline::spline_torque_with(&shape, p, &req.spline, peak_bio_torque))
                })
                .collect()
        }
    };
    let active: Vec<f64> = active.into_iter().map(|v| v.clamp(-SATURATION_NM, SATURATION_NM)).collect();
    let zeros = vec![0.0; n];
    let (l, r) = match req.perturbed_side {
        Side::Left => (active, zeros),
        Side::Right => (zeros, active),
    };
    let series = |v| TimeSeries::new(req.rate, 0.0, v).map_err(|e| ControllerError::Argument(e.to_string()));
    Ok(TorqueCommandSeries {
        left: series(l)?,
        right: series(r)?,
        onset_delay: ONSET_DELAY_S,
        saturation: SATURATION_NM,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{FootEvents, GaitEvents};

    #[test]
    fn trapezoid_key_points() {
        let p = TrapezoidProfile::new(10.0, 0.6).unwrap();
        assert!((trapezoid_torque(0.06, &p) - 5.0).abs() < 1e-12);
        assert_eq!(trapezoid_torque(0.0, &p), 0.0);
        assert!(trapezoid_torque(0.6, &p).abs() < 1e-12);
        assert_eq!(trapezoid_torque(0.3, &p), 10.0);
        assert_eq!(trapezoid_torque(-0.01, &p), 0.0);
        assert_eq!(trapezoid_torque(0.61, &p), 0.0);
        assert!(TrapezoidProfile::new(-1.0, 1.0).is_err());
        assert!(TrapezoidProfile::new(1.0, 0.0).is_err());
    }

    #[test]
    fn grid_has_28_conditions() {
        let g = standard_condition_grid();
        assert_eq!(g.len(), 28);
        assert_eq!(g.iter().filter(|c| c.is_trapezoid()).count(), 25);
        let keys: std::collections::BTreeSet<_> = g.iter().map(|c| c.key()).collect();
        assert_eq!(keys.len(), 28);
        assert!(AssistanceCondition::trapezoid(0.35, 1.0).is_err());
        assert!(AssistanceCondition::trapezoid(0.1, 0.0).is_err());
    }

    #[test]
    fn quarter_magnitude_saturates() {
        // 0.25 × 1.1 Nm/kg × 72.73 kg = 20 Nm
        let c = AssistanceCondition::trapezoid(0.25, 2.0).unwrap();
        let req = ScheduleRequest::new(5.0, c, 0.3, 1.1, 20.0 / (0.25 * 1.1), 1000.0);
        let cmd = schedule_assistance(&req).unwrap();
        assert!((cmd.left.peak_abs() - 18.0).abs() < 1e-12);
        assert!(cmd.right.peak_abs() == 0.0);
    }

    #[test]
    fn none_is_all_zero() {
        for c in [AssistanceCondition::no_assist(), AssistanceCondition::no_exoskeleton()] {
            let cmd = schedule_assistance(&ScheduleRequest::new(5.0, c, 0.3, 1.1, 70.0, 100.0)).unwrap();
            assert_eq!(cmd.left.len(), 1500);
            assert_eq!(cmd.left.peak_abs() + cmd.right.peak_abs(), 0.0);
        }
    }

    #[test]
    fn first_nonzero_after_delay() {
        let c = AssistanceCondition::trapezoid(0.1, 2.0).unwrap();
        let rate = 1000.0;
        let cmd = schedule_assistance(&ScheduleRequest::new(5.0, c, 0.3, 1.1, 70.0, rate)).unwrap();
        let k = cmd.left.samples().iter().position(|v| *v != 0.0).unwrap();
        let t = cmd.left.time(k);
        assert!(t > 5.01 && t <= 5.01 + 1.0 / rate + 1e-12, "{t}");
        let last = cmd.left.samples().iter().rposition(|v| *v != 0.0).unwrap();
        assert!((cmd.left.time(last) - (5.01 + 0.6)).abs() <= 1.0 / rate + 1e-12);
    }

    #[test]
    fn spline_requires_phase_and_plays_back() {
        let req = ScheduleRequest::new(5.0, AssistanceCondition::spline_baseline(), 0.3, 1.1, 70.0, 100.0);
        assert!(matches!(schedule_assistance(&req), Err(ControllerError::Configuration(_))));
        let hs: Vec<f64> = (0..14).map(|k| 0.3 + k as f64).collect();
        let events =
            GaitEvents { left: FootEvents { heel_strikes: hs, toe_offs: vec![] }, right: FootEvents::default() };
        let req = ScheduleRequest { phase: Some(PhaseReference::before(&events, Side::Left, 5.0).unwrap()), ..req };
        let cmd = schedule_assistance(&req).unwrap();
        let s = cmd.left.samples();
        assert!(s[..501].iter().all(|v| *v == 0.0));
        // heel strike at 5.3 s; peak phase 0.12 -> 5.42 s
        let (imin, vmin) = s.iter().enumerate().fold((0, 0.0), |a, (i, &v)| if v < a.1 { (i, v) } else { a });
        assert!((vmin + 0.2 * 77.0).abs() < 1e-9);
        assert!((cmd.left.time(imin) - 5.42).abs() < 1e-9);
        assert!(s[(7.02 * 100.0) as usize..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn csv_export_columns() {
        let c = AssistanceCondition::trapezoid(0.1, 1.0).unwrap();
        let mut req = ScheduleRequest::new(0.1, c, 0.3, 1.1, 70.0, 100.0);
        req.trial_length = 0.05;
        let mut buf = Vec::new();
        schedule_assistance(&req).unwrap().write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("time_s,torque_left_Nm,torque_right_Nm\n0,0,0\n0.01,0,0\n"));
        assert_eq!(text.lines().count(), 6);
    }
}
