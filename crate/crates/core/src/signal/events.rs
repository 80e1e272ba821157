//! Heel-strike / toe-off detection from vertical ground reaction force and
//! stride-phase estimation.

use serde::{Deserialize, Serialize};

use super::SignalError;
use crate::series::TimeSeries;

pub const DEFAULT_THRESHOLD_N: f64 = 20.0;
pub const DEFAULT_DEBOUNCE_S: f64 = 0.05;

/// Strides averaged when estimating the stride period.
const PHASE_STRIDES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn opposite(self) -> Side {
        match self {
            Side::Left => Side::Right,
            Side::Right => Side::Left,
        }
    }

    /// Suffix used in segment ids (`thigh_l`).
    pub fn suffix(self) -> &'static str {
        match self {
            Side::Left => "l",
            Side::Right => "r",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FootEvents {
    pub heel_strikes: Vec<f64>,
    pub toe_offs: Vec<f64>,
}

impl FootEvents {
    /// Events must be strictly increasing and alternate between heel strike
    /// and toe off.
    pub fn validate(&self) -> Result<(), SignalError> {
        let mut merged: Vec<(f64, bool)> =
            self.heel_strikes.iter().map(|&t| (t, true)).chain(self.toe_offs.iter().map(|&t| (t, false))).collect();
        if merged.iter().any(|(t, _)| !t.is_finite()) {
            return Err(SignalError::Validation("non-finite event time".into()));
        }
        merged.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in merged.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(SignalError::Validation(format!("events not strictly increasing at t = {}", w[1].0)));
            }
            if w[0].1 == w[1].1 {
                let kind = if w[0].1 { "heel strikes" } else { "toe offs" };
                return Err(SignalError::Validation(format!(
                    "consecutive {kind} at t = {} and t = {}",
                    w[0].0, w[1].0
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GaitEvents {
    pub left: FootEvents,
    pub right: FootEvents,
}

impl GaitEvents {
    pub fn foot(&self, side: Side) -> &FootEvents {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        self.left.validate()?;
        self.right.validate()
    }

    pub fn is_empty(&self) -> bool {
        self.left.heel_strikes.is_empty()
            && self.left.toe_offs.is_empty()
            && self.right.heel_strikes.is_empty()
            && self.right.toe_offs.is_empty()
    }
}

/// Threshold detector with a debounce window: contact changes that revert
/// within `debounce` seconds are discarded as a pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventDetector {
    pub threshold: f64,
    pub debounce: f64,
}

impl Default for EventDetector {
    fn default() -> Self {
        Self { threshold: DEFAULT_THRESHOLD_N, debounce: DEFAULT_DEBOUNCE_S }
    }
}

impl EventDetector {
    pub fn new(threshold: f64, debounce: f64) -> Result<Self, SignalError> {
        if !(threshold > 0.0 && threshold.is_finite()) {
            return Err(SignalError::Argument(format!("threshold must be positive, got {threshold}")));
        }
        if !(debounce >= 0.0 && debounce.is_finite()) {
            return Err(SignalError::Argument(format!("debounce must be non-negative, got {debounce}")));
        }
        Ok(Self { threshold, debounce })
    }

    pub fn detect_foot(&self, fz: &TimeSeries) -> Result<FootEvents, SignalError> {
        let f = fz.samples();
        let dt = fz.dt();
        let mut kept: Vec<(f64, bool)> = Vec::new();
        for i in 1..f.len() {
            let (prev, cur) = (f[i - 1] >= self.threshold, f[i] >= self.threshold);
            if prev == cur {
                continue;
            }
            let frac = ((self.threshold - f[i - 1]) / (f[i] - f[i - 1])).clamp(0.0, 1.0);
            let t = fz.time(i - 1) + frac * dt;
            match kept.last() {
                Some(&(last, _)) if t - last < self.debounce => {
                    kept.pop();
                }
                _ => kept.push((t, cur)),
            }
        }
        let events = FootEvents {
            heel_strikes: kept.iter().filter(|e| e.1).map(|e| e.0).collect(),
            toe_offs: kept.iter().filter(|e| !e.1).map(|e| e.0).collect(),
        };
        events.validate()?;
        Ok(events)
    }

    pub fn detect(&self, left: &TimeSeries, right: &TimeSeries) -> Result<GaitEvents, SignalError> {
        Ok(GaitEvents { left: self.detect_foot(left)?, right: self.detect_foot(right)? })
    }
}

/// Detects events on both feet with the default debounce window.
pub fn detect_gait_events(left: &TimeSeries, right: &TimeSeries, threshold: f64) -> Result<GaitEvents, SignalError> {
    EventDetector::new(threshold, DEFAULT_DEBOUNCE_S)?.detect(left, right)
}

/// Largest `f64` strictly below one.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

fn mean_period(heel_strikes: &[f64]) -> Option<f64> {
    if heel_strikes.len() < 2 {
        return None;
    }
    let recent = &heel_strikes[heel_strikes.len().saturating_sub(PHASE_STRIDES + 1)..];
    Some((recent[recent.len() - 1] - recent[0]) / (recent.len() - 1) as f64)
}

/// Stride fraction elapsed since the last heel strike of `side` at or before
/// `t`, using the mean of up to five preceding stride periods.
pub fn estimate_gait_phase(events: &GaitEvents, side: Side, t: f64) -> Result<f64, SignalError> {
    let hs = events.foot(side).heel_strikes.as_slice();
    let upto = hs.partition_point(|&h| h <= t);
    let period = mean_period(&hs[..upto]).ok_or_else(|| {
        SignalError::PhaseUnavailable(format!("need two {side:?} heel strikes before t = {t}, found {upto}"))
    })?;
    Ok(((t - hs[upto - 1]) / period).clamp(0.0, BELOW_ONE))
}

/// Stride period frozen from the strides preceding a reference time (the
/// perturbation onset); phase afterwards is measured against that period.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseReference {
    heel_strikes: Vec<f64>,
    period: f64,
}

impl PhaseReference {
    pub fn before(events: &GaitEvents, side: Side, reference: f64) -> Result<Self, SignalError> {
        let hs = events.foot(side).heel_strikes.clone();
        let upto = hs.partition_point(|&h| h <= reference);
        let period = mean_period(&hs[..upto])
            .ok_or_else(|| SignalError::PhaseUnavailable(format!("need two heel strikes before t = {reference}")))?;
        Ok(Self { heel_strikes: hs, period })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn phase(&self, t: f64) -> Option<f64> {
        let upto = self.heel_strikes.partition_point(|&h| h <= t);
        let last = *self.heel_strikes.get(upto.checked_sub(1)?)?;
        Some(((t - last) / self.period).clamp(0.0, BELOW_ONE))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_grf(rate: f64, seconds: f64, contact: impl Fn(f64) -> bool) -> TimeSeries {
        TimeSeries::from_fn(rate, 0.0, (seconds * rate) as usize, |t| if contact(t) { 700.0 } else { 0.0 }).unwrap()
    }

    #[test]
    fn square_wave_one_event_pair_per_cycle() {
        // stance on [k + 0.1, k + 0.7)
        let stance = |t: f64| {
            let p = t.rem_euclid(1.0);
            (0.1..0.7).contains(&p)
        };
        let grf = square_grf(100.0, 5.0, stance);
        let ev = EventDetector::default().detect_foot(&grf).unwrap();
        assert_eq!(ev.heel_strikes.len(), 5);
        assert_eq!(ev.toe_offs.len(), 5);
        for (k, (hs, to)) in ev.heel_strikes.iter().zip(&ev.toe_offs).enumerate() {
            assert!((hs - (k as f64 + 0.1)).abs() <= 0.01 + 1e-12, "{hs}");
            assert!((to - (k as f64 + 0.7)).abs() <= 0.01 + 1e-12, "{to}");
        }
    }

    #[test]
    fn zero_force_has_no_events() {
        let grf = square_grf(100.0, 3.0, |_| false);
        let ev = detect_gait_events(&grf, &grf, 20.0).unwrap();
        assert!(ev.is_empty());
    }

    #[test]
    fn debounce_removes_blips() {
        // 20 ms dropout inside stance and a 30 ms spike in swing
        let contact = |t: f64| ((0.2..0.8).contains(&t) && !(0.5..0.52).contains(&t)) || (1.1..1.13).contains(&t);
        let grf = square_grf(1000.0, 2.0, contact);
        let ev = EventDetector::default().detect_foot(&grf).unwrap();
        assert_eq!(ev.heel_strikes.len(), 1);
        assert_eq!(ev.toe_offs.len(), 1);
        ev.validate().unwrap();
    }

    #[test]
    fn validation_catches_non_alternating() {
        let ev = FootEvents { heel_strikes: vec![1.0, 2.0], toe_offs: vec![2.5] };
        assert!(matches!(ev.validate(), Err(SignalError::Validation(_))));
        let ev = FootEvents { heel_strikes: vec![1.0, 2.0], toe_offs: vec![1.5, 2.5] };
        ev.validate().unwrap();
    }

    fn events_with_left(hs: Vec<f64>) -> GaitEvents {
        GaitEvents { left: FootEvents { heel_strikes: hs, toe_offs: vec![] }, right: FootEvents::default() }
    }

    #[test]
    fn phase_at_heel_strike_and_midway() {
        let ev = events_with_left(vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(estimate_gait_phase(&ev, Side::Left, 2.0).unwrap(), 0.0);
        assert!((estimate_gait_phase(&ev, Side::Left, 2.5).unwrap() - 0.5).abs() < 1e-12);
        assert!(estimate_gait_phase(&ev, Side::Left, 9.0).unwrap() < 1.0);
    }

    #[test]
    fn phase_uses_five_stride_mean() {
        // periods 1.0, 1.0, 1.1, 0.9, 1.0 -> mean 1.0
        let ev = events_with_left(vec![10.0, 11.0, 12.0, 13.1, 14.0, 15.0]);
        let p = estimate_gait_phase(&ev, Side::Left, 15.25).unwrap();
        assert!((p - 0.25).abs() < 1e-12);
        let r = PhaseReference::before(&ev, Side::Left, 15.1).unwrap();
        assert!((r.period() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn phase_needs_history() {
        let ev = events_with_left(vec![1.0]);
        assert!(matches!(estimate_gait_phase(&ev, Side::Left, 1.5), Err(SignalError::PhaseUnavailable(_))));
        assert!(estimate_gait_phase(&ev, Side::Right, 1.5).is_err());
    }
}
