//! Normalized sagittal whole-body angular momentum and the WBAM-range
//! stability metric.
//!
//! Sign convention: the sagittal component is the moment about the
//! mediolateral axis pointing to the subject's left, so with `x` anterior and
//! `z` up, `L = r_z·p_x − r_x·p_z` and positive values mean forward pitch.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body::{BodyModelError, SegmentInertialSet, SubjectAnthropometry};
use crate::series::{TimeSeries, Vec2};
use crate::signal::{differentiate, ButterworthLowpass, GaitEvents, Side, SignalError};

pub const SIGN_CONVENTION: &str = "positive = forward pitch (moment about the leftward mediolateral axis)";
pub const DEFAULT_BASELINE_STRIDES: usize = 5;

#[derive(Debug, Error)]
pub enum WbamError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("segment states do not match the inertial model: {0}")]
    StateMismatch(String),
    #[error("stride partition failed: {0}")]
    Partition(String),
    #[error("baseline WBAM range is zero")]
    DegenerateBaseline,
    #[error(transparent)]
    Body(#[from] BodyModelError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

/// Kinematic state history of one segment.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentTrack {
    pub segment_id: String,
    /// COM position, m.
    pub position: Vec<Vec2>,
    /// COM velocity, m/s.
    pub velocity: Vec<Vec2>,
    /// Sagittal angular velocity, rad/s, positive forward pitch.
    pub omega: Vec<f64>,
}

/// Time-aligned segment tracks sharing one sample clock.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentStateSeries {
    sample_rate: f64,
    start_time: f64,
    tracks: Vec<SegmentTrack>,
}

/// Positions and angles of one segment, as recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentKinematics {
    pub segment_id: String,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub angle: Vec<f64>,
}

impl SegmentStateSeries {
    pub fn new(sample_rate: f64, start_time: f64, tracks: Vec<SegmentTrack>) -> Result<Self, WbamError> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(WbamError::Argument(format!("sample rate must be positive, got {sample_rate}")));
        }
        let n = tracks.first().map_or(0, |t| t.position.len());
        for t in &tracks {
            if t.position.len() != n || t.velocity.len() != n || t.omega.len() != n {
                return Err(WbamError::StateMismatch(format!(
                    "segment {} has unequal channel lengths (expected {n})",
                    t.segment_id
                )));
            }
        }
        Ok(Self { sample_rate, start_time, tracks })
    }

    /// Builds states from recorded positions and angles: optional zero-phase
    /// lowpass, then numerical differentiation.
    pub fn from_kinematics(
        sample_rate: f64,
        start_time: f64,
        segments: &[SegmentKinematics],
        filter: Option<&ButterworthLowpass>,
    ) -> Result<Self, WbamError> {
        let smooth = |v: &[f64]| -> Result<TimeSeries, WbamError> {
            let s =
                TimeSeries::new(sample_rate, start_time, v.to_vec()).map_err(|e| WbamError::Argument(e.to_string()))?;
            Ok(match filter {
                Some(f) => TimeSeries::new(sample_rate, start_time, f.filtfilt(s.samples()))
                    .map_err(|e| WbamError::Argument(e.to_string()))?,
                None => s,
            })
        };
        let mut tracks = Vec::with_capacity(segments.len());
        for seg in segments {
            let (x, z, a) = (smooth(&seg.x)?, smooth(&seg.z)?, smooth(&seg.angle)?);
            let (vx, vz, w) = (differentiate(&x)?, differentiate(&z)?, differentiate(&a)?);
            tracks.push(SegmentTrack {
                segment_id: seg.segment_id.clone(),
                position: x.samples().iter().zip(z.samples()).map(|(&x, &z)| Vec2::new(x, z)).collect(),
                velocity: vx.samples().iter().zip(vz.samples()).map(|(&x, &z)| Vec2::new(x, z)).collect(),
                omega: w.into_samples(),
            });
        }
        Self::new(sample_rate, start_time, tracks)
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn start_time(&self) -> f64 {
        self.start_time
    }

    pub fn tracks(&self) -> &[SegmentTrack] {
        &self.tracks
    }

    pub fn len(&self) -> usize {
        self.tracks.first().map_or(0, |t| t.position.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Sagittal WBAM about the whole-body COM divided by `m·v·h`, where `m` is
/// body mass (without added exoskeleton mass), `v` the subject's walking
/// speed and `h` height.
pub fn compute_wbam_series(
    states: &SegmentStateSeries,
    inertials: &SegmentInertialSet,
    anthro: &SubjectAnthropometry,
) -> Result<TimeSeries, WbamError> {
    let segs = inertials.segments();
    if states.tracks.len() != segs.len() {
        return Err(WbamError::StateMismatch(format!(
            "{} segment tracks for {} inertial segments",
            states.tracks.len(),
            segs.len()
        )));
    }
    for (track, seg) in states.tracks.iter().zip(segs) {
        if track.segment_id != seg.segment_id {
            return Err(WbamError::StateMismatch(format!(
                "track {} where {} was expected",
                track.segment_id, seg.segment_id
            )));
        }
    }
    let norm = anthro.body_mass * anthro.walking_speed * anthro.height;
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(WbamError::Argument(format!(
            "normalization m·v·h must be positive (m = {}, v = {}, h = {})",
            anthro.body_mass, anthro.walking_speed, anthro.height
        )));
    }
    let total = inertials.total_mass();
    if !(total > 0.0) {
        return Err(WbamError::Body(BodyModelError::ZeroMass));
    }
    let n = states.len();
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let (mut p, mut v) = (Vec2::ZERO, Vec2::ZERO);
        for (track, seg) in states.tracks.iter().zip(segs) {
            p = p + track.position[k] * seg.mass;
            v = v + track.velocity[k] * seg.mass;
        }
        let (com_p, com_v) = (p * (1.0 / total), v * (1.0 / total));
        let l: f64 = states
            .tracks
            .iter()
            .zip(segs)
            .map(|(track, seg)| {
                let r = track.position[k] - com_p;
                let dv = (track.velocity[k] - com_v) * seg.mass;
                r.cross_sagittal(dv) + seg.inertia * track.omega[k]
            })
            .sum();
        out.push(l / norm);
    }
    TimeSeries::new(states.sample_rate, states.start_time, out)
        .map_err(|e| WbamError::Argument(format!("WBAM series: {e}")))
}

/// Half-open interval `[start, end)` in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t < self.end
    }

    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StridePartition {
    pub baseline_strides: Vec<Interval>,
    pub perturbed_stride: Interval,
    pub recovery_stride: Interval,
    pub perturbation_onset: f64,
}

/// Perturbed stride: heel strike to heel strike of `side` containing `onset`
/// (closed on the left). Recovery: the next stride. Baseline: the
/// `n_baseline` strides ending at the perturbed stride's heel strike.
pub fn partition_strides(
    events: &GaitEvents,
    side: Side,
    onset: f64,
    n_baseline: usize,
) -> Result<StridePartition, WbamError> {
    let hs = &events.foot(side).heel_strikes;
    let upto = hs.partition_point(|&h| h <= onset);
    if upto == 0 || upto + 1 >= hs.len() {
        return Err(WbamError::Partition(format!(
            "onset {onset} s is not followed by two complete {side:?} strides within the recorded heel strikes"
        )));
    }
    let k = upto - 1;
    if k < n_baseline {
        return Err(WbamError::Partition(format!(
            "{n_baseline} baseline strides requested but only {k} precede onset {onset} s"
        )));
    }
    Ok(StridePartition {
        baseline_strides: (k - n_baseline..k).map(|j| Interval::new(hs[j], hs[j + 1])).collect(),
        perturbed_stride: Interval::new(hs[k], hs[k + 1]),
        recovery_stride: Interval::new(hs[k + 1], hs[k + 2]),
        perturbation_onset: onset,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WbamRangeResult {
    pub wbam_series: TimeSeries,
    pub perturbed_range: f64,
    pub baseline_ranges: Vec<f64>,
    pub baseline_mean_range: f64,
    pub percent_change: f64,
}

fn range(values: &[f64]) -> Option<f64> {
    let first = *values.first()?;
    let (lo, hi) = values.iter().fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Some(hi - lo)
}

fn windowed_range(wbam: &TimeSeries, iv: Interval, what: &str) -> Result<f64, WbamError> {
    let (t0, t1) = (wbam.start_time(), wbam.end_time() + wbam.dt());
    if iv.start < t0 - 1e-9 || iv.end > t1 + 1e-9 {
        return Err(WbamError::Partition(format!(
            "{what} [{}, {}) lies outside the series span [{t0}, {t1})",
            iv.start, iv.end
        )));
    }
    range(wbam.window(iv.start, iv.end))
        .ok_or_else(|| WbamError::Partition(format!("{what} [{}, {}) contains no samples", iv.start, iv.end)))
}

/// Range over perturbed + recovery strides relative to the mean per-stride
/// baseline range.
pub fn wbam_range_metric(wbam: &TimeSeries, partition: &StridePartition) -> Result<WbamRangeResult, WbamError> {
    if partition.baseline_strides.is_empty() {
        return Err(WbamError::Partition("no baseline strides".into()));
    }
    let window = Interval::new(partition.perturbed_stride.start, partition.recovery_stride.end);
    let perturbed_range = windowed_range(wbam, window, "perturbed window")?;
    let baseline_ranges = partition
        .baseline_strides
        .iter()
        .map(|&iv| windowed_range(wbam, iv, "baseline stride"))
        .collect::<Result<Vec<_>, _>>()?;
    let baseline_mean_range = baseline_ranges.iter().sum::<f64>() / baseline_ranges.len() as f64;
    if !(baseline_mean_range > 0.0) {
        return Err(WbamError::DegenerateBaseline);
    }
    Ok(WbamRangeResult {
        wbam_series: wbam.clone(),
        perturbed_range,
        baseline_ranges,
        baseline_mean_range,
        percent_change: (perturbed_range / baseline_mean_range - 1.0) * 100.0,
    })
}

/// Mean of `speed` over the baseline strides, or `None` when they hold no
/// samples.
pub fn baseline_walking_speed(speed: &TimeSeries, partition: &StridePartition) -> Option<f64> {
    let (sum, n) = partition.baseline_strides.iter().fold((0.0, 0usize), |(s, n), iv| {
        let w = speed.window(iv.start, iv.end);
        (s + w.iter().sum::<f64>(), n + w.len())
    });
    (n > 0).then(|| sum / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::{SegmentInertia, Sex};
    use crate::signal::FootEvents;

    fn unit_anthro() -> SubjectAnthropometry {
        SubjectAnthropometry::new(1.0, 1.0, Sex::Unspecified).unwrap().with_walking_speed(1.0).unwrap()
    }

    fn seg(id: &str, mass: f64, inertia: f64) -> SegmentInertia {
        SegmentInertia { segment_id: id.into(), mass, inertia, length: 1.0, com_fraction: 0.5, added_mass: 0.0 }
    }

    fn track(id: &str, p: Vec2, v: Vec2, w: f64, n: usize) -> SegmentTrack {
        SegmentTrack { segment_id: id.into(), position: vec![p; n], velocity: vec![v; n], omega: vec![w; n] }
    }

    #[test]
    fn common_translation_has_no_momentum() {
        let set = SegmentInertialSet::from_segments(vec![seg("a", 2.0, 0.1), seg("b", 3.0, 0.2)]);
        let v = Vec2::new(1.3, -0.4);
        let states = SegmentStateSeries::new(
            100.0,
            0.0,
            vec![track("a", Vec2::new(0.0, 1.0), v, 0.0, 5), track("b", Vec2::new(0.5, 0.2), v, 0.0, 5)],
        )
        .unwrap();
        let l = compute_wbam_series(&states, &set, &unit_anthro()).unwrap();
        assert!(l.samples().iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn unit_cross_product() {
        // 1 kg at (1, 0) moving (0, 1) relative to a massive anchor at the origin
        let set = SegmentInertialSet::from_segments(vec![seg("m", 1.0, 0.0), seg("anchor", 1e12, 0.0)]);
        let states = SegmentStateSeries::new(
            100.0,
            0.0,
            vec![
                track("m", Vec2::new(1.0, 0.0), Vec2::new(0.0, 1.0), 0.0, 3),
                track("anchor", Vec2::ZERO, Vec2::ZERO, 0.0, 3),
            ],
        )
        .unwrap();
        let l = compute_wbam_series(&states, &set, &unit_anthro()).unwrap();
        // moving up in front of the COM pitches backward
        assert!((l.samples()[0] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn spin_term_and_normalization() {
        let set = SegmentInertialSet::from_segments(vec![seg("rod", 2.0, 0.5)]);
        let states = SegmentStateSeries::new(50.0, 0.0, vec![track("rod", Vec2::ZERO, Vec2::ZERO, 3.0, 4)]).unwrap();
        let anthro = SubjectAnthropometry::new(2.0, 1.5, Sex::Male).unwrap().with_walking_speed(1.25).unwrap();
        let l = compute_wbam_series(&states, &set, &anthro).unwrap();
        assert!((l.samples()[2] - 1.5 / (2.0 * 1.25 * 1.5)).abs() < 1e-15);
    }

    #[test]
    fn mismatched_tracks_rejected() {
        let set = SegmentInertialSet::from_segments(vec![seg("a", 1.0, 0.0)]);
        let states = SegmentStateSeries::new(50.0, 0.0, vec![track("b", Vec2::ZERO, Vec2::ZERO, 0.0, 4)]).unwrap();
        assert!(matches!(compute_wbam_series(&states, &set, &unit_anthro()), Err(WbamError::StateMismatch(_))));
        let states = SegmentStateSeries::new(50.0, 0.0, vec![]).unwrap();
        assert!(compute_wbam_series(&states, &set, &unit_anthro()).is_err());
    }

    fn heel_strikes(hs: Vec<f64>) -> GaitEvents {
        GaitEvents { left: FootEvents { heel_strikes: hs, toe_offs: vec![] }, right: FootEvents::default() }
    }

    #[test]
    fn partition_contains_onset() {
        let ev = heel_strikes(vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        let p = partition_strides(&ev, Side::Left, 2.3, 2).unwrap();
        assert_eq!(p.perturbed_stride, Interval::new(2.0, 3.0));
        assert_eq!(p.recovery_stride, Interval::new(3.0, 4.0));
        assert_eq!(p.baseline_strides, vec![Interval::new(0.0, 1.0), Interval::new(1.0, 2.0)]);
        let p = partition_strides(&ev, Side::Left, 2.0, 1).unwrap();
        assert_eq!(p.perturbed_stride, Interval::new(2.0, 3.0));
    }

    #[test]
    fn partition_errors() {
        let ev = heel_strikes(vec![0.0, 1.0, 2.0, 3.0, 4.0]);
        assert!(partition_strides(&ev, Side::Left, 3.5, 1).is_err());
        assert!(partition_strides(&ev, Side::Left, -0.5, 0).is_err());
        assert!(partition_strides(&ev, Side::Left, 1.5, 2).is_err());
        assert!(partition_strides(&ev, Side::Right, 1.5, 0).is_err());
    }

    #[test]
    fn range_metric_arithmetic() {
        let wbam = TimeSeries::new(1.0, 0.0, vec![0.0, 0.05, 0.0, 0.05, -0.02, 0.05, 0.01, 0.0]).unwrap();
        let p = StridePartition {
            baseline_strides: vec![Interval::new(0.0, 2.0), Interval::new(2.0, 4.0)],
            perturbed_stride: Interval::new(4.0, 5.0),
            recovery_stride: Interval::new(5.0, 7.0),
            perturbation_onset: 4.2,
        };
        let r = wbam_range_metric(&wbam, &p).unwrap();
        assert!((r.perturbed_range - 0.07).abs() < 1e-15);
        assert!((r.baseline_mean_range - 0.05).abs() < 1e-15);
        assert!((r.percent_change - 40.0).abs() < 1e-9);
    }

    #[test]
    fn flat_baseline_is_degenerate() {
        let wbam = TimeSeries::new(1.0, 0.0, vec![0.0, 0.0, 0.0, 0.3, 0.1]).unwrap();
        let p = StridePartition {
            baseline_strides: vec![Interval::new(0.0, 2.0)],
            perturbed_stride: Interval::new(2.0, 3.0),
            recovery_stride: Interval::new(3.0, 5.0),
            perturbation_onset: 2.5,
        };
        assert!(matches!(wbam_range_metric(&wbam, &p), Err(WbamError::DegenerateBaseline)));
        let p = StridePartition { recovery_stride: Interval::new(3.0, 9.0), ..p };
        assert!(matches!(wbam_range_metric(&wbam, &p), Err(WbamError::Partition(_))));
    }
}
