//! Prescribed-trajectory walker, closed-form test bodies and the exact
//! angular-momentum oracle.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::SynthError;
use crate::body::{
    attach_exoskeleton_mass, estimate_inertial_params, SegmentInertia, SegmentInertialSet, SegmentParameterTable,
    SubjectAnthropometry, SEGMENT_IDS,
};
use crate::controller::{trapezoid_torque, AssistanceCondition, TrapezoidProfile};
use crate::series::{TimeSeries, Vec2};
use crate::signal::Side;
use crate::trial_io::{GrfChannels, Trial};
use crate::wbam::{wbam_range_metric, Interval, SegmentKinematics, StridePartition, DEFAULT_BASELINE_STRIDES};

/// Height the stock motion pattern is expressed at, m.
const REFERENCE_HEIGHT: f64 = 1.75;
const GRAVITY: f64 = 9.81;
/// Flight window planted for a jumping response, relative to onset.
const JUMP_WINDOW: (f64, f64) = (0.25, 0.40);

/// `amplitude · sin(order · ω t + phase)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Harmonic {
    pub order: u32,
    pub amplitude: f64,
    pub phase: f64,
}

/// Constant offset plus stride-periodic harmonics.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChannelMotion {
    pub offset: f64,
    pub harmonics: Vec<Harmonic>,
}

impl ChannelMotion {
    fn new(offset: f64, harmonics: &[(u32, f64, f64)]) -> Self {
        Self {
            offset,
            harmonics: harmonics
                .iter()
                .map(|&(order, amplitude, phase)| Harmonic { order, amplitude, phase })
                .collect(),
        }
    }

    /// Periodic part and its time derivative.
    fn periodic(&self, w: f64, t: f64) -> (f64, f64) {
        self.harmonics.iter().fold((0.0, 0.0), |(v, d), h| {
            let k = h.order as f64 * w;
            let (s, c) = (k * t + h.phase).sin_cos();
            (v + h.amplitude * s, d + h.amplitude * k * c)
        })
    }

    fn scaled(&self, k: f64) -> Self {
        Self {
            offset: self.offset * k,
            harmonics: self.harmonics.iter().map(|h| Harmonic { amplitude: h.amplitude * k, ..*h }).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentMotion {
    pub segment_id: String,
    /// m at the reference height.
    pub x: ChannelMotion,
    pub z: ChannelMotion,
    /// rad, positive forward pitch.
    pub angle: ChannelMotion,
}

/// Per-segment trajectories for the 16-segment model.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionPattern {
    pub segments: Vec<SegmentMotion>,
}

impl MotionPattern {
    /// Symmetric gait: legs in antiphase, each arm opposite its leg, and a
    /// few millimetres of step-frequency trunk and head motion.
    pub fn standard() -> Self {
        let segments = SEGMENT_IDS
            .iter()
            .map(|&id| {
                let (base, side) = match id.rsplit_once('_') {
                    Some((b, "l")) => (b, Some(0.0)),
                    Some((b, "r")) => (b, Some(PI)),
                    _ => (id, None),
                };
                let leg_phase = side.unwrap_or(0.0);
                let arm_phase = leg_phase + PI;
                let (x, z, angle) = match base {
                    "head" => (
                        ChannelMotion::new(0.03, &[(2, 0.0015, 0.3)]),
                        ChannelMotion::new(1.63, &[]),
                        ChannelMotion::new(0.0, &[(2, 0.003, 0.8)]),
                    ),
                    "trunk" => (
                        ChannelMotion::new(0.02, &[(2, 0.001, 0.4)]),
                        ChannelMotion::new(1.40, &[]),
                        ChannelMotion::new(0.0, &[(2, 0.003, 0.6)]),
                    ),
                    "abdomen" => (
                        ChannelMotion::new(0.01, &[(2, 0.001, 0.5)]),
                        ChannelMotion::new(1.18, &[]),
                        ChannelMotion::new(0.0, &[(2, 0.003, 0.7)]),
                    ),
                    "pelvis" => (
                        ChannelMotion::new(0.0, &[(1, 0.01, 0.2)]),
                        ChannelMotion::new(0.98, &[]),
                        ChannelMotion::new(0.0, &[(1, 0.05, 0.1)]),
                    ),
                    "upper_arm" => limb(0.0, 1.30, 0.05, 0.005, 0.25, arm_phase),
                    "forearm" => limb(0.02, 1.04, 0.10, 0.01, 0.35, arm_phase),
                    "hand" => limb(0.03, 0.84, 0.14, 0.02, 0.30, arm_phase),
                    "thigh" => limb(0.0, 0.76, 0.09, 0.01, 0.35, leg_phase),
                    "shank" => limb(0.0, 0.40, 0.20, 0.02, 0.50, leg_phase - 0.6),
                    "foot" => limb(0.05, 0.06, 0.30, 0.04, 0.45, leg_phase - 1.0),
                    other => unreachable!("segment {other} has no motion"),
                };
                SegmentMotion { segment_id: id.to_string(), x, z, angle }
            })
            .collect();
        Self { segments }
    }

    /// Amplitudes scaled by `1 + 0.1·N(0,1)` and phases shifted by
    /// `0.05·N(0,1)` rad.
    pub fn jittered(&self, rng: &mut impl Rng) -> Self {
        let n = Normal::new(0.0, 1.0).expect("unit normal");
        let mut jitter = |c: &ChannelMotion| ChannelMotion {
            offset: c.offset,
            harmonics: c
                .harmonics
                .iter()
                .map(|h| Harmonic {
                    order: h.order,
                    amplitude: h.amplitude * (1.0_f64 + 0.1 * n.sample(rng)).clamp(0.7, 1.3),
                    phase: h.phase + 0.05 * n.sample(rng),
                })
                .collect(),
        };
        let segments = self
            .segments
            .iter()
            .map(|s| SegmentMotion {
                segment_id: s.segment_id.clone(),
                x: jitter(&s.x),
                z: jitter(&s.z),
                angle: jitter(&s.angle),
            })
            .collect();
        Self { segments }
    }
}

/// Swinging limb segment: fore-aft and angular motion at the stride
/// frequency, vertical lift a quarter cycle ahead. Limbs carry no higher
/// harmonics; with the legs in antiphase the fundamental largely cancels in
/// the whole-body sum, so any limb harmonic would dominate the residual and
/// central differences err four times more at twice the frequency.
fn limb(x0: f64, z0: f64, ax: f64, az: f64, aa: f64, phase: f64) -> (ChannelMotion, ChannelMotion, ChannelMotion) {
    let x = ChannelMotion::new(x0, &[(1, ax, phase)]);
    let z = ChannelMotion::new(z0, &[(1, az, phase + PI / 2.0)]);
    // distal end forward pitches the segment backward
    let angle = ChannelMotion::new(0.0, &[(1, aa, phase + PI)]);
    (x, z, angle)
}

/// Slip perturbation and the body's response to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub onset: f64,
    pub length: f64,
    /// Peak belt-speed increase, m/s.
    pub slip_excursion: f64,
    pub side: Side,
    /// Peak motion gain is `1 + response_gain · excursion / walking speed`.
    pub response_gain: f64,
    /// Plant a flight phase after onset.
    pub jump: bool,
}

impl Perturbation {
    pub fn new(onset: f64, side: Side) -> Self {
        Self { onset, length: 0.3, slip_excursion: 0.8, side, response_gain: 1.0, jump: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkerScenario {
    pub anthropometry: SubjectAnthropometry,
    pub exo_mass: f64,
    pub stride_period: f64,
    /// Belt speed, m/s.
    pub walking_speed: f64,
    pub first_heel_strike: f64,
    pub stance_fraction: f64,
    pub trial_length: f64,
    pub rate: f64,
    pub motion: MotionPattern,
    pub perturbation: Option<Perturbation>,
    pub seed: u64,
}

impl WalkerScenario {
    /// Stock scenario at 100 Hz with a seed-jittered motion pattern and no
    /// perturbation.
    pub fn new(anthropometry: SubjectAnthropometry, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            anthropometry,
            exo_mass: 0.0,
            stride_period: 1.1,
            walking_speed: anthropometry.walking_speed,
            first_heel_strike: 0.3,
            stance_fraction: 0.6,
            trial_length: 15.0,
            rate: 100.0,
            motion: MotionPattern::standard().jittered(&mut rng),
            perturbation: None,
            seed,
        }
    }

    pub fn with_perturbation(mut self, p: Perturbation) -> Self {
        self.perturbation = Some(p);
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let cfg = |m: String| Err(SynthError::Configuration(m));
        if !(self.rate >= 100.0 && self.rate.is_finite()) {
            return cfg(format!("rate must be >= 100 Hz, got {}", self.rate));
        }
        if !(self.stride_period > 0.0 && self.walking_speed > 0.0 && self.trial_length > 0.0) {
            return cfg("stride period, walking speed and trial length must be positive".into());
        }
        if !(self.stance_fraction > 0.5 && self.stance_fraction < 1.0) {
            return cfg(format!("stance fraction must lie in (0.5, 1), got {}", self.stance_fraction));
        }
        if !(self.exo_mass >= 0.0) {
            return cfg(format!("negative exoskeleton mass {}", self.exo_mass));
        }
        if self.motion.segments.len() != SEGMENT_IDS.len() {
            return cfg(format!("motion pattern has {} segments", self.motion.segments.len()));
        }
        if let Some(p) = &self.perturbation {
            if !(p.length > 0.0) {
                return cfg(format!("perturbation length must be positive, got {}", p.length));
            }
            if !(p.onset >= 0.0 && p.onset + p.length < self.trial_length) {
                return cfg(format!("perturbation at {} s does not fit in the trial", p.onset));
            }
        }
        self.anthropometry.validate().map_err(|e| SynthError::Configuration(e.to_string()))
    }

    /// Number of samples in the trial.
    pub fn samples(&self) -> usize {
        (self.trial_length * self.rate).round() as usize
    }
}

/// Kinematic state of one segment at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentPose {
    pub position: Vec2,
    pub velocity: Vec2,
    pub angle: f64,
    pub omega: f64,
}

/// A body whose segment trajectories and derivatives are known exactly.
pub trait ClosedFormBody {
    fn inertials(&self) -> &SegmentInertialSet;
    /// Anthropometry whose `body_mass · walking_speed · height` normalizes
    /// angular momentum.
    fn anthropometry(&self) -> SubjectAnthropometry;
    fn pose(&self, segment: usize, t: f64) -> SegmentPose;
}

/// Normalized sagittal WBAM from exact positions and derivatives.
pub fn analytic_wbam_oracle<B: ClosedFormBody + ?Sized>(body: &B, t: f64) -> f64 {
    let segs = body.inertials().segments();
    let poses: Vec<SegmentPose> = (0..segs.len()).map(|i| body.pose(i, t)).collect();
    let total: f64 = segs.iter().map(|s| s.mass).sum();
    let (p, v) = segs
        .iter()
        .zip(&poses)
        .fold((Vec2::ZERO, Vec2::ZERO), |(p, v), (s, q)| (p + q.position * s.mass, v + q.velocity * s.mass));
    let (cp, cv) = (p * (1.0 / total), v * (1.0 / total));
    let l: f64 = segs
        .iter()
        .zip(&poses)
        .map(|(s, q)| (q.position - cp).cross_sagittal((q.velocity - cv) * s.mass) + s.inertia * q.omega)
        .sum();
    let a = body.anthropometry();
    l / (a.body_mass * a.walking_speed * a.height)
}

/// Positions and angles sampled at `start + k / rate`.
pub fn sample_kinematics<B: ClosedFormBody + ?Sized>(
    body: &B,
    rate: f64,
    start: f64,
    n: usize,
) -> Vec<SegmentKinematics> {
    body.inertials()
        .segments()
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut k = SegmentKinematics {
                segment_id: s.segment_id.clone(),
                x: Vec::with_capacity(n),
                z: Vec::with_capacity(n),
                angle: Vec::with_capacity(n),
            };
            for j in 0..n {
                let p = body.pose(i, start + j as f64 / rate);
                k.x.push(p.position.x);
                k.z.push(p.position.z);
                k.angle.push(p.angle);
            }
            k
        })
        .collect()
}

/// Oracle WBAM sampled at `start + k / rate`.
pub fn sample_oracle<B: ClosedFormBody + ?Sized>(body: &B, rate: f64, start: f64, n: usize) -> TimeSeries {
    TimeSeries::from_fn(rate, start, n, |t| analytic_wbam_oracle(body, t)).expect("finite oracle")
}

/// A uniform rod spinning at a constant rate about its fixed COM.
#[derive(Debug, Clone)]
pub struct RotatingRod {
    inertials: SegmentInertialSet,
    anthro: SubjectAnthropometry,
    omega: f64,
}

impl RotatingRod {
    /// `height` and `speed` set the normalization only.
    pub fn new(length: f64, mass: f64, omega: f64, height: f64, speed: f64) -> Result<Self, SynthError> {
        let anthro = SubjectAnthropometry::new(mass, height, Default::default())
            .and_then(|a| a.with_walking_speed(speed))
            .map_err(|e| SynthError::Configuration(e.to_string()))?;
        let rod = SegmentInertia {
            segment_id: "rod".into(),
            mass,
            inertia: mass * length * length / 12.0,
            length,
            com_fraction: 0.5,
            added_mass: 0.0,
        };
        Ok(Self { inertials: SegmentInertialSet::from_segments(vec![rod]), anthro, omega })
    }

    /// `(mL²/12)·Ω / (m·v·h)`.
    pub fn expected_wbam(&self) -> f64 {
        self.inertials.segments()[0].inertia * self.omega
            / (self.anthro.body_mass * self.anthro.walking_speed * self.anthro.height)
    }
}

impl ClosedFormBody for RotatingRod {
    fn inertials(&self) -> &SegmentInertialSet {
        &self.inertials
    }

    fn anthropometry(&self) -> SubjectAnthropometry {
        self.anthro
    }

    fn pose(&self, _segment: usize, t: f64) -> SegmentPose {
        SegmentPose { position: Vec2::new(0.0, 1.0), velocity: Vec2::ZERO, angle: self.omega * t, omega: self.omega }
    }
}

/// Smooth gain on the periodic motion: rises from 1 to `gain` over `ramp`
/// seconds after `start`, holds, and returns to 1 by `end` (quintic
/// smoothstep ramps, continuous through the second derivative).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseEnvelope {
    pub start: f64,
    pub end: f64,
    pub ramp: f64,
    pub gain: f64,
}

impl ResponseEnvelope {
    pub const NONE: ResponseEnvelope = ResponseEnvelope { start: 0.0, end: 0.0, ramp: 1.0, gain: 1.0 };

    /// Weight in [0, 1] and its derivative.
    fn weight(&self, t: f64) -> (f64, f64) {
        let step = |u: f64| -> (f64, f64) {
            let u = u.clamp(0.0, 1.0);
            (u * u * u * (10.0 + u * (-15.0 + 6.0 * u)), 30.0 * u * u * (1.0 - u) * (1.0 - u))
        };
        if t <= self.start || t >= self.end {
            return (0.0, 0.0);
        }
        if t < self.start + self.ramp {
            let (w, d) = step((t - self.start) / self.ramp);
            (w, d / self.ramp)
        } else if t > self.end - self.ramp {
            let (w, d) = step((self.end - t) / self.ramp);
            (w, -d / self.ramp)
        } else {
            (1.0, 0.0)
        }
    }

    /// Gain and its derivative.
    pub fn eval(&self, t: f64) -> (f64, f64) {
        let (w, d) = self.weight(t);
        (1.0 + (self.gain - 1.0) * w, (self.gain - 1.0) * d)
    }
}

/// Closed-form walker built from a scenario. Segment COM position is
/// `common(t) + offset + s(t)·periodic(t)`, angle is `s(t)·periodic(t)`,
/// where `s` is the perturbation response envelope.
#[derive(Debug, Clone)]
pub struct SyntheticWalker {
    scenario: WalkerScenario,
    inertials: SegmentInertialSet,
    motion: Vec<SegmentMotion>,
    envelope: ResponseEnvelope,
    omega: f64,
}

/// Fraction of a stride between the envelope end and the recovery stride end.
const ENVELOPE_MARGIN: f64 = 0.15;

impl SyntheticWalker {
    pub fn new(scenario: &WalkerScenario) -> Result<Self, SynthError> {
        scenario.validate()?;
        let table = SegmentParameterTable::default_table();
        let base = estimate_inertial_params(&scenario.anthropometry, &table)
            .map_err(|e| SynthError::Configuration(e.to_string()))?;
        let inertials =
            attach_exoskeleton_mass(&base, scenario.exo_mass).map_err(|e| SynthError::Configuration(e.to_string()))?;
        let k = scenario.anthropometry.height / REFERENCE_HEIGHT;
        let motion = scenario
            .motion
            .segments
            .iter()
            .map(|m| SegmentMotion {
                segment_id: m.segment_id.clone(),
                x: m.x.scaled(k),
                z: m.z.scaled(k),
                angle: m.angle.clone(),
            })
            .collect::<Vec<_>>();
        for (m, s) in motion.iter().zip(inertials.segments()) {
            if m.segment_id != s.segment_id {
                return Err(SynthError::Configuration(format!(
                    "motion for {} where {} was expected",
                    m.segment_id, s.segment_id
                )));
            }
        }
        let mut walker = Self {
            scenario: scenario.clone(),
            inertials,
            motion,
            envelope: ResponseEnvelope::NONE,
            omega: 2.0 * PI / scenario.stride_period,
        };
        if let Some(p) = scenario.perturbation {
            walker.envelope =
                walker.envelope_for(&p, 1.0 + p.response_gain * p.slip_excursion / scenario.walking_speed);
        }
        Ok(walker)
    }

    pub fn scenario(&self) -> &WalkerScenario {
        &self.scenario
    }

    pub fn envelope(&self) -> ResponseEnvelope {
        self.envelope
    }

    /// Envelope from onset to shortly before the end of the recovery
    /// stride. The margin keeps the whole response inside the analysis
    /// window when detected heel strikes lead the scheduled ones, as they do
    /// after low-pass filtering the force channels.
    fn envelope_for(&self, p: &Perturbation, gain: f64) -> ResponseEnvelope {
        let t = self.scenario.stride_period;
        let hs = self.heel_strike_before(p.side, p.onset);
        ResponseEnvelope { start: p.onset, end: hs + (2.0 - ENVELOPE_MARGIN) * t, ramp: 0.35 * t, gain }
    }

    fn first_heel_strike(&self, side: Side) -> f64 {
        self.scenario.first_heel_strike
            + match side {
                Side::Left => 0.0,
                Side::Right => 0.5 * self.scenario.stride_period,
            }
    }

    fn heel_strike_before(&self, side: Side, t: f64) -> f64 {
        let t0 = self.first_heel_strike(side);
        let period = self.scenario.stride_period;
        t0 + ((t - t0) / period).floor() * period
    }

    fn schedule(&self, side: Side, offset: f64) -> Vec<f64> {
        let (t0, period) = (self.first_heel_strike(side) + offset, self.scenario.stride_period);
        let end = self.scenario.trial_length - 1.0 / self.scenario.rate;
        let first = (-t0 / period).ceil() as i64;
        (first..).map(|k| t0 + k as f64 * period).take_while(|&t| t <= end).collect()
    }

    /// Planted heel strikes within the trial.
    pub fn heel_strikes(&self, side: Side) -> Vec<f64> {
        self.schedule(side, 0.0)
    }

    /// Planted toe offs within the trial.
    pub fn toe_offs(&self, side: Side) -> Vec<f64> {
        self.schedule(side, self.scenario.stance_fraction * self.scenario.stride_period)
    }

    fn in_stance(&self, side: Side, t: f64) -> bool {
        let phase = ((t - self.first_heel_strike(side)) / self.scenario.stride_period).rem_euclid(1.0);
        phase < self.scenario.stance_fraction
    }

    /// Stride partition from the planted schedule.
    pub fn planted_partition(&self) -> Option<StridePartition> {
        let p = self.scenario.perturbation?;
        let t = self.scenario.stride_period;
        let hs = self.heel_strike_before(p.side, p.onset);
        let n = DEFAULT_BASELINE_STRIDES;
        if hs - n as f64 * t < 0.0 || hs + 2.0 * t > self.scenario.trial_length {
            return None;
        }
        Some(StridePartition {
            baseline_strides: (0..n)
                .map(|j| {
                    let s = hs - (n - j) as f64 * t;
                    Interval::new(s, s + t)
                })
                .collect(),
            perturbed_stride: Interval::new(hs, hs + t),
            recovery_stride: Interval::new(hs + t, hs + 2.0 * t),
            perturbation_onset: p.onset,
        })
    }

    fn common(&self, t: f64) -> (Vec2, Vec2) {
        let k = self.scenario.anthropometry.height / REFERENCE_HEIGHT;
        let w = self.omega;
        // step-frequency bob and stride-frequency sway, shared by all segments
        let (s1, c1) = (w * t).sin_cos();
        let (s2, c2) = (2.0 * w * t).sin_cos();
        (Vec2::new(0.01 * k * s1, 0.02 * k * c2), Vec2::new(0.01 * k * w * c1, -0.04 * k * w * s2))
    }

    fn pose_with(&self, i: usize, t: f64, env: &ResponseEnvelope) -> SegmentPose {
        let (s, sd) = env.eval(t);
        let m = &self.motion[i];
        let (cp, cv) = self.common(t);
        let (hx, hxd) = m.x.periodic(self.omega, t);
        let (hz, hzd) = m.z.periodic(self.omega, t);
        let (ha, had) = m.angle.periodic(self.omega, t);
        SegmentPose {
            position: cp + Vec2::new(m.x.offset + s * hx, m.z.offset + s * hz),
            velocity: cv + Vec2::new(sd * hx + s * hxd, sd * hz + s * hzd),
            angle: m.angle.offset + s * ha,
            omega: sd * ha + s * had,
        }
    }

    /// Perturbed leg's belt speed profile.
    fn belt_speed(&self, side: Side, t: f64) -> f64 {
        let base = self.scenario.walking_speed;
        match self.scenario.perturbation {
            Some(p) if p.side == side => {
                let profile = TrapezoidProfile { t_max: p.slip_excursion, duration: p.length };
                base + trapezoid_torque(t - p.onset, &profile)
            }
            _ => base,
        }
    }

    fn vertical_force(&self, side: Side, t: f64) -> f64 {
        if let Some(p) = self.scenario.perturbation.filter(|p| p.jump) {
            if (p.onset + JUMP_WINDOW.0..p.onset + JUMP_WINDOW.1).contains(&t) {
                return 0.0;
            }
        }
        if !self.in_stance(side, t) {
            return 0.0;
        }
        let weight = self.inertials.total_mass() * GRAVITY;
        if self.in_stance(side.opposite(), t) {
            0.5 * weight
        } else {
            weight
        }
    }

    /// Samples the full trial. Ids and condition are placeholders for the
    /// caller to fill in.
    pub fn generate(&self) -> Trial {
        let sc = &self.scenario;
        let n = sc.samples();
        let time = |k: usize| k as f64 / sc.rate;
        let grf = GrfChannels {
            fz_left: (0..n).map(|k| self.vertical_force(Side::Left, time(k))).collect(),
            fz_right: (0..n).map(|k| self.vertical_force(Side::Right, time(k))).collect(),
            belt_left: (0..n).map(|k| self.belt_speed(Side::Left, time(k))).collect(),
            belt_right: (0..n).map(|k| self.belt_speed(Side::Right, time(k))).collect(),
        };
        let p = sc
            .perturbation
            .unwrap_or(Perturbation { slip_excursion: 0.0, ..Perturbation::new(0.5 * sc.trial_length, Side::Left) });
        Trial {
            trial_id: format!("synthetic_{}", sc.seed),
            subject_id: "synthetic".into(),
            session: 1,
            condition: AssistanceCondition::no_exoskeleton(),
            onset: p.onset,
            perturbation_length: p.length,
            perturbed_side: p.side,
            sample_rate: sc.rate,
            start_time: 0.0,
            kinematics: sample_kinematics(self, sc.rate, 0.0, n),
            grf,
            events_override: None,
        }
    }

    /// Oracle percent change of WBAM range over the planted partition for a
    /// given peak gain.
    fn oracle_percent_change(&self, basis: &GainBasis, partition: &StridePartition, gain: f64) -> Option<f64> {
        let l: Vec<f64> = (0..basis.a.len()).map(|k| basis.a[k] + gain * (basis.b[k] + gain * basis.c[k])).collect();
        let series = TimeSeries::new(self.scenario.rate, 0.0, l).ok()?;
        wbam_range_metric(&series, partition).ok().map(|r| r.percent_change)
    }

    /// Response gain whose oracle percent change equals `target`, found by
    /// bisection on the peak gain in `[0.05, 5]`. Targets outside the
    /// reachable range are clamped to the nearest end; the flag reports it.
    pub fn calibrate_response_gain(&self, target: f64) -> Result<(f64, bool), SynthError> {
        let p = self
            .scenario
            .perturbation
            .ok_or_else(|| SynthError::Configuration("calibration needs a perturbation".into()))?;
        if !(p.slip_excursion > 0.0) {
            return Err(SynthError::Configuration("calibration needs a positive slip excursion".into()));
        }
        let partition = self
            .planted_partition()
            .ok_or_else(|| SynthError::Configuration("perturbation too close to the trial edges".into()))?;
        let basis = self.gain_basis(&p);
        let pc = |g: f64| self.oracle_percent_change(&basis, &partition, g).unwrap_or(f64::NAN);
        let (mut lo, mut hi) = (0.05, 5.0);
        let (plo, phi) = (pc(lo), pc(hi));
        let (gain, clamped) = if !(target > plo) {
            (lo, true)
        } else if !(target < phi) {
            (hi, true)
        } else {
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if pc(mid) < target {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            (0.5 * (lo + hi), false)
        };
        Ok(((gain - 1.0) * self.scenario.walking_speed / p.slip_excursion, clamped))
    }

    /// Oracle WBAM is quadratic in the peak gain `G` at every instant:
    /// `L(t) = a(t) + G·b(t) + G²·c(t)`. Recovered from three evaluations.
    fn gain_basis(&self, p: &Perturbation) -> GainBasis {
        let n = self.scenario.samples();
        let eval = |g: f64| -> Vec<f64> {
            let probe = Probe { walker: self, envelope: self.envelope_for(p, g) };
            (0..n).map(|k| analytic_wbam_oracle(&probe, k as f64 / self.scenario.rate)).collect()
        };
        let (l0, l1, l2) = (eval(0.0), eval(1.0), eval(2.0));
        let mut basis = GainBasis { a: l0.clone(), b: Vec::with_capacity(n), c: Vec::with_capacity(n) };
        for k in 0..n {
            let c = 0.5 * (l2[k] - 2.0 * l1[k] + l0[k]);
            basis.c.push(c);
            basis.b.push(l1[k] - l0[k] - c);
        }
        basis
    }
}

struct GainBasis {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
}

/// The walker with a substitute envelope.
struct Probe<'a> {
    walker: &'a SyntheticWalker,
    envelope: ResponseEnvelope,
}

impl ClosedFormBody for Probe<'_> {
    fn inertials(&self) -> &SegmentInertialSet {
        &self.walker.inertials
    }

    fn anthropometry(&self) -> SubjectAnthropometry {
        self.walker.anthropometry()
    }

    fn pose(&self, segment: usize, t: f64) -> SegmentPose {
        self.walker.pose_with(segment, t, &self.envelope)
    }
}

impl ClosedFormBody for SyntheticWalker {
    fn inertials(&self) -> &SegmentInertialSet {
        &self.inertials
    }

    fn anthropometry(&self) -> SubjectAnthropometry {
        SubjectAnthropometry { walking_speed: self.scenario.walking_speed, ..self.scenario.anthropometry }
    }

    fn pose(&self, segment: usize, t: f64) -> SegmentPose {
        self.pose_with(segment, t, &self.envelope)
    }
}

/// Every segment of the walker's standing posture translating with one
/// common velocity.
#[derive(Debug, Clone)]
pub struct TranslatingBody {
    walker: SyntheticWalker,
    velocity: Vec2,
}

impl TranslatingBody {
    pub fn new(scenario: &WalkerScenario, velocity: Vec2) -> Result<Self, SynthError> {
        Ok(Self { walker: SyntheticWalker::new(scenario)?, velocity })
    }
}

impl ClosedFormBody for TranslatingBody {
    fn inertials(&self) -> &SegmentInertialSet {
        self.walker.inertials()
    }

    fn anthropometry(&self) -> SubjectAnthropometry {
        self.walker.anthropometry()
    }

    fn pose(&self, segment: usize, t: f64) -> SegmentPose {
        let m = &self.walker.motion[segment];
        SegmentPose {
            position: Vec2::new(m.x.offset, m.z.offset) + self.velocity * t,
            velocity: self.velocity,
            angle: m.angle.offset,
            omega: 0.0,
        }
    }
}

/// Generates the trial described by `scenario`.
pub fn generate_trial(scenario: &WalkerScenario) -> Result<Trial, SynthError> {
    Ok(SyntheticWalker::new(scenario)?.generate())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::Sex;
    use crate::signal::{detect_gait_events, differentiate};
    use crate::wbam::{compute_wbam_series, partition_strides, SegmentStateSeries};

    fn scenario() -> WalkerScenario {
        let anthro = SubjectAnthropometry::new(70.0, 1.75, Sex::Male).unwrap();
        WalkerScenario::new(anthro, 7)
    }

    #[test]
    fn envelope_derivative_matches_difference() {
        let e = ResponseEnvelope { start: 1.0, end: 3.0, ramp: 0.3, gain: 1.8 };
        for t in [0.9, 1.05, 1.2, 1.29, 2.0, 2.75, 2.95, 3.1] {
            let h = 1e-6;
            let fd = (e.eval(t + h).0 - e.eval(t - h).0) / (2.0 * h);
            assert!((fd - e.eval(t).1).abs() < 1e-6, "{t}");
        }
        assert_eq!(e.eval(2.0).0, 1.8);
        assert_eq!(e.eval(0.5).0, 1.0);
    }

    #[test]
    fn pose_velocity_is_position_derivative() {
        let sc = scenario().with_perturbation(Perturbation::new(7.2, Side::Left));
        let w = SyntheticWalker::new(&sc).unwrap();
        let h = 1e-6;
        for i in 0..16 {
            for t in [3.3, 7.25, 7.5, 8.6] {
                let (a, b, p) = (w.pose(i, t - h), w.pose(i, t + h), w.pose(i, t));
                let v = (b.position - a.position) * (0.5 / h);
                assert!((v.x - p.velocity.x).abs() < 1e-6 && (v.z - p.velocity.z).abs() < 1e-6);
                assert!(((b.angle - a.angle) / (2.0 * h) - p.omega).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn same_seed_same_trial() {
        let sc = scenario().with_perturbation(Perturbation::new(7.2, Side::Left));
        assert_eq!(generate_trial(&sc).unwrap(), generate_trial(&sc).unwrap());
        let other = WalkerScenario { seed: 8, ..scenario() };
        let other = WalkerScenario::new(other.anthropometry, 8);
        assert_ne!(other.motion, scenario().motion);
    }

    #[test]
    fn rod_oracle_is_closed_form() {
        let rod = RotatingRod::new(0.9, 3.0, 2.5, 1.7, 1.25).unwrap();
        let want = 3.0 * 0.81 / 12.0 * 2.5 / (3.0 * 1.25 * 1.7);
        assert!((rod.expected_wbam() - want).abs() < 1e-15);
        assert!((analytic_wbam_oracle(&rod, 0.37) - want).abs() < 1e-15);
    }

    #[test]
    fn translation_oracle_is_zero() {
        let body = TranslatingBody::new(&scenario(), Vec2::new(1.25, 0.1)).unwrap();
        for t in [0.0, 1.0, 7.3] {
            assert!(analytic_wbam_oracle(&body, t).abs() < 1e-15);
        }
    }

    #[test]
    fn detected_events_match_planted_schedule() {
        let sc = scenario().with_perturbation(Perturbation::new(7.2, Side::Left));
        let w = SyntheticWalker::new(&sc).unwrap();
        let trial = w.generate();
        let ev = detect_gait_events(&trial.vertical_grf(Side::Left), &trial.vertical_grf(Side::Right), 20.0).unwrap();
        for side in [Side::Left, Side::Right] {
            let (got, want) = (&ev.foot(side).heel_strikes, w.heel_strikes(side));
            assert_eq!(got.len(), want.len(), "{side:?}");
            assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() <= 0.01));
            let (got, want) = (&ev.foot(side).toe_offs, w.toe_offs(side));
            assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() <= 0.01));
        }
        let p = partition_strides(&ev, Side::Left, 7.2, 5).unwrap();
        assert!(p.perturbed_stride.contains(7.2));
        let planted = w.planted_partition().unwrap();
        assert!((p.perturbed_stride.start - planted.perturbed_stride.start).abs() <= 0.01);
    }

    #[test]
    fn belt_channel_carries_slip() {
        let sc = scenario().with_perturbation(Perturbation::new(7.2, Side::Right));
        let trial = generate_trial(&sc).unwrap();
        let peak = trial.grf.belt_right.iter().cloned().fold(0.0, f64::max);
        assert!((peak - 2.05).abs() < 1e-12);
        assert!(trial.grf.belt_left.iter().all(|v| *v == 1.25));
    }

    #[test]
    fn calibration_hits_target_through_oracle() {
        let sc = scenario().with_perturbation(Perturbation::new(7.2, Side::Left));
        let w = SyntheticWalker::new(&sc).unwrap();
        let (gain, clamped) = w.calibrate_response_gain(60.0).unwrap();
        assert!(!clamped);
        let sc2 = WalkerScenario {
            perturbation: Some(Perturbation { response_gain: gain, ..sc.perturbation.unwrap() }),
            ..sc
        };
        let w2 = SyntheticWalker::new(&sc2).unwrap();
        let oracle = sample_oracle(&w2, sc2.rate, 0.0, sc2.samples());
        let r = wbam_range_metric(&oracle, &w2.planted_partition().unwrap()).unwrap();
        assert!((r.percent_change - 60.0).abs() < 1e-6, "{}", r.percent_change);
    }

    #[test]
    fn unfiltered_pipeline_tracks_oracle() {
        let sc = scenario().with_perturbation(Perturbation::new(7.2, Side::Left));
        let w = SyntheticWalker::new(&sc).unwrap();
        let trial = w.generate();
        let states = SegmentStateSeries::from_kinematics(sc.rate, 0.0, &trial.kinematics, None).unwrap();
        let num = compute_wbam_series(&states, w.inertials(), &w.anthropometry()).unwrap();
        let oracle = sample_oracle(&w, sc.rate, 0.0, sc.samples());
        let err: f64 = num.samples().iter().zip(oracle.samples()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = oracle.samples().iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(err / norm < 1e-3, "{}", err / norm);
        // sanity: differentiation helper agrees with pose velocities in the interior
        let x = TimeSeries::new(sc.rate, 0.0, trial.kinematics[15].x.clone()).unwrap();
        let v = differentiate(&x).unwrap();
        assert!((v.samples()[700] - w.pose(15, 7.0).velocity.x).abs() < 0.01);
    }
}
