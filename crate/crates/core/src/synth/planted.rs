//! Planted response surfaces: trial-level outcome values drawn from a known
//! quadratic bowl plus subject offsets and trial noise.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SynthError;
use crate::controller::{condition_grid, AssistanceCondition, ProfileKind, DURATION_LEVELS, MAGNITUDE_LEVELS};
use crate::dataset::{ConditionDataset, Outcome, TrialRecord};

/// RNG stream tags; each (tag, index) pair owns an independent stream.
pub(crate) const STREAM_SUBJECT: u64 = 1;
pub(crate) const STREAM_SESSION: u64 = 2;

pub(crate) fn stream_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((tag << 48) | index);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Values for the three non-trapezoid conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlValues {
    pub spline_baseline: f64,
    pub no_assist: f64,
    pub no_exoskeleton: f64,
}

impl Default for ControlValues {
    fn default() -> Self {
        Self { spline_baseline: 68.0, no_assist: 72.0, no_exoskeleton: 70.0 }
    }
}

/// Rating model: `round(intercept + slope·(f − f*) + subject + noise)`,
/// clamped to 1..=5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpusSpec {
    pub intercept: f64,
    /// Score per percentage point of WBAM change; negative because lower
    /// WBAM range feels more stable.
    pub slope: f64,
    pub subject_sd: f64,
    pub noise_sd: f64,
}

impl Default for OpusSpec {
    fn default() -> Self {
        Self { intercept: 4.2, slope: -0.015, subject_sd: 0.4, noise_sd: 0.5 }
    }
}

/// Form of the planted trapezoid response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PlantedShape {
    /// `f* + [Δm Δd]·C·[Δm Δd]ᵀ + κ·Δm·Δd`, a bowl with its minimum at the
    /// optimum.
    #[default]
    Bowl,
    /// `f* + κ·Δm·Δd`; curvature is ignored. This lies inside the mixed
    /// model's fixed-effect family, so variance components are recoverable
    /// without lack-of-fit leaking into the residual.
    Bilinear,
}

/// Ground truth for a synthetic study. The trapezoid response follows
/// [`PlantedShape`] with `Δ = point − optimum`, and every trial adds its
/// subject's offset and independent noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantedSurfaceSpec {
    /// (magnitude fraction, duration multiple).
    pub optimum: (f64, f64),
    pub optimum_value: f64,
    pub shape: PlantedShape,
    /// Symmetric positive-definite.
    pub curvature: [[f64; 2]; 2],
    pub interaction: f64,
    pub controls: ControlValues,
    pub noise_sd: f64,
    /// Overrides of `noise_sd` keyed by condition key.
    pub noise_sd_by_condition: BTreeMap<String, f64>,
    pub subject_offset_sd: f64,
    pub n_subjects: usize,
    pub n_repetitions: usize,
    pub magnitudes: Vec<f64>,
    pub durations: Vec<f64>,
    pub opus: OpusSpec,
    pub seed: u64,
}

impl Default for PlantedSurfaceSpec {
    fn default() -> Self {
        Self {
            optimum: (0.159, 3.64),
            optimum_value: 40.0,
            shape: PlantedShape::Bowl,
            curvature: [[1500.0, 0.0], [0.0, 20.0]],
            interaction: -100.0,
            controls: ControlValues::default(),
            noise_sd: 350.1_f64.sqrt(),
            noise_sd_by_condition: BTreeMap::new(),
            subject_offset_sd: 1237.7_f64.sqrt(),
            n_subjects: 8,
            n_repetitions: 4,
            magnitudes: MAGNITUDE_LEVELS.to_vec(),
            durations: DURATION_LEVELS.to_vec(),
            opus: OpusSpec::default(),
            seed: 0,
        }
    }
}

impl PlantedSurfaceSpec {
    /// Noise-free copy.
    pub fn noiseless(&self) -> Self {
        Self {
            noise_sd: 0.0,
            noise_sd_by_condition: BTreeMap::new(),
            subject_offset_sd: 0.0,
            opus: OpusSpec { subject_sd: 0.0, noise_sd: 0.0, ..self.opus },
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError::Configuration(m));
        let c = self.curvature;
        if self.shape == PlantedShape::Bowl {
            if c[0][1] != c[1][0] {
                return fail("curvature must be symmetric".into());
            }
            if !(c[0][0] > 0.0 && c[0][0] * c[1][1] - c[0][1] * c[1][0] > 0.0) {
                return fail(format!("curvature {c:?} is not positive-definite"));
            }
            // the interaction shares the off-diagonal; the bowl must stay a bowl
            let off = c[0][1] + 0.5 * self.interaction;
            if !(c[0][0] * c[1][1] - off * off > 0.0) {
                return fail(format!(
                    "interaction {} makes the planted form indefinite; the optimum would not be a minimum",
                    self.interaction
                ));
            }
        }
        if self.n_subjects < 1 || self.n_repetitions < 1 {
            return fail("n_subjects and n_repetitions must be at least 1".into());
        }
        let sds = std::iter::once(self.noise_sd).chain(self.noise_sd_by_condition.values().copied()).chain([
            self.subject_offset_sd,
            self.opus.subject_sd,
            self.opus.noise_sd,
        ]);
        if sds.into_iter().any(|s| !(s >= 0.0 && s.is_finite())) {
            return fail("standard deviations must be finite and non-negative".into());
        }
        let values = [
            self.optimum.0,
            self.optimum.1,
            self.optimum_value,
            self.interaction,
            self.opus.intercept,
            self.opus.slope,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return fail("non-finite planted parameter".into());
        }
        self.grid().map(|_| ())
    }

    /// 25 trapezoid cells followed by the three controls.
    pub fn grid(&self) -> Result<Vec<AssistanceCondition>, SynthError> {
        condition_grid(&self.magnitudes, &self.durations).map_err(|e| SynthError::Configuration(e.to_string()))
    }

    /// Noise-free outcome for a condition.
    pub fn value(&self, condition: &AssistanceCondition) -> f64 {
        match condition.profile {
            ProfileKind::Trapezoid => self.surface(condition.magnitude_fraction, condition.duration_multiple),
            ProfileKind::SplineBaseline => self.controls.spline_baseline,
            ProfileKind::NoAssist => self.controls.no_assist,
            ProfileKind::NoExoskeleton => self.controls.no_exoskeleton,
        }
    }

    /// The planted response at an arbitrary point.
    pub fn surface(&self, magnitude: f64, duration: f64) -> f64 {
        let (dm, dd) = (magnitude - self.optimum.0, duration - self.optimum.1);
        if self.shape == PlantedShape::Bilinear {
            return self.optimum_value + self.interaction * dm * dd;
        }
        let c = self.curvature;
        self.optimum_value
            + c[0][0] * dm * dm
            + (c[0][1] + c[1][0]) * dm * dd
            + c[1][1] * dd * dd
            + self.interaction * dm * dd
    }

    fn noise_sd_for(&self, condition: &AssistanceCondition) -> f64 {
        self.noise_sd_by_condition.get(&condition.key()).copied().unwrap_or(self.noise_sd)
    }

    pub fn subject_id(&self, index: usize) -> String {
        let width = self.n_subjects.to_string().len().max(2);
        format!("s{:0width$}", index + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSubject {
    pub subject_id: String,
    pub offset: f64,
    pub opus_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTrial {
    pub trial_id: String,
    pub subject_id: String,
    /// 1-based.
    pub session: u32,
    /// Position in the session's randomized order.
    pub order: usize,
    pub condition: AssistanceCondition,
    pub value: f64,
    pub opus: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedStudy {
    pub spec: PlantedSurfaceSpec,
    pub subjects: Vec<PlantedSubject>,
    /// Grouped by subject then session, each session in presentation order.
    pub trials: Vec<PlantedTrial>,
}

impl PlantedStudy {
    pub fn dataset(&self, outcome: Outcome) -> ConditionDataset {
        let records = self
            .trials
            .iter()
            .map(|t| TrialRecord {
                subject_id: t.subject_id.clone(),
                condition: t.condition,
                repetition: t.session,
                value: match outcome {
                    Outcome::Wbam => t.value,
                    Outcome::Opus => f64::from(t.opus),
                },
            })
            .collect();
        ConditionDataset::new(outcome, records)
    }
}

/// Draws the full study. Subject offsets come from one stream per subject
/// and each session from its own stream, so any subset regenerates
/// identically.
pub fn plant_study(spec: &PlantedSurfaceSpec) -> Result<PlantedStudy, SynthError> {
    spec.validate()?;
    let grid = spec.grid()?;
    let subjects: Vec<PlantedSubject> = (0..spec.n_subjects)
        .map(|i| {
            let mut rng = stream_rng(spec.seed, STREAM_SUBJECT, i as u64);
            PlantedSubject {
                subject_id: spec.subject_id(i),
                offset: spec.subject_offset_sd * normal(&mut rng),
                opus_offset: spec.opus.subject_sd * normal(&mut rng),
            }
        })
        .collect();
    let mut trials = Vec::with_capacity(spec.n_subjects * spec.n_repetitions * grid.len());
    for (i, subject) in subjects.iter().enumerate() {
        for rep in 0..spec.n_repetitions {
            let mut rng = stream_rng(spec.seed, STREAM_SESSION, (i * spec.n_repetitions + rep) as u64);
            let mut order: Vec<usize> = (0..grid.len()).collect();
            order.shuffle(&mut rng);
            let draws: Vec<(f64, f64)> = grid.iter().map(|_| (normal(&mut rng), normal(&mut rng))).collect();
            let session = rep as u32 + 1;
            for (pos, &g) in order.iter().enumerate() {
                let condition = grid[g];
                let truth = spec.value(&condition);
                let value = truth + subject.offset + spec.noise_sd_for(&condition) * draws[g].0;
                let latent = spec.opus.intercept
                    + spec.opus.slope * (truth - spec.optimum_value)
                    + subject.opus_offset
                    + spec.opus.noise_sd * draws[g].1;
                trials.push(PlantedTrial {
                    trial_id: format!("{}_s{}_{}", subject.subject_id, session, condition.key()),
                    subject_id: subject.subject_id.clone(),
                    session,
                    order: pos,
                    condition,
                    value,
                    opus: latent.round().clamp(1.0, 5.0) as u8,
                });
            }
        }
    }
    Ok(PlantedStudy { spec: spec.clone(), subjects, trials })
}

/// Trial-level percent-change dataset drawn from `spec`.
pub fn plant_response_surface(spec: &PlantedSurfaceSpec) -> Result<ConditionDataset, SynthError> {
    Ok(plant_study(spec)?.dataset(Outcome::Wbam))
}
