//! Full synthetic studies: planted trial values realized as walker trials on
//! disk in the ingestion format.

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::planted::{plant_study, stream_rng, PlantedSurfaceSpec, PlantedTrial};
use super::walker::{Perturbation, SyntheticWalker, WalkerScenario};
use super::SynthError;
use crate::body::{Sex, SubjectAnthropometry, EXOSKELETON_MASS_KG};
use crate::controller::DEFAULT_PEAK_BIO_MOMENT;
use crate::signal::Side;
use crate::trial_io::{session_dir, write_session, write_trial, SessionManifest, SessionTrial, Trial, SCHEMA_VERSION};

const STREAM_BODY: u64 = 3;
const STREAM_TRIAL: u64 = 4;

/// How planted values are turned into walking trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyOptions {
    pub rate: f64,
    pub trial_length: f64,
    pub stride_period: f64,
    pub walking_speed: f64,
    pub slip_excursion: f64,
    pub perturbation_length: f64,
    pub peak_bio_moment: f64,
    /// Chance that a trial shows a jumping response.
    pub jump_probability: f64,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            rate: 100.0,
            trial_length: 15.0,
            stride_period: 1.1,
            walking_speed: 1.25,
            slip_excursion: 0.8,
            perturbation_length: 0.3,
            peak_bio_moment: DEFAULT_PEAK_BIO_MOMENT,
            jump_probability: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSession {
    pub manifest: SessionManifest,
    /// In manifest order.
    pub trials: Vec<Trial>,
}

fn subject_body(spec: &PlantedSurfaceSpec, opts: &StudyOptions, index: usize) -> (SubjectAnthropometry, u64) {
    let mut rng = stream_rng(spec.seed, STREAM_BODY, index as u64);
    let z: (f64, f64) = (rng.sample(rand_distr::StandardNormal), rng.sample(rand_distr::StandardNormal));
    let anthro = SubjectAnthropometry {
        body_mass: (66.4 + 9.8 * z.0).clamp(45.0, 110.0),
        height: (1.72 + 0.07 * z.1).clamp(1.5, 1.95),
        sex: if index % 2 == 0 { Sex::Male } else { Sex::Female },
        walking_speed: opts.walking_speed,
    };
    (anthro, rng.random())
}

fn realize(
    spec: &PlantedSurfaceSpec,
    opts: &StudyOptions,
    anthro: SubjectAnthropometry,
    motion_seed: u64,
    planted: &PlantedTrial,
    index: u64,
) -> Result<Trial, SynthError> {
    let mut rng = stream_rng(spec.seed, STREAM_TRIAL, index);
    let side = if rng.random::<bool>() { Side::Left } else { Side::Right };
    let stride = rng.random_range(0..3) as f64;
    let phase: f64 = rng.random_range(0.10..0.20);
    let jump = rng.random::<f64>() < opts.jump_probability;

    let mut scenario = WalkerScenario::new(anthro, motion_seed);
    scenario.rate = opts.rate;
    scenario.trial_length = opts.trial_length;
    scenario.stride_period = opts.stride_period;
    scenario.walking_speed = opts.walking_speed;
    scenario.exo_mass = if planted.condition.wears_exoskeleton() { EXOSKELETON_MASS_KG } else { 0.0 };
    // perturb the leg's 6th-8th heel strike, leaving five baseline strides
    let first = scenario.first_heel_strike + if side == Side::Right { 0.5 * scenario.stride_period } else { 0.0 };
    let onset = first + (5.0 + stride + phase) * scenario.stride_period;
    let perturbation = Perturbation {
        onset,
        length: opts.perturbation_length,
        slip_excursion: opts.slip_excursion,
        side,
        response_gain: 1.0,
        jump,
    };
    scenario.perturbation = Some(perturbation);
    let walker = SyntheticWalker::new(&scenario)?;
    let (gain, clamped) = walker.calibrate_response_gain(planted.value)?;
    if clamped {
        log::warn!("{}: planted value {:.2} is outside the walker's reachable range", planted.trial_id, planted.value);
    }
    scenario.perturbation = Some(Perturbation { response_gain: gain, ..perturbation });
    let mut trial = SyntheticWalker::new(&scenario)?.generate();
    trial.trial_id = planted.trial_id.clone();
    trial.subject_id = planted.subject_id.clone();
    trial.session = planted.session;
    trial.condition = planted.condition;
    Ok(trial)
}

/// Planted study realized as walking trials, one session per (subject,
/// repetition). Trials are generated in parallel; each draws from its own
/// stream so the result does not depend on scheduling.
pub fn generate_study(spec: &PlantedSurfaceSpec, opts: &StudyOptions) -> Result<Vec<SyntheticSession>, SynthError> {
    let study = plant_study(spec)?;
    let bodies: Vec<(SubjectAnthropometry, u64)> = (0..spec.n_subjects).map(|i| subject_body(spec, opts, i)).collect();
    let grid = spec.grid()?;
    let per_session = grid.len();
    let trials: Vec<Trial> = study
        .trials
        .par_iter()
        .enumerate()
        .map(|(k, planted)| {
            let subject = k / (per_session * spec.n_repetitions);
            let cell = grid.iter().position(|c| c.key() == planted.condition.key()).unwrap_or(0);
            let index = ((k / per_session) * per_session + cell) as u64;
            realize(spec, opts, bodies[subject].0, bodies[subject].1, planted, index)
        })
        .collect::<Result<_, _>>()?;
    let sessions = study
        .trials
        .chunks(per_session)
        .zip(trials.chunks(per_session))
        .map(|(planted, trials)| {
            let idx = study.subjects.iter().position(|s| s.subject_id == planted[0].subject_id).unwrap_or(0);
            let manifest = SessionManifest {
                schema_version: SCHEMA_VERSION,
                subject_id: planted[0].subject_id.clone(),
                session: planted[0].session,
                anthropometry: bodies[idx].0,
                peak_bio_moment: opts.peak_bio_moment,
                exo_mass_kg: EXOSKELETON_MASS_KG,
                condition_order: planted.iter().map(|t| t.condition.key()).collect(),
                trials: planted
                    .iter()
                    .map(|t| SessionTrial {
                        trial_id: t.trial_id.clone(),
                        condition: t.condition,
                        opus: t.opus,
                        directory: t.condition.key(),
                    })
                    .collect(),
            };
            SyntheticSession { manifest, trials: trials.to_vec() }
        })
        .collect();
    Ok(sessions)
}

/// Writes every session and trial under `root`; returns the session
/// manifest paths.
pub fn write_study(root: &Path, sessions: &[SyntheticSession]) -> Result<Vec<PathBuf>, SynthError> {
    let mut paths = Vec::with_capacity(sessions.len());
    for s in sessions {
        paths.push(write_session(root, &s.manifest)?);
        let dir = session_dir(root, &s.manifest.subject_id, s.manifest.session);
        for (entry, trial) in s.manifest.trials.iter().zip(&s.trials) {
            write_trial(&dir.join(&entry.directory), trial)?;
        }
    }
    Ok(paths)
}
