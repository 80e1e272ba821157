//! Synthetic trials with closed-form kinematics and planted outcome
//! surfaces. Everything here is a pure function of its inputs and seed.

mod planted;
mod study;
mod walker;

use thiserror::Error;

pub use planted::{
    plant_response_surface, plant_study, ControlValues, OpusSpec, PlantedShape, PlantedStudy, PlantedSubject,
    PlantedSurfaceSpec, PlantedTrial,
};
pub use study::{generate_study, write_study, StudyOptions, SyntheticSession};
pub use walker::{
    analytic_wbam_oracle, generate_trial, sample_kinematics, sample_oracle, ChannelMotion, ClosedFormBody, Harmonic,
    MotionPattern, Perturbation, ResponseEnvelope, RotatingRod, SegmentMotion, SegmentPose, SyntheticWalker,
    TranslatingBody, WalkerScenario,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("synthetic configuration: {0}")]
    Configuration(String),
    #[error("writing synthetic data: {0}")]
    Io(#[from] crate::trial_io::IngestError),
}
