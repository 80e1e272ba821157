//! Single-trial processing: events, stride partition, inertial model and the
//! WBAM-range metric.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body::{
    attach_exoskeleton_mass, estimate_inertial_params, BodyModelError, SegmentParameterTable, SubjectAnthropometry,
};
use crate::controller::AssistanceCondition;
use crate::signal::{
    ButterworthLowpass, EventDetector, GaitEvents, Side, SignalError, DEFAULT_CUTOFF_HZ, DEFAULT_DEBOUNCE_S,
    DEFAULT_FILTER_ORDER, DEFAULT_THRESHOLD_N,
};
use crate::trial_io::Trial;
use crate::wbam::{
    baseline_walking_speed, compute_wbam_series, partition_strides, wbam_range_metric, SegmentStateSeries,
    StridePartition, WbamError, DEFAULT_BASELINE_STRIDES, SIGN_CONVENTION,
};

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Body(#[from] BodyModelError),
    #[error(transparent)]
    Wbam(#[from] WbamError),
}

/// Processing parameters shared by every trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    /// Butterworth order for the force channels (even).
    pub filter_order: usize,
    /// Force-channel cutoff, Hz.
    pub cutoff_hz: f64,
    /// Optional zero-phase lowpass on kinematics before differentiation;
    /// `None` differentiates the recorded positions directly.
    pub kinematics_cutoff_hz: Option<f64>,
    pub event_threshold_n: f64,
    pub event_debounce_s: f64,
    pub n_baseline: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            filter_order: DEFAULT_FILTER_ORDER,
            cutoff_hz: DEFAULT_CUTOFF_HZ,
            kinematics_cutoff_hz: None,
            event_threshold_n: DEFAULT_THRESHOLD_N,
            event_debounce_s: DEFAULT_DEBOUNCE_S,
            n_baseline: DEFAULT_BASELINE_STRIDES,
        }
    }
}

/// Per-trial result record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial_id: String,
    pub subject_id: String,
    pub session: u32,
    pub condition: AssistanceCondition,
    pub perturbed_side: Side,
    pub perturbation_onset: f64,
    pub partition: StridePartition,
    /// Baseline-stride belt speed used in the normalization, m/s.
    pub walking_speed: f64,
    pub perturbed_range: f64,
    pub baseline_mean_range: f64,
    pub percent_change: f64,
    pub sign_convention: String,
}

/// Gait events from the low-passed vertical forces, unless the trial carries
/// a manual override.
pub fn trial_events(trial: &Trial, config: &AnalysisConfig) -> Result<GaitEvents, AnalysisError> {
    if let Some(ev) = &trial.events_override {
        return Ok(ev.clone());
    }
    let filter = ButterworthLowpass::design(config.cutoff_hz, config.filter_order, trial.sample_rate)?;
    let smooth = |side| {
        let raw = trial.vertical_grf(side);
        crate::series::TimeSeries::new(raw.sample_rate(), raw.start_time(), filter.filtfilt(raw.samples()))
            .expect("filtered channel keeps its clock")
    };
    let detector = EventDetector::new(config.event_threshold_n, config.event_debounce_s)?;
    Ok(detector.detect(&smooth(Side::Left), &smooth(Side::Right))?)
}

/// WBAM range of one trial. `anthro.walking_speed` is replaced by the mean
/// belt speed over the baseline strides.
pub fn analyze_trial(
    trial: &Trial,
    anthro: &SubjectAnthropometry,
    exo_mass: f64,
    table: &SegmentParameterTable,
    config: &AnalysisConfig,
) -> Result<TrialResult, AnalysisError> {
    let events = trial_events(trial, config)?;
    let partition = partition_strides(&events, trial.perturbed_side, trial.onset, config.n_baseline)?;
    let speed = baseline_walking_speed(&trial.belt_speed(), &partition)
        .ok_or_else(|| WbamError::Partition("baseline strides hold no belt-speed samples".into()))?;
    let anthro = anthro.with_walking_speed(speed)?;
    let base = estimate_inertial_params(&anthro, table)?;
    let inertials = if trial.condition.wears_exoskeleton() { attach_exoskeleton_mass(&base, exo_mass)? } else { base };
    let filter = config
        .kinematics_cutoff_hz
        .map(|fc| ButterworthLowpass::design(fc, config.filter_order, trial.sample_rate))
        .transpose()?;
    let states =
        SegmentStateSeries::from_kinematics(trial.sample_rate, trial.start_time, &trial.kinematics, filter.as_ref())?;
    let wbam = compute_wbam_series(&states, &inertials, &anthro)?;
    let r = wbam_range_metric(&wbam, &partition)?;
    Ok(TrialResult {
        trial_id: trial.trial_id.clone(),
        subject_id: trial.subject_id.clone(),
        session: trial.session,
        condition: trial.condition,
        perturbed_side: trial.perturbed_side,
        perturbation_onset: trial.onset,
        partition,
        walking_speed: speed,
        perturbed_range: r.perturbed_range,
        baseline_mean_range: r.baseline_mean_range,
        percent_change: r.percent_change,
        sign_convention: SIGN_CONVENTION.into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{sample_oracle, Perturbation, SyntheticWalker, WalkerScenario};

    fn walker(side: Side) -> (WalkerScenario, SyntheticWalker) {
        let anthro = SubjectAnthropometry::new(70.0, 1.75, crate::body::Sex::Male).unwrap();
        let mut sc = WalkerScenario::new(anthro, 5).with_perturbation(Perturbation::new(7.3, side));
        sc.exo_mass = 4.5;
        let w = SyntheticWalker::new(&sc).unwrap();
        (sc, w)
    }

    #[test]
    fn percent_change_tracks_oracle() {
        for side in [Side::Left, Side::Right] {
            let (sc, w) = walker(side);
            let mut trial = w.generate();
            trial.condition = AssistanceCondition::trapezoid(0.15, 2.0).unwrap();
            let r = analyze_trial(
                &trial,
                &sc.anthropometry,
                sc.exo_mass,
                &SegmentParameterTable::default_table(),
                &AnalysisConfig::default(),
            )
            .unwrap();
            let oracle =
                wbam_range_metric(&sample_oracle(&w, sc.rate, 0.0, sc.samples()), &w.planted_partition().unwrap())
                    .unwrap();
            assert!((r.walking_speed - sc.walking_speed).abs() < 1e-12);
            assert!(
                (r.percent_change - oracle.percent_change).abs() < 0.1,
                "{} vs {}",
                r.percent_change,
                oracle.percent_change
            );
        }
    }

    #[test]
    fn override_events_win() {
        let (sc, w) = walker(Side::Left);
        let mut trial = w.generate();
        let cfg = AnalysisConfig::default();
        let mut ev = trial_events(&trial, &cfg).unwrap();
        ev.left.heel_strikes.retain(|&h| h < 3.0);
        trial.events_override = Some(ev);
        let err = analyze_trial(&trial, &sc.anthropometry, sc.exo_mass, &SegmentParameterTable::default_table(), &cfg);
        assert!(matches!(err, Err(AnalysisError::Wbam(WbamError::Partition(_)))));
    }
}
