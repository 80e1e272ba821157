//! End-to-end run: trials (synthetic or recorded) → WBAM → dataset →
//! surface → statistics → report files.
//!
//! Every parallel step collects in input order and every random draw comes
//! from a stream keyed by the seed and a fixed index, so outputs are
//! byte-identical for any worker count.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{analyze_trial, AnalysisError, TrialResult};
use crate::body::SegmentParameterTable;
use crate::config::{ConfigError, DataSource, RunConfig};
use crate::controller::AssistanceCondition;
use crate::dataset::{AggregateRecord, ConditionDataset, Exclusion, Outcome};
use crate::figure::{emit_contour_svg, Annotations, FigureError};
use crate::stats::{
    fit_random_intercept_lmm, icc_from_variances, linear_regression, rm_anova, AnovaResult, LmmResult,
    RegressionResult, RmTable, StatsError,
};
use crate::surface::{
    best_cell, bootstrap_optimum_with, find_optimum_with, fit_rbf_with, BootstrapConfig, BootstrapResult, Bounds,
    OptimumEstimate, OptimumMode, RbfConfig, SurfaceError, SurfaceGrid,
};
use crate::synth::{generate_study, plant_study, write_study, SynthError};
use crate::trial_io::{
    assemble_dataset, discover_sessions, load_session, load_trial, session_dir, write_exclusion_log, IngestError,
    LoadOptions, TrialOutcome,
};

pub const REPORT_FILE: &str = "report.json";
pub const TRIALS_FILE: &str = "trials.json";
pub const EXCLUSIONS_FILE: &str = "exclusions.jsonl";
/// Subdirectory of the output directory that receives synthesized trials.
pub const SYNTH_DATA_DIR: &str = "data";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Config,
    Synth,
    TrialIo,
    Wbam,
    Assemble,
    Surface,
    Stats,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Synth => "synth",
            Stage::TrialIo => "trial-io",
            Stage::Wbam => "wbam",
            Stage::Assemble => "assemble",
            Stage::Surface => "surface",
            Stage::Stats => "stats",
            Stage::Report => "report",
        })
    }
}

/// Coarse failure kind, mapped to process exit codes by the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureClass {
    Config,
    Data,
    Numerical,
}

type BoxError = Box<dyn std::error::Error + Send + Sync + 'static>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage {stage}{}: {source}", trial_id.as_deref().map(|t| format!(" (trial {t})")).unwrap_or_default())]
    Stage { stage: Stage, trial_id: Option<String>, class: FailureClass, source: BoxError },
}

impl PipelineError {
    fn at(stage: Stage, class: FailureClass, source: impl Into<BoxError>) -> Self {
        PipelineError::Stage { stage, trial_id: None, class, source: source.into() }
    }

    fn trial(stage: Stage, trial_id: &str, class: FailureClass, source: impl Into<BoxError>) -> Self {
        PipelineError::Stage { stage, trial_id: Some(trial_id.to_string()), class, source: source.into() }
    }

    pub fn class(&self) -> FailureClass {
        match self {
            PipelineError::Config(_) => FailureClass::Config,
            PipelineError::Stage { class, .. } => *class,
        }
    }

    pub fn stage(&self) -> Stage {
        match self {
            PipelineError::Config(_) => Stage::Config,
            PipelineError::Stage { stage, .. } => *stage,
        }
    }
}

fn synth_err(e: SynthError) -> PipelineError {
    let class = match e {
        SynthError::Configuration(_) => FailureClass::Config,
        SynthError::Io(_) => FailureClass::Data,
    };
    PipelineError::at(Stage::Synth, class, e)
}

fn io_err(stage: Stage, path: &Path, e: std::io::Error) -> PipelineError {
    PipelineError::at(stage, FailureClass::Data, IngestError::Io { path: path.to_path_buf(), source: e })
}

pub fn surface_class(e: &SurfaceError) -> FailureClass {
    match e {
        SurfaceError::Parameter(_) => FailureClass::Config,
        SurfaceError::Singular { .. } => FailureClass::Numerical,
        _ => FailureClass::Data,
    }
}

pub fn stats_class(e: &StatsError) -> FailureClass {
    match e {
        StatsError::IncompleteDesign(_) | StatsError::Argument(_) => FailureClass::Data,
        _ => FailureClass::Numerical,
    }
}

fn analysis_class(e: &AnalysisError) -> FailureClass {
    match e {
        AnalysisError::Wbam(crate::wbam::WbamError::Partition(_)) => FailureClass::Data,
        _ => FailureClass::Numerical,
    }
}

/// Per-trial record of the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial_id: String,
    pub subject_id: String,
    pub session: u32,
    pub condition: AssistanceCondition,
    pub opus: Option<u8>,
    /// Percent change in WBAM range; absent for excluded trials.
    pub percent_change: Option<f64>,
    pub exclusion: Option<String>,
    /// Full WBAM record when the trial was processed from kinematics.
    pub wbam: Option<TrialResult>,
}

impl TrialReport {
    fn outcome(&self) -> TrialOutcome {
        TrialOutcome {
            trial_id: self.trial_id.clone(),
            subject_id: self.subject_id.clone(),
            condition: self.condition,
            repetition: self.session,
            wbam_percent_change: self.percent_change,
            opus: self.opus,
            exclusion: self.exclusion.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceReport {
    pub outcome: Outcome,
    pub mode: OptimumMode,
    pub rbf: RbfConfig,
    pub bounds: Bounds,
    pub optimum: OptimumEstimate,
    pub experimental_best: Option<OptimumEstimate>,
    pub bootstrap: BootstrapResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelRegression {
    /// The level held fixed (duration multiple or magnitude fraction).
    pub level: f64,
    pub regression: RegressionResult,
}

/// Best trapezoid cell against a control, per subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlComparison {
    pub control: String,
    pub best_condition: String,
    /// Mean over subjects of `(best − control) / |control| × 100`.
    pub mean_percent_difference: f64,
    pub sd_percent_difference: f64,
    pub n_subjects: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub outcome: Outcome,
    pub lmm: LmmResult,
    pub icc: f64,
    /// Conditions: no exoskeleton, no assistance, spline baseline, best cell.
    pub anova: AnovaResult,
    /// Outcome against magnitude at each duration; values relative to the
    /// subject's no-exoskeleton mean.
    pub magnitude_regressions: Vec<LevelRegression>,
    /// Outcome against duration at each magnitude; same baseline.
    pub duration_regressions: Vec<LevelRegression>,
    pub control_comparisons: Vec<ControlComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeReport {
    pub outcome: Outcome,
    pub aggregated: Vec<AggregateRecord>,
    pub dataset: ConditionDataset,
    pub surface: SurfaceReport,
    pub grid: SurfaceGrid,
    pub stats: StatsReport,
    pub figure_svg: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub config_hash: String,
    pub seed: u64,
    pub primary: Outcome,
    pub trials: Vec<TrialReport>,
    pub exclusions: Vec<Exclusion>,
    /// WBAM first, then OPUS.
    pub outcomes: Vec<OutcomeReport>,
}

impl ReportBundle {
    pub fn outcome(&self, o: Outcome) -> Option<&OutcomeReport> {
        self.outcomes.iter().find(|r| r.outcome == o)
    }
}

pub fn optimum_mode(outcome: Outcome) -> OptimumMode {
    match outcome {
        Outcome::Wbam => OptimumMode::Min,
        Outcome::Opus => OptimumMode::Max,
    }
}

fn segment_table(config: &RunConfig) -> Result<SegmentParameterTable, PipelineError> {
    match &config.paths.segment_table {
        Some(p) => SegmentParameterTable::from_csv_path(p)
            .map_err(|e| PipelineError::at(Stage::Config, FailureClass::Config, e)),
        None => Ok(SegmentParameterTable::default_table()),
    }
}

/// Writes the synthetic walker study under `root`; returns session manifest
/// paths.
pub fn synthesize(config: &RunConfig, root: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let sessions = generate_study(&config.planted_spec(), &config.synth.study).map_err(synth_err)?;
    write_study(root, &sessions).map_err(synth_err)
}

/// Loads and analyzes every trial under `root`, in session-path then
/// manifest order.
pub fn process_directory(config: &RunConfig, root: &Path) -> Result<Vec<TrialReport>, PipelineError> {
    let table = segment_table(config)?;
    let grid = crate::controller::condition_grid(&config.grid.magnitudes, &config.grid.durations)
        .map_err(|e| PipelineError::at(Stage::Config, FailureClass::Config, e))?;
    let data_err = |e: IngestError| PipelineError::at(Stage::TrialIo, FailureClass::Data, e);
    let mut jobs = Vec::new();
    for path in discover_sessions(root).map_err(data_err)? {
        let manifest = load_session(&path).map_err(data_err)?;
        manifest.check_grid(&grid).map_err(data_err)?;
        let dir = session_dir(root, &manifest.subject_id, manifest.session);
        for entry in &manifest.trials {
            jobs.push((manifest.clone(), entry.clone(), dir.join(&entry.directory)));
        }
    }
    if jobs.is_empty() {
        return Err(data_err(IngestError::Validation(format!("no sessions found under {}", root.display()))));
    }
    let opts = LoadOptions::default();
    jobs.par_iter()
        .map(|(manifest, entry, dir)| {
            let loaded = load_trial(dir, &opts)
                .map_err(|e| PipelineError::trial(Stage::TrialIo, &entry.trial_id, FailureClass::Data, e))?;
            for w in &loaded.warnings {
                log::warn!("{}: {w}", entry.trial_id);
            }
            let trial = loaded.trial;
            if trial.trial_id != entry.trial_id || trial.condition.key() != entry.condition.key() {
                return Err(PipelineError::trial(
                    Stage::TrialIo,
                    &entry.trial_id,
                    FailureClass::Data,
                    IngestError::Validation(format!(
                        "{} holds trial {} ({})",
                        dir.display(),
                        trial.trial_id,
                        trial.condition
                    )),
                ));
            }
            let mut report = TrialReport {
                trial_id: entry.trial_id.clone(),
                subject_id: manifest.subject_id.clone(),
                session: manifest.session,
                condition: entry.condition,
                opus: Some(entry.opus),
                percent_change: None,
                exclusion: trial.jump_response(config.analysis.event_threshold_n),
                wbam: None,
            };
            if report.exclusion.is_none() {
                let r = analyze_trial(&trial, &manifest.anthropometry, manifest.exo_mass_kg, &table, &config.analysis)
                    .map_err(|e| PipelineError::trial(Stage::Wbam, &entry.trial_id, analysis_class(&e), e))?;
                report.percent_change = Some(r.percent_change);
                report.wbam = Some(r);
            }
            Ok(report)
        })
        .collect()
}

/// Trial records for the configured source.
pub fn collect_trials(config: &RunConfig) -> Result<Vec<TrialReport>, PipelineError> {
    match config.source {
        DataSource::Planted => {
            let study = plant_study(&config.planted_spec()).map_err(synth_err)?;
            Ok(study
                .trials
                .iter()
                .map(|t| TrialReport {
                    trial_id: t.trial_id.clone(),
                    subject_id: t.subject_id.clone(),
                    session: t.session,
                    condition: t.condition,
                    opus: Some(t.opus),
                    percent_change: Some(t.value),
                    exclusion: None,
                    wbam: None,
                })
                .collect())
        }
        DataSource::Walker => {
            let root = config.paths.out_dir.join(SYNTH_DATA_DIR);
            if root.exists() {
                fs::remove_dir_all(&root).map_err(|e| io_err(Stage::Synth, &root, e))?;
            }
            synthesize(config, &root)?;
            process_directory(config, &root)
        }
        DataSource::Directory => {
            let root = config.paths.data_dir.as_deref().expect("validated: directory source has a data_dir");
            process_directory(config, root)
        }
    }
}

pub fn assemble(trials: &[TrialReport], outcome: Outcome) -> Result<ConditionDataset, PipelineError> {
    let outcomes: Vec<TrialOutcome> = trials.iter().map(TrialReport::outcome).collect();
    assemble_dataset(&outcomes, outcome).map_err(|e| PipelineError::at(Stage::Assemble, FailureClass::Data, e))
}

/// RBF fit, optimum, best tested cell, bootstrap CIs and a report grid.
pub fn surface_stage(
    data: &ConditionDataset,
    config: &RunConfig,
) -> Result<(SurfaceReport, SurfaceGrid), PipelineError> {
    let fail = |e: SurfaceError| PipelineError::at(Stage::Surface, surface_class(&e), e);
    let mode = optimum_mode(data.outcome);
    let surface = fit_rbf_with(data, &config.rbf).map_err(fail)?;
    let optimum = find_optimum_with(&surface, None, mode, &config.search).map_err(fail)?;
    let bootstrap = bootstrap_optimum_with(
        data,
        &config.rbf,
        &BootstrapConfig {
            n_resamples: config.bootstrap.n_resamples,
            seed: config.seed,
            confidence: config.bootstrap.confidence,
        },
        &config.search,
        mode,
    )
    .map_err(fail)?;
    let n = config.report.grid_points;
    let grid = surface.grid(&surface.bounds, n, n);
    let report = SurfaceReport {
        outcome: data.outcome,
        mode,
        rbf: config.rbf,
        bounds: surface.bounds,
        optimum,
        experimental_best: best_cell(data, mode),
        bootstrap,
    };
    Ok((report, grid))
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    (m, sd)
}

/// Mixed model, ICC, repeated-measures ANOVA with post-hoc comparisons,
/// per-level regressions and best-cell comparisons against the controls.
pub fn stats_battery(data: &ConditionDataset, config: &RunConfig) -> Result<StatsReport, StatsError> {
    let mode = optimum_mode(data.outcome);
    let lmm = fit_random_intercept_lmm(data, &config.lmm)?;
    let icc = icc_from_variances(lmm.random_intercept_variance, lmm.residual_variance)?;
    let best = best_cell(data, mode).ok_or_else(|| StatsError::IncompleteDesign("no trapezoid cells".into()))?;
    let best_key = AssistanceCondition::trapezoid(best.magnitude, best.duration)
        .map_err(|e| StatsError::Argument(e.to_string()))?
        .key();
    let controls = [
        AssistanceCondition::no_exoskeleton().key(),
        AssistanceCondition::no_assist().key(),
        AssistanceCondition::spline_baseline().key(),
    ];
    let keys: Vec<String> = controls.iter().cloned().chain([best_key.clone()]).collect();
    let table = RmTable::from_dataset(data, &keys)?;
    let anova = rm_anova(&table)?;

    let baseline = data.subject_means(&controls[0]);
    let mut rel = Vec::new();
    for r in data.records().iter().filter(|r| r.condition.is_trapezoid()) {
        let b = baseline.get(&r.subject_id).ok_or_else(|| {
            StatsError::IncompleteDesign(format!("subject {} has no {} trials", r.subject_id, controls[0]))
        })?;
        rel.push((r.condition.magnitude_fraction, r.condition.duration_multiple, r.value - b));
    }
    let regress = |fixed: &dyn Fn(&(f64, f64, f64)) -> f64, free: &dyn Fn(&(f64, f64, f64)) -> f64, level: f64| {
        let pts: Vec<_> = rel.iter().filter(|p| fixed(p) == level).collect();
        let x: Vec<f64> = pts.iter().map(|p| free(p)).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.2).collect();
        linear_regression(&x, &y).map(|regression| LevelRegression { level, regression })
    };
    let magnitude_regressions =
        config.grid.durations.iter().map(|&d| regress(&|p| p.1, &|p| p.0, d)).collect::<Result<Vec<_>, _>>()?;
    let duration_regressions =
        config.grid.magnitudes.iter().map(|&m| regress(&|p| p.0, &|p| p.1, m)).collect::<Result<Vec<_>, _>>()?;

    let control_comparisons = [&controls[0], &controls[2]]
        .iter()
        .map(|key| {
            let diffs: Vec<f64> = table
                .values
                .iter()
                .map(|row| {
                    let c = row[keys.iter().position(|k| k == *key).expect("control column")];
                    (row[3] - c) / c.abs() * 100.0
                })
                .collect();
            let (m, sd) = mean_sd(&diffs);
            ControlComparison {
                control: key.to_string(),
                best_condition: best_key.clone(),
                mean_percent_difference: m,
                sd_percent_difference: sd,
                n_subjects: diffs.len(),
            }
        })
        .collect();

    Ok(StatsReport {
        outcome: data.outcome,
        lmm,
        icc,
        anova,
        magnitude_regressions,
        duration_regressions,
        control_comparisons,
    })
}

pub fn render_figure(
    surface: &SurfaceReport,
    grid: &SurfaceGrid,
    config_hash: &str,
    seed: u64,
) -> Result<String, FigureError> {
    let label = match surface.outcome {
        Outcome::Wbam => "WBAM range change (%)",
        Outcome::Opus => "OPUS score",
    };
    let ann = Annotations {
        title: format!("{} response surface", surface.outcome.as_str().to_uppercase()),
        value_label: label.into(),
        mode: surface.mode,
        surface_optimum: Some((surface.optimum.magnitude, surface.optimum.duration)),
        experimental_best: surface.experimental_best.map(|b| (b.magnitude, b.duration)),
        ci_box: Some((surface.bootstrap.magnitude_ci, surface.bootstrap.duration_ci)),
        config_hash: config_hash.into(),
        seed,
    };
    emit_contour_svg(grid, &ann)
}

/// Assemble, surface, statistics and figure for one outcome.
pub fn analyze_outcome(
    trials: &[TrialReport],
    outcome: Outcome,
    config: &RunConfig,
    hash: &str,
) -> Result<OutcomeReport, PipelineError> {
    let dataset = assemble(trials, outcome)?;
    let (surface, grid) = surface_stage(&dataset, config)?;
    let stats = stats_battery(&dataset, config).map_err(|e| PipelineError::at(Stage::Stats, stats_class(&e), e))?;
    let figure_svg = render_figure(&surface, &grid, hash, config.seed)
        .map_err(|e| PipelineError::at(Stage::Report, FailureClass::Numerical, e))?;
    Ok(OutcomeReport { outcome, aggregated: dataset.aggregated(), dataset, surface, grid, stats, figure_svg })
}

/// Validates `config` and runs `f` on a pool of `config.workers` threads
/// (0 = one per CPU).
pub fn with_pool<T>(config: &RunConfig, f: impl FnOnce() -> Result<T, PipelineError> + Send) -> Result<T, PipelineError>
where
    T: Send,
{
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|e| PipelineError::at(Stage::Config, FailureClass::Config, e))?;
    pool.install(f)
}

/// Runs every stage on a pool of `config.workers` threads.
pub fn run_pipeline(config: &RunConfig) -> Result<ReportBundle, PipelineError> {
    with_pool(config, || {
        let hash = config.hash();
        let trials = collect_trials(config)?;
        let (wbam, opus) = rayon::join(
            || analyze_outcome(&trials, Outcome::Wbam, config, &hash),
            || analyze_outcome(&trials, Outcome::Opus, config, &hash),
        );
        let outcomes = vec![wbam?, opus?];
        let exclusions = outcomes[0].dataset.exclusions.clone();
        Ok(ReportBundle { config_hash: hash, seed: config.seed, primary: config.outcome, trials, exclusions, outcomes })
    })
}

/// JSON artifact wrapper carrying provenance.
#[derive(Debug, Serialize)]
struct Stamped<'a, T: Serialize> {
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: &'a T,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct TrialsFile<'a> {
    trials: &'a [TrialReport],
}

#[derive(Debug, Serialize)]
struct DatasetFile<'a> {
    outcome: Outcome,
    aggregated: &'a [AggregateRecord],
    dataset: &'a ConditionDataset,
}

#[derive(Debug, Serialize)]
struct Headline<'a> {
    outcome: Outcome,
    optimum: &'a OptimumEstimate,
    magnitude_ci: crate::surface::CiInterval,
    duration_ci: crate::surface::CiInterval,
    experimental_best: Option<&'a OptimumEstimate>,
    anova_f: f64,
    anova_df: (usize, usize),
    anova_p: f64,
    icc: f64,
    control_comparisons: &'a [ControlComparison],
}

#[derive(Debug, Serialize)]
struct ReportFile<'a> {
    generator: String,
    config: serde_json::Value,
    primary_outcome: Outcome,
    n_trials: usize,
    n_excluded: usize,
    headlines: Vec<Headline<'a>>,
    artifacts: &'a [ArtifactEntry],
}

/// Pretty JSON of `body` with `config_hash` and `seed` fields prepended.
pub fn stamped_json<T: Serialize>(hash: &str, seed: u64, body: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(&Stamped { config_hash: hash, seed, body }).expect("report serializes");
    v.push(b'\n');
    v
}

/// In-memory artifact: file name and contents.
pub type Artifact = (String, Vec<u8>);

pub fn trial_artifacts(trials: &[TrialReport], exclusions: &[Exclusion], hash: &str, seed: u64) -> Vec<Artifact> {
    let mut log = Vec::new();
    write_exclusion_log(&mut log, exclusions).expect("writing to memory");
    vec![(TRIALS_FILE.into(), stamped_json(hash, seed, &TrialsFile { trials })), (EXCLUSIONS_FILE.into(), log)]
}

pub fn dataset_artifact(data: &ConditionDataset, hash: &str, seed: u64) -> Artifact {
    let aggregated = data.aggregated();
    (
        format!("dataset_{}.json", data.outcome),
        stamped_json(hash, seed, &DatasetFile { outcome: data.outcome, aggregated: &aggregated, dataset: data }),
    )
}

/// Surface summary, the sampled grid as CSV, and the contour figure.
pub fn surface_artifacts(
    surface: &SurfaceReport,
    grid: &SurfaceGrid,
    svg: &str,
    hash: &str,
    seed: u64,
) -> Result<Vec<Artifact>, PipelineError> {
    let name = surface.outcome.as_str();
    let mut csv = format!("# config_hash={hash} seed={seed}\n").into_bytes();
    grid.write_csv(&mut csv).map_err(|e| PipelineError::at(Stage::Report, FailureClass::Data, e))?;
    Ok(vec![
        (format!("surface_{name}.json"), stamped_json(hash, seed, surface)),
        (format!("surface_grid_{name}.csv"), csv),
        (format!("figure_{name}.svg"), svg.as_bytes().to_vec()),
    ])
}

pub fn stats_artifact(stats: &StatsReport, hash: &str, seed: u64) -> Artifact {
    (format!("stats_{}.json", stats.outcome), stamped_json(hash, seed, stats))
}

/// Writes each artifact under `out_dir` and returns names with digests.
pub fn write_artifacts(out_dir: &Path, files: &[Artifact]) -> Result<Vec<ArtifactEntry>, PipelineError> {
    fs::create_dir_all(out_dir).map_err(|e| io_err(Stage::Report, out_dir, e))?;
    let mut entries = Vec::with_capacity(files.len());
    for (name, bytes) in files {
        let path = out_dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_err(Stage::Report, &path, e))?;
        entries.push(ArtifactEntry { file: name.clone(), sha256: hex::encode(Sha256::digest(bytes)) });
    }
    Ok(entries)
}

/// Writes the bundle into `out_dir`; returns the artifact list recorded in
/// `report.json`.
pub fn write_bundle(
    bundle: &ReportBundle,
    config: &RunConfig,
    out_dir: &Path,
) -> Result<Vec<ArtifactEntry>, PipelineError> {
    let (hash, seed) = (bundle.config_hash.as_str(), bundle.seed);
    let mut files = trial_artifacts(&bundle.trials, &bundle.exclusions, hash, seed);
    for o in &bundle.outcomes {
        files.push(dataset_artifact(&o.dataset, hash, seed));
        files.extend(surface_artifacts(&o.surface, &o.grid, &o.figure_svg, hash, seed)?);
        files.push(stats_artifact(&o.stats, hash, seed));
    }
    let artifacts = write_artifacts(out_dir, &files)?;
    let headlines = bundle
        .outcomes
        .iter()
        .map(|o| Headline {
            outcome: o.outcome,
            optimum: &o.surface.optimum,
            magnitude_ci: o.surface.bootstrap.magnitude_ci,
            duration_ci: o.surface.bootstrap.duration_ci,
            experimental_best: o.surface.experimental_best.as_ref(),
            anova_f: o.stats.anova.f,
            anova_df: (o.stats.anova.df_effect, o.stats.anova.df_error),
            anova_p: o.stats.anova.p_value,
            icc: o.stats.icc,
            control_comparisons: &o.stats.control_comparisons,
        })
        .collect();
    let report = ReportFile {
        generator: format!("exostab {}", env!("CARGO_PKG_VERSION")),
        config: config.provenance(),
        primary_outcome: bundle.primary,
        n_trials: bundle.trials.len(),
        n_excluded: bundle.exclusions.len(),
        headlines,
        artifacts: &artifacts,
    };
    let path = out_dir.join(REPORT_FILE);
    fs::write(&path, stamped_json(hash, seed, &report)).map_err(|e| io_err(Stage::Report, &path, e))?;
    Ok(artifacts)
}

/// [`run_pipeline`] followed by [`write_bundle`] into `config.paths.out_dir`.
pub fn run_and_write(config: &RunConfig) -> Result<(ReportBundle, Vec<ArtifactEntry>), PipelineError> {
    let bundle = run_pipeline(config)?;
    let artifacts = write_bundle(&bundle, config, &config.paths.out_dir)?;
    Ok((bundle, artifacts))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planted_config(dir: &Path) -> RunConfig {
        let mut c = RunConfig { source: DataSource::Planted, seed: 3, ..Default::default() };
        c.paths.out_dir = dir.to_path_buf();
        c.bootstrap.n_resamples = 200;
        c
    }

    #[test]
    fn planted_run_is_deterministic_and_complete() {
        let tmp = tempfile::tempdir().unwrap();
        let c = planted_config(&tmp.path().join("a"));
        let (a, files) = run_and_write(&c).unwrap();
        let b = run_pipeline(&RunConfig { workers: 3, ..c.clone() }).unwrap();
        assert_eq!(a, b);
        assert_eq!(files.len(), 2 + 2 * 5);
        let w = a.outcome(Outcome::Wbam).unwrap();
        assert_eq!((w.stats.anova.df_effect, w.stats.anova.df_error), (3, 21));
        assert_eq!(w.aggregated.len(), 8 * 28);
        let ci = &w.surface.bootstrap;
        assert!(ci.magnitude_ci.contains(0.159) && ci.duration_ci.contains(3.64), "{ci:?}");
        let o = a.outcome(Outcome::Opus).unwrap();
        assert_eq!(o.surface.mode, OptimumMode::Max);
        let report: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(tmp.path().join("a").join(REPORT_FILE)).unwrap()).unwrap();
        assert_eq!(report["config_hash"], c.hash());
        assert_eq!(report["seed"], 3);
    }

    #[test]
    fn missing_data_dir_fails_at_trial_io() {
        let mut c = RunConfig { source: DataSource::Directory, ..Default::default() };
        c.paths.data_dir = Some(PathBuf::from("/nonexistent/exostab"));
        let e = run_pipeline(&c).unwrap_err();
        assert_eq!((e.stage(), e.class()), (Stage::TrialIo, FailureClass::Data));
        assert!(e.to_string().starts_with("stage trial-io"));
    }

    #[test]
    fn invalid_config_is_config_class() {
        let c = RunConfig { source: DataSource::Directory, ..Default::default() };
        assert_eq!(run_pipeline(&c).unwrap_err().class(), FailureClass::Config);
    }
}
