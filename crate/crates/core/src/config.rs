//! Run configuration: TOML file, `EXOSTAB_*` environment overrides and a
//! content hash for provenance.
//!
//! The hash covers everything that can change a result. Worker count and
//! output directory are excluded, so reruns into a fresh directory or on a
//! different pool size carry the same hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::AnalysisConfig;
use crate::controller::{condition_grid, DURATION_LEVELS, MAGNITUDE_LEVELS};
use crate::dataset::Outcome;
use crate::stats::LmmConfig;
use crate::surface::{RbfConfig, SearchConfig, MIN_RESAMPLES};
use crate::synth::{PlantedSurfaceSpec, StudyOptions};

pub const ENV_SEED: &str = "EXOSTAB_SEED";
pub const ENV_DATA_DIR: &str = "EXOSTAB_DATA_DIR";
pub const ENV_OUT_DIR: &str = "EXOSTAB_OUT_DIR";
pub const ENV_SEGMENT_TABLE: &str = "EXOSTAB_SEGMENT_TABLE";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("environment variable {var}: {message}")]
    Env { var: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Where trials come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Planted study realized as walking trials, written under
    /// `<out>/data` and ingested back.
    #[default]
    Walker,
    /// Planted per-trial values fed straight to the surface and statistics.
    Planted,
    /// Recorded sessions under `paths.data_dir`.
    Directory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Segment parameter CSV; the built-in table when absent.
    pub segment_table: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self { data_dir: None, out_dir: PathBuf::from("exostab-out"), segment_table: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSettings {
    pub n_resamples: usize,
    pub confidence: f64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self { n_resamples: 1000, confidence: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Peak torque as a fraction of the peak biological moment.
    pub magnitudes: Vec<f64>,
    /// Profile length as a multiple of the perturbation length.
    pub durations: Vec<f64>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { magnitudes: MAGNITUDE_LEVELS.to_vec(), durations: DURATION_LEVELS.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Its `seed`, `magnitudes` and `durations` are replaced by the run's
    /// `seed` and `[grid]`.
    pub planted: PlantedSurfaceSpec,
    pub study: StudyOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Points per axis of the exported surface grid and figure.
    pub grid_points: usize,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { grid_points: 101 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Outcome shown in the figure and report headline; both are analyzed.
    pub outcome: Outcome,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub source: DataSource,
    pub paths: PathsConfig,
    pub analysis: AnalysisConfig,
    pub grid: GridConfig,
    pub rbf: RbfConfig,
    pub search: SearchConfig,
    pub bootstrap: BootstrapSettings,
    pub lmm: LmmConfig,
    pub synth: SynthConfig,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            outcome: Outcome::Wbam,
            workers: 0,
            source: DataSource::Walker,
            paths: PathsConfig::default(),
            analysis: AnalysisConfig::default(),
            grid: GridConfig::default(),
            rbf: RbfConfig::default(),
            search: SearchConfig::default(),
            bootstrap: BootstrapSettings::default(),
            lmm: LmmConfig::default(),
            synth: SynthConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    /// Applies `EXOSTAB_SEED`, `EXOSTAB_DATA_DIR`, `EXOSTAB_OUT_DIR` and
    /// `EXOSTAB_SEGMENT_TABLE` from `lookup`.
    pub fn apply_overrides(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(v) = lookup(ENV_SEED) {
            self.seed =
                v.trim().parse().map_err(|e| ConfigError::Env { var: ENV_SEED.into(), message: format!("{e}") })?;
        }
        if let Some(v) = lookup(ENV_DATA_DIR) {
            self.paths.data_dir = Some(PathBuf::from(v));
        }
        if let Some(v) = lookup(ENV_OUT_DIR) {
            self.paths.out_dir = PathBuf::from(v);
        }
        if let Some(v) = lookup(ENV_SEGMENT_TABLE) {
            self.paths.segment_table = Some(PathBuf::from(v));
        }
        Ok(())
    }

    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        self.apply_overrides(|k| std::env::var(k).ok())
    }

    /// Planted spec with the run's seed and grid.
    pub fn planted_spec(&self) -> PlantedSurfaceSpec {
        PlantedSurfaceSpec {
            seed: self.seed,
            magnitudes: self.grid.magnitudes.clone(),
            durations: self.grid.durations.clone(),
            ..self.synth.planted.clone()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        condition_grid(&self.grid.magnitudes, &self.grid.durations).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.rbf.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.bootstrap.n_resamples < MIN_RESAMPLES {
            return bad(format!("bootstrap.n_resamples must be >= {MIN_RESAMPLES}"));
        }
        if !(self.bootstrap.confidence > 0.0 && self.bootstrap.confidence < 1.0) {
            return bad("bootstrap.confidence must lie in (0, 1)".into());
        }
        let a = &self.analysis;
        if a.filter_order < 2 || a.filter_order % 2 != 0 {
            return bad(format!("analysis.filter_order must be even and >= 2, got {}", a.filter_order));
        }
        if !(a.cutoff_hz > 0.0) || a.kinematics_cutoff_hz.is_some_and(|f| !(f > 0.0)) {
            return bad("analysis cutoffs must be positive".into());
        }
        if a.n_baseline == 0 {
            return bad("analysis.n_baseline must be at least 1".into());
        }
        if self.search.grid < 2 || !(self.search.tolerance > 0.0) {
            return bad("search.grid must be >= 2 with a positive tolerance".into());
        }
        if self.lmm.scan_points < 3 || !(self.lmm.tolerance > 0.0) {
            return bad("lmm.scan_points must be >= 3 with a positive tolerance".into());
        }
        if self.report.grid_points < 2 {
            return bad("report.grid_points must be >= 2".into());
        }
        if self.source == DataSource::Directory && self.paths.data_dir.is_none() {
            return bad(format!("source \"directory\" needs paths.data_dir (or {ENV_DATA_DIR})"));
        }
        if self.source != DataSource::Directory {
            self.planted_spec().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    /// Result-relevant view of the config: worker count and output
    /// directory removed, planted spec resolved.
    pub fn provenance(&self) -> serde_json::Value {
        let mut resolved = self.clone();
        resolved.synth.planted = self.planted_spec();
        let mut v = serde_json::to_value(&resolved).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("workers");
            if let Some(paths) = obj.get_mut("paths").and_then(|p| p.as_object_mut()) {
                paths.remove("out_dir");
            }
        }
        v
    }

    /// SHA-256 of the canonical JSON of [`RunConfig::provenance`].
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.provenance()).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
        c.validate().unwrap();
        assert_eq!((c.analysis.filter_order, c.analysis.cutoff_hz), (4, 6.0));
        assert_eq!((c.rbf.smoothing, c.rbf.epsilon), (0.4, 0.1));
        assert_eq!(c.bootstrap.n_resamples, 1000);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = RunConfig::from_toml_str("seed = 7\noutcome = \"opus\"\n[rbf]\nsmoothing = 0.2\n").unwrap();
        assert_eq!((c.seed, c.outcome, c.rbf.smoothing, c.rbf.epsilon), (7, Outcome::Opus, 0.2, 0.1));
        assert!(RunConfig::from_toml_str("sede = 7").is_err());
    }

    #[test]
    fn env_overrides_paths_and_seed() {
        let env: HashMap<&str, &str> = [(ENV_SEED, "42"), (ENV_OUT_DIR, "/tmp/x"), (ENV_DATA_DIR, "/data")].into();
        let mut c = RunConfig::default();
        c.apply_overrides(|k| env.get(k).map(|s| s.to_string())).unwrap();
        assert_eq!(
            (c.seed, c.paths.out_dir.as_path(), c.paths.data_dir.as_deref()),
            (42, Path::new("/tmp/x"), Some(Path::new("/data")))
        );
        let mut c = RunConfig::default();
        assert!(matches!(c.apply_overrides(|k| (k == ENV_SEED).then(|| "x".into())), Err(ConfigError::Env { .. })));
    }

    #[test]
    fn hash_ignores_workers_and_out_dir() {
        let a = RunConfig::default();
        let b = RunConfig {
            workers: 16,
            paths: PathsConfig { out_dir: "elsewhere".into(), ..Default::default() },
            ..a.clone()
        };
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), RunConfig { seed: 1, ..a.clone() }.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn validation_catches_bad_values() {
        let c = RunConfig { source: DataSource::Directory, ..Default::default() };
        assert!(c.validate().is_err());
        let c =
            RunConfig { bootstrap: BootstrapSettings { n_resamples: 10, ..Default::default() }, ..Default::default() };
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.grid.magnitudes = vec![0.5];
        assert!(c.validate().is_err());
    }
}
