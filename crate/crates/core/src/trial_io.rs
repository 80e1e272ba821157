//! Trial data model, on-disk format, ingestion checks and dataset assembly.
//!
//! Layout under a data root:
//!
//! ```text
//! <root>/<subject>/session_<k>/session.json
//! <root>/<subject>/session_<k>/<trial_id>/manifest.json
//! <root>/<subject>/session_<k>/<trial_id>/kinematics.csv
//! <root>/<subject>/session_<k>/<trial_id>/grf.csv
//! <root>/<subject>/session_<k>/<trial_id>/events.json   (optional override)
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::body::SubjectAnthropometry;
use crate::controller::AssistanceCondition;
use crate::dataset::{ConditionDataset, Exclusion, Outcome, TrialRecord};
use crate::series::TimeSeries;
use crate::signal::{GaitEvents, Side};
use crate::wbam::SegmentKinematics;

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_RATE_HZ: f64 = 100.0;
/// Longest run of missing samples that is bridged instead of rejected.
pub const MAX_BRIDGED_GAP: usize = 3;
/// Both feet unloaded for longer than this after onset marks a jump.
pub const JUMP_FLIGHT_S: f64 = 0.05;

const KINEMATICS_FILE: &str = "kinematics.csv";
const GRF_FILE: &str = "grf.csv";
const EVENTS_FILE: &str = "events.json";
const TRIAL_MANIFEST: &str = "manifest.json";
const SESSION_MANIFEST: &str = "session.json";
const GRF_COLUMNS: [&str; 5] = ["time_s", "fz_left_N", "fz_right_N", "belt_speed_left_mps", "belt_speed_right_mps"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: schema version {found}, expected {SCHEMA_VERSION}")]
    Schema { path: PathBuf, found: u32 },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("channel {channel}: {message}")]
    Channel { channel: String, message: String },
    #[error("misaligned clocks: {0}")]
    Misaligned(String),
    #[error("invalid trial: {0}")]
    Validation(String),
    #[error("condition {condition} has no valid repetitions (trials: {})", trials.join(", "))]
    Exclusion { condition: String, trials: Vec<String> },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { path: path.to_path_buf(), source }
}

fn parse_err(path: &Path, message: impl Into<String>) -> IngestError {
    IngestError::Parse { path: path.to_path_buf(), message: message.into() }
}

/// Vertical force per foot (N) and belt speed per belt (m/s).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GrfChannels {
    pub fz_left: Vec<f64>,
    pub fz_right: Vec<f64>,
    pub belt_left: Vec<f64>,
    pub belt_right: Vec<f64>,
}

/// One perturbation bout with all channels on a shared clock.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub trial_id: String,
    pub subject_id: String,
    pub session: u32,
    pub condition: AssistanceCondition,
    pub onset: f64,
    pub perturbation_length: f64,
    pub perturbed_side: Side,
    pub sample_rate: f64,
    pub start_time: f64,
    pub kinematics: Vec<SegmentKinematics>,
    pub grf: GrfChannels,
    /// Manually labeled events replacing detector output.
    pub events_override: Option<GaitEvents>,
}

impl Trial {
    pub fn len(&self) -> usize {
        self.grf.fz_left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn end_time(&self) -> f64 {
        self.start_time + self.len().saturating_sub(1) as f64 / self.sample_rate
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let n = self.len();
        let lens = [self.grf.fz_right.len(), self.grf.belt_left.len(), self.grf.belt_right.len()];
        if lens.iter().any(|&l| l != n) {
            return Err(IngestError::Validation(format!("{}: GRF channels have unequal lengths", self.trial_id)));
        }
        for k in &self.kinematics {
            if k.x.len() != n || k.z.len() != n || k.angle.len() != n {
                return Err(IngestError::Misaligned(format!(
                    "{}: segment {} has {} samples, GRF has {n}",
                    self.trial_id,
                    k.segment_id,
                    k.x.len()
                )));
            }
        }
        if !(self.sample_rate > 0.0) || n < 3 {
            return Err(IngestError::Validation(format!("{}: need >= 3 samples at a positive rate", self.trial_id)));
        }
        if !(self.perturbation_length > 0.0) {
            return Err(IngestError::Validation(format!("{}: perturbation length must be positive", self.trial_id)));
        }
        let (t0, t1) = (self.start_time, self.end_time());
        if self.onset < t0 || self.onset + self.perturbation_length > t1 {
            return Err(IngestError::Validation(format!(
                "{}: perturbation [{}, {}] s outside recorded span [{t0}, {t1}] s",
                self.trial_id,
                self.onset,
                self.onset + self.perturbation_length
            )));
        }
        Ok(())
    }

    fn series(&self, v: &[f64]) -> TimeSeries {
        TimeSeries::new(self.sample_rate, self.start_time, v.to_vec()).expect("validated channel")
    }

    pub fn vertical_grf(&self, side: Side) -> TimeSeries {
        match side {
            Side::Left => self.series(&self.grf.fz_left),
            Side::Right => self.series(&self.grf.fz_right),
        }
    }

    /// Mean of the two belt speeds.
    pub fn belt_speed(&self) -> TimeSeries {
        let v: Vec<f64> = self.grf.belt_left.iter().zip(&self.grf.belt_right).map(|(a, b)| 0.5 * (a + b)).collect();
        self.series(&v)
    }

    /// Reason string when both feet are unloaded for more than
    /// [`JUMP_FLIGHT_S`] after onset.
    pub fn jump_response(&self, threshold: f64) -> Option<String> {
        let dt = 1.0 / self.sample_rate;
        let mut run = 0usize;
        for k in 0..self.len() {
            let t = self.start_time + k as f64 * dt;
            let flight = t >= self.onset && self.grf.fz_left[k] < threshold && self.grf.fz_right[k] < threshold;
            run = if flight { run + 1 } else { 0 };
            // a run of r samples spans (r - 1) sample intervals
            if run > 1 && (run - 1) as f64 * dt > JUMP_FLIGHT_S {
                return Some(format!(
                    "jumping response: flight phase longer than {} ms at {:.3} s",
                    JUMP_FLIGHT_S * 1e3,
                    t
                ));
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialManifest {
    pub schema_version: u32,
    pub trial_id: String,
    pub subject_id: String,
    pub session: u32,
    pub condition: AssistanceCondition,
    pub perturbation_onset_s: f64,
    pub perturbation_length_s: f64,
    pub perturbed_side: Side,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTrial {
    pub trial_id: String,
    pub condition: AssistanceCondition,
    /// Perceived stability, 1–5.
    pub opus: u8,
    /// Directory relative to the session directory.
    pub directory: String,
}

/// One subject's visit: anthropometry and the randomized trial order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionManifest {
    pub schema_version: u32,
    pub subject_id: String,
    /// 1-based.
    pub session: u32,
    pub anthropometry: SubjectAnthropometry,
    /// Peak biological hip extension moment, Nm/kg.
    pub peak_bio_moment: f64,
    pub exo_mass_kg: f64,
    /// Condition keys in presentation order.
    pub condition_order: Vec<String>,
    pub trials: Vec<SessionTrial>,
}

impl SessionManifest {
    pub fn validate(&self) -> Result<(), IngestError> {
        let fail =
            |m: String| Err(IngestError::Validation(format!("{} session {}: {m}", self.subject_id, self.session)));
        if self.schema_version != SCHEMA_VERSION {
            return fail(format!("schema version {}", self.schema_version));
        }
        if self.anthropometry.validate().is_err() {
            return fail("invalid anthropometry".into());
        }
        if !(self.exo_mass_kg >= 0.0) {
            return fail(format!("negative exoskeleton mass {}", self.exo_mass_kg));
        }
        let mut ids = BTreeSet::new();
        let mut conds = BTreeSet::new();
        for t in &self.trials {
            if !(1..=5).contains(&t.opus) {
                return fail(format!("trial {} has OPUS score {} outside 1..=5", t.trial_id, t.opus));
            }
            if !ids.insert(&t.trial_id) {
                return fail(format!("duplicate trial id {}", t.trial_id));
            }
            if !conds.insert(t.condition.key()) {
                return fail(format!("condition {} repeated within the session", t.condition.key()));
            }
        }
        let order: BTreeSet<String> = self.condition_order.iter().cloned().collect();
        if order != conds.into_iter().collect() || order.len() != self.condition_order.len() {
            return fail("condition order does not match the trial list".into());
        }
        Ok(())
    }

    /// Checks that the session covers exactly `grid`.
    pub fn check_grid(&self, grid: &[AssistanceCondition]) -> Result<(), IngestError> {
        let want: BTreeSet<String> = grid.iter().map(|c| c.key()).collect();
        let have: BTreeSet<String> = self.trials.iter().map(|t| t.condition.key()).collect();
        if want != have {
            let missing: Vec<_> = want.difference(&have).cloned().collect();
            return Err(IngestError::Validation(format!(
                "{} session {} covers {} of {} conditions (missing: {})",
                self.subject_id,
                self.session,
                have.len(),
                want.len(),
                missing.join(", ")
            )));
        }
        Ok(())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IngestError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| parse_err(path, e.to_string()))?;
    fs::write(path, text + "\n").map_err(io_err(path))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IngestError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| parse_err(path, e.to_string()))
}

/// Writes manifest, kinematics, GRF and optional events into `dir`.
pub fn write_trial(dir: &Path, trial: &Trial) -> Result<(), IngestError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = TrialManifest {
        schema_version: SCHEMA_VERSION,
        trial_id: trial.trial_id.clone(),
        subject_id: trial.subject_id.clone(),
        session: trial.session,
        condition: trial.condition,
        perturbation_onset_s: trial.onset,
        perturbation_length_s: trial.perturbation_length,
        perturbed_side: trial.perturbed_side,
    };
    write_json(&dir.join(TRIAL_MANIFEST), &manifest)?;
    let time = |k: usize| trial.start_time + k as f64 / trial.sample_rate;

    let path = dir.join(KINEMATICS_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| parse_err(&path, e.to_string()))?;
    let mut header = vec!["time_s".to_string()];
    for k in &trial.kinematics {
        header.extend([
            format!("{}_x_m", k.segment_id),
            format!("{}_z_m", k.segment_id),
            format!("{}_angle_rad", k.segment_id),
        ]);
    }
    w.write_record(&header).map_err(|e| parse_err(&path, e.to_string()))?;
    let mut row = Vec::with_capacity(header.len());
    for i in 0..trial.len() {
        row.clear();
        row.push(time(i).to_string());
        for k in &trial.kinematics {
            row.extend([k.x[i].to_string(), k.z[i].to_string(), k.angle[i].to_string()]);
        }
        w.write_record(&row).map_err(|e| parse_err(&path, e.to_string()))?;
    }
    w.flush().map_err(io_err(&path))?;

    let path = dir.join(GRF_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| parse_err(&path, e.to_string()))?;
    w.write_record(GRF_COLUMNS).map_err(|e| parse_err(&path, e.to_string()))?;
    let g = &trial.grf;
    for i in 0..trial.len() {
        w.write_record([
            time(i).to_string(),
            g.fz_left[i].to_string(),
            g.fz_right[i].to_string(),
            g.belt_left[i].to_string(),
            g.belt_right[i].to_string(),
        ])
        .map_err(|e| parse_err(&path, e.to_string()))?;
    }
    w.flush().map_err(io_err(&path))?;

    if let Some(ev) = &trial.events_override {
        write_json(&dir.join(EVENTS_FILE), ev)?;
    }
    Ok(())
}

/// Column-major numeric table read from CSV. Empty cells and `NaN` become
/// NaN.
struct Table {
    header: Vec<String>,
    columns: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> Result<Table, IngestError> {
    let mut r =
        csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| parse_err(path, e.to_string()))?;
    let header: Vec<String> =
        r.headers().map_err(|e| parse_err(path, e.to_string()))?.iter().map(str::to_string).collect();
    let mut columns = vec![Vec::new(); header.len()];
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| parse_err(path, e.to_string()))?;
        if rec.len() != header.len() {
            return Err(parse_err(
                path,
                format!("row {} has {} fields, header has {}", line + 2, rec.len(), header.len()),
            ));
        }
        for (c, field) in rec.iter().enumerate() {
            let v = if field.is_empty() {
                f64::NAN
            } else {
                field.parse::<f64>().map_err(|_| {
                    parse_err(path, format!("row {} column {}: '{field}' is not a number", line + 2, header[c]))
                })?
            };
            columns[c].push(v);
        }
    }
    Ok(Table { header, columns })
}

impl Table {
    fn column(&self, name: &str, path: &Path) -> Result<&[f64], IngestError> {
        let i = self
            .header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| parse_err(path, format!("missing column {name}")))?;
        Ok(&self.columns[i])
    }
}

/// Replaces NaN runs of at most [`MAX_BRIDGED_GAP`] samples by linear
/// interpolation (edge runs hold the nearest value). Returns the number of
/// bridged samples.
pub fn bridge_gaps(channel: &str, values: &mut [f64]) -> Result<usize, IngestError> {
    let n = values.len();
    let mut bridged = 0;
    let mut i = 0;
    while i < n {
        if !values[i].is_nan() {
            i += 1;
            continue;
        }
        let start = i;
        while i < n && values[i].is_nan() {
            i += 1;
        }
        let len = i - start;
        if len > MAX_BRIDGED_GAP {
            return Err(IngestError::Channel {
                channel: channel.to_string(),
                message: format!("{len} consecutive missing samples from index {start} (limit {MAX_BRIDGED_GAP})"),
            });
        }
        let (left, right) = (start.checked_sub(1).map(|j| values[j]), (i < n).then(|| values[i]));
        for (k, v) in values[start..i].iter_mut().enumerate() {
            *v = match (left, right) {
                (Some(a), Some(b)) => a + (b - a) * (k + 1) as f64 / (len + 1) as f64,
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => {
                    return Err(IngestError::Channel {
                        channel: channel.to_string(),
                        message: "no valid samples".into(),
                    })
                }
            };
        }
        if values[start..i].iter().any(|v| !v.is_finite()) {
            return Err(IngestError::Channel { channel: channel.to_string(), message: "non-finite samples".into() });
        }
        bridged += len;
    }
    if let Some(j) = values.iter().position(|v| !v.is_finite()) {
        return Err(IngestError::Channel {
            channel: channel.to_string(),
            message: format!("non-finite sample at index {j}"),
        });
    }
    Ok(bridged)
}

/// Uniform clock recovered from a time column.
#[derive(Debug, Clone, Copy)]
struct Clock {
    start: f64,
    rate: f64,
    n: usize,
}

fn clock_of(times: &[f64], path: &Path) -> Result<Clock, IngestError> {
    let n = times.len();
    if n < 3 {
        return Err(parse_err(path, format!("need at least 3 samples, got {n}")));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(parse_err(path, "time column has missing values"));
    }
    let span = times[n - 1] - times[0];
    if !(span > 0.0) {
        return Err(parse_err(path, "time column is not increasing"));
    }
    let mut rate = (n - 1) as f64 / span;
    if (rate - rate.round()).abs() < 1e-6 * rate {
        rate = rate.round();
    }
    let dt = 1.0 / rate;
    for (k, t) in times.iter().enumerate() {
        if (t - (times[0] + k as f64 * dt)).abs() > 1e-3 * dt {
            return Err(parse_err(path, format!("non-uniform sampling at row {}", k + 2)));
        }
    }
    Ok(Clock { start: times[0], rate, n })
}

fn resample(values: &[f64], from: Clock, start: f64, rate: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let pos = ((start + k as f64 / rate) - from.start) * from.rate;
            let i = (pos.floor().max(0.0) as usize).min(from.n - 2);
            let frac = (pos - i as f64).clamp(0.0, 1.0);
            values[i] + (values[i + 1] - values[i]) * frac
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    /// Common sample rate; channels recorded at another rate are linearly
    /// resampled.
    pub target_rate: f64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self { target_rate: DEFAULT_RATE_HZ }
    }
}

/// A loaded trial and the non-fatal issues met while reading it.
#[derive(Debug, Clone)]
pub struct LoadedTrial {
    pub trial: Trial,
    pub warnings: Vec<String>,
}

/// Reads and validates the trial stored in `dir`.
pub fn load_trial(dir: &Path, opts: &LoadOptions) -> Result<LoadedTrial, IngestError> {
    let mpath = dir.join(TRIAL_MANIFEST);
    let raw: serde_json::Value = read_json(&mpath)?;
    let found = raw.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != SCHEMA_VERSION {
        return Err(IngestError::Schema { path: mpath, found });
    }
    let manifest: TrialManifest = serde_json::from_value(raw).map_err(|e| parse_err(&mpath, e.to_string()))?;
    let mut warnings = Vec::new();

    let kpath = dir.join(KINEMATICS_FILE);
    let mut ktab = read_table(&kpath)?;
    let kclock = clock_of(ktab.column("time_s", &kpath)?, &kpath)?;
    let gpath = dir.join(GRF_FILE);
    let mut gtab = read_table(&gpath)?;
    let gclock = clock_of(gtab.column("time_s", &gpath)?, &gpath)?;

    let coarse_dt = 1.0 / kclock.rate.min(gclock.rate);
    if (kclock.start - gclock.start).abs() > 0.5 * coarse_dt {
        return Err(IngestError::Misaligned(format!(
            "{}: kinematics start at {} s, GRF at {} s",
            manifest.trial_id, kclock.start, gclock.start
        )));
    }

    for (tab, path) in [(&mut ktab, &kpath), (&mut gtab, &gpath)] {
        for (name, col) in tab.header.iter().zip(tab.columns.iter_mut()).skip(1) {
            let bridged = bridge_gaps(name, col)?;
            if bridged > 0 {
                let msg = format!("{}: bridged {bridged} missing sample(s) in {name}", path.display());
                log::warn!("{msg}");
                warnings.push(msg);
            }
        }
    }

    let same_rate = |r: f64| (r - opts.target_rate).abs() <= 1e-9 * opts.target_rate;
    let (start, rate) = (kclock.start.max(gclock.start), opts.target_rate);
    let end =
        (kclock.start + (kclock.n - 1) as f64 / kclock.rate).min(gclock.start + (gclock.n - 1) as f64 / gclock.rate);
    let n = if same_rate(kclock.rate) && same_rate(gclock.rate) {
        kclock.n.min(gclock.n)
    } else {
        let msg = format!(
            "{}: resampled kinematics ({} Hz) and GRF ({} Hz) to {rate} Hz",
            manifest.trial_id, kclock.rate, gclock.rate
        );
        log::info!("{msg}");
        warnings.push(msg);
        ((end - start) * rate + 1e-9).floor() as usize + 1
    };
    let take = |values: &[f64], clock: Clock| -> Vec<f64> {
        if same_rate(clock.rate) && (clock.start - start).abs() < 1e-12 {
            values[..n].to_vec()
        } else {
            resample(values, clock, start, rate, n)
        }
    };

    let mut kinematics = Vec::new();
    for name in ktab.header.iter().skip(1) {
        let Some(id) = name.strip_suffix("_x_m") else { continue };
        let col = |suffix: &str| -> Result<Vec<f64>, IngestError> {
            Ok(take(ktab.column(&format!("{id}{suffix}"), &kpath)?, kclock))
        };
        kinematics.push(SegmentKinematics {
            segment_id: id.to_string(),
            x: col("_x_m")?,
            z: col("_z_m")?,
            angle: col("_angle_rad")?,
        });
    }
    let gcol = |name: &str| -> Result<Vec<f64>, IngestError> { Ok(take(gtab.column(name, &gpath)?, gclock)) };
    let grf = GrfChannels {
        fz_left: gcol(GRF_COLUMNS[1])?,
        fz_right: gcol(GRF_COLUMNS[2])?,
        belt_left: gcol(GRF_COLUMNS[3])?,
        belt_right: gcol(GRF_COLUMNS[4])?,
    };
    let epath = dir.join(EVENTS_FILE);
    let events_override = if epath.exists() {
        let ev: GaitEvents = read_json(&epath)?;
        ev.validate().map_err(|e| parse_err(&epath, e.to_string()))?;
        Some(ev)
    } else {
        None
    };
    let trial = Trial {
        trial_id: manifest.trial_id,
        subject_id: manifest.subject_id,
        session: manifest.session,
        condition: manifest.condition,
        onset: manifest.perturbation_onset_s,
        perturbation_length: manifest.perturbation_length_s,
        perturbed_side: manifest.perturbed_side,
        sample_rate: rate,
        start_time: start,
        kinematics,
        grf,
        events_override,
    };
    trial.validate()?;
    Ok(LoadedTrial { trial, warnings })
}

pub fn session_dir(root: &Path, subject_id: &str, session: u32) -> PathBuf {
    root.join(subject_id).join(format!("session_{session}"))
}

pub fn write_session(root: &Path, manifest: &SessionManifest) -> Result<PathBuf, IngestError> {
    let dir = session_dir(root, &manifest.subject_id, manifest.session);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let path = dir.join(SESSION_MANIFEST);
    write_json(&path, manifest)?;
    Ok(path)
}

pub fn load_session(path: &Path) -> Result<SessionManifest, IngestError> {
    let raw: serde_json::Value = read_json(path)?;
    let found = raw.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if found != SCHEMA_VERSION {
        return Err(IngestError::Schema { path: path.to_path_buf(), found });
    }
    let m: SessionManifest = serde_json::from_value(raw).map_err(|e| parse_err(path, e.to_string()))?;
    m.validate()?;
    Ok(m)
}

/// All `session.json` files under `root`, sorted by path.
pub fn discover_sessions(root: &Path) -> Result<Vec<PathBuf>, IngestError> {
    if !root.is_dir() {
        return Err(IngestError::Io {
            path: root.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "data directory not found"),
        });
    }
    let mut out = Vec::new();
    for subject in fs::read_dir(root).map_err(io_err(root))? {
        let subject = subject.map_err(io_err(root))?.path();
        if !subject.is_dir() {
            continue;
        }
        for session in fs::read_dir(&subject).map_err(io_err(&subject))? {
            let p = session.map_err(io_err(&subject))?.path().join(SESSION_MANIFEST);
            if p.is_file() {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Analysis outcome of one trial as fed to dataset assembly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial_id: String,
    pub subject_id: String,
    pub condition: AssistanceCondition,
    pub repetition: u32,
    /// Percent change in WBAM range, absent when excluded.
    pub wbam_percent_change: Option<f64>,
    pub opus: Option<u8>,
    pub exclusion: Option<String>,
}

/// Groups per-trial outcomes into a dataset for `outcome`. Excluded trials
/// are logged once each; a (subject, condition) pair without valid trials is
/// dropped, and a condition without valid trials anywhere is an error.
pub fn assemble_dataset(results: &[TrialOutcome], outcome: Outcome) -> Result<ConditionDataset, IngestError> {
    let mut records = Vec::new();
    let mut exclusions = Vec::new();
    let mut by_condition: BTreeMap<String, (usize, Vec<String>)> = BTreeMap::new();
    let mut by_pair: BTreeMap<(String, String), usize> = BTreeMap::new();
    for r in results {
        let key = r.condition.key();
        let entry = by_condition.entry(key.clone()).or_default();
        entry.1.push(r.trial_id.clone());
        let pair = by_pair.entry((r.subject_id.clone(), key.clone())).or_default();
        let value = match outcome {
            Outcome::Wbam => r.wbam_percent_change,
            Outcome::Opus => r.opus.map(f64::from),
        };
        match (&r.exclusion, value) {
            (None, Some(v)) => {
                entry.0 += 1;
                *pair += 1;
                records.push(TrialRecord {
                    subject_id: r.subject_id.clone(),
                    condition: r.condition,
                    repetition: r.repetition,
                    value: v,
                });
            }
            (reason, _) => exclusions.push(Exclusion {
                trial_id: r.trial_id.clone(),
                subject_id: r.subject_id.clone(),
                condition: key,
                reason: reason.clone().unwrap_or_else(|| format!("no {outcome} value")),
            }),
        }
    }
    for (condition, (valid, trials)) in by_condition {
        if valid == 0 {
            return Err(IngestError::Exclusion { condition, trials });
        }
    }
    for ((subject, condition), valid) in by_pair {
        if valid == 0 {
            log::warn!("dropping {condition} for {subject}: every repetition was excluded");
        }
    }
    Ok(ConditionDataset::new(outcome, records).with_exclusions(exclusions))
}

/// Exclusion log, one JSON object per line.
pub fn write_exclusion_log<W: Write>(mut w: W, exclusions: &[Exclusion]) -> std::io::Result<()> {
    for e in exclusions {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}
