//! Variance-weighted radial-basis response surface over (magnitude,
//! duration), its optimum, and bootstrap confidence intervals.

mod bootstrap;
mod optimum;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Cell, ConditionDataset};

pub use bootstrap::{
    bootstrap_optimum, bootstrap_optimum_with, percentile, BootstrapConfig, BootstrapResult, Interval as CiInterval,
    MIN_RESAMPLES,
};
pub use optimum::{best_cell, find_optimum, find_optimum_with, OptimumEstimate, OptimumMode, SearchConfig};

pub const DEFAULT_SMOOTHING: f64 = 0.4;
pub const DEFAULT_EPSILON: f64 = 0.1;
/// Zero variances are raised to this fraction of the mean variance.
pub const VARIANCE_FLOOR_FRACTION: f64 = 1e-6;
/// Solutions whose relative residual exceeds this are treated as singular.
const MAX_RELATIVE_RESIDUAL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum SurfaceError {
    #[error("not enough data: {0}")]
    InsufficientData(String),
    #[error("invalid surface parameter: {0}")]
    Parameter(String),
    #[error("singular RBF system (condition number {condition:.3e})")]
    Singular { condition: f64 },
    #[error("writing surface: {0}")]
    Io(#[from] std::io::Error),
    #[error("writing surface: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// `exp(-q²)`
    #[default]
    Gaussian,
    /// `sqrt(1 + q²)`
    Multiquadric,
    /// `1 / sqrt(1 + q²)`
    InverseMultiquadric,
}

impl Kernel {
    /// Kernel value at scaled distance `q = r / ε`.
    pub fn eval(self, q: f64) -> f64 {
        match self {
            Kernel::Gaussian => (-q * q).exp(),
            Kernel::Multiquadric => (1.0 + q * q).sqrt(),
            Kernel::InverseMultiquadric => 1.0 / (1.0 + q * q).sqrt(),
        }
    }
}

/// Polynomial appended to the kernel expansion, with the matching
/// orthogonality constraints on the kernel coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PolynomialTail {
    None,
    Constant,
    Linear,
    #[default]
    Quadratic,
}

impl PolynomialTail {
    pub fn terms(self) -> usize {
        match self {
            PolynomialTail::None => 0,
            PolynomialTail::Constant => 1,
            PolynomialTail::Linear => 3,
            PolynomialTail::Quadratic => 6,
        }
    }

    fn basis(self, u: f64, v: f64) -> [f64; 6] {
        [1.0, u, v, u * u, u * v, v * v]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RbfConfig {
    pub kernel: Kernel,
    pub smoothing: f64,
    /// Shape parameter as a fraction of the domain diagonal.
    pub epsilon: f64,
    pub tail: PolynomialTail,
    /// Map the data bounds onto the unit square before fitting.
    pub normalize: bool,
}

impl Default for RbfConfig {
    fn default() -> Self {
        Self {
            kernel: Kernel::Gaussian,
            smoothing: DEFAULT_SMOOTHING,
            epsilon: DEFAULT_EPSILON,
            tail: PolynomialTail::Quadratic,
            normalize: true,
        }
    }
}

impl RbfConfig {
    pub fn validate(&self) -> Result<(), SurfaceError> {
        if !(self.smoothing >= 0.0 && self.smoothing.is_finite()) {
            return Err(SurfaceError::Parameter(format!("smoothing must be >= 0, got {}", self.smoothing)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(SurfaceError::Parameter(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

/// Rectangle in (magnitude fraction, duration multiple).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub magnitude: (f64, f64),
    pub duration: (f64, f64),
}

impl Bounds {
    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.magnitude.0 + self.magnitude.1), 0.5 * (self.duration.0 + self.duration.1))
    }

    pub fn contains(&self, m: f64, d: f64) -> bool {
        (self.magnitude.0..=self.magnitude.1).contains(&m) && (self.duration.0..=self.duration.1).contains(&d)
    }

    /// True when `other` lies inside `self` up to rounding.
    pub fn encloses(&self, other: &Bounds) -> bool {
        let tol = 1e-12 * (1.0 + self.magnitude.1.abs() + self.duration.1.abs());
        other.magnitude.0 >= self.magnitude.0 - tol
            && other.magnitude.1 <= self.magnitude.1 + tol
            && other.duration.0 >= self.duration.0 - tol
            && other.duration.1 <= self.duration.1 + tol
    }
}

/// One fitted location: cell mean and its trial variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub magnitude: f64,
    pub duration: f64,
    pub value: f64,
    /// `None` when the cell has a single trial.
    pub variance: Option<f64>,
}

impl From<&Cell> for SurfacePoint {
    fn from(c: &Cell) -> Self {
        Self { magnitude: c.magnitude, duration: c.duration, value: c.mean(), variance: c.pooled_variance() }
    }
}

/// Immutable fitted surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseSurface {
    pub config: RbfConfig,
    /// Data bounds; also the normalization rectangle.
    pub bounds: Bounds,
    /// Kernel centers in fitting coordinates.
    pub centers: Vec<[f64; 2]>,
    pub coefficients: Vec<f64>,
    pub polynomial: Vec<f64>,
    /// Kernel length scale in fitting coordinates.
    pub epsilon_scaled: f64,
    /// Normalized regression weights, mean 1.
    pub weights: Vec<f64>,
    pub points: Vec<SurfacePoint>,
}

impl ResponseSurface {
    /// Fitting coordinates of a (magnitude, duration) point.
    pub fn to_unit(&self, m: f64, d: f64) -> (f64, f64) {
        to_unit(&self.bounds, self.config.normalize, m, d)
    }

    pub fn eval(&self, m: f64, d: f64) -> f64 {
        let (u, v) = self.to_unit(m, d);
        let mut s = self.tail(u, v);
        for (c, w) in self.centers.iter().zip(&self.coefficients) {
            let q = ((u - c[0]).powi(2) + (v - c[1]).powi(2)).sqrt() / self.epsilon_scaled;
            s += w * self.config.kernel.eval(q);
        }
        s
    }

    fn tail(&self, u: f64, v: f64) -> f64 {
        let b = self.config.tail.basis(u, v);
        self.polynomial.iter().zip(b).map(|(p, b)| p * b).sum()
    }

    /// Values on a rectangular grid, row-major with magnitude as the slow
    /// index. The Gaussian kernel factorizes per axis, which makes this
    /// `O(n_m · n_d · distinct center columns)`.
    pub fn grid(&self, bounds: &Bounds, n_magnitude: usize, n_duration: usize) -> SurfaceGrid {
        let ms = linspace(bounds.magnitude, n_magnitude);
        let ds = linspace(bounds.duration, n_duration);
        let us: Vec<f64> = ms.iter().map(|&m| self.to_unit(m, 0.0).0).collect();
        let vs: Vec<f64> = ds.iter().map(|&d| self.to_unit(0.0, d).1).collect();
        let mut values = vec![0.0; ms.len() * ds.len()];
        if self.config.kernel == Kernel::Gaussian {
            let mut cols: Vec<f64> = self.centers.iter().map(|c| c[0]).collect();
            cols.sort_by(f64::total_cmp);
            cols.dedup();
            let e2 = self.epsilon_scaled * self.epsilon_scaled;
            // r[a][j] = Σ over centers in column a of coef · exp(-(v_j - v_c)²/ε²)
            let mut r = vec![vec![0.0; vs.len()]; cols.len()];
            for (c, w) in self.centers.iter().zip(&self.coefficients) {
                let a = cols.partition_point(|&x| x < c[0]);
                for (j, v) in vs.iter().enumerate() {
                    r[a][j] += w * (-(v - c[1]).powi(2) / e2).exp();
                }
            }
            for (i, u) in us.iter().enumerate() {
                let eu: Vec<f64> = cols.iter().map(|c| (-(u - c).powi(2) / e2).exp()).collect();
                let row = &mut values[i * vs.len()..(i + 1) * vs.len()];
                for (j, v) in vs.iter().enumerate() {
                    row[j] = self.tail(*u, *v) + eu.iter().zip(&r).map(|(e, ra)| e * ra[j]).sum::<f64>();
                }
            }
        } else {
            for (i, m) in ms.iter().enumerate() {
                for (j, d) in ds.iter().enumerate() {
                    values[i * ds.len() + j] = self.eval(*m, *d);
                }
            }
        }
        SurfaceGrid { magnitudes: ms, durations: ds, values }
    }
}

fn to_unit(bounds: &Bounds, normalize: bool, m: f64, d: f64) -> (f64, f64) {
    if !normalize {
        return (m, d);
    }
    let span = |(lo, hi): (f64, f64)| if hi > lo { hi - lo } else { 1.0 };
    ((m - bounds.magnitude.0) / span(bounds.magnitude), (d - bounds.duration.0) / span(bounds.duration))
}

pub(crate) fn linspace((lo, hi): (f64, f64), n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|k| if k + 1 == n { hi } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 }).collect(),
    }
}

/// Dense evaluation grid; `values[i * durations.len() + j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGrid {
    pub magnitudes: Vec<f64>,
    pub durations: Vec<f64>,
    pub values: Vec<f64>,
}

impl SurfaceGrid {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.durations.len() + j]
    }

    pub fn range(&self) -> (f64, f64) {
        self.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// CSV with columns `magnitude, duration, value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), SurfaceError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["magnitude", "duration", "value"])?;
        for (i, m) in self.magnitudes.iter().enumerate() {
            for (j, d) in self.durations.iter().enumerate() {
                out.write_record([format!("{m}"), format!("{d}"), format!("{}", self.value(i, j))])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Fits the trapezoid cells of `data`.
pub fn fit_rbf(data: &ConditionDataset, smoothing: f64, epsilon: f64) -> Result<ResponseSurface, SurfaceError> {
    fit_rbf_with(data, &RbfConfig { smoothing, epsilon, ..RbfConfig::default() })
}

pub fn fit_rbf_with(data: &ConditionDataset, config: &RbfConfig) -> Result<ResponseSurface, SurfaceError> {
    let points: Vec<SurfacePoint> = data.cells().iter().map(SurfacePoint::from).collect();
    fit_points(&points, config)
}

/// Regression weights `∝ 1/σ²`, mean 1. Missing variances take the mean of
/// the known ones; zeros are floored.
fn weights(points: &[SurfacePoint]) -> Result<Vec<f64>, SurfaceError> {
    if points.iter().filter_map(|p| p.variance).any(|v| !(v >= 0.0 && v.is_finite())) {
        return Err(SurfaceError::Parameter("variances must be finite and non-negative".into()));
    }
    let known: Vec<f64> = points.iter().filter_map(|p| p.variance).collect();
    let mean = if known.is_empty() { 0.0 } else { known.iter().sum::<f64>() / known.len() as f64 };
    if mean == 0.0 {
        return Ok(vec![1.0; points.len()]);
    }
    let floor = VARIANCE_FLOOR_FRACTION * mean;
    let inv: Vec<f64> = points.iter().map(|p| 1.0 / p.variance.unwrap_or(mean).max(floor)).collect();
    let norm = inv.iter().sum::<f64>() / inv.len() as f64;
    Ok(inv.into_iter().map(|w| w / norm).collect())
}

/// Solves `[[K + λW⁻¹, P], [Pᵀ, 0]]·[c; β] = [y; 0]`.
pub fn fit_points(points: &[SurfacePoint], config: &RbfConfig) -> Result<ResponseSurface, SurfaceError> {
    config.validate()?;
    let mut points = points.to_vec();
    points.sort_by(|a, b| a.magnitude.total_cmp(&b.magnitude).then(a.duration.total_cmp(&b.duration)));
    if points.windows(2).any(|w| w[0].magnitude == w[1].magnitude && w[0].duration == w[1].duration) {
        return Err(SurfaceError::Parameter("duplicate grid points; aggregate cells first".into()));
    }
    let n = points.len();
    if n < 3 {
        return Err(SurfaceError::InsufficientData(format!("need at least 3 distinct grid points, got {n}")));
    }
    if points.iter().any(|p| !(p.value.is_finite() && p.magnitude.is_finite() && p.duration.is_finite())) {
        return Err(SurfaceError::Parameter("non-finite surface data".into()));
    }
    let q = config.tail.terms();
    if q > n {
        return Err(SurfaceError::InsufficientData(format!(
            "{q}-term polynomial tail needs at least {q} points, got {n}"
        )));
    }
    let fold = |f: fn(f64, f64) -> f64, init: f64, g: fn(&SurfacePoint) -> f64| points.iter().map(g).fold(init, f);
    let bounds = Bounds {
        magnitude: (fold(f64::min, f64::INFINITY, |p| p.magnitude), fold(f64::max, f64::NEG_INFINITY, |p| p.magnitude)),
        duration: (fold(f64::min, f64::INFINITY, |p| p.duration), fold(f64::max, f64::NEG_INFINITY, |p| p.duration)),
    };
    let centers: Vec<[f64; 2]> = points
        .iter()
        .map(|p| {
            let (u, v) = to_unit(&bounds, config.normalize, p.magnitude, p.duration);
            [u, v]
        })
        .collect();
    let (lo, hi) = (
        to_unit(&bounds, config.normalize, bounds.magnitude.0, bounds.duration.0),
        to_unit(&bounds, config.normalize, bounds.magnitude.1, bounds.duration.1),
    );
    let diagonal = ((hi.0 - lo.0).powi(2) + (hi.1 - lo.1).powi(2)).sqrt();
    let epsilon_scaled = config.epsilon * if diagonal > 0.0 { diagonal } else { 1.0 };
    let w = weights(&points)?;

    let mut a = DMatrix::<f64>::zeros(n + q, n + q);
    for i in 0..n {
        for j in 0..n {
            let r = ((centers[i][0] - centers[j][0]).powi(2) + (centers[i][1] - centers[j][1]).powi(2)).sqrt();
            a[(i, j)] = config.kernel.eval(r / epsilon_scaled);
        }
        a[(i, i)] += config.smoothing / w[i];
        let b = config.tail.basis(centers[i][0], centers[i][1]);
        for k in 0..q {
            a[(i, n + k)] = b[k];
            a[(n + k, i)] = b[k];
        }
    }
    let mut rhs = DVector::<f64>::zeros(n + q);
    for (i, p) in points.iter().enumerate() {
        rhs[i] = p.value;
    }
    let solution = a.clone().lu().solve(&rhs).filter(|s| {
        let scale = rhs.amax().max(f64::MIN_POSITIVE);
        s.iter().all(|v| v.is_finite()) && (&a * s - &rhs).amax() <= MAX_RELATIVE_RESIDUAL * scale
    });
    let solution = match solution {
        Some(s) => s,
        None => return Err(SurfaceError::Singular { condition: condition_number(&a) }),
    };
    Ok(ResponseSurface {
        config: *config,
        bounds,
        centers,
        coefficients: solution.rows(0, n).iter().copied().collect(),
        polynomial: solution.rows(n, q).iter().copied().collect(),
        epsilon_scaled,
        weights: w,
        points,
    })
}

fn condition_number(a: &DMatrix<f64>) -> f64 {
    let s = a.clone().singular_values();
    let (max, min) = s.iter().fold((0.0_f64, f64::INFINITY), |(hi, lo), &v| (hi.max(v), lo.min(v)));
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{plant_response_surface, PlantedSurfaceSpec};

    fn grid_points(f: impl Fn(f64, f64) -> f64) -> Vec<SurfacePoint> {
        let mut out = Vec::new();
        for m in [0.05, 0.10, 0.15, 0.20, 0.25] {
            for d in [0.5, 1.0, 2.0, 3.0, 4.0] {
                out.push(SurfacePoint { magnitude: m, duration: d, value: f(m, d), variance: Some(1.0 + 10.0 * m) });
            }
        }
        out
    }

    #[test]
    fn constant_is_reproduced() {
        for tail in [PolynomialTail::Constant, PolynomialTail::Linear, PolynomialTail::Quadratic] {
            let cfg = RbfConfig { smoothing: 0.0, tail, ..Default::default() };
            let s = fit_points(&grid_points(|_, _| 3.5), &cfg).unwrap();
            let g = s.grid(&s.bounds, 30, 30);
            assert!(g.values.iter().all(|v| (v - 3.5).abs() < 1e-9), "{tail:?}");
        }
    }

    #[test]
    fn zero_smoothing_interpolates() {
        let pts = grid_points(|m, d| (20.0 * m).sin() + d * d * 0.3 - m * d);
        for kernel in [Kernel::Gaussian, Kernel::Multiquadric, Kernel::InverseMultiquadric] {
            let s = fit_points(&pts, &RbfConfig { smoothing: 0.0, kernel, ..Default::default() }).unwrap();
            for p in &pts {
                assert!((s.eval(p.magnitude, p.duration) - p.value).abs() < 1e-8, "{kernel:?}");
            }
        }
    }

    #[test]
    fn grid_matches_direct_evaluation() {
        let pts = grid_points(|m, d| (30.0 * m).cos() * d + 0.1 * d * d);
        let s = fit_points(&pts, &RbfConfig::default()).unwrap();
        let g = s.grid(&s.bounds, 17, 23);
        for i in 0..17 {
            for j in 0..23 {
                let direct = s.eval(g.magnitudes[i], g.durations[j]);
                assert!((g.value(i, j) - direct).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn noiseless_planted_bowl_is_accurate() {
        let spec = PlantedSurfaceSpec::default().noiseless();
        let s = fit_rbf(&plant_response_surface(&spec).unwrap(), 0.4, 0.1).unwrap();
        let g = s.grid(&s.bounds, 60, 60);
        let (lo, hi) = g.range();
        let mut worst: f64 = 0.0;
        for i in 0..60 {
            for j in 0..60 {
                worst = worst.max((g.value(i, j) - spec.surface(g.magnitudes[i], g.durations[j])).abs());
            }
        }
        assert!(worst < 0.05 * (hi - lo), "{worst}");
    }

    #[test]
    fn weights_follow_inverse_variance() {
        let pts = vec![
            SurfacePoint { magnitude: 0.0, duration: 0.0, value: 0.0, variance: Some(1.0) },
            SurfacePoint { magnitude: 1.0, duration: 0.0, value: 0.0, variance: Some(4.0) },
            SurfacePoint { magnitude: 0.0, duration: 1.0, value: 0.0, variance: Some(0.0) },
            SurfacePoint { magnitude: 1.0, duration: 1.0, value: 0.0, variance: None },
        ];
        let w = weights(&pts).unwrap();
        assert!((w.iter().sum::<f64>() / 4.0 - 1.0).abs() < 1e-12);
        assert!((w[0] / w[1] - 4.0).abs() < 1e-12);
        // zero floored at 1e-6 × mean (1.6667)
        assert!((w[2] / w[0] - 1.0 / (1e-6 * 5.0 / 3.0)).abs() < 1e-3);
        // missing takes the mean
        assert!((w[3] / w[0] - 0.6).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_input() {
        let pts = grid_points(|_, _| 0.0);
        assert!(matches!(fit_points(&pts[..2], &RbfConfig::default()), Err(SurfaceError::InsufficientData(_))));
        assert!(fit_points(&pts, &RbfConfig { epsilon: 0.0, ..Default::default() }).is_err());
        let dup = vec![pts[0], pts[0], pts[1]];
        assert!(fit_points(&dup, &RbfConfig { tail: PolynomialTail::None, ..Default::default() }).is_err());
    }

    #[test]
    fn singular_system_reports_condition() {
        // collinear points cannot support a quadratic tail without smoothing in the kernel block
        let pts: Vec<SurfacePoint> = (0..6)
            .map(|k| SurfacePoint { magnitude: k as f64, duration: 1.0, value: k as f64, variance: Some(1.0) })
            .collect();
        match fit_points(&pts, &RbfConfig::default()) {
            Err(SurfaceError::Singular { condition }) => assert!(condition > 1e10),
            other => panic!("{other:?}"),
        }
    }
}
