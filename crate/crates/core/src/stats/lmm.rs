//! Random-intercept linear mixed model fitted by REML.
//!
//! The variance ratio `θ = σ_b²/σ²` is profiled: for fixed `θ` the fixed
//! effects follow from generalized least squares and `σ²` has a closed form,
//! leaving a one-dimensional search. Each subject's covariance block
//! `I + θ·11ᵀ` has inverse `I − θ/(1 + nθ)·11ᵀ` and log-determinant
//! `ln(1 + nθ)`, so one evaluation costs `O(subjects · p²)`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dist::normal_two_sided;
use super::StatsError;
use crate::dataset::ConditionDataset;

pub const LMM_FORMULA: &str = "value ~ 1 + magnitude + duration + magnitude:duration + (1 | subject)";

/// How assistance magnitude enters the design matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MagnitudeCoding {
    /// 0.05 … 0.25
    #[default]
    Fraction,
    /// 5 … 25
    Percent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmmConfig {
    pub magnitude_coding: MagnitudeCoding,
    /// Points in the coarse scan over `θ/(1+θ) ∈ [0, 1)`.
    pub scan_points: usize,
    /// Final bracket width on `θ`.
    pub tolerance: f64,
}

impl Default for LmmConfig {
    fn default() -> Self {
        Self { magnitude_coding: MagnitudeCoding::Fraction, scan_points: 400, tolerance: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEffect {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub z: f64,
    /// Two-sided Wald p-value.
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmmResult {
    pub formula: String,
    pub method: String,
    pub magnitude_coding: MagnitudeCoding,
    pub fixed_effects: Vec<FixedEffect>,
    pub random_intercept_variance: f64,
    pub residual_variance: f64,
    pub icc: f64,
    pub reml_log_likelihood: f64,
    pub theta: f64,
    /// The optimum sits at `θ = 0`.
    pub boundary: bool,
    pub n_obs: usize,
    pub n_groups: usize,
    pub tolerance: f64,
}

impl LmmResult {
    pub fn effect(&self, name: &str) -> Option<&FixedEffect> {
        self.fixed_effects.iter().find(|e| e.name == name)
    }
}

#[derive(Debug, Clone)]
struct GroupSums {
    n: f64,
    xtx: DMatrix<f64>,
    xt1: DVector<f64>,
    xty: DVector<f64>,
    sum_y: f64,
    yty: f64,
}

/// REML quantities at one `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfilePoint {
    pub theta: f64,
    pub log_likelihood: f64,
    pub beta: DVector<f64>,
    /// `σ²` at its profiled optimum.
    pub sigma2: f64,
    /// `(XᵀH⁻¹X)⁻¹`; multiply by `σ²` for the fixed-effect covariance.
    pub unscaled_cov: DMatrix<f64>,
}

/// Design reduced to per-group sufficient statistics.
#[derive(Debug, Clone)]
pub struct LmmDesign {
    names: Vec<String>,
    groups: Vec<GroupSums>,
    n: usize,
}

impl LmmDesign {
    /// `rows[k]` is the predictor row of observation `k` (include the
    /// intercept column yourself); `groups[k]` its grouping label.
    pub fn new<G: Ord + Clone>(names: &[&str], rows: &[Vec<f64>], y: &[f64], groups: &[G]) -> Result<Self, StatsError> {
        let p = names.len();
        if rows.len() != y.len() || groups.len() != y.len() {
            return Err(StatsError::Argument("design rows, responses and groups differ in length".into()));
        }
        if rows.iter().any(|r| r.len() != p) {
            return Err(StatsError::Argument(format!("every design row needs {p} columns")));
        }
        if rows.iter().flatten().chain(y).any(|v| !v.is_finite()) {
            return Err(StatsError::Argument("non-finite model input".into()));
        }
        let mut by_group: BTreeMap<G, GroupSums> = BTreeMap::new();
        for ((row, &yk), g) in rows.iter().zip(y).zip(groups) {
            let s = by_group.entry(g.clone()).or_insert_with(|| GroupSums {
                n: 0.0,
                xtx: DMatrix::zeros(p, p),
                xt1: DVector::zeros(p),
                xty: DVector::zeros(p),
                sum_y: 0.0,
                yty: 0.0,
            });
            let x = DVector::from_column_slice(row);
            s.n += 1.0;
            s.xtx += &x * x.transpose();
            s.xt1 += &x;
            s.xty += &x * yk;
            s.sum_y += yk;
            s.yty += yk * yk;
        }
        if by_group.len() < 2 {
            return Err(StatsError::Argument(format!("mixed model needs at least 2 subjects, got {}", by_group.len())));
        }
        if by_group.values().any(|g| g.n < 2.0) {
            return Err(StatsError::Argument("mixed model needs at least 2 observations per subject".into()));
        }
        if y.len() <= p {
            return Err(StatsError::Argument(format!("{} observations cannot support {p} fixed effects", y.len())));
        }
        Ok(Self {
            names: names.iter().map(|s| s.to_string()).collect(),
            groups: by_group.into_values().collect(),
            n: y.len(),
        })
    }

    pub fn n_obs(&self) -> usize {
        self.n
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    /// Profiled REML log-likelihood and GLS estimates at `θ ≥ 0`. `None`
    /// when the fixed-effect system is singular or the residual vanishes.
    pub fn profile(&self, theta: f64) -> Option<ProfilePoint> {
        let p = self.names.len();
        let mut a = DMatrix::zeros(p, p);
        let mut b = DVector::zeros(p);
        let (mut q, mut log_det_h) = (0.0, 0.0);
        for g in &self.groups {
            let c = theta / (1.0 + g.n * theta);
            a += &g.xtx - &g.xt1 * g.xt1.transpose() * c;
            b += &g.xty - &g.xt1 * (c * g.sum_y);
            q += g.yty - c * g.sum_y * g.sum_y;
            log_det_h += (g.n * theta).ln_1p();
        }
        let chol = a.clone().cholesky()?;
        let beta = chol.solve(&b);
        let rss = q - beta.dot(&b);
        let dof = (self.n - p) as f64;
        let sigma2 = rss / dof;
        if !(sigma2 > 0.0) {
            return None;
        }
        let log_det_a: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let log_likelihood = -0.5 * (dof * sigma2.ln() + log_det_h + log_det_a + dof * (1.0 + (2.0 * PI).ln()));
        Some(ProfilePoint { theta, log_likelihood, beta, sigma2, unscaled_cov: chol.inverse() })
    }

    /// Coarse scan over `φ = θ/(1+θ)`, then golden-section search on `θ`
    /// inside the best scan bracket.
    pub fn fit(&self, config: &LmmConfig) -> Result<LmmFit, StatsError> {
        if config.scan_points < 3 || !(config.tolerance > 0.0) {
            return Err(StatsError::Argument("scan needs >= 3 points and a positive tolerance".into()));
        }
        let k = config.scan_points;
        let theta_at = |i: usize| {
            let phi = i as f64 / k as f64;
            phi / (1.0 - phi)
        };
        let ll = |t: f64| self.profile(t).map(|p| p.log_likelihood).unwrap_or(f64::NEG_INFINITY);
        let trace: Vec<(f64, f64)> = (0..k).map(|i| (theta_at(i), ll(theta_at(i)))).collect();
        let best = (0..k).fold(0, |b, i| if trace[i].1 > trace[b].1 { i } else { b });
        if !trace[best].1.is_finite() || best == k - 1 {
            return Err(StatsError::NonConvergence { trace });
        }
        let (mut lo, mut hi) = (theta_at(best.saturating_sub(1)), theta_at(best + 1));
        let r = 0.5 * (5.0_f64.sqrt() - 1.0);
        let (mut x1, mut x2) = (hi - r * (hi - lo), lo + r * (hi - lo));
        let (mut f1, mut f2) = (ll(x1), ll(x2));
        while hi - lo > config.tolerance {
            if f1 >= f2 {
                hi = x2;
                (x2, f2) = (x1, f1);
                x1 = hi - r * (hi - lo);
                f1 = ll(x1);
            } else {
                lo = x1;
                (x1, f1) = (x2, f2);
                x2 = lo + r * (hi - lo);
                f2 = ll(x2);
            }
        }
        let mut theta = 0.5 * (lo + hi);
        // the bracket can close on the boundary without reaching it exactly
        let boundary = best == 0 && (theta <= config.tolerance || ll(0.0) >= ll(theta));
        if boundary {
            theta = 0.0;
        }
        let point = self.profile(theta).ok_or(StatsError::NonConvergence { trace })?;
        Ok(LmmFit { point, boundary })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone)]
pub struct LmmFit {
    pub point: ProfilePoint,
    pub boundary: bool,
}

/// Fits the trapezoid trials of `data` with magnitude, duration and their
/// interaction as fixed effects and a per-subject random intercept.
pub fn fit_random_intercept_lmm(data: &ConditionDataset, config: &LmmConfig) -> Result<LmmResult, StatsError> {
    let scale = match config.magnitude_coding {
        MagnitudeCoding::Fraction => 1.0,
        MagnitudeCoding::Percent => 100.0,
    };
    let recs: Vec<_> = data.records().iter().filter(|r| r.condition.is_trapezoid()).collect();
    let rows: Vec<Vec<f64>> = recs
        .iter()
        .map(|r| {
            let (m, d) = (scale * r.condition.magnitude_fraction, r.condition.duration_multiple);
            vec![1.0, m, d, m * d]
        })
        .collect();
    let y: Vec<f64> = recs.iter().map(|r| r.value).collect();
    let groups: Vec<&str> = recs.iter().map(|r| r.subject_id.as_str()).collect();
    let names = ["intercept", "magnitude", "duration", "magnitude:duration"];
    let design = LmmDesign::new(&names, &rows, &y, &groups)?;
    let fit = design.fit(config)?;
    let p = &fit.point;
    let fixed_effects = names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let se = (p.sigma2 * p.unscaled_cov[(j, j)]).sqrt();
            let z = p.beta[j] / se;
            FixedEffect { name: name.to_string(), estimate: p.beta[j], std_error: se, z, p_value: normal_two_sided(z) }
        })
        .collect();
    let vb = p.theta * p.sigma2;
    Ok(LmmResult {
        formula: LMM_FORMULA.into(),
        method: "REML".into(),
        magnitude_coding: config.magnitude_coding,
        fixed_effects,
        random_intercept_variance: vb,
        residual_variance: p.sigma2,
        icc: vb / (vb + p.sigma2),
        reml_log_likelihood: p.log_likelihood,
        theta: p.theta,
        boundary: fit.boundary,
        n_obs: design.n_obs(),
        n_groups: design.n_groups(),
        tolerance: config.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// 4 subjects × 6 observations with a random intercept.
    fn balanced(seed: u64, sb: f64) -> (Vec<Vec<f64>>, Vec<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut rows, mut y, mut g) = (Vec::new(), Vec::new(), Vec::new());
        for s in 0..4 {
            let b: f64 = sb * (rng.random::<f64>() - 0.5) * 3.4;
            for k in 0..6 {
                let (m, d) = (0.05 * (1 + k % 3) as f64, (1 + k / 3) as f64);
                rows.push(vec![1.0, m, d, m * d]);
                y.push(10.0 + 30.0 * m - 2.0 * d + 5.0 * m * d + b + (rng.random::<f64>() - 0.5) * 3.4);
                g.push(s);
            }
        }
        (rows, y, g)
    }

    /// REML log-likelihood with explicit dense matrices.
    fn dense_reml(rows: &[Vec<f64>], y: &[f64], g: &[usize], theta: f64) -> (f64, DVector<f64>, f64) {
        let (n, p) = (y.len(), rows[0].len());
        let x = DMatrix::from_fn(n, p, |i, j| rows[i][j]);
        let h = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } + if g[i] == g[j] { theta } else { 0.0 });
        let hinv = h.clone().cholesky().unwrap().inverse();
        let a = x.transpose() * &hinv * &x;
        let beta = a.clone().cholesky().unwrap().solve(&(x.transpose() * &hinv * DVector::from_column_slice(y)));
        let r = DVector::from_column_slice(y) - &x * &beta;
        let dof = (n - p) as f64;
        let s2 = (r.transpose() * &hinv * &r)[(0, 0)] / dof;
        let ll = -0.5 * (dof * s2.ln() + h.determinant().ln() + a.determinant().ln() + dof * (1.0 + (2.0 * PI).ln()));
        (ll, beta, s2)
    }

    #[test]
    fn profile_matches_dense_computation() {
        let (rows, y, g) = balanced(1, 3.0);
        let d = LmmDesign::new(&["a", "b", "c", "d"], &rows, &y, &g).unwrap();
        for theta in [0.0, 0.3, 2.0, 11.0] {
            let p = d.profile(theta).unwrap();
            let (ll, beta, s2) = dense_reml(&rows, &y, &g, theta);
            assert!((p.log_likelihood - ll).abs() < 1e-9);
            assert!((p.sigma2 - s2).abs() < 1e-9 * s2);
            assert!((p.beta - beta).amax() < 1e-9);
        }
    }

    #[test]
    fn matches_grid_search_oracle() {
        let (rows, y, g) = balanced(2, 3.0);
        let d = LmmDesign::new(&["a", "b", "c", "d"], &rows, &y, &g).unwrap();
        let fit = d.fit(&LmmConfig::default()).unwrap();
        // brute force: coarse grid, then successively finer grids around the best point
        let (mut best, mut step) = (0.0, 0.05);
        let mut lo = 0.0;
        for _ in 0..5 {
            let mut top = f64::NEG_INFINITY;
            for i in 0..=400 {
                let t = lo + i as f64 * step;
                let ll = dense_reml(&rows, &y, &g, t).0;
                if ll > top {
                    (top, best) = (ll, t);
                }
            }
            lo = (best - 10.0 * step).max(0.0);
            step /= 20.0;
        }
        let (_, beta, s2) = dense_reml(&rows, &y, &g, best);
        assert!((fit.point.theta - best).abs() < 1e-4 * best.max(1.0), "{} vs {best}", fit.point.theta);
        assert!((fit.point.beta.clone() - beta).amax() < 1e-4);
        assert!((fit.point.sigma2 - s2).abs() < 1e-4 * s2);
    }

    #[test]
    fn zero_offsets_reduce_to_ols() {
        let (rows, mut y, g) = balanced(3, 0.0);
        // remove each subject's mean residual so the between-subject signal is exactly nil
        let d0 = LmmDesign::new(&["a", "b", "c", "d"], &rows, &y, &g).unwrap();
        let ols = d0.profile(0.0).unwrap();
        for s in 0..4 {
            let idx: Vec<usize> = (0..y.len()).filter(|&k| g[k] == s).collect();
            let mean: f64 = idx
                .iter()
                .map(|&k| y[k] - rows[k].iter().zip(ols.beta.iter()).map(|(a, b)| a * b).sum::<f64>())
                .sum::<f64>()
                / idx.len() as f64;
            for &k in &idx {
                y[k] -= mean;
            }
        }
        let d = LmmDesign::new(&["a", "b", "c", "d"], &rows, &y, &g).unwrap();
        let fit = d.fit(&LmmConfig::default()).unwrap();
        assert!(fit.boundary && fit.point.theta == 0.0);
        let ols = d.profile(0.0).unwrap();
        assert!((fit.point.beta.clone() - ols.beta).amax() < 1e-6);
    }

    #[test]
    fn returned_theta_is_local_optimum() {
        for seed in 0..10 {
            let (rows, y, g) = balanced(seed, 4.0);
            let d = LmmDesign::new(&["a", "b", "c", "d"], &rows, &y, &g).unwrap();
            let fit = d.fit(&LmmConfig::default()).unwrap();
            let t = fit.point.theta;
            for k in [0.99, 1.01] {
                assert!(fit.point.log_likelihood >= d.profile(t * k).unwrap().log_likelihood - 1e-12);
            }
        }
    }

    #[test]
    fn rejects_thin_designs() {
        let rows = vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]];
        assert!(LmmDesign::new(&["a", "b"], &rows, &[1.0, 2.0, 3.0], &[0, 0, 0]).is_err());
        assert!(LmmDesign::new(&["a", "b"], &rows, &[1.0, 2.0, 3.0], &[0, 0, 1]).is_err());
    }
}
