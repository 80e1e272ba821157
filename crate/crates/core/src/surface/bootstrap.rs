//! Percentile bootstrap of the surface optimum, resampling trials with
//! replacement inside each condition cell.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optimum::{find_optimum_with, OptimumEstimate, OptimumMode, SearchConfig};
use super::{fit_points, RbfConfig, SurfaceError, SurfacePoint};
use crate::dataset::{pooled_within_variance, ConditionDataset};

pub const MIN_RESAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub n_resamples: usize,
    pub seed: u64,
    pub confidence: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { n_resamples: 1000, seed: 0, confidence: 0.95 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, x: f64) -> bool {
        self.lower <= x && x <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub n_resamples: usize,
    pub seed: u64,
    pub confidence: f64,
    /// Optimum of the surface fitted to the original data.
    pub point: OptimumEstimate,
    pub magnitude_ci: Interval,
    pub duration_ci: Interval,
    pub value_ci: Interval,
    /// Mean replicate optimum.
    pub mean_optimum: (f64, f64),
    /// Replicates whose surface came out flat.
    pub flat_replicates: usize,
    /// Resampled cells that kept their original variance because the
    /// resample had a single trial.
    pub variance_fallbacks: usize,
    /// Replicate optima `[magnitude, duration, value]` in replicate order.
    pub optima: Vec<[f64; 3]>,
}

/// Linear-interpolation percentile (`q` in [0, 1]) of sorted values.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 0 {
        return f64::NAN;
    }
    let h = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let (k, frac) = (h.floor() as usize, h - h.floor());
    if k + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[k] + frac * (sorted[k + 1] - sorted[k])
    }
}

pub fn bootstrap_optimum(
    data: &ConditionDataset,
    n: usize,
    seed: u64,
    mode: OptimumMode,
) -> Result<BootstrapResult, SurfaceError> {
    bootstrap_optimum_with(
        data,
        &RbfConfig::default(),
        &BootstrapConfig { n_resamples: n, seed, ..Default::default() },
        &SearchConfig::default(),
        mode,
    )
}

/// Replicate `r` draws from its own ChaCha stream `r` of `seed`, so the
/// result is the same for any thread count.
pub fn bootstrap_optimum_with(
    data: &ConditionDataset,
    rbf: &RbfConfig,
    config: &BootstrapConfig,
    search: &SearchConfig,
    mode: OptimumMode,
) -> Result<BootstrapResult, SurfaceError> {
    if config.n_resamples < MIN_RESAMPLES {
        return Err(SurfaceError::Parameter(format!(
            "bootstrap needs at least {MIN_RESAMPLES} resamples, got {}",
            config.n_resamples
        )));
    }
    if !(config.confidence > 0.0 && config.confidence < 1.0) {
        return Err(SurfaceError::Parameter(format!("confidence must lie in (0, 1), got {}", config.confidence)));
    }
    let cells = data.cells();
    let original: Vec<SurfacePoint> = cells.iter().map(SurfacePoint::from).collect();
    let point = find_optimum_with(&fit_points(&original, rbf)?, None, mode, search)?;

    let replicates: Vec<(OptimumEstimate, usize)> = (0..config.n_resamples)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(r as u64);
            let mut fallbacks = 0;
            let points: Vec<SurfacePoint> = cells
                .iter()
                .zip(&original)
                .map(|(cell, orig)| {
                    let k = cell.trials.len();
                    let draw: Vec<(String, f64)> =
                        (0..k).map(|_| cell.trials[rng.random_range(0..k)].clone()).collect();
                    let variance = pooled_within_variance(&draw).or_else(|| {
                        fallbacks += 1;
                        orig.variance
                    });
                    let value = draw.iter().map(|t| t.1).sum::<f64>() / k as f64;
                    SurfacePoint { value, variance, ..*orig }
                })
                .collect();
            let surface = fit_points(&points, rbf)?;
            Ok((find_optimum_with(&surface, None, mode, search)?, fallbacks))
        })
        .collect::<Result<_, SurfaceError>>()?;

    let variance_fallbacks = replicates.iter().map(|r| r.1).sum();
    if variance_fallbacks > 0 {
        log::info!("bootstrap: {variance_fallbacks} single-trial cell resamples kept their original variance");
    }
    let alpha = 0.5 * (1.0 - config.confidence);
    let ci = |f: fn(&OptimumEstimate) -> f64| {
        let mut v: Vec<f64> = replicates.iter().map(|r| f(&r.0)).collect();
        v.sort_by(f64::total_cmp);
        Interval { lower: percentile(&v, alpha), upper: percentile(&v, 1.0 - alpha) }
    };
    let n = replicates.len() as f64;
    Ok(BootstrapResult {
        n_resamples: config.n_resamples,
        seed: config.seed,
        confidence: config.confidence,
        point,
        magnitude_ci: ci(|o| o.magnitude),
        duration_ci: ci(|o| o.duration),
        value_ci: ci(|o| o.value),
        mean_optimum: (
            replicates.iter().map(|r| r.0.magnitude).sum::<f64>() / n,
            replicates.iter().map(|r| r.0.duration).sum::<f64>() / n,
        ),
        flat_replicates: replicates.iter().filter(|r| r.0.flat).count(),
        variance_fallbacks,
        optima: replicates.iter().map(|r| [r.0.magnitude, r.0.duration, r.0.value]).collect(),
    })
}
