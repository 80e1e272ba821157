//! Optimum of a fitted surface: dense grid scan, then compass-search
//! refinement.

use serde::{Deserialize, Serialize};

use super::{Bounds, ResponseSurface, SurfaceError};
use crate::dataset::ConditionDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimumMode {
    /// Lower is better (WBAM range).
    #[default]
    Min,
    /// Higher is better (OPUS).
    Max,
}

impl OptimumMode {
    fn sign(self) -> f64 {
        match self {
            OptimumMode::Min => 1.0,
            OptimumMode::Max => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Points per axis in the initial scan.
    pub grid: usize,
    /// Final step as a fraction of each axis span.
    pub tolerance: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self { grid: 200, tolerance: 1e-9 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimumEstimate {
    pub magnitude: f64,
    pub duration: f64,
    pub value: f64,
    pub mode: OptimumMode,
    /// The surface is constant to rounding; the location is the domain
    /// center by convention.
    pub flat: bool,
}

pub fn find_optimum(
    surface: &ResponseSurface,
    bounds: Option<&Bounds>,
    mode: OptimumMode,
) -> Result<OptimumEstimate, SurfaceError> {
    find_optimum_with(surface, bounds, mode, &SearchConfig::default())
}

/// Scans a `grid × grid` lattice over `bounds` (default: the fitted domain),
/// then refines the best lattice point by compass search over the eight
/// axis and diagonal directions, halving the step until it falls below the
/// tolerance. Ties go to the first lattice point in magnitude-major order.
pub fn find_optimum_with(
    surface: &ResponseSurface,
    bounds: Option<&Bounds>,
    mode: OptimumMode,
    config: &SearchConfig,
) -> Result<OptimumEstimate, SurfaceError> {
    let b = bounds.copied().unwrap_or(surface.bounds);
    if !surface.bounds.encloses(&b) || b.magnitude.0 > b.magnitude.1 || b.duration.0 > b.duration.1 {
        return Err(SurfaceError::Parameter(format!(
            "search bounds {b:?} fall outside the fitted domain {:?}",
            surface.bounds
        )));
    }
    if config.grid < 2 || !(config.tolerance > 0.0) {
        return Err(SurfaceError::Parameter("search grid must be >= 2 with a positive tolerance".into()));
    }
    let sign = mode.sign();
    let grid = surface.grid(&b, config.grid, config.grid);
    let (lo, hi) = grid.range();
    let scale = lo.abs().max(hi.abs()).max(1.0);
    if hi - lo <= 1e-12 * scale {
        let (m, d) = b.center();
        return Ok(OptimumEstimate { magnitude: m, duration: d, value: surface.eval(m, d), mode, flat: true });
    }
    let mut best = (0, 0);
    for i in 0..grid.magnitudes.len() {
        for j in 0..grid.durations.len() {
            if sign * grid.value(i, j) < sign * grid.value(best.0, best.1) {
                best = (i, j);
            }
        }
    }
    let (mut m, mut d) = (grid.magnitudes[best.0], grid.durations[best.1]);
    let mut f = sign * surface.eval(m, d);
    let span = (b.magnitude.1 - b.magnitude.0, b.duration.1 - b.duration.0);
    let n = (config.grid - 1) as f64;
    let (mut sm, mut sd) = (span.0 / n, span.1 / n);
    let (min_m, min_d) = (config.tolerance * span.0, config.tolerance * span.1);
    const DIRS: [(f64, f64); 8] =
        [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0), (1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];
    while sm > min_m || sd > min_d {
        let mut moved = false;
        let mut cand = (m, d, f);
        for (a, c) in DIRS {
            let tm = (m + a * sm).clamp(b.magnitude.0, b.magnitude.1);
            let td = (d + c * sd).clamp(b.duration.0, b.duration.1);
            let tf = sign * surface.eval(tm, td);
            if tf < cand.2 {
                cand = (tm, td, tf);
                moved = true;
            }
        }
        if moved {
            (m, d, f) = cand;
        } else {
            sm *= 0.5;
            sd *= 0.5;
        }
    }
    Ok(OptimumEstimate { magnitude: m, duration: d, value: sign * f, mode, flat: false })
}

/// Trapezoid cell with the best mean; the experimental best.
pub fn best_cell(data: &ConditionDataset, mode: OptimumMode) -> Option<OptimumEstimate> {
    let sign = mode.sign();
    data.cells()
        .iter()
        .map(|c| (c.magnitude, c.duration, c.mean()))
        .fold(None, |acc: Option<(f64, f64, f64)>, c| match acc {
            Some(a) if sign * a.2 <= sign * c.2 => Some(a),
            _ => Some(c),
        })
        .map(|(m, d, v)| OptimumEstimate { magnitude: m, duration: d, value: v, mode, flat: false })
}
