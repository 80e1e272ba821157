//! Regression, random-intercept mixed model, repeated-measures ANOVA and
//! the distribution functions behind their p-values.

mod anova;
pub mod dist;
mod lmm;
mod regression;

use thiserror::Error;

pub use anova::{bonferroni_pairwise, icc_from_variances, rm_anova, AnovaResult, PairwiseComparison, RmTable};
pub use lmm::{
    fit_random_intercept_lmm, FixedEffect, LmmConfig, LmmDesign, LmmFit, LmmResult, MagnitudeCoding, ProfilePoint,
    LMM_FORMULA,
};
pub use regression::{linear_regression, RegressionResult};

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("predictor is constant; slope is undefined")]
    DegeneratePredictor,
    #[error("incomplete design: {0}")]
    IncompleteDesign(String),
    #[error("ICC is undefined when both variance components are zero")]
    UndefinedIcc,
    #[error("REML search did not converge; likelihood trace has {} points", trace.len())]
    NonConvergence { trace: Vec<(f64, f64)> },
}
