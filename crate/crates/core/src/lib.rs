//! Evaluation toolkit for exoskeleton balance assistance during treadmill
//! slip perturbations.
//!
//! Data flows one way through the modules:
//!
//! - [`controller`]: trapezoid and spline torque profiles, the condition grid
//!   and command scheduling.
//! - [`body`], [`signal`], [`wbam`]: segment inertial model, filtering and
//!   gait events, and the normalized sagittal whole-body angular momentum
//!   with its range metric.
//! - [`trial_io`], [`analysis`]: on-disk sessions and the per-trial pipeline.
//! - [`synth`]: closed-form walkers with analytic WBAM, and planted response
//!   surfaces with known optimum and variance components.
//! - [`dataset`], [`surface`], [`stats`]: per-condition aggregation, the
//!   weighted RBF response surface with bootstrap optimum CIs, and the mixed
//!   model, ANOVA and regression battery.
//! - [`config`], [`pipeline`], [`figure`]: run configuration, end-to-end
//!   orchestration and contour SVG output.

// Validation is written `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod body;
pub mod config;
pub mod controller;
pub mod dataset;
pub mod figure;
pub mod pipeline;
pub mod series;
pub mod signal;
pub mod stats;
pub mod surface;
pub mod synth;
pub mod trial_io;
pub mod wbam;
