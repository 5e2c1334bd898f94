//! Zero-inflated smoothing spline (ZISS) estimation for count data observed
//! over pseudotime.
//!
//! The model treats each count as a structural zero with probability
//! `1 − p(t)` and as `Poisson(μ(t))` otherwise. `log μ` is a cubic smoothing
//! spline and `p` a logistic B-spline curve; both are estimated by EM.
//!
//! Modules:
//! - [`bspline`]: clamped B-spline bases for the dropout curve.
//! - [`rkhs`]: cubic smoothing-spline kernel, penalized least squares,
//!   penalized Poisson fits and GCV.
//! - [`em`]: the EM estimator.
//! - [`baselines`]: DSS and NZSS comparison fits.
//! - [`simulate`]: simulation settings and the replicate MSE harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod bspline;
pub mod data;
pub mod em;
pub mod error;
pub mod rkhs;
pub mod simulate;

pub use baselines::{fit_dss, fit_nzss};
pub use bspline::BSplineBasis;
pub use data::BinnedCountData;
pub use em::{
    dropout_objective_grad_hess, e_step, fit_ziss, m_step_dropout, m_step_mean, penalized_nll,
    DropoutCurve, EmPhase, Responsibilities, ZissConfig, ZissFit,
};
pub use error::{Result, ZissError};
pub use rkhs::{
    cubic_kernel, fit_poisson_spline, gcv_select_lambda, solve_penalized_wls, LambdaPolicy,
    NewtonOptions, SplineMeanCurve,
};
pub use simulate::{
    generate, mse, run_replicates, truth_setting1, truth_setting2, GroundTruth, Method,
    SimulationConfig, Setting,
};
