//! Zeroth-order stochastic optimization of noisy blackbox functions.
//!
//! - [`smoothing`]: Gaussian-smoothing gradient estimates of `f^beta(x) = E[f(x + beta u)]`.
//! - [`zo_signum`]: sign-of-momentum descent on one smoothed subproblem.
//! - [`sso`]: the outer driver over a shrinking smoothing radius.
//! - [`baseline`]: plain zeroth-order SGD for comparison.
//! - [`diagnostics`]: step-size conditions, theory constants and rate fits.
//! - [`config`] and [`harness`]: seeded runs, traces and summaries.

pub mod baseline;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod format;
pub mod harness;
pub mod oracle;
pub mod rng;
pub mod smoothing;
pub mod sso;
pub mod trace;
pub mod zo_signum;

pub use baseline::{run_zo_sgd, zo_sgd_step, ZoSgdParams, ZoSgdResult};
pub use config::{Algorithm, RunConfig};
pub use error::{Error, EvalError, Result};
pub use oracle::{
    make_synthetic, make_synthetic_on, project_box, BoxBounds, NoiseModel, Objective,
    ObjectiveOracle, Problem, ProblemId,
};
pub use rng::RngStream;
pub use smoothing::{
    gradient_estimate, smoothed_value, BaseEvaluation, DirectionKind, DirectionSampler,
    GradientEstimate, SmoothingConfig,
};
pub use sso::{
    run_sso, search_restart, EvalCache, ScheduleMode, SsoConfig, SsoResult, SubproblemSchedule,
};
pub use trace::{ExitReason, RunTrace, TraceRecord};
pub use zo_signum::{
    run_zos, zos_step, MomentumState, StepSchedule, StepSizes, ZosParams, ZosResult,
};
