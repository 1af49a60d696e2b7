//! ZO-Signum: sign-of-momentum descent on a smoothed subproblem.
//!
//! One iteration draws a gradient estimate `g`, mixes it into the momentum and
//! moves every coordinate by a fixed step against the sign of the momentum:
//!
//! ```text
//! m' = s2_k g + (1 - s2_k) m
//! x' = x - s1_k sign(m')          (then clamped to the box, if any)
//! ```
//!
//! The momentum step `s2_k` is driven to zero so `||m||` settles, and
//! [`run_zos`] stops once `||m||_2` falls to the caller's threshold after at
//! least `min_iters` iterations.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::oracle::{BoxBounds, ObjectiveOracle};
use crate::smoothing::{
    gradient_estimate_observed, DirectionSampler, GradientEstimate, SmoothingConfig,
};
use crate::trace::{ExitReason, RunTrace, TraceRecord};

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Sign with `sign(0) = 0`.
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentumState {
    pub x: Vec<f64>,
    pub m: Vec<f64>,
    pub k: u64,
}

impl MomentumState {
    pub fn new(x: Vec<f64>, m: Vec<f64>) -> Result<Self> {
        if x.len() != m.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                found: m.len(),
            });
        }
        if x.iter().chain(&m).any(|v| !v.is_finite()) {
            return Err(Error::param("state", "x and m must be finite"));
        }
        Ok(Self { x, m, k: 0 })
    }

    pub fn momentum_norm(&self) -> f64 {
        norm2(&self.m)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSizes {
    pub s1: f64,
    pub s2: f64,
}

type StepFn = dyn Fn(u64) -> StepSizes + Send + Sync;

#[derive(Clone)]
enum StepRule {
    Power {
        s1_0: f64,
        s2_0: f64,
        alpha1: f64,
        alpha2: f64,
    },
    Convex {
        rho: f64,
    },
    Custom {
        label: String,
        f: Arc<StepFn>,
    },
}

/// Inner step-size sequences `s1_k`, `s2_k`.
#[derive(Clone)]
pub struct StepSchedule {
    rule: StepRule,
}

impl fmt::Debug for StepSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.rule {
            StepRule::Power {
                s1_0,
                s2_0,
                alpha1,
                alpha2,
            } => f
                .debug_struct("Power")
                .field("s1_0", s1_0)
                .field("s2_0", s2_0)
                .field("alpha1", alpha1)
                .field("alpha2", alpha2)
                .finish(),
            StepRule::Convex { rho } => f.debug_struct("Convex").field("rho", rho).finish(),
            StepRule::Custom { label, .. } => f.debug_tuple("Custom").field(label).finish(),
        }
    }
}

impl StepSchedule {
    /// `s1_k = s1_0/(k+1)^alpha1`, `s2_k = s2_0/(k+1)^alpha2`.
    pub fn power(s1_0: f64, s2_0: f64, alpha1: f64, alpha2: f64) -> Result<Self> {
        if !(s1_0 > 0.0 && s1_0 <= 1.0) {
            return Err(Error::param(
                "s1_0",
                format!("must lie in (0, 1], got {s1_0}"),
            ));
        }
        if !(s2_0 > 0.0 && s2_0 <= 1.0) {
            return Err(Error::param(
                "s2_0",
                format!("must lie in (0, 1], got {s2_0}"),
            ));
        }
        if !(alpha2 > 0.0 && alpha2 < alpha1 && alpha1 < 1.0) {
            return Err(Error::param(
                "alpha1",
                format!("need 0 < alpha2 < alpha1 < 1, got alpha1 = {alpha1}, alpha2 = {alpha2}"),
            ));
        }
        Ok(Self {
            rule: StepRule::Power {
                s1_0,
                s2_0,
                alpha1,
                alpha2,
            },
        })
    }

    /// Convex-case schedule `s1_k = 2 rho/(k+1)`, `s2_k = 1/(k+1)^(2/3)`.
    pub fn convex(rho: f64) -> Result<Self> {
        if !(rho > 0.0 && rho <= 0.5) {
            return Err(Error::param(
                "rho",
                format!("must lie in (0, 1/2] so that s1 <= 1, got {rho}"),
            ));
        }
        Ok(Self {
            rule: StepRule::Convex { rho },
        })
    }

    /// Arbitrary per-iteration override. Values are checked when used.
    pub fn custom(
        label: impl Into<String>,
        f: impl Fn(u64) -> StepSizes + Send + Sync + 'static,
    ) -> Self {
        Self {
            rule: StepRule::Custom {
                label: label.into(),
                f: Arc::new(f),
            },
        }
    }

    pub fn at(&self, k: u64) -> StepSizes {
        let k1 = (k + 1) as f64;
        match &self.rule {
            StepRule::Power {
                s1_0,
                s2_0,
                alpha1,
                alpha2,
            } => StepSizes {
                s1: s1_0 / k1.powf(*alpha1),
                s2: s2_0 / k1.powf(*alpha2),
            },
            StepRule::Convex { rho } => StepSizes {
                s1: 2.0 * rho / k1,
                s2: 1.0 / k1.powf(2.0 / 3.0),
            },
            StepRule::Custom { f, .. } => f(k),
        }
    }

    fn checked_at(&self, k: u64) -> Result<StepSizes> {
        let s = self.at(k);
        if !(s.s1 > 0.0 && s.s1 <= 1.0 && s.s2 > 0.0 && s.s2 <= 1.0) {
            return Err(Error::param(
                "schedule",
                format!(
                    "step sizes at k = {k} must lie in (0, 1], got s1 = {}, s2 = {}",
                    s.s1, s.s2
                ),
            ));
        }
        Ok(s)
    }
}

/// Momentum and position update for a given gradient estimate.
pub fn apply_update(
    state: &MomentumState,
    g: &[f64],
    steps: StepSizes,
    bounds: Option<&BoxBounds>,
) -> MomentumState {
    let m: Vec<f64> = g
        .iter()
        .zip(&state.m)
        .map(|(gi, mi)| steps.s2 * gi + (1.0 - steps.s2) * mi)
        .collect();
    let mut x: Vec<f64> = state
        .x
        .iter()
        .zip(&m)
        .map(|(xi, mi)| xi - steps.s1 * sign(*mi))
        .collect();
    if let Some(b) = bounds {
        b.project_in_place(&mut x);
    }
    MomentumState {
        x,
        m,
        k: state.k + 1,
    }
}

/// One ZO-Signum iteration at `cfg.beta`.
pub fn zos_step(
    state: &MomentumState,
    oracle: &ObjectiveOracle,
    cfg: &SmoothingConfig,
    steps: StepSizes,
    bounds: Option<&BoxBounds>,
    sampler: &mut DirectionSampler,
) -> Result<(MomentumState, GradientEstimate)> {
    zos_step_observed(state, oracle, cfg, steps, bounds, sampler, &mut |_, _| {})
}

pub fn zos_step_observed(
    state: &MomentumState,
    oracle: &ObjectiveOracle,
    cfg: &SmoothingConfig,
    steps: StepSizes,
    bounds: Option<&BoxBounds>,
    sampler: &mut DirectionSampler,
    observer: &mut dyn FnMut(&[f64], f64),
) -> Result<(MomentumState, GradientEstimate)> {
    let est = gradient_estimate_observed(oracle, &state.x, cfg, sampler, observer)?;
    Ok((apply_update(state, &est.g, steps, bounds), est))
}

#[derive(Clone, Debug)]
pub struct ZosParams {
    /// Smoothing radius, batch size and estimator variant.
    pub smoothing: SmoothingConfig,
    pub schedule: StepSchedule,
    /// Momentum-norm threshold `tau`; `f64::INFINITY` disables it.
    pub threshold: f64,
    /// Minimum iteration index `M`: iterations `k = 0..=M` always run.
    pub min_iters: u64,
    pub max_iters: Option<u64>,
    pub max_evals: Option<u64>,
    pub bounds: Option<BoxBounds>,
    /// Keep every n-th trace record (the final one is always kept).
    pub record_every: u64,
    pub record_wall_time: bool,
}

impl ZosParams {
    pub fn new(
        smoothing: SmoothingConfig,
        schedule: StepSchedule,
        threshold: f64,
        min_iters: u64,
    ) -> Self {
        Self {
            smoothing,
            schedule,
            threshold,
            min_iters,
            max_iters: None,
            max_evals: None,
            bounds: None,
            record_every: 1,
            record_wall_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.smoothing.validate()?;
        if !(self.threshold >= 0.0) {
            return Err(Error::param(
                "threshold",
                format!("must be >= 0, got {}", self.threshold),
            ));
        }
        if self.record_every == 0 {
            return Err(Error::param("record_every", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ZosResult {
    pub state: MomentumState,
    pub iterations: u64,
    /// Oracle calls made by this run, including an internal `m0` estimate.
    pub evals: u64,
    pub exit: ExitReason,
    pub trace: RunTrace,
}

/// Trace bookkeeping shared with the outer driver.
pub(crate) struct TraceContext<'a> {
    pub subproblem: u64,
    pub eval_offset: u64,
    pub best_f: f64,
    pub start: Option<Instant>,
    pub observer: &'a mut dyn FnMut(&[f64], f64),
}

impl TraceContext<'_> {
    pub(crate) fn wall_ms(&self) -> f64 {
        self.start.map_or(0.0, |t| t.elapsed().as_secs_f64() * 1e3)
    }
}

/// Runs ZO-Signum from `x0`.
///
/// When `m0` is `None` the momentum starts from one gradient estimate at `x0`
/// (charged to the budget). Evaluation failures end the run with
/// [`ExitReason::Aborted`] and the partial trace.
pub fn run_zos(
    oracle: &ObjectiveOracle,
    x0: &[f64],
    m0: Option<Vec<f64>>,
    params: &ZosParams,
    sampler: &mut DirectionSampler,
) -> Result<ZosResult> {
    let mut ctx = TraceContext {
        subproblem: 0,
        eval_offset: 0,
        best_f: f64::INFINITY,
        start: params.record_wall_time.then(Instant::now),
        observer: &mut |_, _| {},
    };
    run_zos_in(oracle, x0, m0, params, sampler, &mut ctx)
}

pub(crate) fn run_zos_in(
    oracle: &ObjectiveOracle,
    x0: &[f64],
    m0: Option<Vec<f64>>,
    params: &ZosParams,
    sampler: &mut DirectionSampler,
    ctx: &mut TraceContext<'_>,
) -> Result<ZosResult> {
    params.validate()?;
    let n = oracle.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: x0.len(),
        });
    }
    if let Some(b) = &params.bounds {
        if !b.contains(x0) {
            return Err(Error::param("x0", "starting point lies outside the bounds"));
        }
    }
    let cost = params.smoothing.evals_per_estimate();
    let budget_allows = |evals: u64| params.max_evals.is_none_or(|b| evals + cost <= b);
    let mut evals = 0u64;
    let mut trace = RunTrace::new();

    let m = match m0 {
        Some(m) => m,
        None if !budget_allows(0) => {
            return Ok(ZosResult {
                state: MomentumState::new(x0.to_vec(), vec![0.0; n])?,
                iterations: 0,
                evals: 0,
                exit: ExitReason::BudgetExhausted,
                trace,
            });
        }
        None => {
            evals += cost;
            match gradient_estimate_observed(oracle, x0, &params.smoothing, sampler, ctx.observer) {
                Ok(est) => {
                    ctx.best_f = ctx.best_f.min(est.best_value);
                    est.g
                }
                Err(e) if is_evaluation_failure(&e) => {
                    return Ok(ZosResult {
                        state: MomentumState::new(x0.to_vec(), vec![0.0; n])?,
                        iterations: 0,
                        evals,
                        exit: ExitReason::Aborted(e.to_string()),
                        trace,
                    });
                }
                Err(e) => return Err(e),
            }
        }
    };
    let mut state = MomentumState::new(x0.to_vec(), m)?;
    let mut pending: Option<TraceRecord> = None;

    let exit = loop {
        if !(state.momentum_norm() > params.threshold || state.k <= params.min_iters) {
            break ExitReason::ThresholdMet;
        }
        if params.max_iters.is_some_and(|mi| state.k >= mi) || !budget_allows(evals) {
            break ExitReason::BudgetExhausted;
        }
        let steps = params.schedule.checked_at(state.k)?;
        let step = zos_step_observed(
            &state,
            oracle,
            &params.smoothing,
            steps,
            params.bounds.as_ref(),
            sampler,
            ctx.observer,
        );
        evals += cost;
        let (next, est) = match step {
            Ok(v) => v,
            Err(e) if is_evaluation_failure(&e) => break ExitReason::Aborted(e.to_string()),
            Err(e) => return Err(e),
        };
        state = next;
        ctx.best_f = ctx.best_f.min(est.best_value);
        let record = TraceRecord {
            k: state.k,
            i: ctx.subproblem,
            evals: ctx.eval_offset + evals,
            beta: params.smoothing.beta,
            m_norm: state.momentum_norm(),
            s1: steps.s1,
            s2: steps.s2,
            best_f: ctx.best_f,
            wall_ms: ctx.wall_ms(),
        };
        if state.k % params.record_every == 0 {
            trace.push(record);
            pending = None;
        } else {
            pending = Some(record);
        }
    };
    if let Some(r) = pending {
        trace.push(r);
    }
    Ok(ZosResult {
        iterations: state.k,
        state,
        evals,
        exit,
        trace,
    })
}

pub(crate) fn is_evaluation_failure(e: &Error) -> bool {
    matches!(e, Error::Evaluation(_) | Error::NonFiniteGradient { .. })
}
