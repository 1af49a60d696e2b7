//! Sequential stochastic optimization: a sequence of ZO-Signum solves on
//! `f^beta` with a shrinking smoothing radius.
//!
//! The driver takes one gradient estimate at `x0`, optionally runs a search
//! phase that restarts each subproblem from the best cached point, then
//! solves subproblems `i = 0, 1, ...` with `beta_i = beta0/(i+1)^2` until
//! `beta_i <= epsilon` or the evaluation budget is spent. Each local
//! subproblem stops once `||m|| <= L beta_i/(4 beta0)`, where `L` is the norm
//! of the first gradient estimate, and hands its `x` and `m` to the next.

use std::collections::HashMap;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::oracle::{BoxBounds, ObjectiveOracle};
use crate::smoothing::{
    gradient_estimate_observed, BaseEvaluation, DirectionKind, DirectionSampler, SmoothingConfig,
};
use crate::trace::{ExitReason, RunTrace, TraceRecord};
use crate::zo_signum::{
    is_evaluation_failure, norm2, run_zos_in, StepSchedule, TraceContext, ZosParams,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScheduleMode {
    /// Power-law inner steps `s1_0(i)/(k+1)^alpha1`, `s2_0(i)/(k+1)^alpha2`.
    Default { alpha1: f64, alpha2: f64 },
    /// `s1 = 2 rho/(k+1)`, `s2 = 1/(k+1)^(2/3)` in every subproblem.
    Convex { rho: f64 },
}

/// Per-subproblem smoothing radius and initial step sizes.
#[derive(Clone, Debug, PartialEq)]
pub struct SubproblemSchedule {
    beta0: f64,
    s1_00: f64,
    s2_00: f64,
    epsilon: f64,
    mode: ScheduleMode,
}

impl SubproblemSchedule {
    pub fn new(
        beta0: f64,
        s1_00: f64,
        s2_00: f64,
        epsilon: f64,
        mode: ScheduleMode,
    ) -> Result<Self> {
        if !(beta0 > 0.0 && beta0.is_finite()) {
            return Err(Error::param(
                "beta0",
                format!("must be positive, got {beta0}"),
            ));
        }
        if !(s1_00 > 0.0 && s1_00 < 1.0) {
            return Err(Error::param(
                "s1_00",
                format!("must lie in (0, 1), got {s1_00}"),
            ));
        }
        if !(s2_00 > 0.0 && s2_00 < 1.0) {
            return Err(Error::param(
                "s2_00",
                format!("must lie in (0, 1), got {s2_00}"),
            ));
        }
        if !(epsilon > 0.0) {
            return Err(Error::param(
                "epsilon",
                format!("must be positive, got {epsilon}"),
            ));
        }
        let schedule = Self {
            beta0,
            s1_00,
            s2_00,
            epsilon,
            mode,
        };
        schedule.steps(0)?;
        Ok(schedule)
    }

    pub fn beta0(&self) -> f64 {
        self.beta0
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn mode(&self) -> ScheduleMode {
        self.mode
    }

    pub fn beta(&self, i: u64) -> f64 {
        let i1 = (i + 1) as f64;
        self.beta0 / (i1 * i1)
    }

    pub fn s1_0(&self, i: u64) -> f64 {
        self.s1_00 / ((i + 1) as f64).powf(1.5)
    }

    pub fn s2_0(&self, i: u64) -> f64 {
        self.s2_00 / (i + 1) as f64
    }

    /// Inner step-size schedule for subproblem `i`.
    pub fn steps(&self, i: u64) -> Result<StepSchedule> {
        match self.mode {
            ScheduleMode::Default { alpha1, alpha2 } => {
                StepSchedule::power(self.s1_0(i), self.s2_0(i), alpha1, alpha2)
            }
            ScheduleMode::Convex { rho } => StepSchedule::convex(rho),
        }
    }

    /// Momentum threshold `L beta_i/(4 beta0)`.
    pub fn threshold(&self, i: u64, l: f64) -> f64 {
        l * self.beta(i) / (4.0 * self.beta0)
    }
}

/// Every evaluated point with all values observed there.
#[derive(Clone, Debug, Default)]
pub struct EvalCache {
    index: HashMap<Vec<u64>, usize>,
    entries: Vec<(Vec<f64>, Vec<f64>)>,
}

impl EvalCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, x: &[f64], value: f64) {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        match self.index.get(&key) {
            Some(&slot) => self.entries[slot].1.push(value),
            None => {
                self.index.insert(key, self.entries.len());
                self.entries.push((x.to_vec(), vec![value]));
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn values(&self, x: &[f64]) -> Option<&[f64]> {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        self.index
            .get(&key)
            .map(|&slot| self.entries[slot].1.as_slice())
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.iter().map(|(x, _)| x.as_slice())
    }

    /// Point with the smallest mean observed value, earliest on ties.
    pub fn best(&self) -> Option<(&[f64], f64)> {
        let mut best: Option<(&[f64], f64)> = None;
        for (x, values) in &self.entries {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            if best.is_none_or(|(_, b)| mean < b) {
                best = Some((x, mean));
            }
        }
        best
    }
}

pub fn search_restart(cache: &EvalCache) -> Result<Vec<f64>> {
    cache
        .best()
        .map(|(x, _)| x.to_vec())
        .ok_or(Error::EmptyCache)
}

#[derive(Clone, Debug)]
pub struct SsoConfig {
    pub schedule: SubproblemSchedule,
    /// Directions per gradient estimate.
    pub batch: usize,
    pub directions: DirectionKind,
    pub base: BaseEvaluation,
    pub parallel: bool,
    /// Minimum iteration index per subproblem.
    pub min_iters: u64,
    /// Search-phase budget; 0 disables the search phase.
    pub search_budget: u64,
    /// Total oracle calls for the whole run.
    pub max_evals: u64,
    pub bounds: Option<BoxBounds>,
    pub record_every: u64,
    pub record_wall_time: bool,
}

impl SsoConfig {
    pub fn new(schedule: SubproblemSchedule, batch: usize, min_iters: u64, max_evals: u64) -> Self {
        Self {
            schedule,
            batch,
            directions: DirectionKind::default(),
            base: BaseEvaluation::default(),
            parallel: false,
            min_iters,
            search_budget: 0,
            max_evals,
            bounds: None,
            record_every: 1,
            record_wall_time: false,
        }
    }

    fn smoothing(&self, beta: f64) -> Result<SmoothingConfig> {
        Ok(SmoothingConfig::new(beta, self.batch)?
            .with_directions(self.directions)
            .with_base(self.base)
            .with_parallel(self.parallel))
    }

    pub fn validate(&self) -> Result<()> {
        self.smoothing(self.schedule.beta0)?;
        if self.search_budget > 0 && self.min_iters == 0 {
            return Err(Error::param(
                "min_iters",
                "the search phase needs min_iters >= 1 to terminate",
            ));
        }
        if self.record_every == 0 {
            return Err(Error::param("record_every", "must be at least 1"));
        }
        Ok(())
    }

    fn search_guard(&self, i: u64) -> bool {
        self.search_budget > 0
            && self
                .min_iters
                .checked_mul(i + 1)
                .and_then(|v| v.checked_mul(self.batch as u64))
                .is_some_and(|v| v <= self.search_budget)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Search,
    Local,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubproblemSummary {
    pub i: u64,
    pub phase: Phase,
    pub beta: f64,
    pub s1_0: f64,
    pub s2_0: f64,
    /// Momentum threshold; infinite during the search phase.
    pub threshold: f64,
    pub iterations: u64,
    pub evals: u64,
    pub exit: ExitReason,
    pub m_norm: f64,
}

#[derive(Clone, Debug)]
pub struct SsoResult {
    pub x: Vec<f64>,
    pub m: Vec<f64>,
    /// Number of subproblems started.
    pub subproblems: u64,
    pub summaries: Vec<SubproblemSummary>,
    pub trace: RunTrace,
    pub exit: ExitReason,
    pub evals: u64,
    /// Norm of the first gradient estimate.
    pub lipschitz_estimate: f64,
}

/// Runs the outer driver from `x0`.
pub fn run_sso(
    oracle: &ObjectiveOracle,
    x0: &[f64],
    config: &SsoConfig,
    sampler: &mut DirectionSampler,
) -> Result<SsoResult> {
    config.validate()?;
    let n = oracle.dim();
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: x0.len(),
        });
    }
    if let Some(b) = &config.bounds {
        if b.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: b.dim(),
            });
        }
        if !b.contains(x0) {
            return Err(Error::param("x0", "starting point lies outside the bounds"));
        }
    }
    let schedule = &config.schedule;
    let start = config.record_wall_time.then(Instant::now);
    let wall_ms = || start.map_or(0.0, |t| t.elapsed().as_secs_f64() * 1e3);
    let mut cache = (config.search_budget > 0).then(EvalCache::new);
    let mut trace = RunTrace::new();
    let mut summaries = Vec::new();
    let mut best_f = f64::INFINITY;
    let mut evals = 0u64;

    #[allow(clippy::too_many_arguments)]
    fn result(
        x: Vec<f64>,
        m: Vec<f64>,
        subproblems: u64,
        summaries: Vec<SubproblemSummary>,
        trace: RunTrace,
        exit: ExitReason,
        evals: u64,
        l: f64,
    ) -> SsoResult {
        SsoResult {
            x,
            m,
            subproblems,
            summaries,
            trace,
            exit,
            evals,
            lipschitz_estimate: l,
        }
    }

    let smoothing0 = config.smoothing(schedule.beta(0))?;
    let cost = smoothing0.evals_per_estimate();
    if cost > config.max_evals {
        return Ok(result(
            x0.to_vec(),
            vec![0.0; n],
            0,
            summaries,
            trace,
            ExitReason::BudgetExhausted,
            0,
            0.0,
        ));
    }
    evals += cost;
    let mut record_point = |x: &[f64], v: f64| {
        if let Some(c) = cache.as_mut() {
            c.insert(x, v);
        }
    };
    let first =
        match gradient_estimate_observed(oracle, x0, &smoothing0, sampler, &mut record_point) {
            Ok(est) => est,
            Err(e) if is_evaluation_failure(&e) => {
                return Ok(result(
                    x0.to_vec(),
                    vec![0.0; n],
                    0,
                    summaries,
                    trace,
                    ExitReason::Aborted(e.to_string()),
                    evals,
                    0.0,
                ));
            }
            Err(e) => return Err(e),
        };
    best_f = best_f.min(first.best_value);
    let l = norm2(&first.g);
    let steps0 = schedule.steps(0)?.at(0);
    trace.push(TraceRecord {
        k: 0,
        i: 0,
        evals,
        beta: schedule.beta(0),
        m_norm: l,
        s1: steps0.s1,
        s2: steps0.s2,
        best_f,
        wall_ms: wall_ms(),
    });

    let mut x = x0.to_vec();
    let mut m = first.g;
    let mut i = 0u64;
    let mut charged = cost;

    let mut solve = |i: u64,
                     phase: Phase,
                     x: &[f64],
                     m: Vec<f64>,
                     evals: &mut u64,
                     charged: &mut u64,
                     best_f: &mut f64,
                     trace: &mut RunTrace,
                     cache: &mut Option<EvalCache>|
     -> Result<(crate::zo_signum::ZosResult, SubproblemSummary)> {
        let beta = schedule.beta(i);
        let threshold = match phase {
            Phase::Search => f64::INFINITY,
            Phase::Local => schedule.threshold(i, l),
        };
        let mut params = ZosParams::new(
            config.smoothing(beta)?,
            schedule.steps(i)?,
            threshold,
            config.min_iters,
        );
        params.max_evals = Some(config.max_evals - *evals);
        params.bounds = config.bounds.clone();
        params.record_every = config.record_every;
        let mut observe = |p: &[f64], v: f64| {
            if let Some(c) = cache.as_mut() {
                c.insert(p, v);
            }
        };
        let mut ctx = TraceContext {
            subproblem: i,
            eval_offset: *evals,
            best_f: *best_f,
            start,
            observer: &mut observe,
        };
        let r = run_zos_in(oracle, x, Some(m), &params, sampler, &mut ctx)?;
        *best_f = ctx.best_f;
        *evals += r.evals;
        trace.extend(r.trace.clone());
        let summary = SubproblemSummary {
            i,
            phase,
            beta,
            s1_0: schedule.s1_0(i),
            s2_0: schedule.s2_0(i),
            threshold,
            iterations: r.iterations,
            evals: r.evals + std::mem::take(charged),
            exit: r.exit.clone(),
            m_norm: r.state.momentum_norm(),
        };
        Ok((r, summary))
    };

    while config.search_guard(i) {
        let (r, summary) = solve(
            i,
            Phase::Search,
            &x,
            m,
            &mut evals,
            &mut charged,
            &mut best_f,
            &mut trace,
            &mut cache,
        )?;
        summaries.push(summary);
        m = r.state.m;
        i += 1;
        match r.exit {
            ExitReason::ThresholdMet => {}
            exit => return Ok(result(r.state.x, m, i, summaries, trace, exit, evals, l)),
        }
        x = search_restart(cache.as_ref().expect("cache exists while searching"))?;
    }

    let exit = loop {
        if schedule.beta(i) <= schedule.epsilon() {
            break ExitReason::EpsilonReached;
        }
        if evals >= config.max_evals {
            break ExitReason::BudgetExhausted;
        }
        let (r, summary) = solve(
            i,
            Phase::Local,
            &x,
            m,
            &mut evals,
            &mut charged,
            &mut best_f,
            &mut trace,
            &mut cache,
        )?;
        summaries.push(summary);
        x = r.state.x;
        m = r.state.m;
        i += 1;
        if r.exit != ExitReason::ThresholdMet {
            break r.exit;
        }
    };
    if charged > 0 {
        // No subproblem ran; attribute the initial estimate to an empty summary.
        summaries.push(SubproblemSummary {
            i: 0,
            phase: Phase::Local,
            beta: schedule.beta(0),
            s1_0: schedule.s1_0(0),
            s2_0: schedule.s2_0(0),
            threshold: schedule.threshold(0, l),
            iterations: 0,
            evals: charged,
            exit: exit.clone(),
            m_norm: l,
        });
    }
    Ok(result(x, m, i, summaries, trace, exit, evals, l))
}
