//! Plain zeroth-order SGD, `x' = x - s_k g`, for comparison runs.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::oracle::{BoxBounds, ObjectiveOracle};
use crate::smoothing::{gradient_estimate, DirectionSampler, GradientEstimate, SmoothingConfig};
use crate::trace::{ExitReason, RunTrace, TraceRecord};
use crate::zo_signum::{is_evaluation_failure, norm2};

/// One step along a fresh gradient estimate.
pub fn zo_sgd_step(
    x: &[f64],
    oracle: &ObjectiveOracle,
    cfg: &SmoothingConfig,
    step: f64,
    bounds: Option<&BoxBounds>,
    sampler: &mut DirectionSampler,
) -> Result<(Vec<f64>, GradientEstimate)> {
    let est = gradient_estimate(oracle, x, cfg, sampler)?;
    Ok((sgd_update(x, &est.g, step, bounds), est))
}

pub fn sgd_update(x: &[f64], g: &[f64], step: f64, bounds: Option<&BoxBounds>) -> Vec<f64> {
    let mut next: Vec<f64> = x.iter().zip(g).map(|(xi, gi)| xi - step * gi).collect();
    if let Some(b) = bounds {
        b.project_in_place(&mut next);
    }
    next
}

#[derive(Clone, Debug)]
pub struct ZoSgdParams {
    pub smoothing: SmoothingConfig,
    /// Step size `s_k = step0/(k+1)^decay`.
    pub step0: f64,
    pub decay: f64,
    pub max_iters: Option<u64>,
    pub max_evals: Option<u64>,
    pub bounds: Option<BoxBounds>,
    pub record_every: u64,
    pub record_wall_time: bool,
}

impl ZoSgdParams {
    pub fn new(smoothing: SmoothingConfig, step0: f64, decay: f64) -> Self {
        Self {
            smoothing,
            step0,
            decay,
            max_iters: None,
            max_evals: None,
            bounds: None,
            record_every: 1,
            record_wall_time: false,
        }
    }

    pub fn step(&self, k: u64) -> f64 {
        self.step0 / ((k + 1) as f64).powf(self.decay)
    }

    pub fn validate(&self) -> Result<()> {
        self.smoothing.validate()?;
        if !(self.step0 > 0.0 && self.step0.is_finite()) {
            return Err(Error::param(
                "step0",
                format!("must be positive, got {}", self.step0),
            ));
        }
        if !(self.decay >= 0.0 && self.decay.is_finite()) {
            return Err(Error::param(
                "decay",
                format!("must be non-negative, got {}", self.decay),
            ));
        }
        if self.max_iters.is_none() && self.max_evals.is_none() {
            return Err(Error::param(
                "max_evals",
                "ZO-SGD needs an iteration or evaluation cap",
            ));
        }
        if self.record_every == 0 {
            return Err(Error::param("record_every", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ZoSgdResult {
    pub x: Vec<f64>,
    pub iterations: u64,
    pub evals: u64,
    pub exit: ExitReason,
    /// `m_norm` holds `||g||`, `s1` the step size and `s2` is zero.
    pub trace: RunTrace,
}

pub fn run_zo_sgd(
    oracle: &ObjectiveOracle,
    x0: &[f64],
    params: &ZoSgdParams,
    sampler: &mut DirectionSampler,
) -> Result<ZoSgdResult> {
    params.validate()?;
    if x0.len() != oracle.dim() {
        return Err(Error::DimensionMismatch {
            expected: oracle.dim(),
            found: x0.len(),
        });
    }
    if let Some(b) = &params.bounds {
        if !b.contains(x0) {
            return Err(Error::param("x0", "starting point lies outside the bounds"));
        }
    }
    let start = params.record_wall_time.then(Instant::now);
    let cost = params.smoothing.evals_per_estimate();
    let mut trace = RunTrace::new();
    let mut pending = None;
    let mut x = x0.to_vec();
    let mut k = 0u64;
    let mut evals = 0u64;
    let mut best_f = f64::INFINITY;

    let exit = loop {
        if params.max_iters.is_some_and(|mi| k >= mi)
            || params.max_evals.is_some_and(|b| evals + cost > b)
        {
            break ExitReason::BudgetExhausted;
        }
        let step = params.step(k);
        let outcome = zo_sgd_step(
            &x,
            oracle,
            &params.smoothing,
            step,
            params.bounds.as_ref(),
            sampler,
        );
        evals += cost;
        let (next, est) = match outcome {
            Ok(v) => v,
            Err(e) if is_evaluation_failure(&e) => break ExitReason::Aborted(e.to_string()),
            Err(e) => return Err(e),
        };
        x = next;
        k += 1;
        best_f = best_f.min(est.best_value);
        let record = TraceRecord {
            k,
            i: 0,
            evals,
            beta: params.smoothing.beta,
            m_norm: norm2(&est.g),
            s1: step,
            s2: 0.0,
            best_f,
            wall_ms: start.map_or(0.0, |t| t.elapsed().as_secs_f64() * 1e3),
        };
        if k % params.record_every == 0 {
            trace.push(record);
            pending = None;
        } else {
            pending = Some(record);
        }
    };
    if let Some(r) = pending {
        trace.push(r);
    }
    Ok(ZoSgdResult {
        x,
        iterations: k,
        evals,
        exit,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{make_synthetic, FnObjective, NoiseModel, Problem};
    use crate::rng::RngStream;

    fn sampler(seed: u64) -> DirectionSampler {
        DirectionSampler::new(RngStream::root(seed).named("directions"))
    }

    #[test]
    fn forced_update() {
        assert_eq!(
            sgd_update(&[0.0, 0.0], &[1.0, 0.0], 0.1, None),
            vec![-0.1, 0.0]
        );
        let b = BoxBounds::uniform(2, -0.05, 1.0).unwrap();
        assert_eq!(
            sgd_update(&[0.0, 0.0], &[1.0, 0.0], 0.1, Some(&b)),
            vec![-0.05, 0.0]
        );
    }

    #[test]
    fn constant_oracle_does_not_move() {
        let o = ObjectiveOracle::new(FnObjective::new(3, |_| 4.0), RngStream::root(0));
        let cfg = SmoothingConfig::new(0.1, 5).unwrap();
        let (x, _) = zo_sgd_step(&[1.0, 2.0, 3.0], &o, &cfg, 0.5, None, &mut sampler(0)).unwrap();
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn sphere_decreases() {
        let o = make_synthetic(Problem::Sphere, 5, NoiseModel::None, 0).unwrap();
        let mut params = ZoSgdParams::new(SmoothingConfig::new(0.01, 10).unwrap(), 0.01, 0.5);
        params.max_iters = Some(10_000);
        params.record_every = 100;
        let x0 = vec![1.0; 5];
        let r = run_zo_sgd(&o, &x0, &params, &mut sampler(1)).unwrap();
        let f = |x: &[f64]| o.objective().value(x).unwrap();
        assert!(f(&r.x) < 0.05 * f(&x0), "f = {}", f(&r.x));
        assert_eq!(r.iterations, 10_000);
        assert_eq!(r.evals, 110_000);
        assert_eq!(r.trace.len(), 100);
        assert_eq!(r.exit, ExitReason::BudgetExhausted);
    }

    #[test]
    fn eval_budget_and_grid() {
        let o = make_synthetic(
            Problem::Sphere,
            2,
            NoiseModel::AdditiveGaussian { sigma: 0.1 },
            0,
        )
        .unwrap();
        let mut params = ZoSgdParams::new(SmoothingConfig::new(0.1, 3).unwrap(), 0.01, 0.5);
        params.max_evals = Some(30);
        let r = run_zo_sgd(&o, &[1.0, 1.0], &params, &mut sampler(2)).unwrap();
        let grid: Vec<u64> = r.trace.records().iter().map(|t| t.evals).collect();
        assert_eq!(grid, vec![4, 8, 12, 16, 20, 24, 28]);
        assert_eq!(o.calls(), 28);
    }

    #[test]
    fn needs_a_cap() {
        let params = ZoSgdParams::new(SmoothingConfig::new(0.1, 3).unwrap(), 0.01, 0.5);
        assert!(params.validate().is_err());
    }
}
