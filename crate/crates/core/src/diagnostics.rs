//! Empirical checks of the convergence analysis: step-size admissibility
//! conditions, theory constants, and log-log rate fits over replicate runs.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::oracle::{make_synthetic, NoiseModel, ObjectiveOracle, Problem};
use crate::rng::RngStream;
use crate::smoothing::{
    gradient_estimate, smoothed_gradient_mc, DirectionSampler, SmoothingConfig,
};
use crate::zo_signum::{apply_update, MomentumState, StepSchedule};

/// `k/(k+1)^alpha2 >= (ln s2_0 + (1 + alpha2) ln k)/s2_0`
pub fn cond1_holds(k: u64, s2_0: f64, alpha2: f64) -> bool {
    let kf = k as f64;
    kf / (kf + 1.0).powf(alpha2) >= (s2_0.ln() + (1.0 + alpha2) * kf.ln()) / s2_0
}

/// `k/(k+1)^alpha2 >= 2 (ln s2_0 + (1 + alpha1 - alpha2) ln k)/s2_0`
pub fn cond2_holds(k: u64, s2_0: f64, alpha1: f64, alpha2: f64) -> bool {
    let kf = k as f64;
    kf / (kf + 1.0).powf(alpha2) >= 2.0 * (s2_0.ln() + (1.0 + alpha1 - alpha2) * kf.ln()) / s2_0
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionReport {
    pub s2_0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub k_max: u64,
    /// Smallest `k` from which the first condition holds for every `k' <= k_max`.
    pub cond1: u64,
    pub cond2: u64,
    /// `max(cond1, cond2)`
    pub c: u64,
}

impl ConditionReport {
    /// Both conditions hold from `k = 1` on.
    pub fn holds_from_one(&self) -> bool {
        self.c == 1
    }
}

/// Scans `k = k_max, k_max - 1, ..., 1` for the start of the final run of
/// `k` on which each condition holds.
pub fn solve_conditions(
    s2_0: f64,
    alpha1: f64,
    alpha2: f64,
    k_max: u64,
) -> Result<ConditionReport> {
    if !(s2_0 > 0.0 && s2_0 < 1.0) {
        return Err(Error::param(
            "s2_0",
            format!("must lie in (0, 1), got {s2_0}"),
        ));
    }
    if !(alpha2 > 0.0 && alpha2 < alpha1 && alpha1 < 1.0) {
        return Err(Error::param(
            "alpha1",
            format!("need 0 < alpha2 < alpha1 < 1, got alpha1 = {alpha1}, alpha2 = {alpha2}"),
        ));
    }
    let suffix_start = |holds: &dyn Fn(u64) -> bool, condition: &'static str| {
        if k_max == 0 || !holds(k_max) {
            return Err(Error::ConditionNotFound { condition, k_max });
        }
        let mut k = k_max;
        while k > 1 && holds(k - 1) {
            k -= 1;
        }
        Ok(k)
    };
    let cond1 = suffix_start(&|k| cond1_holds(k, s2_0, alpha2), "cond1")?;
    let cond2 = suffix_start(&|k| cond2_holds(k, s2_0, alpha1, alpha2), "cond2")?;
    Ok(ConditionReport {
        s2_0,
        alpha1,
        alpha2,
        k_max,
        cond1,
        cond2,
        c: cond1.max(cond2),
    })
}

/// Lipschitz constant of `grad f^beta`: `2 sqrt(n) L0/beta`.
pub fn smoothed_gradient_lipschitz(n: usize, l0: f64, beta: f64) -> f64 {
    2.0 * (n as f64).sqrt() * l0 / beta
}

/// Coefficient of the `k^-alpha2` momentum-variance bound: `9 s2_0 L0^2 (n+4)^2`.
pub fn variance_coefficient(n: usize, l0: f64, s2_0: f64) -> f64 {
    let n4 = (n + 4) as f64;
    9.0 * s2_0 * l0 * l0 * n4 * n4
}

/// Coefficient of the `k^-(alpha1 - alpha2)` momentum-bias bound: `10 n L1 s1_0/s2_0`.
pub fn bias_coefficient(n: usize, l1: f64, s1_0: f64, s2_0: f64) -> f64 {
    10.0 * n as f64 * l1 * s1_0 / s2_0
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TheoryConstants {
    pub n: usize,
    pub l0: f64,
    pub beta: f64,
    pub s1_0: f64,
    pub s2_0: f64,
    pub l1: f64,
    pub variance_coefficient: f64,
    pub bias_coefficient: f64,
}

pub fn theory_constants(
    n: usize,
    l0: f64,
    beta: f64,
    s1_0: f64,
    s2_0: f64,
) -> Result<TheoryConstants> {
    if n == 0 {
        return Err(Error::param("n", "dimension must be positive"));
    }
    for (name, v) in [("l0", l0), ("beta", beta), ("s1_0", s1_0), ("s2_0", s2_0)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::param(name, format!("must be positive, got {v}")));
        }
    }
    let l1 = smoothed_gradient_lipschitz(n, l0, beta);
    Ok(TheoryConstants {
        n,
        l0,
        beta,
        s1_0,
        s2_0,
        l1,
        variance_coefficient: variance_coefficient(n, l0, s2_0),
        bias_coefficient: bias_coefficient(n, l1, s1_0, s2_0),
    })
}

/// Least-squares fit of `ln value = intercept + slope ln k`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateFit {
    pub slope: f64,
    /// 95% normal-approximation half-width of the slope.
    pub half_width: f64,
    pub intercept: f64,
    pub window: (f64, f64),
    /// `(k, value)` pairs used in the fit.
    pub points: Vec<(f64, f64)>,
}

pub const MIN_FIT_POINTS: usize = 50;

/// Fits the points with `k` inside `window` (inclusive) and a positive value.
pub fn fit_log_log(points: &[(f64, f64)], window: (f64, f64)) -> Result<RateFit> {
    let used: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|&(k, v)| k >= window.0 && k <= window.1 && k > 0.0 && v > 0.0 && v.is_finite())
        .collect();
    if used.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientData {
            needed: MIN_FIT_POINTS,
            found: used.len(),
        });
    }
    let m = used.len() as f64;
    let xs: Vec<f64> = used.iter().map(|(k, _)| k.ln()).collect();
    let ys: Vec<f64> = used.iter().map(|(_, v)| v.ln()).collect();
    let xbar = xs.iter().sum::<f64>() / m;
    let ybar = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    if sxx == 0.0 {
        return Err(Error::InsufficientData {
            needed: 2,
            found: 1,
        });
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let ssr: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let se = (ssr / (m - 2.0) / sxx).sqrt();
    Ok(RateFit {
        slope,
        half_width: 1.96 * se,
        intercept,
        window,
        points: used,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Quantity {
    /// `||grad f^beta(x_k)||` by nested Monte Carlo.
    GradNorm,
    /// `||m_k - mbar_k||^2`
    MomentumGap,
    /// `||mbar_k - grad f^beta(x_k)||_1`
    BiasGap,
}

impl Quantity {
    pub const ALL: [Quantity; 3] = [Quantity::GradNorm, Quantity::MomentumGap, Quantity::BiasGap];

    pub fn label(self) -> &'static str {
        match self {
            Quantity::GradNorm => "grad-norm",
            Quantity::MomentumGap => "momentum-gap",
            Quantity::BiasGap => "bias-gap",
        }
    }
}

/// Replicate-averaged quantities at checkpoint iterations.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateSeries {
    pub k: Vec<u64>,
    pub grad_norm: Vec<f64>,
    /// Monte-Carlo standard error of the averaged gradient norm.
    pub grad_norm_se: Vec<f64>,
    pub momentum_gap: Vec<f64>,
    pub bias_gap: Vec<f64>,
    pub replicates: u64,
}

impl RateSeries {
    pub fn values(&self, quantity: Quantity) -> &[f64] {
        match quantity {
            Quantity::GradNorm => &self.grad_norm,
            Quantity::MomentumGap => &self.momentum_gap,
            Quantity::BiasGap => &self.bias_gap,
        }
    }

    pub fn points(&self, quantity: Quantity) -> Vec<(f64, f64)> {
        self.k
            .iter()
            .zip(self.values(quantity))
            .map(|(k, v)| (*k as f64, *v))
            .collect()
    }
}

pub fn fit_rate(series: &RateSeries, quantity: Quantity, window: (f64, f64)) -> Result<RateFit> {
    fit_log_log(&series.points(quantity), window)
}

/// ZO-Signum replicate runs on a noiseless synthetic problem.
#[derive(Clone, Debug)]
pub struct TrackingSpec {
    pub problem: Problem,
    pub x0: Vec<f64>,
    pub beta: f64,
    pub batch: usize,
    pub s1_0: f64,
    pub s2_0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Iterations per replicate.
    pub iterations: u64,
    /// Iteration counts (after that many updates) at which quantities are recorded.
    pub checkpoints: Vec<u64>,
    /// Draws per nested Monte-Carlo gradient.
    pub mc_draws: u64,
    pub replicates: u64,
    pub seed: u64,
}

impl TrackingSpec {
    /// Quadratic `1/2 x^T diag(1, 2) x + (-1, 1/2)^T x` from `(3, 3)` with
    /// `beta = 1`, `q = 1`, `s1_0 = n^(-3/4)`, `s2_0 = 0.9`, `alpha = (3/4, 1/2)`,
    /// 20 replicates of `10^4` iterations.
    pub fn reference() -> Self {
        Self {
            problem: Problem::diagonal_quadratic(&[1.0, 2.0], vec![-1.0, 0.5]),
            x0: vec![3.0, 3.0],
            beta: 1.0,
            batch: 1,
            s1_0: 2f64.powf(-0.75),
            s2_0: 0.9,
            alpha1: 0.75,
            alpha2: 0.5,
            iterations: 10_000,
            checkpoints: log_spaced(100, 10_000, 60),
            mc_draws: 10_000,
            replicates: 20,
            seed: 2024,
        }
    }

    pub fn n(&self) -> usize {
        self.x0.len()
    }

    fn oracle(&self, seed: u64) -> Result<ObjectiveOracle> {
        make_synthetic(self.problem.clone(), self.n(), NoiseModel::None, seed)
    }
}

/// Distinct integers spaced evenly in `ln k` over `[lo, hi]`.
pub fn log_spaced(lo: u64, hi: u64, count: usize) -> Vec<u64> {
    let (a, b) = ((lo.max(1) as f64).ln(), (hi.max(1) as f64).ln());
    let mut out: Vec<u64> = (0..count)
        .map(|j| {
            let t = if count > 1 {
                j as f64 / (count - 1) as f64
            } else {
                0.0
            };
            (a + t * (b - a)).exp().round() as u64
        })
        .collect();
    out.dedup();
    out
}

struct ReplicateRow {
    grad_norm: f64,
    grad_norm_se: f64,
    momentum_gap: f64,
    bias_gap: f64,
}

fn run_replicate(spec: &TrackingSpec, r: u64) -> Result<Vec<ReplicateRow>> {
    let seed = RngStream::root(spec.seed).child(r);
    let oracle = spec.oracle(r)?;
    let mc_oracle = oracle.fork("nested-mc");
    let mut sampler = DirectionSampler::new(seed.named("directions"));
    let mut mc_sampler = DirectionSampler::new(seed.named("nested-mc"));
    let cfg = SmoothingConfig::new(spec.beta, spec.batch)?;
    let schedule = StepSchedule::power(spec.s1_0, spec.s2_0, spec.alpha1, spec.alpha2)?;

    let smoothed_grad = |x: &[f64], sampler: &mut DirectionSampler| -> Result<Vec<f64>> {
        match oracle.objective().smoothed_gradient(x, spec.beta) {
            Some(g) => Ok(g),
            None => {
                Ok(smoothed_gradient_mc(&mc_oracle, x, spec.beta, spec.mc_draws, sampler)?.mean)
            }
        }
    };
    let m0 = gradient_estimate(&oracle, &spec.x0, &cfg, &mut sampler)?.g;
    let mut state = MomentumState::new(spec.x0.clone(), m0.clone())?;
    let mut mbar = m0;
    let mut rows = Vec::with_capacity(spec.checkpoints.len());
    let mut next = spec.checkpoints.iter().peekable();
    while next.peek().is_some_and(|&&c| c < state.k) {
        next.next();
    }
    while state.k < spec.iterations && next.peek().is_some() {
        let steps = schedule.at(state.k);
        let g = gradient_estimate(&oracle, &state.x, &cfg, &mut sampler)?.g;
        let exact = smoothed_grad(&state.x, &mut mc_sampler)?;
        for (mb, e) in mbar.iter_mut().zip(&exact) {
            *mb = steps.s2 * e + (1.0 - steps.s2) * *mb;
        }
        state = apply_update(&state, &g, steps, None);
        if next.peek().is_some_and(|&&c| c == state.k) {
            next.next();
            let mc = smoothed_gradient_mc(
                &mc_oracle,
                &state.x,
                spec.beta,
                spec.mc_draws,
                &mut mc_sampler,
            )?;
            let exact = smoothed_grad(&state.x, &mut mc_sampler)?;
            rows.push(ReplicateRow {
                grad_norm: mc.norm(),
                grad_norm_se: mc.norm_std_error(),
                momentum_gap: state
                    .m
                    .iter()
                    .zip(&mbar)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum(),
                bias_gap: mbar.iter().zip(&exact).map(|(a, b)| (a - b).abs()).sum(),
            });
        }
    }
    Ok(rows)
}

/// Runs the replicates (concurrently) and averages them in replicate order.
pub fn track_replicates(spec: &TrackingSpec) -> Result<RateSeries> {
    if spec.replicates == 0 {
        return Err(Error::param("replicates", "need at least one replicate"));
    }
    let mut checkpoints = spec.checkpoints.clone();
    checkpoints.retain(|&c| c >= 1 && c <= spec.iterations);
    checkpoints.sort_unstable();
    checkpoints.dedup();
    let spec = TrackingSpec {
        checkpoints,
        ..spec.clone()
    };
    let runs: Vec<Result<Vec<ReplicateRow>>> = (0..spec.replicates)
        .into_par_iter()
        .map(|r| run_replicate(&spec, r))
        .collect();
    let len = spec.checkpoints.len();
    let mut series = RateSeries {
        k: spec.checkpoints.clone(),
        grad_norm: vec![0.0; len],
        grad_norm_se: vec![0.0; len],
        momentum_gap: vec![0.0; len],
        bias_gap: vec![0.0; len],
        replicates: spec.replicates,
    };
    for run in runs {
        for (j, row) in run?.into_iter().enumerate() {
            series.grad_norm[j] += row.grad_norm;
            series.grad_norm_se[j] += row.grad_norm_se * row.grad_norm_se;
            series.momentum_gap[j] += row.momentum_gap;
            series.bias_gap[j] += row.bias_gap;
        }
    }
    let reps = spec.replicates as f64;
    for j in 0..len {
        series.grad_norm[j] /= reps;
        series.grad_norm_se[j] = series.grad_norm_se[j].sqrt() / reps;
        series.momentum_gap[j] /= reps;
        series.bias_gap[j] /= reps;
    }
    Ok(series)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateCheck {
    pub quantity: Quantity,
    pub fit: RateFit,
    pub band: (f64, f64),
    pub passed: bool,
}

impl RateCheck {
    pub fn new(quantity: Quantity, fit: RateFit, band: (f64, f64)) -> Self {
        let passed = fit.slope >= band.0 && fit.slope <= band.1;
        Self {
            quantity,
            fit,
            band,
            passed,
        }
    }
}

/// Slope bands: the gradient norm within `[-0.45, -0.10]`, the momentum gaps
/// within 0.15 of their theoretical exponents.
pub fn rate_bands(alpha1: f64, alpha2: f64) -> [(Quantity, (f64, f64)); 3] {
    [
        (Quantity::GradNorm, (-0.45, -0.10)),
        (Quantity::MomentumGap, (-alpha2 - 0.15, -alpha2 + 0.15)),
        (
            Quantity::BiasGap,
            (-(alpha1 - alpha2) - 0.15, -(alpha1 - alpha2) + 0.15),
        ),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionEntry {
    pub label: String,
    pub s2_0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub report: Option<ConditionReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug)]
pub struct VerifyOptions {
    pub tracking: TrackingSpec,
    pub window: (f64, f64),
    /// Labelled `(s2_0, alpha1, alpha2)` triples to solve the conditions for.
    pub conditions: Vec<(String, f64, f64, f64)>,
    pub condition_k_max: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            tracking: TrackingSpec::reference(),
            window: (1e2, 1e4),
            conditions: Vec::new(),
            condition_k_max: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub conditions: Vec<ConditionEntry>,
    pub constants: TheoryConstants,
    pub rates: Vec<RateCheck>,
    pub series: RateSeries,
}

pub fn verify(options: &VerifyOptions) -> Result<VerificationReport> {
    let conditions = options
        .conditions
        .iter()
        .map(|(label, s2_0, a1, a2)| {
            let solved = solve_conditions(*s2_0, *a1, *a2, options.condition_k_max);
            ConditionEntry {
                label: label.clone(),
                s2_0: *s2_0,
                alpha1: *a1,
                alpha2: *a2,
                error: solved.as_ref().err().map(|e| e.to_string()),
                report: solved.ok(),
            }
        })
        .collect();

    let spec = &options.tracking;
    let probe = spec.oracle(0)?;
    let l0 = probe
        .objective()
        .lipschitz()
        .ok_or_else(|| Error::param("problem", "no Lipschitz bound is known for this problem"))?;
    let constants = theory_constants(spec.n(), l0, spec.beta, spec.s1_0, spec.s2_0)?;

    let series = track_replicates(spec)?;
    let rates = rate_bands(spec.alpha1, spec.alpha2)
        .into_iter()
        .map(|(q, band)| {
            Ok(RateCheck::new(
                q,
                fit_rate(&series, q, options.window)?,
                band,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VerificationReport {
        conditions,
        constants,
        rates,
        series,
    })
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.rates.iter().all(|r| r.passed) && self.conditions.iter().all(|c| c.report.is_some())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "step-size conditions");
        for c in &self.conditions {
            match &c.report {
                Some(r) => {
                    let _ = writeln!(
                        out,
                        "  {:<10} s2_0={} alpha1={} alpha2={}: cond1 from k={}, cond2 from k={}, C={}{}",
                        c.label,
                        c.s2_0,
                        c.alpha1,
                        c.alpha2,
                        r.cond1,
                        r.cond2,
                        r.c,
                        if r.holds_from_one() { " (holds from k=1)" } else { "" }
                    );
                }
                None => {
                    let _ = writeln!(
                        out,
                        "  {:<10} {}",
                        c.label,
                        c.error.as_deref().unwrap_or("not found")
                    );
                }
            }
        }
        let k = &self.constants;
        let _ = writeln!(
            out,
            "theory constants (n={}, L0={}, beta={})",
            k.n, k.l0, k.beta
        );
        let _ = writeln!(out, "  L1 = {}", k.l1);
        let _ = writeln!(out, "  variance coefficient = {}", k.variance_coefficient);
        let _ = writeln!(out, "  bias coefficient = {}", k.bias_coefficient);
        let _ = writeln!(out, "rate fits over {} replicates", self.series.replicates);
        for r in &self.rates {
            let _ = writeln!(
                out,
                "  {:<13} slope {:+.4} +/- {:.4} in [{:+.2}, {:+.2}] ({} points): {}",
                r.quantity.label(),
                r.fit.slope,
                r.fit.half_width,
                r.band.0,
                r.band.1,
                r.fit.points.len(),
                if r.passed { "pass" } else { "FAIL" }
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn condition_scan_resubstitutes() {
        let r = solve_conditions(0.9, 0.75, 0.5, 1_000_000).unwrap();
        assert_eq!((r.cond1, r.cond2), (35, 218));
        assert_eq!(r.c, 218);
        assert!(cond1_holds(r.cond1, 0.9, 0.5) && !cond1_holds(r.cond1 - 1, 0.9, 0.5));
        assert!(cond2_holds(r.cond2, 0.9, 0.75, 0.5) && !cond2_holds(r.cond2 - 1, 0.9, 0.75, 0.5));
    }

    #[test]
    fn condition_holding_from_one() {
        let r = solve_conditions(0.9, 0.2, 0.1, 100_000).unwrap();
        assert!(r.holds_from_one());
    }

    #[test]
    fn empty_scan_is_not_found() {
        assert!(matches!(
            solve_conditions(0.9, 0.75, 0.5, 0),
            Err(Error::ConditionNotFound { k_max: 0, .. })
        ));
        // cond2 for these inputs first recovers at 218
        assert!(matches!(
            solve_conditions(0.9, 0.75, 0.5, 100),
            Err(Error::ConditionNotFound {
                condition: "cond2",
                ..
            })
        ));
        assert!(solve_conditions(1.0, 0.75, 0.5, 10).is_err());
    }

    #[test]
    fn constants() {
        assert_eq!(smoothed_gradient_lipschitz(4, 1.0, 0.5), 8.0);
        assert_eq!(variance_coefficient(1, 1.0, 1.0), 225.0);
        assert_eq!(bias_coefficient(1, 1.0, 1.0, 1.0), 10.0);
        let t = theory_constants(4, 1.0, 0.5, 0.1, 0.5).unwrap();
        assert_eq!(t.l1, 8.0);
        assert_eq!(t.bias_coefficient, 10.0 * 4.0 * 8.0 * 0.1 / 0.5);
        assert!(theory_constants(4, 0.0, 0.5, 0.1, 0.5).is_err());
    }

    #[test]
    fn exact_power_series() {
        let pts: Vec<(f64, f64)> = (1..=100)
            .map(|k| (k as f64, (k as f64).powf(-0.25)))
            .collect();
        let fit = fit_log_log(&pts, (1.0, 100.0)).unwrap();
        assert!((fit.slope + 0.25).abs() <= 1e-12);
        assert!(fit.half_width <= 1e-12);
        let flat: Vec<(f64, f64)> = (1..=100).map(|k| (k as f64, 3.5)).collect();
        assert!(fit_log_log(&flat, (1.0, 100.0)).unwrap().slope.abs() <= 1e-12);
    }

    #[test]
    fn too_few_points() {
        let pts: Vec<(f64, f64)> = (1..=100).map(|k| (k as f64, 1.0 / k as f64)).collect();
        assert!(matches!(
            fit_log_log(&pts, (60.0, 100.0)),
            Err(Error::InsufficientData {
                needed: 50,
                found: 41
            })
        ));
    }

    #[test]
    fn log_spacing() {
        let ks = log_spaced(100, 10_000, 60);
        assert_eq!(ks.len(), 60);
        assert_eq!((ks[0], ks[59]), (100, 10_000));
        assert!(ks.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn small_tracking_run() {
        let spec = TrackingSpec {
            iterations: 2_000,
            checkpoints: log_spaced(20, 2_000, 60),
            mc_draws: 200,
            replicates: 3,
            ..TrackingSpec::reference()
        };
        let a = track_replicates(&spec).unwrap();
        let b = track_replicates(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.k.len(), a.grad_norm.len());
        assert!(a.momentum_gap.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(fit_rate(&a, Quantity::BiasGap, (20.0, 2_000.0)).is_ok());
    }

    proptest! {
        #[test]
        fn slope_is_scale_invariant(
            values in proptest::collection::vec(0.01f64..100.0, 60),
            scale in 1e-6f64..1e6,
        ) {
            let pts: Vec<(f64, f64)> = values.iter().enumerate().map(|(j, v)| ((j + 1) as f64, *v)).collect();
            let scaled: Vec<(f64, f64)> = pts.iter().map(|(k, v)| (*k, v * scale)).collect();
            let a = fit_log_log(&pts, (1.0, 60.0)).unwrap();
            let b = fit_log_log(&scaled, (1.0, 60.0)).unwrap();
            prop_assert!((a.slope - b.slope).abs() <= 1e-9);
        }

        #[test]
        fn reported_k_satisfies_conditions(s2_0 in 0.05f64..0.99, a2 in 0.05f64..0.6, gap in 0.05f64..0.35) {
            let a1 = (a2 + gap).min(0.99);
            let k_max = 100_000;
            match solve_conditions(s2_0, a1, a2, k_max) {
                Ok(r) => {
                    for k in [r.cond1, r.cond1 + 1, k_max] {
                        prop_assert!(cond1_holds(k, s2_0, a2));
                    }
                    for k in [r.cond2, r.cond2 + 1, k_max] {
                        prop_assert!(cond2_holds(k, s2_0, a1, a2));
                    }
                    if r.cond1 > 1 {
                        prop_assert!(!cond1_holds(r.cond1 - 1, s2_0, a2));
                    }
                    if r.cond2 > 1 {
                        prop_assert!(!cond2_holds(r.cond2 - 1, s2_0, a1, a2));
                    }
                }
                Err(Error::ConditionNotFound { condition: "cond1", .. }) => prop_assert!(!cond1_holds(k_max, s2_0, a2)),
                Err(Error::ConditionNotFound { condition: "cond2", .. }) => {
                    prop_assert!(!cond2_holds(k_max, s2_0, a1, a2))
                }
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }
}
