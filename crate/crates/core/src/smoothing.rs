//! Gaussian smoothing and the one-sided mini-batch gradient estimator.
//!
//! For `beta > 0` the smoothed objective is `f^beta(x) = E_u[f(x + beta u)]`
//! with `u ~ N(0, I)`, and
//!
//! ```text
//! g = 1/q sum_j u_j (F(x + beta u_j, xi_j) - F(x, xi_j)) / beta
//! ```
//!
//! is an unbiased estimate of its gradient. With [`BaseEvaluation::Shared`]
//! the base value `F(x, xi_0)` is evaluated once and reused by every probe
//! (`q + 1` evaluations); [`BaseEvaluation::PerSample`] re-evaluates it for
//! each probe (`2q` evaluations).

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::ObjectiveOracle;
use crate::rng::{RngStream, StreamRng};

/// Distribution of the probe directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DirectionKind {
    #[default]
    Gaussian,
    /// Standard normal with every coordinate restricted to `[-3, 3]`.
    TruncatedGaussian,
    /// Uniform on the unit sphere; the estimate is scaled by `n`.
    UniformSphere,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaseEvaluation {
    #[default]
    Shared,
    PerSample,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmoothingConfig {
    pub beta: f64,
    pub batch: usize,
    pub directions: DirectionKind,
    pub base: BaseEvaluation,
    /// Fan the probes out over the rayon pool when the oracle allows it.
    pub parallel: bool,
}

impl SmoothingConfig {
    pub fn new(beta: f64, batch: usize) -> Result<Self> {
        let cfg = Self {
            beta,
            batch,
            directions: DirectionKind::Gaussian,
            base: BaseEvaluation::Shared,
            parallel: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn with_directions(mut self, directions: DirectionKind) -> Self {
        self.directions = directions;
        self
    }

    pub fn with_base(mut self, base: BaseEvaluation) -> Self {
        self.base = base;
        self
    }

    pub fn with_parallel(mut self, parallel: bool) -> Self {
        self.parallel = parallel;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::param(
                "beta",
                format!("must be finite and > 0, got {}", self.beta),
            ));
        }
        if self.batch == 0 {
            return Err(Error::param("q", "batch size must be at least 1"));
        }
        Ok(())
    }

    /// Oracle calls consumed by one [`gradient_estimate`].
    pub fn evals_per_estimate(&self) -> u64 {
        let q = self.batch as u64;
        match self.base {
            BaseEvaluation::Shared => q + 1,
            BaseEvaluation::PerSample => 2 * q,
        }
    }
}

/// Counter-based source of probe directions.
#[derive(Clone, Debug)]
pub struct DirectionSampler {
    stream: RngStream,
    next: u64,
}

impl DirectionSampler {
    pub fn new(stream: RngStream) -> Self {
        Self { stream, next: 0 }
    }

    /// Number of directions drawn so far.
    pub fn draws(&self) -> u64 {
        self.next
    }

    fn reserve(&mut self, count: u64) -> u64 {
        let first = self.next;
        self.next += count;
        first
    }

    fn sample_at(&self, slot: u64, kind: DirectionKind, n: usize) -> Vec<f64> {
        let mut rng = self.stream.rng(slot);
        sample_direction(&mut rng, kind, n)
    }

    pub fn next_direction(&mut self, kind: DirectionKind, n: usize) -> Vec<f64> {
        let slot = self.reserve(1);
        self.sample_at(slot, kind, n)
    }

    pub fn next_batch(
        &mut self,
        kind: DirectionKind,
        n: usize,
        q: usize,
        parallel: bool,
    ) -> Vec<Vec<f64>> {
        let first = self.reserve(q as u64);
        if parallel {
            (0..q as u64)
                .into_par_iter()
                .map(|j| self.sample_at(first + j, kind, n))
                .collect()
        } else {
            (0..q as u64)
                .map(|j| self.sample_at(first + j, kind, n))
                .collect()
        }
    }
}

fn sample_direction(rng: &mut StreamRng, kind: DirectionKind, n: usize) -> Vec<f64> {
    match kind {
        DirectionKind::Gaussian => (0..n).map(|_| StandardNormal.sample(rng)).collect(),
        // Rejection per coordinate: conditioning independent coordinates on the
        // product event ||u||_inf <= 3 is the same as truncating each one.
        DirectionKind::TruncatedGaussian => (0..n)
            .map(|_| loop {
                let z: f64 = StandardNormal.sample(rng);
                if z.abs() <= 3.0 {
                    break z;
                }
            })
            .collect(),
        DirectionKind::UniformSphere => loop {
            let u: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                break u.into_iter().map(|v| v / norm).collect();
            }
        },
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientEstimate {
    pub g: Vec<f64>,
    pub evals_used: u64,
    /// Smallest `F` value observed while forming the estimate.
    pub best_value: f64,
}

pub fn gradient_estimate(
    oracle: &ObjectiveOracle,
    x: &[f64],
    cfg: &SmoothingConfig,
    sampler: &mut DirectionSampler,
) -> Result<GradientEstimate> {
    gradient_estimate_observed(oracle, x, cfg, sampler, &mut |_, _| {})
}

/// [`gradient_estimate`] that also reports every evaluated `(point, value)`
/// to `observer`, base point first, then probes in index order.
pub fn gradient_estimate_observed(
    oracle: &ObjectiveOracle,
    x: &[f64],
    cfg: &SmoothingConfig,
    sampler: &mut DirectionSampler,
    observer: &mut dyn FnMut(&[f64], f64),
) -> Result<GradientEstimate> {
    cfg.validate()?;
    check_dim(oracle, x)?;
    let parallel = cfg.parallel && oracle.concurrent();
    let dirs = sampler.next_batch(cfg.directions, x.len(), cfg.batch, parallel);
    estimate_with_directions(oracle, x, cfg, &dirs, observer)
}

/// Estimate with a uniform-sphere direction distribution regardless of `cfg.directions`.
pub fn uniform_sphere_variant(
    oracle: &ObjectiveOracle,
    x: &[f64],
    cfg: &SmoothingConfig,
    sampler: &mut DirectionSampler,
) -> Result<GradientEstimate> {
    let cfg = cfg.with_directions(DirectionKind::UniformSphere);
    gradient_estimate(oracle, x, &cfg, sampler)
}

/// Estimator arithmetic with caller-supplied directions (batch size `dirs.len()`).
pub fn estimate_with_directions(
    oracle: &ObjectiveOracle,
    x: &[f64],
    cfg: &SmoothingConfig,
    dirs: &[Vec<f64>],
    observer: &mut dyn FnMut(&[f64], f64),
) -> Result<GradientEstimate> {
    cfg.validate()?;
    check_dim(oracle, x)?;
    let n = x.len();
    let q = dirs.len();
    if q == 0 {
        return Err(Error::param("q", "at least one direction is required"));
    }
    if let Some(bad) = dirs.iter().find(|u| u.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: bad.len(),
        });
    }
    let beta = cfg.beta;
    let probes: Vec<Vec<f64>> = dirs
        .iter()
        .map(|u| x.iter().zip(u).map(|(xi, ui)| xi + beta * ui).collect())
        .collect();

    // (point, call index) in the fixed order used for reduction and observation.
    let (calls, evals_used): (Vec<(&[f64], u64)>, u64) = match cfg.base {
        BaseEvaluation::Shared => {
            let first = oracle.reserve(q as u64 + 1);
            let mut calls = Vec::with_capacity(q + 1);
            calls.push((x, first));
            calls.extend(
                probes
                    .iter()
                    .enumerate()
                    .map(|(j, p)| (p.as_slice(), first + 1 + j as u64)),
            );
            (calls, q as u64 + 1)
        }
        BaseEvaluation::PerSample => {
            let first = oracle.reserve(2 * q as u64);
            let calls = probes
                .iter()
                .enumerate()
                .flat_map(|(j, p)| {
                    [
                        (x, first + 2 * j as u64),
                        (p.as_slice(), first + 2 * j as u64 + 1),
                    ]
                })
                .collect();
            (calls, 2 * q as u64)
        }
    };

    let values: Vec<Result<f64>> = if cfg.parallel && oracle.concurrent() {
        calls
            .par_iter()
            .map(|(p, idx)| oracle.eval_reserved(p, *idx))
            .collect()
    } else {
        calls
            .iter()
            .map(|(p, idx)| oracle.eval_reserved(p, *idx))
            .collect()
    };
    let values = values.into_iter().collect::<Result<Vec<f64>>>()?;
    for ((p, _), v) in calls.iter().zip(&values) {
        observer(p, *v);
    }

    let diffs: Vec<f64> = match cfg.base {
        BaseEvaluation::Shared => values[1..].iter().map(|v| v - values[0]).collect(),
        BaseEvaluation::PerSample => values.chunks_exact(2).map(|c| c[1] - c[0]).collect(),
    };
    let scale = match cfg.directions {
        DirectionKind::UniformSphere => n as f64,
        _ => 1.0,
    } / (q as f64 * beta);

    let mut g = vec![0.0; n];
    for (u, d) in dirs.iter().zip(&diffs) {
        for (gi, ui) in g.iter_mut().zip(u) {
            *gi += ui * d;
        }
    }
    for (index, gi) in g.iter_mut().enumerate() {
        *gi *= scale;
        if !gi.is_finite() {
            return Err(Error::NonFiniteGradient { index });
        }
    }
    let best_value = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(GradientEstimate {
        g,
        evals_used,
        best_value,
    })
}

fn check_dim(oracle: &ObjectiveOracle, x: &[f64]) -> Result<()> {
    if x.len() != oracle.dim() {
        return Err(Error::DimensionMismatch {
            expected: oracle.dim(),
            found: x.len(),
        });
    }
    Ok(())
}

/// Monte-Carlo mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: u64,
}

/// `1/N sum_k F(x + beta u_k, xi_k)`; consumes exactly `samples` oracle calls.
pub fn smoothed_value(
    oracle: &ObjectiveOracle,
    x: &[f64],
    beta: f64,
    samples: u64,
    sampler: &mut DirectionSampler,
) -> Result<f64> {
    smoothed_value_mc(oracle, x, beta, samples, sampler).map(|e| e.mean)
}

pub fn smoothed_value_mc(
    oracle: &ObjectiveOracle,
    x: &[f64],
    beta: f64,
    samples: u64,
    sampler: &mut DirectionSampler,
) -> Result<McEstimate> {
    const CHUNK: u64 = 4096;
    if samples == 0 {
        return Err(Error::param(
            "samples",
            "need at least one Monte-Carlo sample",
        ));
    }
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::param(
            "beta",
            format!("must be finite and >= 0, got {beta}"),
        ));
    }
    check_dim(oracle, x)?;
    let n = x.len();
    let first_call = oracle.reserve(samples);
    let first_slot = sampler.reserve(samples);
    let sampler = &*sampler;

    let chunk = |c: u64| -> Result<(f64, f64)> {
        let (mut sum, mut sumsq) = (0.0, 0.0);
        let mut point = vec![0.0; n];
        for k in c * CHUNK..((c + 1) * CHUNK).min(samples) {
            let u = sampler.sample_at(first_slot + k, DirectionKind::Gaussian, n);
            for ((p, xi), ui) in point.iter_mut().zip(x).zip(&u) {
                *p = xi + beta * ui;
            }
            let v = oracle.eval_reserved(&point, first_call + k)?;
            sum += v;
            sumsq += v * v;
        }
        Ok((sum, sumsq))
    };
    let chunks = samples.div_ceil(CHUNK);
    let partial: Vec<Result<(f64, f64)>> = if oracle.concurrent() {
        (0..chunks).into_par_iter().map(chunk).collect()
    } else {
        (0..chunks).map(chunk).collect()
    };
    let (mut sum, mut sumsq) = (0.0, 0.0);
    for p in partial {
        let (s, s2) = p?;
        sum += s;
        sumsq += s2;
    }
    let nf = samples as f64;
    let mean = sum / nf;
    let var = if samples > 1 {
        ((sumsq - nf * mean * mean) / (nf - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(McEstimate {
        mean,
        std_error: (var / nf).sqrt(),
        samples,
    })
}

/// Componentwise Monte-Carlo estimate of `grad f^beta`.
#[derive(Clone, Debug, PartialEq)]
pub struct McGradient {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub samples: u64,
}

impl McGradient {
    pub fn norm(&self) -> f64 {
        self.mean.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Standard error of [`McGradient::norm`] (first-order bound).
    pub fn norm_std_error(&self) -> f64 {
        self.std_error.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Average of `samples` independent single-direction estimates, each with
/// its own base evaluation; consumes exactly `2 samples` oracle calls.
pub fn smoothed_gradient_mc(
    oracle: &ObjectiveOracle,
    x: &[f64],
    beta: f64,
    samples: u64,
    sampler: &mut DirectionSampler,
) -> Result<McGradient> {
    const CHUNK: u64 = 1024;
    if samples < 2 {
        return Err(Error::param(
            "samples",
            "need at least two Monte-Carlo samples",
        ));
    }
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::param(
            "beta",
            format!("must be finite and > 0, got {beta}"),
        ));
    }
    check_dim(oracle, x)?;
    let n = x.len();
    let first_call = oracle.reserve(2 * samples);
    let first_slot = sampler.reserve(samples);
    let sampler = &*sampler;

    let chunk = |c: u64| -> Result<(Vec<f64>, Vec<f64>)> {
        let (mut sum, mut sumsq) = (vec![0.0; n], vec![0.0; n]);
        let mut point = vec![0.0; n];
        for k in c * CHUNK..((c + 1) * CHUNK).min(samples) {
            let u = sampler.sample_at(first_slot + k, DirectionKind::Gaussian, n);
            for ((p, xi), ui) in point.iter_mut().zip(x).zip(&u) {
                *p = xi + beta * ui;
            }
            let base = oracle.eval_reserved(x, first_call + 2 * k)?;
            let probe = oracle.eval_reserved(&point, first_call + 2 * k + 1)?;
            let scale = (probe - base) / beta;
            for j in 0..n {
                let g = u[j] * scale;
                sum[j] += g;
                sumsq[j] += g * g;
            }
        }
        Ok((sum, sumsq))
    };
    let chunks = samples.div_ceil(CHUNK);
    let partial: Vec<Result<(Vec<f64>, Vec<f64>)>> = if oracle.concurrent() {
        (0..chunks).into_par_iter().map(chunk).collect()
    } else {
        (0..chunks).map(chunk).collect()
    };
    let (mut sum, mut sumsq) = (vec![0.0; n], vec![0.0; n]);
    for p in partial {
        let (s, s2) = p?;
        for j in 0..n {
            sum[j] += s[j];
            sumsq[j] += s2[j];
        }
    }
    let nf = samples as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
    let std_error = mean
        .iter()
        .zip(&sumsq)
        .map(|(m, s2)| (((s2 - nf * m * m) / (nf - 1.0)).max(0.0) / nf).sqrt())
        .collect();
    if let Some(index) = mean.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    Ok(McGradient {
        mean,
        std_error,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{make_synthetic, FnObjective, NoiseModel, Problem};

    fn sampler(seed: u64) -> DirectionSampler {
        DirectionSampler::new(RngStream::root(seed).named("directions"))
    }

    fn constant(n: usize, c: f64) -> ObjectiveOracle {
        ObjectiveOracle::new(FnObjective::new(n, move |_| c), RngStream::root(0))
    }

    /// Componentwise sample mean and standard error of `draws` estimates.
    fn mean_and_se(mut draw: impl FnMut() -> Vec<f64>, draws: usize) -> (Vec<f64>, Vec<f64>) {
        let first = draw();
        let n = first.len();
        let mut sum = first.clone();
        let mut sumsq: Vec<f64> = first.iter().map(|v| v * v).collect();
        for _ in 1..draws {
            let g = draw();
            for j in 0..n {
                sum[j] += g[j];
                sumsq[j] += g[j] * g[j];
            }
        }
        let d = draws as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / d).collect();
        let se = (0..n)
            .map(|j| ((sumsq[j] / d - mean[j] * mean[j]) * d / (d - 1.0) / d).sqrt())
            .collect();
        (mean, se)
    }

    #[test]
    fn constant_oracle_gives_zero_gradient() {
        let o = constant(4, 3.5);
        let mut s = sampler(1);
        for (q, beta) in [(1, 0.1), (7, 2.0)] {
            let cfg = SmoothingConfig::new(beta, q).unwrap();
            let est = gradient_estimate(&o, &[1.0, -2.0, 0.0, 5.0], &cfg, &mut s).unwrap();
            assert_eq!(est.g, vec![0.0; 4]);
            let sph = uniform_sphere_variant(&o, &[0.0; 4], &cfg, &mut s).unwrap();
            assert_eq!(sph.g, vec![0.0; 4]);
        }
    }

    #[test]
    fn forced_direction_arithmetic() {
        let o = make_synthetic(Problem::linear(vec![2.0, 0.0]), 2, NoiseModel::None, 0).unwrap();
        let cfg = SmoothingConfig::new(1.0, 1).unwrap();
        let est =
            estimate_with_directions(&o, &[0.0, 0.0], &cfg, &[vec![1.0, 0.0]], &mut |_, _| {})
                .unwrap();
        assert_eq!(est.g, vec![2.0, 0.0]);
        assert_eq!(est.evals_used, 2);
    }

    #[test]
    fn non_positive_beta_rejected() {
        assert!(SmoothingConfig::new(0.0, 1).is_err());
        assert!(SmoothingConfig::new(-1.0, 1).is_err());
        assert!(SmoothingConfig::new(1.0, 0).is_err());
        let o = constant(1, 0.0);
        let cfg = SmoothingConfig::new(1.0, 1).unwrap().with_beta(-0.5);
        assert!(gradient_estimate(&o, &[0.0], &cfg, &mut sampler(0)).is_err());
    }

    #[test]
    fn linear_gaussian_estimate_is_unbiased() {
        let a = vec![1.0, -2.0, 3.0];
        let o = make_synthetic(Problem::linear(a.clone()), 3, NoiseModel::None, 0).unwrap();
        let cfg = SmoothingConfig::new(0.5, 1).unwrap();
        let mut s = sampler(2);
        let (mean, se) = mean_and_se(
            || {
                gradient_estimate(&o, &[0.3, 0.1, -0.7], &cfg, &mut s)
                    .unwrap()
                    .g
            },
            100_000,
        );
        for j in 0..3 {
            assert!(
                (mean[j] - a[j]).abs() <= 3.0 * se[j],
                "component {j}: {} vs {}",
                mean[j],
                a[j]
            );
        }
    }

    #[test]
    fn linear_sphere_estimate_is_unbiased() {
        let a = vec![1.0, -2.0, 3.0];
        let o = make_synthetic(Problem::linear(a.clone()), 3, NoiseModel::None, 0).unwrap();
        let cfg = SmoothingConfig::new(0.5, 1).unwrap();
        let mut s = sampler(3);
        let (mean, se) = mean_and_se(
            || {
                uniform_sphere_variant(&o, &[0.0; 3], &cfg, &mut s)
                    .unwrap()
                    .g
            },
            100_000,
        );
        for j in 0..3 {
            assert!(
                (mean[j] - a[j]).abs() <= 3.0 * se[j],
                "component {j}: {} vs {}",
                mean[j],
                a[j]
            );
        }
    }

    #[test]
    fn sphere_directions_have_unit_norm() {
        let mut s = sampler(4);
        for n in [1, 2, 7, 100] {
            for u in s.next_batch(DirectionKind::UniformSphere, n, 20, false) {
                let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!((norm - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn truncated_directions_are_bounded() {
        let mut s = sampler(5);
        for u in s.next_batch(DirectionKind::TruncatedGaussian, 1000, 50, true) {
            assert!(u.iter().all(|v| v.abs() <= 3.0));
        }
    }

    #[test]
    fn eval_accounting_matches_oracle_counter() {
        let o = make_synthetic(
            Problem::Sphere,
            5,
            NoiseModel::AdditiveGaussian { sigma: 0.1 },
            1,
        )
        .unwrap();
        let mut s = sampler(6);
        let mut total = 0;
        for (q, base) in [
            (1, BaseEvaluation::Shared),
            (10, BaseEvaluation::Shared),
            (4, BaseEvaluation::PerSample),
        ] {
            let cfg = SmoothingConfig::new(0.1, q).unwrap().with_base(base);
            let est = gradient_estimate(&o, &[0.5; 5], &cfg, &mut s).unwrap();
            assert_eq!(est.evals_used, cfg.evals_per_estimate());
            total += est.evals_used;
            assert_eq!(o.calls(), total);
        }
        assert_eq!(
            SmoothingConfig::new(1.0, 4)
                .unwrap()
                .with_base(BaseEvaluation::PerSample)
                .evals_per_estimate(),
            8
        );
    }

    #[test]
    fn observer_sees_base_then_probes() {
        let o = make_synthetic(Problem::Sphere, 2, NoiseModel::None, 0).unwrap();
        let cfg = SmoothingConfig::new(1.0, 2).unwrap();
        let mut seen = Vec::new();
        let dirs = [vec![1.0, 0.0], vec![0.0, -1.0]];
        let est = estimate_with_directions(&o, &[1.0, 1.0], &cfg, &dirs, &mut |p, v| {
            seen.push((p.to_vec(), v))
        })
        .unwrap();
        assert_eq!(
            seen,
            vec![
                (vec![1.0, 1.0], 2.0),
                (vec![2.0, 1.0], 5.0),
                (vec![1.0, 0.0], 1.0)
            ]
        );
        assert_eq!(est.best_value, 1.0);
    }

    #[test]
    fn parallel_and_serial_estimates_are_bitwise_equal() {
        let noise = NoiseModel::AdditiveGaussian { sigma: 0.3 };
        let serial_o = make_synthetic(Problem::Rosenbrock, 6, noise, 9).unwrap();
        let par_o = make_synthetic(Problem::Rosenbrock, 6, noise, 9).unwrap();
        let cfg = SmoothingConfig::new(0.2, 16).unwrap();
        let (mut s1, mut s2) = (sampler(7), sampler(7));
        for _ in 0..5 {
            let a = gradient_estimate(&serial_o, &[0.1; 6], &cfg, &mut s1).unwrap();
            let b =
                gradient_estimate(&par_o, &[0.1; 6], &cfg.with_parallel(true), &mut s2).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn smoothed_value_of_constant() {
        let o = constant(3, -4.25);
        for (beta, n) in [(0.1, 1), (3.0, 1000)] {
            assert_eq!(
                smoothed_value(&o, &[1.0, 2.0, 3.0], beta, n, &mut sampler(8)).unwrap(),
                -4.25
            );
        }
        assert_eq!(o.calls(), 1001);
    }

    #[test]
    fn smoothed_value_tiny_beta_recovers_f() {
        let o = make_synthetic(Problem::Sphere, 3, NoiseModel::None, 0).unwrap();
        let x = [0.5, -1.0, 2.0];
        let v = smoothed_value(&o, &x, 1e-8, 100, &mut sampler(9)).unwrap();
        assert!((v - 5.25).abs() <= 1e-6);
    }

    #[test]
    fn smoothed_sphere_matches_closed_form() {
        // E||x + beta u||^2 = ||x||^2 + n beta^2
        let o = make_synthetic(Problem::Sphere, 4, NoiseModel::None, 0).unwrap();
        let x = [0.5, 0.5, -0.5, 0.0];
        let est = smoothed_value_mc(&o, &x, 0.5, 1_000_000, &mut sampler(10)).unwrap();
        assert!((est.mean - 1.75).abs() <= 3.0 * est.std_error, "{est:?}");
        assert_eq!(o.calls(), 1_000_000);
    }

    /// Central differences of `f^beta` with common random numbers: for every
    /// sample `u_k` both sides use the same direction.
    fn crn_fd_smoothed_gradient(
        f: &dyn Fn(&[f64]) -> f64,
        x: &[f64],
        beta: f64,
        samples: u64,
        seed: u64,
    ) -> (Vec<f64>, Vec<f64>) {
        let n = x.len();
        let h = 1e-4;
        let stream = RngStream::root(seed);
        let mut sum = vec![0.0; n];
        let mut sumsq = vec![0.0; n];
        for k in 0..samples {
            let u = sample_direction(&mut stream.rng(k), DirectionKind::Gaussian, n);
            for j in 0..n {
                let mut p: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + beta * b).collect();
                let mut m = p.clone();
                p[j] += h;
                m[j] -= h;
                let d = (f(&p) - f(&m)) / (2.0 * h);
                sum[j] += d;
                sumsq[j] += d * d;
            }
        }
        let s = samples as f64;
        let mean: Vec<f64> = sum.iter().map(|v| v / s).collect();
        let se = (0..n)
            .map(|j| ((sumsq[j] / s - mean[j] * mean[j]) / s).sqrt())
            .collect();
        (mean, se)
    }

    #[test]
    fn estimator_matches_nested_mc_finite_differences() {
        let f = |x: &[f64]| x[0].sin() + x[1].sin() + 0.5 * x[0] * x[1];
        let o = ObjectiveOracle::new(FnObjective::new(2, f), RngStream::root(0));
        let x = [0.3, -0.8];
        let beta = 0.25;
        let (fd, fd_se) = crn_fd_smoothed_gradient(&f, &x, beta, 100_000, 77);
        let cfg = SmoothingConfig::new(beta, 1).unwrap();
        let mut s = sampler(11);
        let (mean, se) = mean_and_se(
            || gradient_estimate(&o, &x, &cfg, &mut s).unwrap().g,
            100_000,
        );
        for j in 0..2 {
            let band = 3.0 * (se[j].powi(2) + fd_se[j].powi(2)).sqrt();
            assert!(
                (mean[j] - fd[j]).abs() <= band,
                "component {j}: {} vs {} (band {band})",
                mean[j],
                fd[j]
            );
        }
    }

    #[test]
    fn closed_form_smoothed_gradients_match_nested_mc() {
        let x = [0.4, -0.3, 0.9];
        let beta = 0.3;
        for problem in [Problem::Rosenbrock, Problem::AbsSum] {
            let o = make_synthetic(problem.clone(), 3, NoiseModel::None, 0).unwrap();
            let obj = o.objective();
            let f = |p: &[f64]| obj.value(p).unwrap();
            let (fd, se) = crn_fd_smoothed_gradient(&f, &x, beta, 200_000, 5);
            let exact = obj.smoothed_gradient(&x, beta).unwrap();
            for j in 0..3 {
                assert!(
                    (exact[j] - fd[j]).abs() <= 4.0 * se[j] + 1e-6,
                    "{problem:?} component {j}: {} vs {} (se {})",
                    exact[j],
                    fd[j],
                    se[j]
                );
            }
        }
    }

    #[test]
    fn second_moment_within_lipschitz_bound() {
        // E||g||^2 <= L0^2 (n + 4)^2 on abs-sum with q = 1.
        for n in [2usize, 5] {
            let o = make_synthetic(Problem::AbsSum, n, NoiseModel::None, 0).unwrap();
            let l0 = o.objective().lipschitz().unwrap();
            let cfg = SmoothingConfig::new(0.5, 1).unwrap();
            let mut s = sampler(12);
            let x: Vec<f64> = (0..n).map(|j| 0.3 * j as f64 - 0.5).collect();
            let draws = 20_000;
            let m2 = (0..draws)
                .map(|_| {
                    gradient_estimate(&o, &x, &cfg, &mut s)
                        .unwrap()
                        .g
                        .iter()
                        .map(|v| v * v)
                        .sum::<f64>()
                })
                .sum::<f64>()
                / draws as f64;
            assert!(m2 <= l0 * l0 * ((n + 4) as f64).powi(2), "n={n}: {m2}");
        }
    }

    #[test]
    fn optimal_value_stability_on_sphere() {
        // min f^beta = n beta^2 at 0; L0 = 2 max||x|| on [-5, 5]^n.
        for n in [1usize, 3, 10] {
            let o = make_synthetic(Problem::Sphere, n, NoiseModel::None, 0).unwrap();
            let l0 = o.objective().lipschitz().unwrap();
            for (b1, b2) in [(0.5f64, 0.1f64), (2.0, 0.0), (1.0, 0.999)] {
                let lhs = n as f64 * (b1 * b1 - b2 * b2).abs();
                assert!(lhs <= (n as f64).sqrt() * l0 * (b1 - b2).abs());
            }
        }
    }

    #[test]
    fn nested_mc_gradient_matches_closed_form() {
        let o = make_synthetic(Problem::Rosenbrock, 3, NoiseModel::None, 0).unwrap();
        let x = [0.3, -0.2, 0.5];
        let exact = o.objective().smoothed_gradient(&x, 0.1).unwrap();
        let mc = smoothed_gradient_mc(&o, &x, 0.1, 200_000, &mut sampler(40)).unwrap();
        assert_eq!(o.calls(), 400_000);
        for j in 0..3 {
            assert!(
                (mc.mean[j] - exact[j]).abs() <= 4.0 * mc.std_error[j],
                "{j}: {} vs {}",
                mc.mean[j],
                exact[j]
            );
        }
        assert!(mc.norm_std_error() > 0.0);
        assert!(smoothed_gradient_mc(&o, &x, 0.1, 1, &mut sampler(40)).is_err());
    }
}
