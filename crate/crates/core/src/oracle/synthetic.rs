use std::fmt;
use std::str::FromStr;

use crate::error::{Error, EvalError, Result};
use crate::oracle::{BoxBounds, NoiseModel, Objective, ObjectiveOracle};
use crate::rng::{RngStream, StreamRng};

/// Identifier of a built-in test problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemId {
    Quadratic,
    Sphere,
    Rosenbrock,
    AbsSum,
}

impl ProblemId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProblemId::Quadratic => "quadratic",
            ProblemId::Sphere => "sphere",
            ProblemId::Rosenbrock => "rosenbrock",
            ProblemId::AbsSum => "abs-sum",
        }
    }
}

impl fmt::Display for ProblemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic" => Ok(ProblemId::Quadratic),
            "sphere" => Ok(ProblemId::Sphere),
            "rosenbrock" => Ok(ProblemId::Rosenbrock),
            "abs-sum" => Ok(ProblemId::AbsSum),
            other => Err(Error::UnknownProblem(other.to_string())),
        }
    }
}

/// Noiseless test function.
#[derive(Clone, Debug, PartialEq)]
pub enum Problem {
    /// `x -> 1/2 x^T A x + b^T x`, `A` stored row-major.
    Quadratic { a: Vec<f64>, b: Vec<f64> },
    /// `x -> ||x||^2`
    Sphere,
    /// `x -> sum_j 100 (x_{j+1} - x_j^2)^2 + (1 - x_j)^2`
    Rosenbrock,
    /// `x -> sum_j |x_j|`, Lipschitz with constant `sqrt(n)` in the 2-norm.
    AbsSum,
}

impl Problem {
    /// Quadratic with diagonal Hessian.
    pub fn diagonal_quadratic(diag: &[f64], b: Vec<f64>) -> Self {
        let n = diag.len();
        let mut a = vec![0.0; n * n];
        for (j, d) in diag.iter().enumerate() {
            a[j * n + j] = *d;
        }
        Problem::Quadratic { a, b }
    }

    /// Linear function `a^T x` (a quadratic with zero Hessian).
    pub fn linear(a: Vec<f64>) -> Self {
        let n = a.len();
        Problem::Quadratic {
            a: vec![0.0; n * n],
            b: a,
        }
    }

    pub fn id(&self) -> ProblemId {
        match self {
            Problem::Quadratic { .. } => ProblemId::Quadratic,
            Problem::Sphere => ProblemId::Sphere,
            Problem::Rosenbrock => ProblemId::Rosenbrock,
            Problem::AbsSum => ProblemId::AbsSum,
        }
    }
}

/// Synthetic noisy objective: noiseless problem plus one noise draw per call.
#[derive(Clone, Debug)]
pub struct Synthetic {
    problem: Problem,
    n: usize,
    noise: NoiseModel,
    domain: BoxBounds,
    lipschitz: f64,
}

impl Synthetic {
    pub fn new(problem: Problem, n: usize, noise: NoiseModel, domain: BoxBounds) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("n", "dimension must be positive"));
        }
        if problem == Problem::Rosenbrock && n < 2 {
            return Err(Error::param("n", "rosenbrock needs n >= 2"));
        }
        if let Problem::Quadratic { a, b } = &problem {
            if b.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: b.len(),
                });
            }
            if a.len() != n * n {
                return Err(Error::DimensionMismatch {
                    expected: n * n,
                    found: a.len(),
                });
            }
        }
        if domain.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: domain.dim(),
            });
        }
        noise.validate()?;
        let lipschitz = lipschitz_on(&problem, n, &domain);
        Ok(Self {
            problem,
            n,
            noise,
            domain,
            lipschitz,
        })
    }

    pub fn problem(&self) -> &Problem {
        &self.problem
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise
    }

    pub fn domain(&self) -> &BoxBounds {
        &self.domain
    }

    fn f(&self, x: &[f64]) -> f64 {
        match &self.problem {
            Problem::Quadratic { a, b } => {
                let n = self.n;
                let mut acc = 0.0;
                for i in 0..n {
                    let row = &a[i * n..(i + 1) * n];
                    let ax: f64 = row.iter().zip(x).map(|(r, v)| r * v).sum();
                    acc += 0.5 * x[i] * ax + b[i] * x[i];
                }
                acc
            }
            Problem::Sphere => x.iter().map(|v| v * v).sum(),
            Problem::Rosenbrock => x
                .windows(2)
                .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
                .sum(),
            Problem::AbsSum => x.iter().map(|v| v.abs()).sum(),
        }
    }

    fn grad(&self, x: &[f64]) -> Option<Vec<f64>> {
        match &self.problem {
            Problem::Quadratic { a, b } => {
                let n = self.n;
                Some(
                    (0..n)
                        .map(|i| {
                            let sym: f64 = (0..n)
                                .map(|j| 0.5 * (a[i * n + j] + a[j * n + i]) * x[j])
                                .sum();
                            sym + b[i]
                        })
                        .collect(),
                )
            }
            Problem::Sphere => Some(x.iter().map(|v| 2.0 * v).collect()),
            Problem::Rosenbrock => Some(rosenbrock_grad(x, 0.0)),
            Problem::AbsSum => None,
        }
    }
}

/// Gradient of the Gaussian-smoothed Rosenbrock function; `beta = 0` gives the plain gradient.
fn rosenbrock_grad(x: &[f64], beta: f64) -> Vec<f64> {
    let b2 = beta * beta;
    let mut g = vec![0.0; x.len()];
    for j in 0..x.len() - 1 {
        let (xj, xn) = (x[j], x[j + 1]);
        g[j] += 100.0 * (-4.0 * xn * xj + 4.0 * xj.powi(3) + 12.0 * xj * b2) - 2.0 * (1.0 - xj);
        g[j + 1] += 200.0 * (xn - xj * xj - b2);
    }
    g
}

fn lipschitz_on(problem: &Problem, n: usize, domain: &BoxBounds) -> f64 {
    let radius = domain.max_norm();
    match problem {
        Problem::AbsSum => (n as f64).sqrt(),
        Problem::Sphere => 2.0 * radius,
        Problem::Quadratic { a, b } => {
            let frob = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| (0.5 * (a[i * n + j] + a[j * n + i])).powi(2))
                .sum::<f64>()
                .sqrt();
            frob * radius + b.iter().map(|v| v * v).sum::<f64>().sqrt()
        }
        Problem::Rosenbrock => {
            let r = domain
                .lower()
                .iter()
                .chain(domain.upper())
                .fold(0.0f64, |m, v| m.max(v.abs()));
            let per_coord = 400.0 * r * (r + r * r) + 2.0 * (1.0 + r) + 200.0 * (r + r * r);
            per_coord * (n as f64).sqrt()
        }
    }
}

impl Objective for Synthetic {
    fn dim(&self) -> usize {
        self.n
    }

    fn evaluate(&self, x: &[f64], noise: &mut StreamRng) -> Result<f64, EvalError> {
        Ok(self.noise.apply(self.f(x), noise))
    }

    fn value(&self, x: &[f64]) -> Option<f64> {
        Some(self.f(x))
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.grad(x)
    }

    fn smoothed_gradient(&self, x: &[f64], beta: f64) -> Option<Vec<f64>> {
        match &self.problem {
            // Quadratics only shift by a constant under Gaussian smoothing.
            Problem::Quadratic { .. } | Problem::Sphere => self.grad(x),
            Problem::Rosenbrock => Some(rosenbrock_grad(x, beta)),
            Problem::AbsSum => Some(
                x.iter()
                    .map(|v| libm::erf(v / (beta * std::f64::consts::SQRT_2)))
                    .collect(),
            ),
        }
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(self.lipschitz)
    }
}

/// Synthetic oracle on the default domain `[-5, 5]^n`.
pub fn make_synthetic(
    problem: Problem,
    n: usize,
    noise: NoiseModel,
    seed: u64,
) -> Result<ObjectiveOracle> {
    let domain = BoxBounds::uniform(n.max(1), -5.0, 5.0)?;
    make_synthetic_on(problem, n, noise, domain, seed)
}

/// Synthetic oracle whose declared Lipschitz constant refers to `domain`.
pub fn make_synthetic_on(
    problem: Problem,
    n: usize,
    noise: NoiseModel,
    domain: BoxBounds,
    seed: u64,
) -> Result<ObjectiveOracle> {
    let objective = Synthetic::new(problem, n, noise, domain)?;
    Ok(ObjectiveOracle::new(
        objective,
        RngStream::root(seed).named("noise"),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn noiseless(problem: Problem, n: usize) -> ObjectiveOracle {
        make_synthetic(problem, n, NoiseModel::None, 0).unwrap()
    }

    #[test]
    fn sphere_value() {
        assert_eq!(
            noiseless(Problem::Sphere, 3)
                .eval(&[1.0, 2.0, 2.0])
                .unwrap(),
            9.0
        );
    }

    #[test]
    fn abs_sum_value() {
        assert_eq!(
            noiseless(Problem::AbsSum, 2).eval(&[-1.0, 0.5]).unwrap(),
            1.5
        );
    }

    #[test]
    fn rosenbrock_minimum() {
        assert_eq!(
            noiseless(Problem::Rosenbrock, 4).eval(&[1.0; 4]).unwrap(),
            0.0
        );
    }

    #[test]
    fn unknown_problem_id() {
        assert!(
            matches!("ackley".parse::<ProblemId>(), Err(Error::UnknownProblem(s)) if s == "ackley")
        );
        assert_eq!("abs-sum".parse::<ProblemId>().unwrap(), ProblemId::AbsSum);
    }

    #[test]
    fn quadratic_shape_checked() {
        assert!(make_synthetic(Problem::linear(vec![1.0, 2.0]), 3, NoiseModel::None, 0).is_err());
    }

    #[test]
    fn noiseless_eval_ignores_stream() {
        let o = noiseless(Problem::Rosenbrock, 3);
        let x = [0.3, -1.2, 2.0];
        let first = o.eval(&x).unwrap();
        for _ in 0..5 {
            assert_eq!(o.eval(&x).unwrap(), first);
        }
        let other = make_synthetic(Problem::Rosenbrock, 3, NoiseModel::None, 99).unwrap();
        assert_eq!(other.eval(&x).unwrap(), first);
    }

    #[test]
    fn additive_noise_mean_within_three_sigma() {
        let sigma = 0.1;
        let o = make_synthetic(
            Problem::Sphere,
            2,
            NoiseModel::AdditiveGaussian { sigma },
            11,
        )
        .unwrap();
        let n = 100_000;
        let mean = (0..n).map(|_| o.eval(&[0.0, 0.0]).unwrap()).sum::<f64>() / n as f64;
        assert!(mean.abs() <= 3.0 * sigma / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn uniform_noise_mean_within_three_sigma() {
        let hw = 0.5;
        let noise = NoiseModel::AdditiveUniform { half_width: hw };
        let o = make_synthetic(Problem::AbsSum, 3, noise, 5).unwrap();
        let x = [1.0, -2.0, 0.25];
        let n = 100_000;
        let mean = (0..n).map(|_| o.eval(&x).unwrap()).sum::<f64>() / n as f64;
        let se = noise.additive_std() / (n as f64).sqrt();
        assert!((mean - 3.25).abs() <= 3.0 * se, "mean {mean}");
    }

    #[test]
    fn declared_lipschitz_constants() {
        let o = noiseless(Problem::AbsSum, 9);
        assert_eq!(o.objective().lipschitz(), Some(3.0));
        let s = make_synthetic_on(
            Problem::Sphere,
            2,
            NoiseModel::None,
            BoxBounds::uniform(2, -3.0, 4.0).unwrap(),
            0,
        )
        .unwrap();
        assert!((s.objective().lipschitz().unwrap() - 2.0 * 32f64.sqrt()).abs() < 1e-12);
    }

    fn central_difference(o: &Synthetic, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|j| {
                let h = 1e-6 * x[j].abs().max(1.0);
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[j] += h;
                m[j] -= h;
                (o.f(&p) - o.f(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn problem_strategy() -> impl Strategy<Value = (Problem, usize)> {
        prop_oneof![
            (1usize..6).prop_map(|n| (Problem::Sphere, n)),
            (2usize..6).prop_map(|n| (Problem::Rosenbrock, n)),
            (1usize..5).prop_flat_map(|n| {
                (
                    proptest::collection::vec(-3.0f64..3.0, n * n),
                    proptest::collection::vec(-3.0f64..3.0, n),
                )
                    .prop_map(move |(a, b)| (Problem::Quadratic { a, b }, n))
            }),
        ]
    }

    proptest! {
        #[test]
        fn analytic_gradient_matches_central_differences(
            (problem, n) in problem_strategy(),
            seed in proptest::collection::vec(-2.0f64..2.0, 6),
        ) {
            let s = Synthetic::new(problem, n, NoiseModel::None, BoxBounds::uniform(n, -5.0, 5.0).unwrap()).unwrap();
            let x = &seed[..n];
            let g = s.grad(x).unwrap();
            let fd = central_difference(&s, x);
            let scale = g.iter().map(|v| v.abs()).fold(1.0, f64::max);
            for (a, b) in g.iter().zip(&fd) {
                prop_assert!((a - b).abs() <= 1e-5 * scale, "{} vs {}", a, b);
            }
        }

        #[test]
        fn abs_sum_is_root_n_lipschitz_per_realization(
            x in proptest::collection::vec(-5.0f64..5.0, 1..10),
            dy in proptest::collection::vec(-5.0f64..5.0, 10),
        ) {
            let n = x.len();
            let y: Vec<f64> = x.iter().zip(&dy).map(|(a, d)| a + d).collect();
            let o = noiseless(Problem::AbsSum, n);
            let l0 = o.objective().lipschitz().unwrap();
            let dist = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let diff = (o.eval(&x).unwrap() - o.eval(&y).unwrap()).abs();
            prop_assert!(diff <= l0 * dist + 1e-12);
        }
    }
}
