//! Noisy blackbox evaluation contract.
//!
//! An [`Objective`] produces one draw of `F(x, xi)` per call. The
//! [`ObjectiveOracle`] wrapper owns the noise stream and the evaluation
//! counter: every call is assigned a call index, and the noise for that call is
//! drawn from slot `index` of the stream. Callers that fan evaluations out
//! concurrently reserve a block of indices first, so results do not depend on
//! scheduling.

mod subprocess;
mod synthetic;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

pub use subprocess::{ProtocolConfig, SubprocessObjective};
pub use synthetic::{make_synthetic, make_synthetic_on, Problem, ProblemId, Synthetic};

use crate::error::{Error, EvalError, Result};
use crate::rng::{RngStream, StreamRng};

/// A scalar blackbox `F(x, xi)`.
///
/// Only [`dim`](Objective::dim) and [`evaluate`](Objective::evaluate) are
/// required. The remaining hooks expose analytic information that synthetic
/// problems know and real blackboxes do not; the optimizers never use them,
/// only diagnostics and tests do.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    /// One noisy draw at `x`. `noise` is private to this call.
    fn evaluate(&self, x: &[f64], noise: &mut StreamRng) -> Result<f64, EvalError>;

    /// Noiseless value `f(x)`.
    fn value(&self, x: &[f64]) -> Option<f64> {
        let _ = x;
        None
    }

    /// Analytic gradient of the noiseless objective.
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let _ = x;
        None
    }

    /// Closed-form gradient of the Gaussian-smoothed objective `f^beta`.
    fn smoothed_gradient(&self, x: &[f64], beta: f64) -> Option<Vec<f64>> {
        let _ = (x, beta);
        None
    }

    /// Declared Lipschitz constant of `f` on the problem domain.
    fn lipschitz(&self) -> Option<f64> {
        None
    }

    /// Whether `evaluate` may be called from several threads at once.
    fn concurrent(&self) -> bool {
        true
    }
}

/// Blackbox plus its noise stream and call counter.
pub struct ObjectiveOracle {
    objective: Arc<dyn Objective>,
    noise: RngStream,
    calls: AtomicU64,
}

impl std::fmt::Debug for ObjectiveOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObjectiveOracle")
            .field("dim", &self.objective.dim())
            .field("calls", &self.calls())
            .finish()
    }
}

impl ObjectiveOracle {
    pub fn new(objective: impl Objective + 'static, noise: RngStream) -> Self {
        Self::from_arc(Arc::new(objective), noise)
    }

    pub fn from_arc(objective: Arc<dyn Objective>, noise: RngStream) -> Self {
        Self {
            objective,
            noise,
            calls: AtomicU64::new(0),
        }
    }

    /// Same blackbox with an independent noise stream and a fresh counter.
    ///
    /// Used for evaluations that must not be charged to an optimization
    /// budget, such as the final-value estimate of a run summary.
    pub fn fork(&self, stream: &str) -> Self {
        Self::from_arc(Arc::clone(&self.objective), self.noise.named(stream))
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn objective(&self) -> &dyn Objective {
        self.objective.as_ref()
    }

    /// Number of evaluations performed (or reserved) so far.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn concurrent(&self) -> bool {
        self.objective.concurrent()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        let index = self.reserve(1);
        self.eval_reserved(x, index)
    }

    /// Reserves `count` consecutive call indices and returns the first one.
    pub(crate) fn reserve(&self, count: u64) -> u64 {
        self.calls.fetch_add(count, Ordering::SeqCst)
    }

    /// Evaluates with the noise slot of a previously reserved call index.
    pub(crate) fn eval_reserved(&self, x: &[f64], index: u64) -> Result<f64> {
        let n = self.dim();
        if x.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: x.len(),
            });
        }
        let mut rng = self.noise.rng(index);
        let v = self.objective.evaluate(x, &mut rng)?;
        if !v.is_finite() {
            return Err(EvalError::NonFinite(v).into());
        }
        Ok(v)
    }
}

/// Box constraint `lower <= x <= upper`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                found: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(Error::InvalidBounds(
                "bounds must have at least one coordinate".into(),
            ));
        }
        for (j, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l < u) || !l.is_finite() || !u.is_finite() {
                return Err(Error::InvalidBounds(format!(
                    "coordinate {j}: need finite lower < upper, got [{l}, {u}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn uniform(n: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::new(vec![lower; n], vec![upper; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| l <= v && v <= u)
    }

    /// Largest Euclidean norm of a point in the box.
    pub fn max_norm(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| l.abs().max(u.abs()).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Clamps `x` in place.
    pub fn project_in_place(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = l.max(v.min(*u));
        }
    }
}

/// Componentwise clamp `max(lower, min(x, upper))`.
pub fn project_box(x: &[f64], bounds: &BoxBounds) -> Result<Vec<f64>> {
    if x.len() != bounds.dim() {
        return Err(Error::DimensionMismatch {
            expected: bounds.dim(),
            found: x.len(),
        });
    }
    let mut out = x.to_vec();
    bounds.project_in_place(&mut out);
    Ok(out)
}

/// How the noise term `xi` enters a synthetic objective.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseModel {
    #[default]
    None,
    AdditiveGaussian {
        sigma: f64,
    },
    AdditiveUniform {
        half_width: f64,
    },
    MultiplicativeGaussian {
        sigma: f64,
    },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        let level = match *self {
            NoiseModel::None => return Ok(()),
            NoiseModel::AdditiveGaussian { sigma }
            | NoiseModel::MultiplicativeGaussian { sigma } => sigma,
            NoiseModel::AdditiveUniform { half_width } => half_width,
        };
        if !(level >= 0.0 && level.is_finite()) {
            return Err(Error::param(
                "noise_level",
                format!("must be finite and >= 0, got {level}"),
            ));
        }
        Ok(())
    }

    /// Standard deviation of the additive noise term, if any.
    pub fn additive_std(&self) -> f64 {
        match *self {
            NoiseModel::AdditiveGaussian { sigma } => sigma,
            NoiseModel::AdditiveUniform { half_width } => half_width / 3f64.sqrt(),
            _ => 0.0,
        }
    }

    pub fn apply(&self, value: f64, rng: &mut StreamRng) -> f64 {
        match *self {
            NoiseModel::None => value,
            NoiseModel::AdditiveGaussian { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                value + sigma * z
            }
            NoiseModel::AdditiveUniform { half_width } => {
                if half_width == 0.0 {
                    return value;
                }
                let d = Uniform::new_inclusive(-half_width, half_width).expect("half_width > 0");
                value + d.sample(rng)
            }
            NoiseModel::MultiplicativeGaussian { sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                value * (1.0 + sigma * z)
            }
        }
    }
}

/// Deterministic objective from a closure, for ad-hoc problems and tests.
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F> FnObjective<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> Objective for FnObjective<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn evaluate(&self, x: &[f64], _noise: &mut StreamRng) -> Result<f64, EvalError> {
        Ok((self.f)(x))
    }

    fn value(&self, x: &[f64]) -> Option<f64> {
        Some((self.f)(x))
    }
}
