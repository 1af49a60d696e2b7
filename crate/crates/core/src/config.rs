//! Run configuration: a flat TOML table layered as preset < file < flags.

use serde::{Deserialize, Serialize};

use crate::baseline::ZoSgdParams;
use crate::error::{Error, Result};
use crate::oracle::{BoxBounds, NoiseModel, Problem, ProblemId};
use crate::smoothing::{BaseEvaluation, DirectionKind, SmoothingConfig};
use crate::sso::{ScheduleMode, SsoConfig, SubproblemSchedule};
use crate::zo_signum::{StepSchedule, ZosParams};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    #[default]
    Sso,
    Zos,
    ZoSgdBaseline,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Sso => "sso",
            Algorithm::Zos => "zos",
            Algorithm::ZoSgdBaseline => "zo-sgd-baseline",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    #[default]
    None,
    AdditiveGaussian,
    AdditiveUniform,
    MultiplicativeGaussian,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    #[default]
    Default,
    Convex,
}

/// Start point: one value for every coordinate, or a full vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StartPoint {
    Uniform(f64),
    Vector(Vec<f64>),
}

impl Default for StartPoint {
    fn default() -> Self {
        StartPoint::Uniform(1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    /// Synthetic problem id; ignored when `command` is set.
    pub problem: String,
    /// Shell command serving the blackbox over stdin/stdout.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Quadratic Hessian diagonal (default `1, 2, ..., n`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quad_diag: Option<Vec<f64>>,
    /// Quadratic linear term (default zero).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quad_linear: Option<Vec<f64>>,
    pub noise: NoiseKind,
    /// Standard deviation, or half-width for uniform noise.
    pub noise_level: f64,

    pub algorithm: Algorithm,
    /// Initial smoothing radius (the fixed radius for zos and zo-sgd-baseline).
    pub beta0: f64,
    pub s1_0: f64,
    pub s2_0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub schedule: ScheduleKind,
    pub rho: f64,
    pub q: usize,
    pub min_iters: u64,
    pub search_budget: u64,
    pub epsilon: f64,
    pub max_evals: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iters: Option<u64>,
    /// Momentum threshold for standalone zos runs.
    pub threshold: f64,
    pub sgd_step0: f64,
    pub sgd_decay: f64,
    pub directions: DirectionKind,
    pub base: BaseEvaluation,
    pub parallel: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    pub x0: StartPoint,

    pub seed: u64,
    pub timeout_secs: f64,
    pub output_dir: String,
    pub trace_file: String,
    pub summary_file: String,
    pub record_every: u64,
    pub record_wall_time: bool,
    /// Fresh evaluations averaged for the summary's final value.
    pub final_samples: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            preset: None,
            problem: "sphere".into(),
            command: None,
            n: None,
            quad_diag: None,
            quad_linear: None,
            noise: NoiseKind::None,
            noise_level: 0.0,
            algorithm: Algorithm::Sso,
            beta0: 0.3,
            s1_0: 0.1,
            s2_0: 0.5,
            alpha1: 0.5,
            alpha2: 0.25,
            schedule: ScheduleKind::Default,
            rho: 0.5,
            q: 10,
            min_iters: 5,
            search_budget: 0,
            epsilon: 1e-3,
            max_evals: 10_000,
            max_iters: None,
            threshold: 1e-3,
            sgd_step0: 0.01,
            sgd_decay: 0.5,
            directions: DirectionKind::Gaussian,
            base: BaseEvaluation::Shared,
            parallel: false,
            lower: None,
            upper: None,
            x0: StartPoint::default(),
            seed: 0,
            timeout_secs: 30.0,
            output_dir: "runs".into(),
            trace_file: "trace.csv".into(),
            summary_file: "summary.toml".into(),
            record_every: 1,
            record_wall_time: false,
            final_samples: 30,
        }
    }
}

/// Maps an error from a core constructor onto the config field it came from.
fn field_error(field: &str, e: Error) -> Error {
    match e {
        Error::InvalidParameter { reason, .. } => Error::config(field, reason),
        Error::InvalidBounds(reason) => Error::config(field, reason),
        other => Error::config(field, other.to_string()),
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text)
            .map_err(|e| Error::config(offending_key(e.message()), e.message().to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn dim(&self) -> Result<usize> {
        match self.n {
            Some(0) => Err(Error::config("n", "must be positive")),
            Some(n) => Ok(n),
            None => Err(Error::config("n", "is required")),
        }
    }

    pub fn problem_id(&self) -> Result<ProblemId> {
        self.problem.parse().map_err(|e| field_error("problem", e))
    }

    pub fn synthetic_problem(&self) -> Result<Problem> {
        let n = self.dim()?;
        Ok(match self.problem_id()? {
            ProblemId::Sphere => Problem::Sphere,
            ProblemId::Rosenbrock => Problem::Rosenbrock,
            ProblemId::AbsSum => Problem::AbsSum,
            ProblemId::Quadratic => {
                let diag = self
                    .quad_diag
                    .clone()
                    .unwrap_or_else(|| (1..=n).map(|j| j as f64).collect());
                if diag.len() != n {
                    return Err(Error::config(
                        "quad_diag",
                        format!("needs {n} entries, found {}", diag.len()),
                    ));
                }
                let b = self.quad_linear.clone().unwrap_or_else(|| vec![0.0; n]);
                if b.len() != n {
                    return Err(Error::config(
                        "quad_linear",
                        format!("needs {n} entries, found {}", b.len()),
                    ));
                }
                Problem::diagonal_quadratic(&diag, b)
            }
        })
    }

    pub fn noise_model(&self) -> Result<NoiseModel> {
        let level = self.noise_level;
        let model = match self.noise {
            NoiseKind::None => NoiseModel::None,
            NoiseKind::AdditiveGaussian => NoiseModel::AdditiveGaussian { sigma: level },
            NoiseKind::AdditiveUniform => NoiseModel::AdditiveUniform { half_width: level },
            NoiseKind::MultiplicativeGaussian => {
                NoiseModel::MultiplicativeGaussian { sigma: level }
            }
        };
        model
            .validate()
            .map_err(|e| field_error("noise_level", e))?;
        Ok(model)
    }

    pub fn bounds(&self) -> Result<Option<BoxBounds>> {
        let n = self.dim()?;
        match (self.lower, self.upper) {
            (None, None) => Ok(None),
            (Some(l), Some(u)) => BoxBounds::uniform(n, l, u)
                .map(Some)
                .map_err(|e| field_error("lower", e)),
            (Some(_), None) => Err(Error::config("upper", "is required when `lower` is set")),
            (None, Some(_)) => Err(Error::config("lower", "is required when `upper` is set")),
        }
    }

    pub fn start(&self) -> Result<Vec<f64>> {
        let n = self.dim()?;
        let x0 = match &self.x0 {
            StartPoint::Uniform(v) => vec![*v; n],
            StartPoint::Vector(v) if v.len() == n => v.clone(),
            StartPoint::Vector(v) => {
                return Err(Error::config(
                    "x0",
                    format!("needs {n} entries, found {}", v.len()),
                ))
            }
        };
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("x0", "must be finite"));
        }
        if let Some(b) = self.bounds()? {
            if !b.contains(&x0) {
                return Err(Error::config("x0", "lies outside the bounds"));
            }
        }
        Ok(x0)
    }

    pub fn smoothing(&self) -> Result<SmoothingConfig> {
        if self.q == 0 {
            return Err(Error::config("q", "must be at least 1"));
        }
        Ok(SmoothingConfig::new(self.beta0, self.q)
            .map_err(|e| field_error("beta0", e))?
            .with_directions(self.directions)
            .with_base(self.base)
            .with_parallel(self.parallel))
    }

    fn step_schedule(&self) -> Result<StepSchedule> {
        match self.schedule {
            ScheduleKind::Default => {
                StepSchedule::power(self.s1_0, self.s2_0, self.alpha1, self.alpha2).map_err(|e| {
                    match &e {
                        Error::InvalidParameter { name, .. } => field_error(name, e),
                        _ => field_error("schedule", e),
                    }
                })
            }
            ScheduleKind::Convex => {
                StepSchedule::convex(self.rho).map_err(|e| field_error("rho", e))
            }
        }
    }

    pub fn sso_config(&self) -> Result<SsoConfig> {
        let mode = match self.schedule {
            ScheduleKind::Default => ScheduleMode::Default {
                alpha1: self.alpha1,
                alpha2: self.alpha2,
            },
            ScheduleKind::Convex => ScheduleMode::Convex { rho: self.rho },
        };
        let schedule =
            SubproblemSchedule::new(self.beta0, self.s1_0, self.s2_0, self.epsilon, mode).map_err(
                |e| match &e {
                    Error::InvalidParameter { name: "s1_00", .. } => field_error("s1_0", e),
                    Error::InvalidParameter { name: "s2_00", .. } => field_error("s2_0", e),
                    Error::InvalidParameter { name, .. } => field_error(name, e),
                    _ => field_error("schedule", e),
                },
            )?;
        let smoothing = self.smoothing()?;
        let mut cfg = SsoConfig::new(schedule, self.q, self.min_iters, self.max_evals);
        cfg.directions = smoothing.directions;
        cfg.base = smoothing.base;
        cfg.parallel = smoothing.parallel;
        cfg.search_budget = self.search_budget;
        cfg.bounds = self.bounds()?;
        cfg.record_every = self.record_every;
        cfg.record_wall_time = self.record_wall_time;
        cfg.validate().map_err(|e| match &e {
            Error::InvalidParameter { name, .. } => field_error(name, e),
            _ => field_error("algorithm", e),
        })?;
        Ok(cfg)
    }

    pub fn zos_params(&self) -> Result<ZosParams> {
        if !(self.threshold >= 0.0) {
            return Err(Error::config("threshold", "must be non-negative"));
        }
        let mut p = ZosParams::new(
            self.smoothing()?,
            self.step_schedule()?,
            self.threshold,
            self.min_iters,
        );
        p.max_evals = Some(self.max_evals);
        p.max_iters = self.max_iters;
        p.bounds = self.bounds()?;
        p.record_every = self.record_every;
        p.record_wall_time = self.record_wall_time;
        Ok(p)
    }

    pub fn zo_sgd_params(&self) -> Result<ZoSgdParams> {
        let mut p = ZoSgdParams::new(self.smoothing()?, self.sgd_step0, self.sgd_decay);
        p.max_evals = Some(self.max_evals);
        p.max_iters = self.max_iters;
        p.bounds = self.bounds()?;
        p.record_every = self.record_every;
        p.record_wall_time = self.record_wall_time;
        p.validate().map_err(|e| match &e {
            Error::InvalidParameter { name: "step0", .. } => field_error("sgd_step0", e),
            Error::InvalidParameter { name: "decay", .. } => field_error("sgd_decay", e),
            _ => field_error("algorithm", e),
        })?;
        Ok(p)
    }

    /// Checks every field the selected algorithm uses.
    pub fn validate(&self) -> Result<()> {
        self.dim()?;
        match &self.command {
            Some(c) if c.trim().is_empty() => {
                return Err(Error::config("command", "must not be empty"))
            }
            Some(_) => {}
            None => {
                let problem = self.synthetic_problem()?;
                if problem.id() == ProblemId::Rosenbrock && self.dim()? < 2 {
                    return Err(Error::config("n", "rosenbrock needs n >= 2"));
                }
            }
        }
        self.noise_model()?;
        self.start()?;
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::config("timeout_secs", "must be positive"));
        }
        if self.record_every == 0 {
            return Err(Error::config("record_every", "must be at least 1"));
        }
        if self.final_samples == 0 {
            return Err(Error::config("final_samples", "must be at least 1"));
        }
        if self.trace_file.is_empty() {
            return Err(Error::config("trace_file", "must not be empty"));
        }
        if self.summary_file.is_empty() {
            return Err(Error::config("summary_file", "must not be empty"));
        }
        match self.algorithm {
            Algorithm::Sso => self.sso_config().map(|_| ()),
            Algorithm::Zos => self.zos_params().map(|_| ()),
            Algorithm::ZoSgdBaseline => self.zo_sgd_params().map(|_| ()),
        }
    }
}

/// Pulls the key name out of a serde message such as "unknown field `foo`".
fn offending_key(message: &str) -> String {
    message
        .split('`')
        .nth(1)
        .map(str::to_string)
        .unwrap_or_else(|| "config".to_string())
}

/// Named hyperparameter set with the step-size formulas it instantiates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub beta_formula: &'static str,
    pub s1_formula: &'static str,
    pub s2_formula: &'static str,
    pub min_iters: u64,
    pub q: usize,
    settings: &'static str,
}

pub const PRESETS: [Preset; 3] = [
    Preset {
        name: "cifar10",
        beta_formula: r"\frac{0.005}{(i+1)^2}",
        s1_formula: r"\frac{0.005}{(i+1)^{\frac{3}{2}}\sqrt{k+1}}",
        s2_formula: r"\frac{0.9}{(i+1) (k+1)^{\frac{1}{4}}}",
        min_iters: 60,
        q: 10,
        settings: r#"algorithm = "sso"
beta0 = 0.005
s1_0 = 0.005
s2_0 = 0.9
alpha1 = 0.5
alpha2 = 0.25
schedule = "default"
min_iters = 60
q = 10
search_budget = 0
epsilon = 5e-7
max_evals = 5000
directions = "uniform-sphere"
"#,
    },
    Preset {
        name: "imagenet",
        beta_formula: r"\frac{0.001}{(i+1)^{2}}",
        s1_formula: r"\frac{0.003}{(i+1)^{\frac{3}{2}}\sqrt{k+1}}",
        s2_formula: r"\frac{0.7}{(i+1) (k+1)^{\frac{1}{4}}}",
        min_iters: 100,
        q: 10,
        settings: r#"algorithm = "sso"
beta0 = 0.001
s1_0 = 0.003
s2_0 = 0.7
alpha1 = 0.5
alpha2 = 0.25
schedule = "default"
min_iters = 100
q = 10
search_budget = 0
epsilon = 1e-7
max_evals = 5000
directions = "uniform-sphere"
"#,
    },
    Preset {
        name: "solar",
        beta_formula: r"\frac{0.3}{(i+1)^2}",
        s1_formula: r"\frac{0.1}{(i+1)^{\frac{3}{2}}\sqrt{k+1}}",
        s2_formula: r"\frac{0.5}{(i+1) (k+1)^{\frac{1}{4}}}",
        min_iters: 5,
        q: 10,
        settings: r#"algorithm = "sso"
beta0 = 0.3
s1_0 = 0.1
s2_0 = 0.5
alpha1 = 0.5
alpha2 = 0.25
schedule = "default"
min_iters = 5
q = 10
search_budget = 300
epsilon = 1e-4
max_evals = 1000
directions = "truncated-gaussian"
"#,
    },
];

/// Dimension above which a preset's search phase is switched off.
pub const SEARCH_MAX_DIM: usize = 20;

pub fn preset(name: &str) -> Result<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        let names: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        Error::config(
            "preset",
            format!(
                "unknown preset `{name}` (expected one of {})",
                names.join(", ")
            ),
        )
    })
}

impl Preset {
    pub fn table(&self) -> toml::Table {
        self.settings
            .parse()
            .expect("embedded preset is valid TOML")
    }

    /// Formula block as comments followed by the preset's settings.
    pub fn render(&self) -> String {
        format!(
            "# preset {}\n# beta^i = {}\n# s1^(i,k) = {}\n# s2^(i,k) = {}\n# M = {}\n# q = {}\npreset = \"{}\"\n{}",
            self.name, self.beta_formula, self.s1_formula, self.s2_formula, self.min_iters, self.q, self.name, self.settings
        )
    }

    /// `(s2_0, alpha1, alpha2)` of the inner schedule.
    pub fn condition_inputs(&self) -> (f64, f64, f64) {
        let t = self.table();
        let get = |k: &str| t[k].as_float().expect("preset float");
        (get("s2_0"), get("alpha1"), get("alpha2"))
    }
}

fn parse_table(text: &str, origin: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>()
        .map_err(|e| Error::config(origin, e.message().to_string()))
}

/// Merges preset < file < flags and validates the result.
pub fn resolve(file: Option<&str>, flags: toml::Table) -> Result<RunConfig> {
    let file = match file {
        Some(text) => parse_table(text, "config file")?,
        None => toml::Table::new(),
    };
    let preset_name = flags
        .get("preset")
        .or_else(|| file.get("preset"))
        .map(|v| {
            v.as_str()
                .map(str::to_string)
                .ok_or_else(|| Error::config("preset", "must be a string"))
        })
        .transpose()?;
    let mut merged = match &preset_name {
        Some(name) => preset(name)?.table(),
        None => toml::Table::new(),
    };
    let user_search = file.contains_key("search_budget") || flags.contains_key("search_budget");
    merged.extend(file);
    merged.extend(flags);
    let mut cfg: RunConfig = merged.try_into().map_err(|e: toml::de::Error| {
        Error::config(offending_key(e.message()), e.message().to_string())
    })?;
    if preset_name.is_some() && !user_search && cfg.n.is_some_and(|n| n > SEARCH_MAX_DIM) {
        cfg.search_budget = 0;
    }
    cfg.validate()?;
    Ok(cfg)
}
