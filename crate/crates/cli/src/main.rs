use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use sso_core::config::{self, RunConfig};
use sso_core::harness;

#[derive(Parser)]
#[command(
    name = "sso",
    version,
    about = "Zeroth-order optimization runs, traces and diagnostics"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seeded optimization and write its trace and summary.
    Run(RunArgs),
    /// Run consecutive seeds and write a mean-and-band table.
    MultiSeed {
        #[command(flatten)]
        run: RunArgs,
        /// Number of seeds, starting at `seed`.
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Run the diagnostics and write a verification report.
    Verify(VerifyArgs),
    /// Print a preset's step-size formulas and settings.
    PrintPreset {
        #[arg(value_parser = ["solar", "cifar10", "imagenet"])]
        name: String,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Flat TOML config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    flags: ConfigFlags,
}

/// One flag per config key.
#[derive(Args, Default)]
struct ConfigFlags {
    #[arg(long)]
    preset: Option<String>,
    /// sphere | quadratic | rosenbrock | abs-sum
    #[arg(long)]
    problem: Option<String>,
    /// Blackbox command (replaces the synthetic problem).
    #[arg(long = "command")]
    blackbox: Option<String>,
    #[arg(long)]
    n: Option<i64>,
    /// Comma-separated Hessian diagonal of the quadratic.
    #[arg(long)]
    quad_diag: Option<String>,
    /// Comma-separated linear term of the quadratic.
    #[arg(long)]
    quad_linear: Option<String>,
    /// none | additive-gaussian | additive-uniform | multiplicative-gaussian
    #[arg(long)]
    noise: Option<String>,
    #[arg(long)]
    noise_level: Option<f64>,
    /// sso | zos | zo-sgd-baseline
    #[arg(long)]
    algorithm: Option<String>,
    #[arg(long)]
    beta0: Option<f64>,
    #[arg(long)]
    s1_0: Option<f64>,
    #[arg(long)]
    s2_0: Option<f64>,
    #[arg(long)]
    alpha1: Option<f64>,
    #[arg(long)]
    alpha2: Option<f64>,
    /// default | convex
    #[arg(long)]
    schedule: Option<String>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    q: Option<i64>,
    #[arg(long)]
    min_iters: Option<i64>,
    #[arg(long)]
    search_budget: Option<i64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    max_evals: Option<i64>,
    #[arg(long)]
    max_iters: Option<i64>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    sgd_step0: Option<f64>,
    #[arg(long)]
    sgd_decay: Option<f64>,
    /// gaussian | truncated-gaussian | uniform-sphere
    #[arg(long)]
    directions: Option<String>,
    /// shared | per-sample
    #[arg(long)]
    base: Option<String>,
    #[arg(long)]
    parallel: Option<bool>,
    #[arg(long, allow_hyphen_values = true)]
    lower: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    upper: Option<f64>,
    /// One value for every coordinate, or a comma-separated vector.
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    #[arg(long)]
    seed: Option<i64>,
    #[arg(long)]
    timeout_secs: Option<f64>,
    /// Overridden by the SSO_OUTPUT_DIR environment variable.
    #[arg(long)]
    output_dir: Option<String>,
    #[arg(long)]
    trace_file: Option<String>,
    #[arg(long)]
    summary_file: Option<String>,
    #[arg(long)]
    record_every: Option<i64>,
    #[arg(long)]
    record_wall_time: Option<bool>,
    #[arg(long)]
    final_samples: Option<i64>,
}

fn parse_list(key: &str, text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("config field `{key}`: bad number `{v}`"))
        })
        .collect()
}

impl ConfigFlags {
    fn into_table(self) -> Result<toml::Table> {
        use toml::Value;
        let mut t = toml::Table::new();
        let mut put = |k: &str, v: Option<Value>| {
            if let Some(v) = v {
                t.insert(k.to_string(), v);
            }
        };
        let list = |key: &str, v: Option<String>| -> Result<Option<Value>> {
            v.map(|s| {
                Ok(Value::Array(
                    parse_list(key, &s)?.into_iter().map(Value::Float).collect(),
                ))
            })
            .transpose()
        };
        let x0 = match self.x0 {
            Some(s) if s.contains(',') => list("x0", Some(s))?,
            Some(s) => {
                Some(Value::Float(s.trim().parse().with_context(|| {
                    format!("config field `x0`: bad number `{s}`")
                })?))
            }
            None => None,
        };
        put("preset", self.preset.map(Value::String));
        put("problem", self.problem.map(Value::String));
        put("command", self.blackbox.map(Value::String));
        put("n", self.n.map(Value::Integer));
        put("quad_diag", list("quad_diag", self.quad_diag)?);
        put("quad_linear", list("quad_linear", self.quad_linear)?);
        put("noise", self.noise.map(Value::String));
        put("noise_level", self.noise_level.map(Value::Float));
        put("algorithm", self.algorithm.map(Value::String));
        put("beta0", self.beta0.map(Value::Float));
        put("s1_0", self.s1_0.map(Value::Float));
        put("s2_0", self.s2_0.map(Value::Float));
        put("alpha1", self.alpha1.map(Value::Float));
        put("alpha2", self.alpha2.map(Value::Float));
        put("schedule", self.schedule.map(Value::String));
        put("rho", self.rho.map(Value::Float));
        put("q", self.q.map(Value::Integer));
        put("min_iters", self.min_iters.map(Value::Integer));
        put("search_budget", self.search_budget.map(Value::Integer));
        put("epsilon", self.epsilon.map(Value::Float));
        put("max_evals", self.max_evals.map(Value::Integer));
        put("max_iters", self.max_iters.map(Value::Integer));
        put("threshold", self.threshold.map(Value::Float));
        put("sgd_step0", self.sgd_step0.map(Value::Float));
        put("sgd_decay", self.sgd_decay.map(Value::Float));
        put("directions", self.directions.map(Value::String));
        put("base", self.base.map(Value::String));
        put("parallel", self.parallel.map(Value::Boolean));
        put("lower", self.lower.map(Value::Float));
        put("upper", self.upper.map(Value::Float));
        put("x0", x0);
        put("seed", self.seed.map(Value::Integer));
        put("timeout_secs", self.timeout_secs.map(Value::Float));
        put("output_dir", self.output_dir.map(Value::String));
        put("trace_file", self.trace_file.map(Value::String));
        put("summary_file", self.summary_file.map(Value::String));
        put("record_every", self.record_every.map(Value::Integer));
        put(
            "record_wall_time",
            self.record_wall_time.map(Value::Boolean),
        );
        put("final_samples", self.final_samples.map(Value::Integer));
        Ok(t)
    }
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 20)]
    replicates: u64,
    #[arg(long, default_value_t = 10_000)]
    iterations: u64,
    /// Draws per nested Monte-Carlo gradient.
    #[arg(long, default_value_t = 10_000)]
    mc_draws: u64,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    /// Overridden by the SSO_OUTPUT_DIR environment variable.
    #[arg(long, default_value = "runs")]
    output_dir: String,
}

fn resolve(args: RunArgs) -> Result<RunConfig> {
    let text = args
        .config
        .as_ref()
        .map(|p| std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    Ok(config::resolve(text.as_deref(), args.flags.into_table()?)?)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(args) => {
            let cfg = resolve(args)?;
            let dir = harness::output_dir(&cfg);
            let outcome = harness::run(&cfg, &dir)?;
            print!("{}", outcome.summary.to_toml());
            eprintln!("wrote {}", dir.join(&cfg.trace_file).display());
        }
        Command::MultiSeed { run, seeds } => {
            let cfg = resolve(run)?;
            let dir = harness::output_dir(&cfg);
            let out = harness::multi_seed(&cfg, seeds, &dir)?;
            for o in &out.outcomes {
                println!(
                    "seed {}: {} after {} evals, final f {}",
                    o.summary.seed, o.summary.exit, o.summary.total_evals, o.summary.final_f
                );
            }
            eprintln!("wrote {}", dir.join("band.csv").display());
        }
        Command::Verify(args) => {
            let mut options = harness::verify_options();
            let spec = &mut options.tracking;
            spec.replicates = args.replicates;
            spec.iterations = args.iterations;
            spec.mc_draws = args.mc_draws;
            spec.seed = args.seed;
            spec.checkpoints = sso_core::diagnostics::log_spaced(100, args.iterations, 60);
            options.window = (1e2, args.iterations as f64);
            let dir = std::env::var_os(harness::OUTPUT_DIR_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
                .unwrap_or_else(|| PathBuf::from(&args.output_dir));
            let report = harness::verify_to(&options, &dir)?;
            print!("{}", report.to_text());
            if !report.passed() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::PrintPreset { name } => {
            print!("{}", config::preset(&name)?.render());
        }
    }
    Ok(ExitCode::SUCCESS)
}
