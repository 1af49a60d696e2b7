//! Seeded runs from a [`RunConfig`], with trace, summary and band outputs.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::Serialize;

use crate::baseline::run_zo_sgd;
use crate::config::{Algorithm, RunConfig, PRESETS};
use crate::diagnostics::{verify, VerificationReport, VerifyOptions};
use crate::error::{Error, Result};
use crate::format::fmt17;
use crate::oracle::{
    make_synthetic_on, BoxBounds, ObjectiveOracle, ProtocolConfig, SubprocessObjective,
};
use crate::rng::RngStream;
use crate::smoothing::DirectionSampler;
use crate::sso::run_sso;
use crate::trace::{ExitReason, RunTrace};
use crate::zo_signum::run_zos;

/// Overrides the configured output directory when set.
pub const OUTPUT_DIR_ENV: &str = "SSO_OUTPUT_DIR";

pub fn output_dir(cfg: &RunConfig) -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(&cfg.output_dir))
}

pub fn build_oracle(cfg: &RunConfig) -> Result<ObjectiveOracle> {
    let n = cfg.dim()?;
    let noise = RngStream::root(cfg.seed).named("noise");
    match &cfg.command {
        Some(command) => {
            let protocol = ProtocolConfig {
                timeout: Duration::from_secs_f64(cfg.timeout_secs),
            };
            Ok(ObjectiveOracle::new(
                SubprocessObjective::spawn(command, n, protocol)?,
                noise,
            ))
        }
        None => {
            let domain = match cfg.bounds()? {
                Some(b) => b,
                None => BoxBounds::uniform(n, -5.0, 5.0)?,
            };
            make_synthetic_on(
                cfg.synthetic_problem()?,
                n,
                cfg.noise_model()?,
                domain,
                cfg.seed,
            )
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub algorithm: String,
    pub problem: String,
    pub n: usize,
    pub seed: u64,
    pub exit: String,
    pub budget_exhausted: bool,
    pub total_evals: u64,
    /// Iterations for zos and zo-sgd-baseline, subproblems for sso.
    pub iterations: u64,
    /// Mean of fresh evaluations at `x_final`, not charged to the budget.
    pub final_f: f64,
    pub final_f_std_error: f64,
    pub final_samples: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_f_noiseless: Option<f64>,
    pub best_observed_f: f64,
    pub x_final: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub trace: RunTrace,
    pub exit: ExitReason,
}

/// Runs the configured algorithm without touching the filesystem.
pub fn execute(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let oracle = build_oracle(cfg)?;
    let x0 = cfg.start()?;
    let mut sampler = DirectionSampler::new(RngStream::root(cfg.seed).named("directions"));
    let (x, trace, exit, iterations) = match cfg.algorithm {
        Algorithm::Sso => {
            let r = run_sso(&oracle, &x0, &cfg.sso_config()?, &mut sampler)?;
            (r.x, r.trace, r.exit, r.subproblems)
        }
        Algorithm::Zos => {
            let r = run_zos(&oracle, &x0, None, &cfg.zos_params()?, &mut sampler)?;
            (r.state.x, r.trace, r.exit, r.iterations)
        }
        Algorithm::ZoSgdBaseline => {
            let r = run_zo_sgd(&oracle, &x0, &cfg.zo_sgd_params()?, &mut sampler)?;
            (r.x, r.trace, r.exit, r.iterations)
        }
    };
    let total_evals = oracle.calls();

    let check = oracle.fork("final-value");
    let (mut sum, mut sumsq) = (0.0, 0.0);
    let mut final_error = None;
    for _ in 0..cfg.final_samples {
        match check.eval(&x) {
            Ok(v) => {
                sum += v;
                sumsq += v * v;
            }
            Err(e) => {
                final_error = Some(e);
                break;
            }
        }
    }
    let (final_f, final_f_std_error) = match final_error {
        // the optimizer result stands; the summary records the failed check
        Some(_) => (f64::NAN, f64::NAN),
        None => {
            let m = cfg.final_samples as f64;
            let mean = sum / m;
            let var = if m > 1.0 {
                ((sumsq - m * mean * mean) / (m - 1.0)).max(0.0)
            } else {
                0.0
            };
            (mean, (var / m).sqrt())
        }
    };
    let summary = RunSummary {
        algorithm: cfg.algorithm.as_str().to_string(),
        problem: cfg.command.clone().unwrap_or_else(|| cfg.problem.clone()),
        n: cfg.dim()?,
        seed: cfg.seed,
        exit: exit.to_string(),
        budget_exhausted: exit == ExitReason::BudgetExhausted,
        total_evals,
        iterations,
        final_f,
        final_f_std_error,
        final_samples: cfg.final_samples,
        final_f_noiseless: oracle.objective().value(&x),
        best_observed_f: trace.last().map_or(f64::INFINITY, |r| r.best_f),
        x_final: x,
    };
    Ok(RunOutcome {
        summary,
        trace,
        exit,
    })
}

impl RunSummary {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("summary serializes")
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::config("output_dir", format!("{}: {e}", dir.display())))
}

/// Runs and writes `trace_file` and `summary_file` under `dir`.
pub fn run(cfg: &RunConfig, dir: &Path) -> Result<RunOutcome> {
    let outcome = execute(cfg)?;
    create_dir(dir)?;
    outcome.trace.save(&dir.join(&cfg.trace_file))?;
    std::fs::write(dir.join(&cfg.summary_file), outcome.summary.to_toml())?;
    Ok(outcome)
}

/// Mean and spread of the best observed value across runs at one eval count.
#[derive(Clone, Debug, PartialEq)]
pub struct BandRow {
    pub evals: u64,
    /// Runs with a record at or before `evals`.
    pub runs: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

pub const BAND_HEADER: &str = "evals,runs,mean,std,min,max";

/// Best-observed-value band on the union of the traces' eval counts; each run
/// contributes its latest record at or before the grid point.
pub fn band_table(traces: &[RunTrace]) -> Vec<BandRow> {
    let mut grid: Vec<u64> = traces
        .iter()
        .flat_map(|t| t.records().iter().map(|r| r.evals))
        .collect();
    grid.sort_unstable();
    grid.dedup();
    let mut cursors = vec![0usize; traces.len()];
    grid.into_iter()
        .map(|g| {
            let mut values = Vec::with_capacity(traces.len());
            for (t, c) in traces.iter().zip(cursors.iter_mut()) {
                let recs = t.records();
                while *c < recs.len() && recs[*c].evals <= g {
                    *c += 1;
                }
                if *c > 0 {
                    values.push(recs[*c - 1].best_f);
                }
            }
            let m = values.len() as f64;
            let mean = values.iter().sum::<f64>() / m;
            let std = if values.len() > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0)).sqrt()
            } else {
                0.0
            };
            BandRow {
                evals: g,
                runs: values.len(),
                mean,
                std,
                min: values.iter().copied().fold(f64::INFINITY, f64::min),
                max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

pub fn write_band_csv<W: Write>(rows: &[BandRow], mut w: W) -> Result<()> {
    writeln!(w, "{BAND_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.evals,
            r.runs,
            fmt17(r.mean),
            fmt17(r.std),
            fmt17(r.min),
            fmt17(r.max)
        )?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct MultiSeedOutcome {
    pub seeds: Vec<u64>,
    pub outcomes: Vec<RunOutcome>,
    pub band: Vec<BandRow>,
}

fn seeded_name(file: &str, seed: u64) -> String {
    match file.rsplit_once('.') {
        Some((stem, ext)) => format!("{stem}_seed{seed}.{ext}"),
        None => format!("{file}_seed{seed}"),
    }
}

/// Runs `count` seeds starting at `cfg.seed` concurrently and writes per-seed
/// traces and summaries plus `band.csv`.
pub fn multi_seed(cfg: &RunConfig, count: u64, dir: &Path) -> Result<MultiSeedOutcome> {
    if count == 0 {
        return Err(Error::config("seeds", "must be at least 1"));
    }
    cfg.validate()?;
    let seeds: Vec<u64> = (0..count).map(|j| cfg.seed + j).collect();
    let configs: Vec<RunConfig> = seeds
        .iter()
        .map(|&seed| RunConfig {
            seed,
            ..cfg.clone()
        })
        .collect();
    // external processes are run one at a time
    let outcomes: Vec<Result<RunOutcome>> = if cfg.command.is_some() {
        configs.iter().map(execute).collect()
    } else {
        configs.par_iter().map(execute).collect()
    };
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    create_dir(dir)?;
    for (seed, o) in seeds.iter().zip(&outcomes) {
        o.trace
            .save(&dir.join(seeded_name(&cfg.trace_file, *seed)))?;
        std::fs::write(
            dir.join(seeded_name(&cfg.summary_file, *seed)),
            o.summary.to_toml(),
        )?;
    }
    let traces: Vec<RunTrace> = outcomes.iter().map(|o| o.trace.clone()).collect();
    let band = band_table(&traces);
    let file = std::fs::File::create(dir.join("band.csv"))?;
    write_band_csv(&band, std::io::BufWriter::new(file))?;
    Ok(MultiSeedOutcome {
        seeds,
        outcomes,
        band,
    })
}

/// Verification options covering every preset's step-size conditions.
pub fn verify_options() -> VerifyOptions {
    let mut options = VerifyOptions::default();
    let t = &options.tracking;
    let mut conditions = vec![("reference".to_string(), t.s2_0, t.alpha1, t.alpha2)];
    for p in PRESETS {
        let (s2_0, a1, a2) = p.condition_inputs();
        conditions.push((p.name.to_string(), s2_0, a1, a2));
    }
    options.conditions = conditions;
    options
}

/// Runs the diagnostics and writes `verification.txt` and `verification.json`.
pub fn verify_to(options: &VerifyOptions, dir: &Path) -> Result<VerificationReport> {
    let report = verify(options)?;
    create_dir(dir)?;
    std::fs::write(dir.join("verification.txt"), report.to_text())?;
    std::fs::write(dir.join("verification.json"), report.to_json())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::resolve;
    use crate::trace::TraceRecord;

    fn cfg(text: &str) -> RunConfig {
        resolve(Some(text), toml::Table::new()).unwrap()
    }

    #[test]
    fn run_writes_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg("preset = \"solar\"\nn = 3\nseed = 4");
        let out = run(&c, dir.path()).unwrap();
        let trace = RunTrace::load(&dir.path().join("trace.csv")).unwrap();
        assert_eq!(trace, out.trace);
        let summary = std::fs::read_to_string(dir.path().join("summary.toml")).unwrap();
        let table: toml::Table = summary.parse().unwrap();
        assert_eq!(
            table["total_evals"].as_integer().unwrap() as u64,
            out.summary.total_evals
        );
        assert!(out.summary.total_evals <= 1000);
        assert_eq!(out.summary.final_samples, 30);
        assert!(out.summary.final_f_noiseless.is_some());
    }

    #[test]
    fn final_value_does_not_use_budget() {
        let c = cfg("n = 2\nalgorithm = \"zo-sgd-baseline\"\nmax_evals = 55\nnoise = \"additive-gaussian\"\nnoise_level = 0.1");
        let out = execute(&c).unwrap();
        assert_eq!(out.summary.total_evals, 55);
        assert!(out.summary.final_f_std_error > 0.0);
    }

    #[test]
    fn all_algorithms_share_the_eval_grid() {
        let base = "n = 4\nmax_evals = 2000\nepsilon = 1e-9\nthreshold = 0.0\nnoise = \"additive-gaussian\"\nnoise_level = 0.01\n";
        let sso = execute(&cfg(&format!("{base}algorithm = \"sso\""))).unwrap();
        let sgd = execute(&cfg(&format!("{base}algorithm = \"zo-sgd-baseline\""))).unwrap();
        let grid = |o: &RunOutcome| {
            o.trace
                .records()
                .iter()
                .map(|r| r.evals)
                .collect::<Vec<_>>()
        };
        assert_eq!(grid(&sso), grid(&sgd));
    }

    #[test]
    fn band_of_step_functions() {
        let rec = |evals, best_f| TraceRecord {
            k: evals,
            i: 0,
            evals,
            beta: 1.0,
            m_norm: 0.0,
            s1: 0.1,
            s2: 0.1,
            best_f,
            wall_ms: 0.0,
        };
        let mut a = RunTrace::new();
        a.push(rec(2, 4.0));
        a.push(rec(4, 2.0));
        let mut b = RunTrace::new();
        b.push(rec(3, 6.0));
        let band = band_table(&[a, b]);
        let evals: Vec<u64> = band.iter().map(|r| r.evals).collect();
        assert_eq!(evals, vec![2, 3, 4]);
        assert_eq!((band[0].runs, band[0].mean), (1, 4.0));
        assert_eq!(
            (band[1].runs, band[1].mean, band[1].min, band[1].max),
            (2, 5.0, 4.0, 6.0)
        );
        assert_eq!(band[2].mean, 4.0);
        assert!((band[2].std - 8f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn seeded_file_names() {
        assert_eq!(seeded_name("trace.csv", 3), "trace_seed3.csv");
        assert_eq!(seeded_name("trace", 3), "trace_seed3");
    }
}
