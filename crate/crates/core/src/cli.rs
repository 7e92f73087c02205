//! Command-line front end.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::artifacts;
use crate::barrier::{self, Barrier, ScanSpec};
use crate::config::RunConfig;
use crate::model::{self, OddProfile, TailLaw};
use crate::transport;
use crate::verification::{self, NormGrid, VerificationError, VerificationReport};

pub const THREADS_ENV: &str = "ALPHA_PATCH_THREADS";

#[derive(Debug, Parser)]
#[command(name = "alpha-patch", version, about = "Cusp formation experiments for the 1D alpha-patch model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dotted-key override, e.g. `--set params.alpha=0.6`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the particle solver and write a run directory.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Output directory; overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the barrier supersolution inequality.
    BarrierCheck {
        #[command(flatten)]
        common: Common,
    },
    /// Compute the ratio constant c and the limits of R.
    ComputeConstant {
        #[command(flatten)]
        common: Common,
        /// Number of log-spaced z samples.
        #[arg(long, default_value_t = 200)]
        count: usize,
    },
    /// Convergence of the regularized velocity on the barrier profile.
    Convergence {
        #[command(flatten)]
        common: Common,
        /// Evaluation points. Repeatable.
        #[arg(long = "x", default_values_t = vec![1.0])]
        xs: Vec<f64>,
        /// Strictly decreasing regularization scales, comma separated.
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.2, 0.1, 0.05, 0.025])]
        eps: Vec<f64>,
    },
    /// Velocity-bound ratios on the analytic test family.
    Norms {
        #[command(flatten)]
        common: Common,
        /// Coarse node count; ratios are also computed at twice this.
        #[arg(long, default_value_t = 256)]
        n: usize,
    },
    /// Run every post-hoc check on an existing run directory.
    Verify {
        run_dir: PathBuf,
        /// Also write the reports to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Installs the global worker pool from `ALPHA_PATCH_THREADS` (0 or unset
/// means automatic).
pub fn init_threads() -> Result<()> {
    let n = match std::env::var(THREADS_ENV) {
        Ok(s) => s
            .trim()
            .parse::<usize>()
            .with_context(|| format!("{THREADS_ENV} = `{s}` is not a thread count"))?,
        Err(_) => 0,
    };
    if n > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

/// Result of a subcommand: success or a failed check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

impl Outcome {
    fn from_pass(pass: bool) -> Self {
        if pass {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

/// Parses `argv`, runs the command and maps the outcome to an exit code:
/// 0 success, 2 failed check, 1 usage or runtime error.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = init_threads().and_then(|_| execute(&cli.command));
    match result {
        Ok(Outcome::Pass) => ExitCode::SUCCESS,
        Ok(Outcome::Fail) => ExitCode::from(2),
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

pub fn execute(command: &Command) -> Result<Outcome> {
    match command {
        Command::Simulate { common, out } => simulate(common, out.as_deref()),
        Command::BarrierCheck { common } => barrier_check(common),
        Command::ComputeConstant { common, count } => compute_constant(common, *count),
        Command::Convergence { common, xs, eps } => convergence(common, xs, eps),
        Command::Norms { common, n } => norms(common, *n),
        Command::Verify { run_dir, out } => verify(run_dir, out.as_deref()),
    }
}

fn load(common: &Common) -> Result<RunConfig> {
    RunConfig::load(common.config.as_deref(), &common.overrides)
}

fn simulate(common: &Common, out: Option<&Path>) -> Result<Outcome> {
    let cfg = load(common)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir.clone());
    let resolved = cfg.resolve()?;
    let result = transport::run(&resolved.initial, &resolved.settings)?;
    let summary = artifacts::write_run(&dir, &resolved, &result)?;
    print_json(&summary)?;
    Ok(Outcome::Pass)
}

fn constant_scan(cfg: &RunConfig, count: usize) -> Result<barrier::RatioScan> {
    let params = cfg.model_params()?;
    let spec = cfg.quadrature_spec()?;
    let scan = ScanSpec {
        count,
        ..ScanSpec::default()
    };
    Ok(barrier::compute_c(params.gamma, params.p, &scan, &spec)?)
}

fn barrier_check(common: &Common) -> Result<Outcome> {
    let cfg = load(common)?;
    let params = cfg.model_params()?;
    let spec = cfg.quadrature_spec()?;
    let scan = constant_scan(&cfg, ScanSpec::default().count)?;
    let c0 = cfg.barrier.c0.unwrap_or(0.5 * scan.c_estimate);
    let b = Barrier::new(cfg.barrier.a0, c0, params.p)?;
    let report = barrier::check_supersolution(&b, params.gamma, params.p, &barrier::default_t_samples(&b), &scan.z_grid, &spec)?;
    print_json(&json!({
        "c_estimate": scan.c_estimate,
        "report": report,
    }))?;
    Ok(Outcome::from_pass(report.passed))
}

fn compute_constant(common: &Common, count: usize) -> Result<Outcome> {
    let cfg = load(common)?;
    let scan = constant_scan(&cfg, count)?;
    print_json(&json!({
        "gamma": scan.gamma,
        "p": scan.p,
        "c_estimate": scan.c_estimate,
        "limit_zero": scan.limit_zero,
        "limit_infinity": scan.limit_infinity,
    }))?;
    Ok(Outcome::Pass)
}

/// `φ(a,·)` sampled on the config's node layout.
pub fn barrier_profile(a: f64, p: f64, cfg: &RunConfig) -> Result<OddProfile> {
    let nodes = model::graded_nodes(cfg.n_particles - 1, cfg.x_max, cfg.grading_power);
    let tail = TailLaw {
        coefficient: 1.0,
        exponent: p,
        shift: a,
        offset: -a.powf(p),
    };
    Ok(OddProfile::sample(nodes, |x| barrier::phi_value(a, p, x), |x| barrier::phi_x(a, p, x), tail)?)
}

fn convergence(common: &Common, xs: &[f64], eps: &[f64]) -> Result<Outcome> {
    let cfg = load(common)?;
    let params = cfg.model_params()?;
    let spec = cfg.quadrature_spec()?;
    let omega = barrier_profile(cfg.barrier.a0, params.p, &cfg)?;
    let report = verification::verify_regularization_convergence(&omega, xs, eps, params.gamma, params.p, &spec)?;
    print_json(&report)?;
    Ok(Outcome::from_pass(report.passed()))
}

fn norms(common: &Common, n: usize) -> Result<Outcome> {
    let cfg = load(common)?;
    let params = cfg.model_params()?;
    let spec = cfg.quadrature_spec()?;
    let grid = NormGrid {
        n,
        x_max: cfg.x_max,
        grading_power: cfg.grading_power,
    };
    let report = verification::verify_velocity_bounds(&verification::default_test_family(), params.q, params.gamma, grid, &spec)?;
    print_json(&report)?;
    Ok(Outcome::from_pass(report.passed()))
}

#[derive(Debug, Serialize)]
struct Skipped {
    check: &'static str,
    reason: String,
}

#[derive(Debug, Serialize)]
struct VerifyOutput {
    run_dir: PathBuf,
    passed: bool,
    reports: Vec<VerificationReport>,
    skipped: Vec<Skipped>,
}

fn collect(
    name: &'static str,
    r: std::result::Result<VerificationReport, VerificationError>,
    reports: &mut Vec<VerificationReport>,
    skipped: &mut Vec<Skipped>,
) -> Result<()> {
    match r {
        Ok(rep) => reports.push(rep),
        Err(e @ VerificationError::InsufficientData(_)) => skipped.push(Skipped {
            check: name,
            reason: e.to_string(),
        }),
        Err(e) => return Err(e).with_context(|| format!("{name} failed to run")),
    }
    Ok(())
}

fn verify(run_dir: &Path, out: Option<&Path>) -> Result<Outcome> {
    let stamped = artifacts::read_config(&run_dir.join(artifacts::CONFIG))?;
    let cfg = stamped.config;
    let params = cfg.model_params()?;
    let spec = cfg.quadrature_spec()?;
    let c0 = cfg
        .barrier
        .c0
        .context("config.json lacks barrier.c0; not written by `simulate`")?;
    let b = Barrier::new(cfg.barrier.a0, c0, params.p)?;
    let snapshots = artifacts::read_snapshots(&run_dir.join(artifacts::SNAPSHOTS))?;
    let records = artifacts::read_diagnostics(&run_dir.join(artifacts::DIAGNOSTICS))?;

    let mut reports = Vec::new();
    let mut skipped = Vec::new();
    collect(
        "verify_barrier_dominance",
        verification::verify_barrier_dominance(&snapshots, &b, &params),
        &mut reports,
        &mut skipped,
    )?;
    collect(
        "verify_origin_slope_ode",
        verification::verify_origin_slope_ode(&records, 0.02, Some((&b, params.gamma, &spec))),
        &mut reports,
        &mut skipped,
    )?;
    collect(
        "apriori_monitor",
        verification::apriori_monitor(&snapshots, &params),
        &mut reports,
        &mut skipped,
    )?;
    let passed = reports.iter().all(|r| r.passed());
    let output = VerifyOutput {
        run_dir: run_dir.to_path_buf(),
        passed,
        reports,
        skipped,
    };
    if let Some(path) = out {
        artifacts::write_json(path, &output)?;
    }
    print_json(&output)?;
    Ok(Outcome::from_pass(passed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_subcommand() {
        for args in [
            vec!["alpha-patch", "simulate", "--set", "n_particles=64", "--out", "x"],
            vec!["alpha-patch", "barrier-check"],
            vec!["alpha-patch", "compute-constant", "--count", "50"],
            vec!["alpha-patch", "convergence", "--x", "1", "--x", "2", "--eps", "0.2,0.1,0.05,0.025"],
            vec!["alpha-patch", "norms", "--n", "128"],
            vec!["alpha-patch", "verify", "somewhere"],
        ] {
            Cli::try_parse_from(args.clone()).unwrap_or_else(|e| panic!("{args:?}: {e}"));
        }
    }

    #[test]
    fn convergence_defaults() {
        let cli = Cli::try_parse_from(["alpha-patch", "convergence"]).unwrap();
        match cli.command {
            Command::Convergence { xs, eps, .. } => {
                assert_eq!(xs, vec![1.0]);
                assert_eq!(eps, vec![0.2, 0.1, 0.05, 0.025]);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(main_with_args(["alpha-patch", "frobnicate"]), ExitCode::from(1));
        assert_eq!(main_with_args(["alpha-patch"]), ExitCode::from(1));
    }
}
