//! Command-line front end. Every command writes one JSON document tagged with
//! `schema = "voltreg.<command>/<version>"`; documents are described under `schemas/`.

pub mod scenario;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::central::{solve_and_classify, CentralError, CentralSettings, Classification};
use crate::dualnet::{run_distributed, Channel, PerfectChannel, RunConfig, RunStatus};
use crate::flowgeom::{brute_force_oracle, check_theorem_conditions, OracleSettings};
use crate::netmodel::{load_network_file, NetworkTree};
use crate::simharness::{run_loss_experiment, LossyChannel};
use scenario::{run_scenario, Irradiance, Scenario};

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

impl Toggle {
    fn on(self) -> bool {
        self == Toggle::On
    }
}

#[derive(Debug, Parser)]
#[command(name = "voltreg", version, about = "Loss-minimizing voltage regulation on radial feeders")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Network document (JSON).
    #[arg(long, global = true)]
    pub network: Option<PathBuf>,
    /// Report path; stdout when omitted.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, default_value_t = 300)]
    pub max_iters: usize,
    #[arg(long, global = true)]
    pub delta: Option<f64>,
    #[arg(long, global = true)]
    pub alpha0: Option<f64>,
    /// Message loss probability; `lossexp` accepts a comma-separated list.
    #[arg(long, global = true, value_delimiter = ',')]
    pub loss_prob: Vec<f64>,
    #[arg(long, global = true, value_enum, default_value_t = Toggle::Off)]
    pub enhance_direction: Toggle,
    #[arg(long, global = true, value_enum, default_value_t = Toggle::Off)]
    pub leaf_fix: Toggle,
    #[arg(long, global = true, value_enum, default_value_t = Toggle::On)]
    pub hot_start: Toggle,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sufficient exactness conditions per line and bus.
    Check,
    /// Centralized relaxation and classification.
    Solve,
    /// Distributed dual decomposition.
    Dsolve {
        /// Per-round trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Exhaustive angle-grid search (at most 5 buses).
    Oracle {
        #[arg(long, default_value_t = 2001)]
        grid: usize,
    },
    /// Distributed runs over loss probabilities and consecutive seeds.
    Lossexp {
        #[arg(long, default_value_t = 20)]
        runs: u64,
        /// Per-run table as CSV.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Per-minute replay driven by an irradiance series.
    Scenario {
        /// `minute,scale` file; a synthetic series is generated when omitted.
        #[arg(long)]
        irradiance: Option<PathBuf>,
        /// Length of the synthetic series.
        #[arg(long, default_value_t = 60)]
        minutes: u32,
        /// First minute of the synthetic series.
        #[arg(long, default_value_t = 377)]
        start: u32,
        #[arg(long, num_args = 2, value_names = ["FIRST", "LAST"])]
        horizon: Option<Vec<u32>>,
        #[arg(long, default_value_t = 0.2)]
        pv_fraction: f64,
        #[arg(long, default_value_t = 1.2)]
        reactive_flex: f64,
    },
}

#[derive(Debug, Serialize)]
struct Envelope<'a, T: Serialize> {
    schema: String,
    network: Option<&'a str>,
    report: T,
}

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

fn usage(e: impl std::fmt::Display) -> Failure {
    Failure::Usage(e.to_string())
}

/// Parses `argv` (program name first), runs the command and returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            EXIT_USAGE
        }
        Err(f @ Failure::Numerical(_)) => {
            eprintln!("error: {f}");
            EXIT_NUMERICAL
        }
    }
}

fn run_config(c: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig { max_iters: c.max_iters, ..RunConfig::default() };
    if let Some(d) = c.delta {
        cfg.delta = d;
    }
    if let Some(a) = c.alpha0 {
        cfg.alpha0 = a;
    }
    cfg.enhance_direction = c.enhance_direction.on();
    cfg.leaf_fix = c.leaf_fix.on();
    cfg.hot_start = c.hot_start.on();
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn network(c: &Common) -> Result<NetworkTree, Failure> {
    let path = c.network.as_ref().ok_or_else(|| usage("--network is required"))?;
    load_network_file(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn single_loss(c: &Common) -> Result<f64, Failure> {
    match c.loss_prob.as_slice() {
        [] => Ok(0.0),
        [p] => Ok(*p),
        _ => Err(usage("--loss-prob takes a single value here")),
    }
}

fn channel(c: &Common) -> Result<Box<dyn Channel>, Failure> {
    let p = single_loss(c)?;
    if p == 0.0 {
        return Ok(Box::new(PerfectChannel));
    }
    Ok(Box::new(LossyChannel::new(p, c.seed).map_err(usage)?))
}

fn emit<T: Serialize>(c: &Common, command: &str, net: &NetworkTree, report: T) -> Result<(), Failure> {
    let env = Envelope { schema: format!("voltreg.{command}/{SCHEMA_VERSION}"), network: net.name.as_deref(), report };
    let text = serde_json::to_string_pretty(&env).map_err(usage)? + "\n";
    write_text(c.out.as_deref(), &text)
}

fn write_text(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| usage(format!("{}: {e}", p.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn status_code(s: &RunStatus) -> i32 {
    match s {
        RunStatus::Infeasible { .. } => EXIT_INFEASIBLE,
        RunStatus::NumericalFailure { .. } => EXIT_NUMERICAL,
        RunStatus::Converged | RunStatus::MaxIterations => EXIT_OK,
    }
}

fn execute(cli: &Cli) -> Result<i32, Failure> {
    let c = &cli.common;
    let net = network(c)?;
    match &cli.command {
        Command::Check => {
            emit(c, "check", &net, check_theorem_conditions(&net))?;
            Ok(EXIT_OK)
        }
        Command::Solve => {
            let r = match solve_and_classify(&net, &CentralSettings::default()) {
                Ok(r) => r,
                Err(e @ (CentralError::NumericalFailure { .. } | CentralError::NotPsd(_))) => return Err(Failure::Numerical(e.to_string())),
                Err(e) => return Err(usage(e)),
            };
            let code = match r.classification {
                Classification::Optimal { .. } => EXIT_OK,
                _ => EXIT_INFEASIBLE,
            };
            emit(c, "solve", &net, &r)?;
            Ok(code)
        }
        Command::Dsolve { trace } => {
            let cfg = run_config(c)?;
            let mut ch = channel(c)?;
            let r = run_distributed(&net, &cfg, ch.as_mut()).map_err(usage)?;
            if let Some(path) = trace {
                let mut buf = Vec::new();
                r.write_trace(&mut buf).map_err(usage)?;
                write_text(Some(path), &String::from_utf8_lossy(&buf))?;
            }
            emit(c, "dsolve", &net, &r)?;
            Ok(status_code(&r.status))
        }
        Command::Oracle { grid } => {
            let settings = OracleSettings { grid_points_per_line: *grid, ..OracleSettings::default() };
            let r = brute_force_oracle(&net, &settings).map_err(usage)?;
            let code = if r.feasible { EXIT_OK } else { EXIT_INFEASIBLE };
            emit(c, "oracle", &net, &r)?;
            Ok(code)
        }
        Command::Lossexp { runs, table } => {
            let cfg = run_config(c)?;
            let ps = if c.loss_prob.is_empty() { vec![0.0, 0.1, 0.3] } else { c.loss_prob.clone() };
            let seeds: Vec<u64> = (c.seed..c.seed + runs).collect();
            let e = match run_loss_experiment(&net, &cfg, &ps, &seeds) {
                Ok(e) => e,
                Err(crate::simharness::ExperimentError::Run { p, seed, status }) => {
                    let code = if status.starts_with("Infeasible") { EXIT_INFEASIBLE } else { EXIT_NUMERICAL };
                    eprintln!("error: run p={p} seed={seed}: {status}");
                    return Ok(code);
                }
                Err(err) => return Err(usage(err)),
            };
            if let Some(path) = table {
                let mut buf = Vec::new();
                e.write_table(&mut buf).map_err(usage)?;
                write_text(Some(path), &String::from_utf8_lossy(&buf))?;
            }
            emit(c, "lossexp", &net, &e)?;
            Ok(EXIT_OK)
        }
        Command::Scenario { irradiance, minutes, start, horizon, pv_fraction, reactive_flex } => {
            let cfg = run_config(c)?;
            let series = match irradiance {
                Some(p) => Irradiance::load(p).map_err(usage)?,
                None => Irradiance::synthetic(*start, *minutes, c.seed),
            };
            let mut sc = Scenario::new(net.clone(), series);
            sc.pv_fraction = *pv_fraction;
            sc.reactive_flex = *reactive_flex;
            sc.horizon = horizon.as_ref().map(|h| (h[0], h[1]));
            let mut ch = channel(c)?;
            let rows = run_scenario(&sc, &cfg, ch.as_mut()).map_err(usage)?;
            let code = rows.iter().map(|r| status_code(&r.status)).max().unwrap_or(EXIT_OK);
            emit(c, "scenario", &net, &rows)?;
            Ok(code)
        }
    }
}
