//! Command-line front end: `converge`, `cavity` and `probe` experiments.
//!
//! Settings come from command-line flags, then an optional TOML file given
//! with `--config`, then built-in defaults, in that order of precedence.

use std::ffi::OsString;
use std::fmt;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info};
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::analysis::{convergence_study, fitted_order, pressure_robustness_probe, PolynomialVortex};
use crate::assembly::{BoundaryData, Discretization, FormParams};
use crate::error::{Error, Result};
use crate::io::{format_convergence_csv, format_probe_csv, write_field_dump_file};
use crate::mesh::Mesh;
use crate::solver::{solve_navier_stokes, InitialGuess, Linearization, NonlinearSettings, Problem, SolveReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Eg,
    PrEg,
}

impl Mode {
    pub fn pressure_robust(self) -> bool {
        self == Mode::PrEg
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Eg => "eg",
            Mode::PrEg => "pr-eg",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum LinearizationArg {
    Picard,
    NewtonExperimental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum InitArg {
    Stokes,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Converge,
    Cavity,
    Probe,
}

/// Optional settings shared by the configuration file and the flags.
#[derive(Debug, Clone, Default, PartialEq, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Mesh levels (cells per side) for `converge`
    #[arg(long, value_delimiter = ',')]
    pub levels: Option<Vec<usize>>,
    /// Cells per side for `cavity` and `probe`
    #[arg(long)]
    pub n: Option<usize>,
    /// Viscosity
    #[arg(long)]
    pub mu: Option<f64>,
    /// Viscosity list for `probe`
    #[arg(long, value_delimiter = ',')]
    pub mus: Option<Vec<f64>>,
    /// Interior penalty parameter
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Relative update tolerance of the nonlinear iteration
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long, value_enum)]
    pub linearization: Option<LinearizationArg>,
    #[arg(long, value_enum)]
    pub init: Option<InitArg>,
    /// Sampling points per direction of the `cavity` field dump
    #[arg(long)]
    pub grid: Option<usize>,
    /// Output directory
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

impl Settings {
    /// Fields of `self`, falling back to `lower` where unset.
    pub fn or(self, lower: Settings) -> Settings {
        Settings {
            levels: self.levels.or(lower.levels),
            n: self.n.or(lower.n),
            mu: self.mu.or(lower.mu),
            mus: self.mus.or(lower.mus),
            rho: self.rho.or(lower.rho),
            mode: self.mode.or(lower.mode),
            tol: self.tol.or(lower.tol),
            max_iters: self.max_iters.or(lower.max_iters),
            linearization: self.linearization.or(lower.linearization),
            init: self.init.or(lower.init),
            grid: self.grid.or(lower.grid),
            output: self.output.or(lower.output),
        }
    }

    pub fn from_toml(text: &str) -> Result<Settings> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Settings> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub levels: Vec<usize>,
    pub mu: f64,
    pub mus: Vec<f64>,
    pub rho: f64,
    pub mode: Mode,
    pub nonlinear: NonlinearSettings,
    pub grid: usize,
    pub output: PathBuf,
}

impl RunConfig {
    /// Fills unset values with the defaults of `experiment` and validates.
    pub fn resolve(experiment: Experiment, s: Settings) -> Result<RunConfig> {
        let levels = match experiment {
            Experiment::Converge => s.levels.unwrap_or_else(|| vec![4, 8, 16, 32, 64]),
            Experiment::Cavity => vec![s.n.unwrap_or(32)],
            Experiment::Probe => vec![s.n.unwrap_or(16)],
        };
        let default_init = match experiment {
            Experiment::Cavity => InitArg::Stokes,
            _ => InitArg::Zero,
        };
        let cfg = RunConfig {
            experiment,
            levels,
            mu: s.mu.unwrap_or(1.0),
            mus: s.mus.unwrap_or_else(|| vec![1.0, 1e-2, 1e-4]),
            rho: s.rho.unwrap_or(10.0),
            mode: s.mode.unwrap_or(Mode::PrEg),
            nonlinear: NonlinearSettings {
                tol: s.tol.unwrap_or(1e-10),
                max_iters: s.max_iters.unwrap_or(20),
                linearization: match s.linearization.unwrap_or(LinearizationArg::Picard) {
                    LinearizationArg::Picard => Linearization::Picard,
                    LinearizationArg::NewtonExperimental => Linearization::NewtonExperimental,
                },
                init: match s.init.unwrap_or(default_init) {
                    InitArg::Stokes => InitialGuess::Stokes,
                    InitArg::Zero => InitialGuess::Zero,
                },
            },
            grid: s.grid.unwrap_or(101),
            output: s.output.unwrap_or_else(|| PathBuf::from(".")),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.levels.is_empty() {
            return bad("no mesh levels given".into());
        }
        if self.levels.contains(&0) {
            return bad("mesh levels must be positive".into());
        }
        if !(self.mu > 0.0) {
            return bad(format!("mu must be positive, got {}", self.mu));
        }
        if !(self.rho > 0.0) {
            return bad(format!("rho must be positive, got {}", self.rho));
        }
        if self.grid == 0 {
            return bad("grid must be positive".into());
        }
        if self.experiment == Experiment::Probe {
            if self.mus.iter().any(|&m| !(m > 0.0)) || self.mus.is_empty() {
                return bad(format!("viscosities must be positive: {:?}", self.mus));
            }
            let hi = self.mus.iter().cloned().fold(f64::MIN, f64::max);
            let lo = self.mus.iter().cloned().fold(f64::MAX, f64::min);
            if hi / lo < 1e3 * (1.0 - 1e-12) {
                return bad(format!("viscosities must span at least three decades: {:?}", self.mus));
            }
        }
        self.nonlinear.validate()
    }

    pub fn params(&self, mu: f64) -> Result<FormParams> {
        FormParams::new(mu, self.rho, self.mode.pressure_robust())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "egns",
    version,
    about = "Enriched Galerkin solver for the stationary Navier-Stokes equations",
    arg_required_else_help = true
)]
pub struct Cli {
    /// TOML file with default settings
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mesh refinement study for the polynomial vortex
    Converge(Settings),
    /// Lid-driven cavity with a sampled field dump
    Cavity(Settings),
    /// Viscosity sweep comparing EG and PR-EG velocity errors
    Probe(Settings),
}

/// Failure of a run, mapped to the process exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Solver(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Solver(_) => 1,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(_) | Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Solver(e.to_string()),
        }
    }
}

/// Parses `args` (program name first), runs the experiment and returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
            0
        }
        Err(f) => {
            match &f {
                Failure::Usage(m) => eprintln!("error: {m}"),
                Failure::Solver(m) => eprintln!("solver failure: {m}"),
            }
            f.exit_code()
        }
    }
}

pub fn resolve(cli: &Cli) -> std::result::Result<RunConfig, Failure> {
    let file = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    let (experiment, flags) = match &cli.command {
        Command::Converge(s) => (Experiment::Converge, s.clone()),
        Command::Cavity(s) => (Experiment::Cavity, s.clone()),
        Command::Probe(s) => (Experiment::Probe, s.clone()),
    };
    Ok(RunConfig::resolve(experiment, flags.or(file))?)
}

/// Runs the experiment; returns the written files.
pub fn execute(cli: Cli) -> std::result::Result<Vec<PathBuf>, Failure> {
    let cfg = resolve(&cli)?;
    std::fs::create_dir_all(&cfg.output).map_err(Error::from)?;
    match cfg.experiment {
        Experiment::Converge => run_converge(&cfg),
        Experiment::Cavity => run_cavity(&cfg),
        Experiment::Probe => run_probe(&cfg),
    }
}

fn run_converge(cfg: &RunConfig) -> std::result::Result<Vec<PathBuf>, Failure> {
    let rows = convergence_study(&cfg.levels, cfg.params(cfg.mu)?, &cfg.nonlinear, &PolynomialVortex)?;
    let path = cfg.output.join(format!("convergence_{}.csv", cfg.mode));
    std::fs::write(&path, format_convergence_csv(&rows)).map_err(Error::from)?;
    println!("{:>6} {:>12} {:>6} {:>12} {:>6} {:>12} {:>6}  status", "n", "energy", "eoc", "l2 u", "eoc", "l2 p", "eoc");
    let f = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.2}"));
    for r in &rows {
        println!(
            "{:>6} {:>12.4e} {:>6} {:>12.4e} {:>6} {:>12.4e} {:>6}  {}",
            r.n,
            r.errors.energy,
            f(r.energy_eoc),
            r.errors.l2_velocity,
            f(r.l2u_eoc),
            r.errors.l2_pressure,
            f(r.l2p_eoc),
            r.status
        );
    }
    if rows.len() >= 3 {
        let tail = &rows[rows.len() - 3..];
        let h: Vec<f64> = tail.iter().map(|r| r.h).collect();
        let fit = |g: fn(&crate::analysis::ErrorNorms) -> f64| {
            fitted_order(&h, &tail.iter().map(|r| g(&r.errors)).collect::<Vec<_>>())
        };
        println!(
            "fitted orders over the last three levels: energy {:.3}, l2 u {:.3}, l2 p {:.3}",
            fit(|e| e.energy),
            fit(|e| e.l2_velocity),
            fit(|e| e.l2_pressure)
        );
    }
    if let Some(bad) = rows.iter().find(|r| !r.status.is_ok()) {
        return Err(Failure::Solver(format!(
            "level n = {} did not converge ({}); table written to {}",
            bad.n,
            bad.status,
            path.display()
        )));
    }
    Ok(vec![path])
}

#[derive(Debug, Serialize)]
struct CavityReport<'a> {
    config: &'a RunConfig,
    /// How the lid data meets the side walls.
    corner_convention: &'static str,
    solve: &'a SolveReport,
}

const CORNER_CONVENTION: &str = "the two top corner vertices carry the lid velocity (1, 0)";

fn run_cavity(cfg: &RunConfig) -> std::result::Result<Vec<PathBuf>, Failure> {
    let n = cfg.levels[0];
    let disc = Discretization::new(Mesh::unit_square(n)?);
    let params = cfg.params(cfg.mu)?;
    let zero = |_| Vector2::zeros();
    let problem = Problem {
        forcing: &zero,
        boundary: BoundaryData::lid(&disc.mesh),
    };
    let stem = format!("cavity_{}_n{n}", cfg.mode);
    let report_path = cfg.output.join(format!("{stem}_report.json"));
    let write_report = |report: &SolveReport| -> Result<()> {
        let doc = CavityReport {
            config: cfg,
            corner_convention: CORNER_CONVENTION,
            solve: report,
        };
        let text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(&report_path, text)?;
        Ok(())
    };
    let sol = match solve_navier_stokes(&disc, params, &cfg.nonlinear, &problem) {
        Ok(sol) => sol,
        Err(Error::Diverged { report }) => {
            write_report(&report)?;
            error!("cavity iteration diverged");
            return Err(Failure::Solver(format!("iteration diverged; report at {}", report_path.display())));
        }
        Err(e) => return Err(e.into()),
    };
    write_report(&sol.report)?;
    let field_path = cfg.output.join(format!("{stem}.txt"));
    write_field_dump_file(&disc.mesh, &sol.velocity, &sol.pressure, cfg.grid, cfg.grid, &field_path)?;
    info!("cavity: {} iterations, converged = {}", sol.report.iterations, sol.report.converged);
    if !sol.report.converged {
        return Err(Failure::Solver(format!(
            "no convergence in {} iterations; report at {}",
            sol.report.iterations,
            report_path.display()
        )));
    }
    Ok(vec![field_path, report_path])
}

fn run_probe(cfg: &RunConfig) -> std::result::Result<Vec<PathBuf>, Failure> {
    let n = cfg.levels[0];
    let rows = pressure_robustness_probe(n, &cfg.mus, cfg.rho, &cfg.nonlinear, &PolynomialVortex)?;
    let path = cfg.output.join(format!("probe_n{n}.csv"));
    let text = format_probe_csv(&rows);
    std::fs::write(&path, &text).map_err(Error::from)?;
    print!("{text}");
    Ok(vec![path])
}
