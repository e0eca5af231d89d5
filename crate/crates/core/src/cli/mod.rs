//! Command-line front end.
//!
//! Exit codes: 0 success, 1 audit failure, 2 solver failure, 3 configuration
//! or parse error.

pub mod scenario;
pub mod trajectory_io;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::{audit_trajectory, cross_validate_formulations, entropy_rate_check, AuditReport};
use crate::integrate::{convergence_study, integrate, integrate_rk4, Method, Trajectory};
use crate::liealg::{so3_preset, AlgebraInnerProduct};

pub use scenario::{load_scenario, Scenario};
pub use trajectory_io::{read_trajectory, read_trajectory_file, write_trajectory, write_trajectory_file};

pub const EXIT_OK: i32 = 0;
pub const EXIT_AUDIT: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

/// Samples used when cross-validating the rigid body formulations in `check`.
const CROSS_VALIDATION_SAMPLES: usize = 100;

#[derive(Debug, Parser)]
#[command(name = "metriplectic", version, about = "Structure-preserving integration of metriplectic systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate a scenario and write the trajectory as CSV.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// `metriplectic` or `rk4`.
        #[arg(long, default_value = "metriplectic")]
        integrator: String,
        /// Overrides the scenario's step count.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Audit a trajectory (integrating the scenario if none is given) and print the report.
    Check {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        traj: Option<PathBuf>,
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate the order of convergence from runs at several step sizes.
    Converge {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        h_list: Vec<f64>,
        #[arg(long, default_value_t = 10.0)]
        t_final: f64,
        #[arg(long, default_value = "metriplectic")]
        integrator: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a grid of step sizes, schemes and K_d variants and print a summary.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Outcome of a command that produced output but may still signal failure.
struct Finished {
    code: i32,
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::SolverFailure { .. } => EXIT_SOLVER,
        _ => EXIT_CONFIG,
    }
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let shown = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{shown}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{shown}");
                    EXIT_CONFIG
                }
            };
        }
    };
    let result = match cli.command {
        Command::Run {
            scenario,
            out,
            integrator,
            steps,
        } => run_command(&scenario, &out, &integrator, steps, stderr),
        Command::Check { scenario, traj, out } => check_command(&scenario, traj.as_deref(), out.as_deref(), stdout),
        Command::Converge {
            scenario,
            h_list,
            t_final,
            integrator,
            out,
        } => converge_command(&scenario, &h_list, t_final, &integrator, out.as_deref(), stdout),
        Command::Sweep { scenario, grid, out } => sweep_command(&scenario, &grid, out.as_deref(), stdout),
    };
    match result {
        Ok(f) => f.code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

fn emit(text: &str, out: Option<&Path>, stdout: &mut dyn Write) -> Result<()> {
    writeln!(stdout, "{text}")?;
    if let Some(path) = out {
        std::fs::write(path, format!("{text}\n"))?;
    }
    Ok(())
}

fn run_command(
    scenario_path: &Path,
    out: &Path,
    integrator: &str,
    steps: Option<usize>,
    stderr: &mut dyn Write,
) -> Result<Finished> {
    let scenario = load_scenario(scenario_path)?;
    let method: Method = integrator.parse()?;
    let system = scenario.system()?;
    let config = scenario.config()?;
    let n_steps = steps.unwrap_or(scenario.n_steps);
    let x0 = scenario.initial_state();
    let (mut traj, failure) = match method {
        Method::Metriplectic => match integrate(&system, &config, &x0, n_steps) {
            Ok(t) => (t, None),
            Err(f) => (*f.partial, Some(f.source)),
        },
        Method::Rk4 => (integrate_rk4(&system, &config, &x0, n_steps)?, None),
    };
    traj.scenario_id = scenario.id.clone();
    write_trajectory_file(&traj, out)?;
    match failure {
        None => Ok(Finished { code: EXIT_OK }),
        Some(e) => {
            writeln!(
                stderr,
                "error: {e}; wrote {} records to {} (truncated)",
                traj.records.len(),
                out.display()
            )?;
            Ok(Finished { code: exit_code(&e) })
        }
    }
}

/// All audits that apply to a scenario's trajectory.
pub fn audit_scenario(scenario: &Scenario, traj: &Trajectory) -> Result<AuditReport> {
    let system = scenario.system()?;
    let mut report = AuditReport::new(Some(scenario.seed));
    report.merge(audit_trajectory(traj, &system, &[])?);
    report.merge(entropy_rate_check(traj, &system)?);
    if let Some(inertia) = scenario.rigid_body_inertia() {
        let preset = so3_preset(inertia)?;
        report.merge(cross_validate_formulations(
            &preset.structure,
            &preset.lagrangian,
            &AlgebraInnerProduct::identity(3),
            CROSS_VALIDATION_SAMPLES,
            scenario.seed,
        )?);
    }
    Ok(report)
}

fn check_command(
    scenario_path: &Path,
    traj_path: Option<&Path>,
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<Finished> {
    let scenario = load_scenario(scenario_path)?;
    let config = scenario.config()?;
    let traj = match traj_path {
        Some(p) => read_trajectory_file(p, config)?,
        None => integrate(&scenario.system()?, &config, &scenario.initial_state(), scenario.n_steps)
            .map_err(|f| f.source)?,
    };
    let report = audit_scenario(&scenario, &traj)?;
    emit(&report.to_json(), out, stdout)?;
    Ok(Finished {
        code: if report.passed { EXIT_OK } else { EXIT_AUDIT },
    })
}

fn converge_command(
    scenario_path: &Path,
    h_list: &[f64],
    t_final: f64,
    integrator: &str,
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<Finished> {
    let scenario = load_scenario(scenario_path)?;
    let method: Method = integrator.parse()?;
    let report = convergence_study(
        &scenario.system()?,
        &scenario.config()?,
        &scenario.initial_state(),
        t_final,
        h_list,
        method,
    )?;
    let json = serde_json::to_string_pretty(&report).expect("convergence report serializes");
    emit(&json, out, stdout)?;
    Ok(Finished { code: EXIT_OK })
}

/// Sweep grid file: lists of values combined as a Cartesian product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub step_h: Vec<f64>,
    #[serde(default)]
    pub scheme: Vec<String>,
    #[serde(default)]
    pub kd_variant: Vec<String>,
    /// Integration horizon; the scenario's step count is used when absent.
    #[serde(default)]
    pub t_final: Option<f64>,
}

impl SweepGrid {
    pub fn parse(text: &str) -> Result<Self> {
        let grid: SweepGrid = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if grid.step_h.is_empty() {
            return Err(Error::config("sweep grid needs at least one step size"));
        }
        Ok(grid)
    }

    /// Scenarios for each grid cell, step size varying slowest.
    pub fn cells(&self, base: &Scenario) -> Result<Vec<Scenario>> {
        let schemes = if self.scheme.is_empty() { vec![base.scheme.clone()] } else { self.scheme.clone() };
        let variants = if self.kd_variant.is_empty() {
            vec![base.kd_variant.clone()]
        } else {
            self.kd_variant.clone()
        };
        let mut cells = Vec::new();
        for &h in &self.step_h {
            for scheme in &schemes {
                for kd in &variants {
                    let mut s = base.clone();
                    s.step_h = h;
                    s.scheme = scheme.clone();
                    s.kd_variant = kd.clone();
                    if let Some(t) = self.t_final {
                        if t.is_nan() || t <= 0.0 {
                            return Err(Error::config("sweep t_final must be positive"));
                        }
                        s.n_steps = (t / h).round() as usize;
                    }
                    s.config()?;
                    cells.push(s);
                }
            }
        }
        Ok(cells)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepCell {
    pub index: usize,
    pub step_h: f64,
    pub scheme: String,
    pub kd_variant: String,
    pub n_steps: usize,
    pub completed_steps: usize,
    pub solver_failure: Option<String>,
    pub energy_drift: f64,
    pub entropy_deficit: f64,
    pub final_entropy: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub scenario: String,
    pub cells: Vec<SweepCell>,
}

fn sweep_cell(index: usize, scenario: &Scenario) -> Result<SweepCell> {
    let system = scenario.system()?;
    let config = scenario.config()?;
    let (traj, failure) = match integrate(&system, &config, &scenario.initial_state(), scenario.n_steps) {
        Ok(t) => (t, None),
        Err(f) => (*f.partial, Some(f.source.to_string())),
    };
    let audit = audit_trajectory(&traj, &system, &[])?;
    let residual = |name: &str| audit.check(name).map_or(f64::NAN, |c| c.max_residual);
    Ok(SweepCell {
        index,
        step_h: scenario.step_h,
        scheme: scenario.scheme.clone(),
        kd_variant: scenario.kd_variant.clone(),
        n_steps: scenario.n_steps,
        completed_steps: traj.records.len() - 1,
        passed: audit.passed && failure.is_none(),
        solver_failure: failure,
        energy_drift: residual("energy-drift"),
        entropy_deficit: residual("entropy-monotonicity"),
        final_entropy: traj.records.last().map_or(f64::NAN, |r| r.entropy),
    })
}

/// Runs every grid cell in parallel; cells are reported in grid order.
pub fn sweep(base: &Scenario, grid: &SweepGrid) -> Result<SweepReport> {
    let cells = grid.cells(base)?;
    let mut results = cells
        .par_iter()
        .enumerate()
        .map(|(i, s)| sweep_cell(i, s))
        .collect::<Result<Vec<_>>>()?;
    results.sort_by_key(|c| c.index);
    Ok(SweepReport {
        scenario: base.id.clone(),
        cells: results,
    })
}

fn sweep_command(
    scenario_path: &Path,
    grid_path: &Path,
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<Finished> {
    let scenario = load_scenario(scenario_path)?;
    let text = std::fs::read_to_string(grid_path)
        .map_err(|e| Error::Config(format!("cannot read grid {}: {e}", grid_path.display())))?;
    let grid = SweepGrid::parse(&text)?;
    let report = sweep(&scenario, &grid)?;
    let json = serde_json::to_string_pretty(&report).expect("sweep report serializes");
    emit(&json, out, stdout)?;
    let code = if report.cells.iter().any(|c| c.solver_failure.is_some()) {
        EXIT_SOLVER
    } else if report.cells.iter().any(|c| !c.passed) {
        EXIT_AUDIT
    } else {
        EXIT_OK
    };
    Ok(Finished { code })
}
