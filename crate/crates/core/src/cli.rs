//! Command-line front end.
//!
//! Exit codes: 0 success (or Converged), 1 error or failed check,
//! 2 Timeout, 3 SafetyViolation, 64 usage error.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gradcheck::{check_gradient, DEFAULT_STEP};
use crate::io::trajectory::DEFAULT_STRIDE;
use crate::io::{
    emit_trajectory, parse_scenario, plot_svg, read_trajectory, PlotContext, PlotMode,
};
use crate::sim::{run, RunOutcome, RunStatus, Scenario};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_TIMEOUT: i32 = 2;
pub const EXIT_SAFETY: i32 = 3;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "coord-sim",
    version,
    about = "Barrier-function coordination of bicycle-model vehicles"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a scenario and write trajectory.csv and summary.toml.
    Run {
        scenario: PathBuf,
        /// Output directory, created if missing.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        /// Record every N-th step.
        #[arg(long, default_value_t = DEFAULT_STRIDE as u64, value_parser = clap::value_parser!(u64).range(1..))]
        stride: u64,
    },
    /// Parse and validate a scenario file.
    Validate { scenario: PathBuf },
    /// Compare the analytic barrier gradient with central differences.
    GradCheck {
        scenario: PathBuf,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Largest acceptable relative error.
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
    },
    /// Render a trajectory CSV as an SVG figure.
    Plot {
        csv: PathBuf,
        #[arg(long, value_enum)]
        mode: PlotMode,
        /// Snapshot times for trajectories mode.
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        times: Vec<f64>,
        /// Scenario that produced the CSV; supplies the world disc and destinations.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Output file; defaults to `<csv stem>_<mode>.svg` next to the CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Serialize)]
struct SummaryFile<'a> {
    status: &'a str,
    t: Option<f64>,
    steps: usize,
    min_pairwise_distance: f64,
    max_center_distance: f64,
    /// Smallest displacement of any unfinished agent over one stall window.
    min_window_displacement: Option<f64>,
    detail: Option<String>,
    diagnostics: &'a crate::sim::Diagnostics,
}

/// Parses `argv` (including the program name) and runs the command.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FAILURE
        }
    }
}

fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Run {
            scenario,
            out,
            stride,
        } => {
            let sc = load_scenario(&scenario)?;
            let outcome = run(&sc);
            std::fs::create_dir_all(&out)
                .map_err(|e| Error::Io(format!("{}: {e}", out.display())))?;
            atomic_write(
                &out.join("trajectory.csv"),
                &emit_trajectory(&outcome, stride as usize)?,
            )?;
            atomic_write(&out.join("summary.toml"), &summary_text(&outcome)?)?;
            println!("{}", status_line(&outcome));
            Ok(match outcome.status {
                RunStatus::Converged { .. } => EXIT_OK,
                RunStatus::Timeout => EXIT_TIMEOUT,
                RunStatus::SafetyViolation { .. } => EXIT_SAFETY,
                RunStatus::Aborted { .. } => EXIT_FAILURE,
            })
        }
        Command::Validate { scenario } => match load_scenario(&scenario) {
            Ok(sc) => {
                println!(
                    "ok: {} agents ({} controllable)",
                    sc.agents.len(),
                    sc.controllable().count()
                );
                Ok(EXIT_OK)
            }
            Err(e) => {
                eprintln!("invalid: {e}");
                Ok(EXIT_FAILURE)
            }
        },
        Command::GradCheck {
            scenario,
            samples,
            tol,
        } => {
            let sc = load_scenario(&scenario)?;
            let report = check_gradient(&sc.world, &sc.barrier, samples, sc.seed, DEFAULT_STEP)?;
            println!(
                "samples {} (blend zone {}), max relative error {:.3e}, tolerance {:.1e}",
                report.samples, report.blend_zone_samples, report.max_relative_error, tol
            );
            Ok(if report.max_relative_error <= tol {
                EXIT_OK
            } else {
                EXIT_FAILURE
            })
        }
        Command::Plot {
            csv,
            mode,
            times,
            scenario,
            out,
        } => {
            let text = std::fs::read_to_string(&csv)
                .map_err(|e| Error::Io(format!("{}: {e}", csv.display())))?;
            let rows = read_trajectory(&text)?;
            let ctx = match scenario {
                Some(path) => {
                    let sc = load_scenario(&path)?;
                    PlotContext {
                        world: Some(sc.world),
                        body_radius: Some(sc.vehicle.body_radius),
                        destinations: sc
                            .agents
                            .iter()
                            .filter_map(|a| a.destination.map(|d| (a.id, d)))
                            .collect(),
                    }
                }
                None => PlotContext::from_rows(&rows),
            };
            let target = out.unwrap_or_else(|| default_plot_path(&csv, mode));
            atomic_write(&target, &plot_svg(&rows, &ctx, mode, &times))?;
            println!("wrote {}", target.display());
            Ok(EXIT_OK)
        }
    }
}

fn load_scenario(path: &Path) -> Result<Scenario> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_scenario(&text)
}

fn default_plot_path(csv: &Path, mode: PlotMode) -> PathBuf {
    let stem = csv
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("trajectory");
    let mode = match mode {
        PlotMode::Trajectories => "trajectories",
        PlotMode::DistanceToDest => "distance_to_dest",
        PlotMode::InterAgentDistances => "inter_agent_distances",
    };
    csv.with_file_name(format!("{stem}_{mode}.svg"))
}

/// Writes through a temporary file in the target directory, then renames.
pub fn atomic_write(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let io = |e: std::io::Error| Error::Io(format!("{}: {e}", path.display()));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(contents.as_bytes()).map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

fn status_line(outcome: &RunOutcome) -> String {
    let tail = format!(
        "min pair {:.4} m, max centre {:.4} m",
        outcome.min_pairwise_distance(),
        outcome.max_center_distance()
    );
    match &outcome.status {
        RunStatus::Converged { t } => format!("converged at t = {t} s; {tail}"),
        RunStatus::Timeout => format!("timeout; {tail}"),
        RunStatus::SafetyViolation { t, violations } => {
            format!("safety violation at t = {t} s: {violations:?}; {tail}")
        }
        RunStatus::Aborted { t, agent, reason } => {
            format!("aborted at t = {t} s, agent {agent}: {reason}")
        }
    }
}

fn summary_text(outcome: &RunOutcome) -> Result<String> {
    let (status, t, detail) = match &outcome.status {
        RunStatus::Converged { t } => ("converged", Some(*t), None),
        RunStatus::Timeout => ("timeout", None, None),
        RunStatus::SafetyViolation { t, violations } => (
            "safety_violation",
            Some(*t),
            Some(format!("{violations:?}")),
        ),
        RunStatus::Aborted { t, agent, reason } => (
            "aborted",
            Some(*t),
            Some(format!("agent {agent}: {reason}")),
        ),
    };
    let file = SummaryFile {
        status,
        t,
        steps: outcome.trajectory.len(),
        min_pairwise_distance: outcome.min_pairwise_distance(),
        max_center_distance: outcome.max_center_distance(),
        min_window_displacement: outcome
            .summary
            .min_window_displacement
            .values()
            .copied()
            .reduce(f64::min),
        detail,
        diagnostics: &outcome.summary.diagnostics,
    };
    toml::to_string(&file).map_err(|e| Error::Io(format!("cannot encode summary: {e}")))
}
