//! Command-line interface: `run`, `sweep-report`, `score`, `inspect-checkpoint`.

pub mod experiment;
pub mod report;

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use experiment::{cmd_run, ExperimentSpec, RunConfig, RunOptions};
pub use report::{build_report, SweepReport};

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::metrics::batch;

#[derive(Debug, Parser)]
#[command(name = "fedsim", version, about = "Federated SimAgg / DP-SimAgg simulator and segmentation scorer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every configuration and seed of an experiment spec.
    Run {
        /// Experiment spec (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Output directory (overrides `out` in the spec).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace existing output.
        #[arg(long)]
        force: bool,
        /// Run a single seed instead of the spec's seed list.
        #[arg(long)]
        seed: Option<u64>,
        /// Execute sub-runs in parallel.
        #[arg(long)]
        parallel: bool,
    },
    /// Summarize run directories into a final-metrics table and a per-round CSV.
    SweepReport {
        /// Run directories or experiment roots.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        /// Directory for final_metrics.csv and convergence.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score SEGVOL prediction/reference pairs listed in a manifest CSV.
    Score {
        /// Manifest with columns pred_path,ref_path,case_id.
        manifest: PathBuf,
        /// Output CSV (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the layout and summary statistics of a checkpoint.
    InspectCheckpoint { path: PathBuf },
}

/// Runs a parsed command. `Ok(code)` carries a non-zero exit status for
/// commands that finish but recorded per-item errors.
pub fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run {
            config,
            out,
            force,
            seed,
            parallel,
        } => {
            let (root, dirs) = cmd_run(
                &config,
                &RunOptions {
                    out,
                    force,
                    seed,
                    parallel,
                },
            )?;
            println!("wrote {} run(s) under {}", dirs.len(), root.display());
            Ok(0)
        }
        Command::SweepReport { runs, out } => {
            let report = build_report(&runs)?;
            report.write(&out)?;
            print!("{}", report.render_table());
            Ok(0)
        }
        Command::Score { manifest, out } => cmd_score(&manifest, out.as_deref()),
        Command::InspectCheckpoint { path } => {
            print!("{}", inspect_checkpoint(&path)?);
            Ok(0)
        }
    }
}

/// Scores a manifest. Cases that fail are reported on stderr and skipped;
/// the returned status is then the first failure's exit code.
pub fn cmd_score(manifest: &Path, out: Option<&Path>) -> Result<i32> {
    let report = batch::score_manifest(manifest)?;
    match out {
        Some(path) => {
            let file = File::create(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
            batch::write_csv(&report.rows, file)?;
        }
        None => batch::write_csv(&report.rows, io::stdout().lock())?,
    }
    let mut stderr = io::stderr().lock();
    for (case, err) in &report.failures {
        let _ = writeln!(stderr, "error[{}]: case {case}: {err}", err.name());
    }
    Ok(report.failures.first().map_or(0, |(_, e)| e.exit_code()))
}

pub fn inspect_checkpoint(path: &Path) -> Result<String> {
    let params = checkpoint::load(path)?;
    let mut out = format!(
        "{}: {} group(s), {} value(s)\n",
        path.display(),
        params.num_groups(),
        params.total_len()
    );
    for (name, values) in params.groups() {
        let n = values.len();
        if n == 0 {
            out.push_str(&format!("  {name}: 0 values\n"));
            continue;
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = values.iter().sum::<f64>() / n as f64;
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        out.push_str(&format!(
            "  {name}: {n} values, min {min:.6}, max {max:.6}, mean {mean:.6}, l2 {norm:.6}\n"
        ));
    }
    Ok(out)
}
