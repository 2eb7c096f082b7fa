//! Experiment specs and the `run` subcommand.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::rundir::RunWriter;
use crate::federation::synthetic::{SyntheticTask, SyntheticTaskConfig};
use crate::federation::{resume_federation, Aggregator, FederationConfig, FederationState};

pub const EXPERIMENT_FILE: &str = "experiment.toml";
pub const RUN_MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Output directory; `--out` overrides it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub seeds: Vec<u64>,
    /// Privacy budgets swept when the aggregator is `dp_simagg`.
    pub epsilons: Vec<f64>,
    /// Add a no-DP SimAgg run next to the epsilon sweep.
    pub include_baseline: bool,
    pub parallel: bool,
    pub federation: FederationConfig,
    pub task: SyntheticTaskConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            out: None,
            seeds: vec![0],
            epsilons: vec![0.1, 1.0, 10.0],
            include_baseline: true,
            parallel: false,
            federation: FederationConfig::default(),
            task: SyntheticTaskConfig::default(),
        }
    }
}

/// Fully resolved configuration of one sub-run, stored as its `config.toml`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub label: String,
    pub seed: u64,
    pub federation: FederationConfig,
    pub task: SyntheticTaskConfig,
}

impl RunConfig {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_toml(path: &Path, text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigParseError {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

/// A sub-run and the directory (relative to the experiment root) it writes to.
#[derive(Clone, Debug, PartialEq)]
pub struct PlannedRun {
    pub relative_dir: PathBuf,
    pub config: RunConfig,
}

impl ExperimentSpec {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::ConfigParseError {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(path, &text)
    }

    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigParseError {
            path: path.to_path_buf(),
            message: e.message().to_string(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seeds must not be empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::InvalidConfig("seeds must be distinct".into()));
        }
        if self.federation.aggregator == Aggregator::DpSimagg {
            if self.epsilons.is_empty() {
                return Err(Error::InvalidConfig("epsilons must not be empty for dp_simagg".into()));
            }
            if let Some(e) = self.epsilons.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
                return Err(Error::InvalidBudget(format!("sweep epsilon must be positive, got {e}")));
            }
        }
        Ok(())
    }

    /// Every (configuration, seed) sub-run, in a fixed order.
    pub fn plan(&self) -> Result<Vec<PlannedRun>> {
        self.validate()?;
        let mut variants: Vec<(String, String, FederationConfig)> = Vec::new();
        match self.federation.aggregator {
            Aggregator::DpSimagg => {
                for &eps in &self.epsilons {
                    let mut fed = self.federation.clone();
                    fed.privacy.epsilon = eps;
                    variants.push((format!("DP-SimAgg (ε={eps})"), format!("dp_simagg_eps{eps}"), fed));
                }
                if self.include_baseline {
                    let fed = FederationConfig {
                        aggregator: Aggregator::Simagg,
                        ..self.federation.clone()
                    };
                    variants.push(("SimAgg".into(), "simagg".into(), fed));
                }
            }
            Aggregator::Simagg => variants.push(("SimAgg".into(), "simagg".into(), self.federation.clone())),
            Aggregator::Fedavg => variants.push(("FedAvg".into(), "fedavg".into(), self.federation.clone())),
        }

        let mut runs = Vec::new();
        for (label, dir, fed) in variants {
            for &seed in &self.seeds {
                let mut federation = fed.clone();
                federation.sampling_seed = seed;
                federation.privacy.seed = seed;
                federation.validate()?;
                let task = SyntheticTaskConfig {
                    n_collaborators: federation.n_collaborators,
                    seed,
                    ..self.task.clone()
                };
                task.validate()?;
                runs.push(PlannedRun {
                    relative_dir: PathBuf::from(&dir).join(format!("seed_{seed}")),
                    config: RunConfig {
                        label: label.clone(),
                        seed,
                        federation,
                        task,
                    },
                });
            }
        }
        Ok(runs)
    }
}

#[derive(Debug)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub force: bool,
    pub seed: Option<u64>,
    pub parallel: bool,
}

/// Executes every sub-run of the spec at `spec_path`. Returns the experiment
/// root and the sub-run directories.
pub fn cmd_run(spec_path: &Path, opts: &RunOptions) -> Result<(PathBuf, Vec<PathBuf>)> {
    let mut spec = ExperimentSpec::load(spec_path)?;
    if let Some(seed) = opts.seed {
        spec.seeds = vec![seed];
    }
    let out = opts
        .out
        .clone()
        .or_else(|| spec.out.clone())
        .ok_or_else(|| Error::InvalidConfig("no output directory: pass --out or set `out` in the spec".into()))?;
    let plan = spec.plan()?;

    if out.exists() && !opts.force && dir_has_entries(&out)? {
        return Err(Error::OutputExists(out));
    }
    fs::create_dir_all(&out).map_err(|e| Error::io(format!("creating {}", out.display()), e))?;
    let started = unix_seconds();
    let resolved = toml::to_string(&ExperimentSpec { out: None, ..spec.clone() })
        .map_err(|e| Error::Serialization(e.to_string()))?;
    write(&out.join(EXPERIMENT_FILE), resolved.as_bytes())?;

    let execute = |run: &PlannedRun| execute_run(&out.join(&run.relative_dir), &run.config, opts.force);
    let results: Vec<Result<PathBuf>> = if opts.parallel || spec.parallel {
        plan.par_iter().map(execute).collect()
    } else {
        plan.iter().map(execute).collect()
    };
    let dirs = results.into_iter().collect::<Result<Vec<_>>>()?;

    // Wall-clock values live only here, outside every determinism check.
    let manifest = serde_json::json!({
        "fedsim_version": env!("CARGO_PKG_VERSION"),
        "started_unix": started,
        "finished_unix": unix_seconds(),
        "runs": dirs.iter().map(|d| d.strip_prefix(&out).unwrap_or(d).display().to_string()).collect::<Vec<_>>(),
    });
    write(&out.join(RUN_MANIFEST_FILE), manifest.to_string().as_bytes())?;
    Ok((out, dirs))
}

/// Runs one federation into `dir`.
pub fn execute_run(dir: &Path, config: &RunConfig, force: bool) -> Result<PathBuf> {
    log::info!("running {} (seed {}) into {}", config.label, config.seed, dir.display());
    let task = SyntheticTask::new(config.task.clone())?;
    let mut writer = RunWriter::create(dir, &config.to_toml()?, force)?;
    let outcome = resume_federation(
        &config.federation,
        &task,
        FederationState::fresh(task.initial_params()),
        &mut writer,
    )?;
    writer.finish(&outcome.master)?;
    Ok(dir.to_path_buf())
}

fn dir_has_entries(dir: &Path) -> Result<bool> {
    let mut entries = fs::read_dir(dir).map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
    Ok(entries.next().is_some())
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn unix_seconds() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}
