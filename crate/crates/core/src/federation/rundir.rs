//! On-disk run layout:
//!
//! ```text
//! <run>/config.toml
//! <run>/rounds.jsonl            one RoundLog per line
//! <run>/checkpoints/round_<r>.ckpt
//! <run>/final.ckpt
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use super::{FederationState, RoundLog, RoundObserver};
use crate::checkpoint;
use crate::error::{Error, Result};
use crate::params::ModelParams;

pub const CONFIG_FILE: &str = "config.toml";
pub const ROUNDS_FILE: &str = "rounds.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

pub fn round_checkpoint_path(root: &Path, round: u32) -> PathBuf {
    root.join(CHECKPOINT_DIR).join(format!("round_{round}.ckpt"))
}

/// Appends round logs and checkpoints to a run directory.
#[derive(Debug)]
pub struct RunWriter {
    root: PathBuf,
    rounds: File,
}

impl RunWriter {
    /// Creates a fresh run directory. Fails with `OutputExists` if `root`
    /// already exists, unless `force` is set, in which case it is replaced.
    pub fn create(root: &Path, config_toml: &str, force: bool) -> Result<Self> {
        if root.exists() {
            if !force {
                return Err(Error::OutputExists(root.to_path_buf()));
            }
            fs::remove_dir_all(root).map_err(|e| Error::io(format!("removing {}", root.display()), e))?;
        }
        fs::create_dir_all(root.join(CHECKPOINT_DIR))
            .map_err(|e| Error::io(format!("creating {}", root.display()), e))?;
        write_file(&root.join(CONFIG_FILE), config_toml.as_bytes())?;
        Self::open(root)
    }

    /// Opens an existing run directory for appending further rounds.
    pub fn open(root: &Path) -> Result<Self> {
        let path = root.join(ROUNDS_FILE);
        let rounds = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        Ok(Self {
            root: root.to_path_buf(),
            rounds,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn finish(&self, master: &ModelParams) -> Result<()> {
        checkpoint::save(&self.root.join(FINAL_CHECKPOINT), master)
    }
}

impl RoundObserver for RunWriter {
    fn on_round(&mut self, log: &RoundLog, master: &ModelParams) -> Result<()> {
        let mut line = serde_json::to_string(log).map_err(|e| Error::Serialization(e.to_string()))?;
        line.push('\n');
        self.rounds
            .write_all(line.as_bytes())
            .and_then(|_| self.rounds.flush())
            .map_err(|e| Error::io("appending round log", e))?;
        checkpoint::save(&round_checkpoint_path(&self.root, log.round), master)
    }
}

pub fn read_round_logs(root: &Path) -> Result<Vec<RoundLog>> {
    let path = root.join(ROUNDS_FILE);
    let file = File::open(&path).map_err(|_| Error::MissingRunData(format!("{} not found", path.display())))?;
    BufReader::new(file)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, line)| {
            let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
            serde_json::from_str(&line)
                .map_err(|e| Error::MissingRunData(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

pub fn read_config(root: &Path) -> Result<String> {
    let path = root.join(CONFIG_FILE);
    fs::read_to_string(&path).map_err(|_| Error::MissingRunData(format!("{} not found", path.display())))
}

/// Reconstructs the state after the last logged round from its checkpoint.
pub fn resume_state(root: &Path, init: ModelParams) -> Result<FederationState> {
    let logs = read_round_logs(root)?;
    let master = match logs.last() {
        Some(last) => checkpoint::load(&round_checkpoint_path(root, last.round))?,
        None => init,
    };
    Ok(FederationState::after(master, &logs))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}
