//! Multi-round federation: cohort sampling, local training, server-side
//! aggregation, logging and checkpointing.

mod cohort;
pub mod rundir;
pub mod synthetic;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use cohort::{
    binomial, cohort_size, collaborator_ids, sample_cohort, CohortHistory, MAX_COHORT_RETRIES,
};

use crate::dp::{Mechanism, NoiseCalibration, PrivacyConfig};
use crate::error::{Error, Result};
use crate::params::{CollaboratorUpdate, ModelParams};
use crate::simagg::{self, AggregationConfig, AggregationWeights, WeightRecord};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    Simagg,
    #[default]
    DpSimagg,
    Fedavg,
}

impl Aggregator {
    pub fn as_str(&self) -> &'static str {
        match self {
            Aggregator::Simagg => "simagg",
            Aggregator::DpSimagg => "dp_simagg",
            Aggregator::Fedavg => "fedavg",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FederationConfig {
    pub n_collaborators: usize,
    pub cohort_fraction: f64,
    pub n_rounds: u32,
    pub aggregator: Aggregator,
    pub sampling_seed: u64,
    pub unique_cohorts: bool,
    pub aggregation: AggregationConfig,
    pub privacy: PrivacyConfig,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            n_collaborators: 33,
            cohort_fraction: 0.2,
            n_rounds: 20,
            aggregator: Aggregator::DpSimagg,
            sampling_seed: 0,
            unique_cohorts: true,
            aggregation: AggregationConfig::default(),
            privacy: PrivacyConfig::default(),
        }
    }
}

impl FederationConfig {
    pub fn cohort_size(&self) -> usize {
        cohort_size(self.n_collaborators, self.cohort_fraction)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_collaborators == 0 {
            return Err(Error::InvalidConfig("n_collaborators must be positive".into()));
        }
        if !(self.cohort_fraction > 0.0 && self.cohort_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "cohort_fraction must lie in (0, 1], got {}",
                self.cohort_fraction
            )));
        }
        if self.n_rounds == 0 {
            return Err(Error::InvalidConfig("n_rounds must be at least 1".into()));
        }
        if self.cohort_size() == 0 {
            return Err(Error::InvalidConfig("cohort size rounds to zero".into()));
        }
        self.aggregation.validate()?;
        if self.aggregator == Aggregator::DpSimagg {
            self.privacy.validate()?;
        }
        let available = binomial(self.n_collaborators, self.cohort_size());
        if self.unique_cohorts && self.n_rounds as u128 > available {
            return Err(Error::CohortsExhausted {
                round: (available + 1).min(u32::MAX as u128) as u32,
                seen: available as usize,
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub mechanism: Mechanism,
    pub epsilon: f64,
    pub delta: f64,
    #[serde(flatten)]
    pub calibration: NoiseCalibration,
    /// Collaborator id to derived noise-stream id.
    pub streams: BTreeMap<String, String>,
    /// Simple additive composition over rounds so far. Advisory only.
    pub cumulative_epsilon: f64,
    pub cumulative_delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: u32,
    pub cohort: Vec<String>,
    pub weights: AggregationWeights,
    pub noise: Option<NoiseRecord>,
    /// Local training loss reported by each cohort member.
    pub train_metrics: BTreeMap<String, f64>,
    /// Trainer-defined evaluation of the aggregated model.
    pub eval_metrics: BTreeMap<String, f64>,
}

/// Result of one local training call.
#[derive(Clone, Debug)]
pub struct LocalResult {
    pub update: CollaboratorUpdate,
    pub loss: f64,
}

pub type TrainerError = Box<dyn std::error::Error + Send + Sync>;

/// Collaborator-side training. Implementations hold no privacy logic.
pub trait LocalTrainer: Sync {
    /// Ids of every shard this trainer can train on.
    fn collaborator_ids(&self) -> Vec<String>;

    /// Trains from `initial` on the named shard. The returned parameters must
    /// be congruent with `initial`, and the sample count constant across rounds.
    fn train(&self, initial: &ModelParams, collaborator_id: &str, round: u32) -> Result<LocalResult, TrainerError>;

    /// Metrics for an aggregated model, logged each round.
    fn evaluate(&self, _params: &ModelParams) -> BTreeMap<String, f64> {
        BTreeMap::new()
    }
}

/// Hook invoked after each round, e.g. to persist logs and checkpoints.
pub trait RoundObserver {
    fn on_round(&mut self, log: &RoundLog, master: &ModelParams) -> Result<()>;
}

impl RoundObserver for () {
    fn on_round(&mut self, _log: &RoundLog, _master: &ModelParams) -> Result<()> {
        Ok(())
    }
}

/// Where a federation stands between rounds.
#[derive(Clone, Debug, PartialEq)]
pub struct FederationState {
    /// Round about to run (1-based).
    pub next_round: u32,
    pub master: ModelParams,
    pub history: CohortHistory,
}

impl FederationState {
    pub fn fresh(init: ModelParams) -> Self {
        Self {
            next_round: 1,
            master: init,
            history: CohortHistory::default(),
        }
    }

    /// State after the rounds in `logs`, with `master` the model they produced.
    pub fn after(master: ModelParams, logs: &[RoundLog]) -> Self {
        let mut history = CohortHistory::default();
        for log in logs {
            history.insert(&log.cohort);
        }
        Self {
            next_round: logs.last().map_or(1, |l| l.round + 1),
            master,
            history,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FederationOutcome {
    pub master: ModelParams,
    pub logs: Vec<RoundLog>,
}

pub fn run_federation(cfg: &FederationConfig, trainer: &dyn LocalTrainer, init: ModelParams) -> Result<FederationOutcome> {
    resume_federation(cfg, trainer, FederationState::fresh(init), &mut ())
}

/// Runs rounds `state.next_round..=cfg.n_rounds`.
pub fn resume_federation(
    cfg: &FederationConfig,
    trainer: &dyn LocalTrainer,
    mut state: FederationState,
    observer: &mut dyn RoundObserver,
) -> Result<FederationOutcome> {
    cfg.validate()?;
    let available = trainer.collaborator_ids();
    if let Some(missing) = collaborator_ids(cfg.n_collaborators)
        .into_iter()
        .find(|id| !available.contains(id))
    {
        return Err(Error::InvalidConfig(format!("trainer has no shard for collaborator {missing}")));
    }

    let mut logs = Vec::new();
    for round in state.next_round..=cfg.n_rounds {
        let cohort = sample_cohort(round, &state.history, cfg)?;
        let results = train_cohort(trainer, &state.master, &cohort, round)?;
        let train_metrics = results.iter().map(|r| (r.update.collaborator_id.clone(), r.loss)).collect();
        let updates: Vec<CollaboratorUpdate> = results.into_iter().map(|r| r.update).collect();

        let (master, weights, noise) = aggregate_round(cfg, &updates, round)?;
        let log = RoundLog {
            round,
            cohort: cohort.clone(),
            weights,
            noise,
            train_metrics,
            eval_metrics: trainer.evaluate(&master),
        };
        log::info!("round {round}: cohort {}", cohort.join(","));
        observer.on_round(&log, &master)?;
        state.history.insert(&cohort);
        state.master = master;
        state.next_round = round + 1;
        logs.push(log);
    }
    Ok(FederationOutcome {
        master: state.master,
        logs,
    })
}

/// Trains every cohort member in parallel; results come back in cohort order.
fn train_cohort(trainer: &dyn LocalTrainer, master: &ModelParams, cohort: &[String], round: u32) -> Result<Vec<LocalResult>> {
    cohort
        .par_iter()
        .map(|id| {
            let failure = |message: String| Error::TrainerFailure {
                collaborator: id.clone(),
                round,
                message,
            };
            let result = trainer.train(master, id, round).map_err(|e| failure(e.to_string()))?;
            if result.update.collaborator_id != *id {
                return Err(failure(format!("update labelled {}", result.update.collaborator_id)));
            }
            if !result.update.params.is_congruent(master) {
                return Err(failure("returned parameters are not congruent with the master".into()));
            }
            Ok(result)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

fn aggregate_round(
    cfg: &FederationConfig,
    updates: &[CollaboratorUpdate],
    round: u32,
) -> Result<(ModelParams, AggregationWeights, Option<NoiseRecord>)> {
    match cfg.aggregator {
        Aggregator::Simagg => {
            let (master, weights) = simagg::simagg_round(updates, &cfg.aggregation)?;
            Ok((master, weights, None))
        }
        Aggregator::DpSimagg => {
            let out = simagg::dp_simagg_round(updates, &cfg.aggregation, &cfg.privacy, round)?;
            let noise = NoiseRecord {
                mechanism: cfg.privacy.mechanism,
                epsilon: cfg.privacy.epsilon,
                delta: cfg.privacy.delta,
                calibration: out.calibration,
                streams: out.streams.into_iter().collect(),
                cumulative_epsilon: cfg.privacy.epsilon * round as f64,
                cumulative_delta: cfg.privacy.delta * round as f64,
            };
            Ok((out.master, out.weights, Some(noise)))
        }
        Aggregator::Fedavg => {
            let master = simagg::fedavg_round(updates)?;
            // No similarity term; u, v and w all carry the sample share.
            let v = simagg::sample_weights(updates)?;
            let weights = AggregationWeights {
                records: v
                    .iter()
                    .map(|(id, share)| WeightRecord {
                        collaborator_id: id.to_string(),
                        sim: 0.0,
                        u: share,
                        v: share,
                        w: share,
                    })
                    .collect(),
            };
            Ok((master, weights, None))
        }
    }
}
