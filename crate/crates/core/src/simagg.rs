//! Similarity-weighted aggregation (SimAgg), its DP variant, and a FedAvg baseline.
//!
//! For a cohort with parameters `p_c`, mean `p̂` and L1 deviations
//! `d_c = |p_c - p̂|_1`:
//!
//! ```text
//! sim_c = Σ_i d_i / (d_c + sim_epsilon)      u_c = sim_c / Σ_i sim_i
//! v_c   = N_c / Σ_i N_i                       w_c = (u_c + v_c) / Σ_i (u_i + v_i)
//! p_m   = Σ_c w_c p_c                         (literal mode: (1/|C|) Σ_c w_c p_c)
//! ```
//!
//! Every weighted sum runs in ascending collaborator-id order, so the result
//! does not depend on the order updates arrive in.

use serde::{Deserialize, Serialize};

use crate::dp::{self, NoiseCalibration, PrivacyConfig};
use crate::error::{Error, Result};
use crate::params::{elementwise_mean, l1_distance, CollaboratorUpdate, ModelParams};

pub const DEFAULT_SIM_EPSILON: f64 = 1e-5;
const WEIGHT_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregationConfig {
    /// Stabilizer in the similarity denominator. Unrelated to the privacy epsilon.
    pub sim_epsilon: f64,
    /// Apply the extra `1/|C|` factor to the weighted sum.
    pub literal_eq6: bool,
    /// Use uniform similarity weights when every deviation is zero.
    pub fallback_uniform: bool,
}

impl Default for AggregationConfig {
    fn default() -> Self {
        Self {
            sim_epsilon: DEFAULT_SIM_EPSILON,
            literal_eq6: false,
            fallback_uniform: true,
        }
    }
}

impl AggregationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sim_epsilon > 0.0 && self.sim_epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sim_epsilon must be positive, got {}",
                self.sim_epsilon
            )));
        }
        Ok(())
    }
}

/// Per-collaborator scalars keyed by id, kept in ascending id order.
#[derive(Clone, Debug, PartialEq)]
pub struct KeyedWeights {
    entries: Vec<(String, f64)>,
}

impl KeyedWeights {
    /// Sorts by id; rejects duplicate ids.
    pub fn new(mut entries: Vec<(String, f64)>) -> Result<Self> {
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some(w) = entries.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(Error::KeyMismatch(format!("duplicate collaborator id '{}'", w[0].0)));
        }
        Ok(Self { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<f64> {
        self.entries
            .binary_search_by(|(k, _)| k.as_str().cmp(id))
            .ok()
            .map(|i| self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|(_, v)| *v).collect()
    }

    pub fn sum(&self) -> f64 {
        self.entries.iter().map(|(_, v)| v).sum()
    }

    fn same_keys(&self, other: &KeyedWeights) -> Result<()> {
        if self.ids().eq(other.ids()) {
            Ok(())
        } else {
            Err(Error::KeyMismatch(format!(
                "[{}] vs [{}]",
                self.ids().collect::<Vec<_>>().join(", "),
                other.ids().collect::<Vec<_>>().join(", ")
            )))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityWeights {
    /// Unnormalized similarity scores.
    pub sim: KeyedWeights,
    /// Normalized similarity weights.
    pub u: KeyedWeights,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub collaborator_id: String,
    pub sim: f64,
    pub u: f64,
    pub v: f64,
    pub w: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AggregationWeights {
    pub records: Vec<WeightRecord>,
}

impl AggregationWeights {
    pub fn from_parts(sim: &SimilarityWeights, v: &KeyedWeights, w: &KeyedWeights) -> Result<Self> {
        sim.u.same_keys(v)?;
        sim.u.same_keys(w)?;
        let records = sim
            .sim
            .iter()
            .zip(sim.u.iter())
            .zip(v.iter().zip(w.iter()))
            .map(|(((id, s), (_, u)), ((_, v), (_, w)))| WeightRecord {
                collaborator_id: id.to_string(),
                sim: s,
                u,
                v,
                w,
            })
            .collect();
        Ok(Self { records })
    }

    pub fn get(&self, id: &str) -> Option<&WeightRecord> {
        self.records.iter().find(|r| r.collaborator_id == id)
    }

    /// One JSON object per collaborator: `round, collaborator_id, sim, u, v, w`.
    pub fn to_jsonl(&self, round: u32) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            round: u32,
            #[serde(flatten)]
            record: &'a WeightRecord,
        }
        self.records
            .iter()
            .map(|record| {
                let mut s = serde_json::to_string(&Line { round, record }).expect("finite weights serialize");
                s.push('\n');
                s
            })
            .collect()
    }
}

/// Validates a cohort and returns it sorted by collaborator id.
fn sorted_cohort(updates: &[CollaboratorUpdate]) -> Result<Vec<&CollaboratorUpdate>> {
    let mut sorted: Vec<&CollaboratorUpdate> = updates.iter().collect();
    sorted.sort_by(|a, b| a.collaborator_id.cmp(&b.collaborator_id));
    let first = sorted.first().ok_or(Error::EmptyCohort)?;
    for pair in sorted.windows(2) {
        if pair[0].collaborator_id == pair[1].collaborator_id {
            return Err(Error::KeyMismatch(format!(
                "duplicate collaborator id '{}'",
                pair[0].collaborator_id
            )));
        }
    }
    for u in &sorted[1..] {
        first.params.check_congruent(&u.params)?;
    }
    Ok(sorted)
}

pub fn similarity_weights(updates: &[CollaboratorUpdate], cfg: &AggregationConfig) -> Result<SimilarityWeights> {
    cfg.validate()?;
    let cohort = sorted_cohort(updates)?;
    let mean = elementwise_mean(cohort.iter().map(|u| &u.params))?;
    let deviations = cohort
        .iter()
        .map(|u| l1_distance(&u.params, &mean))
        .collect::<Result<Vec<f64>>>()?;
    let total_deviation: f64 = deviations.iter().sum();
    let sims: Vec<f64> = deviations
        .iter()
        .map(|d| total_deviation / (d + cfg.sim_epsilon))
        .collect();
    let sim_sum: f64 = sims.iter().sum();

    let u: Vec<f64> = if sim_sum > 0.0 {
        sims.iter().map(|s| s / sim_sum).collect()
    } else if cfg.fallback_uniform {
        vec![1.0 / cohort.len() as f64; cohort.len()]
    } else {
        return Err(Error::DegenerateCohort);
    };
    if !sim_sum.is_finite() {
        return Err(Error::NonFiniteResult("similarity scores".into()));
    }

    let ids = || cohort.iter().map(|c| c.collaborator_id.clone());
    Ok(SimilarityWeights {
        sim: KeyedWeights::new(ids().zip(sims).collect())?,
        u: KeyedWeights::new(ids().zip(u).collect())?,
    })
}

pub fn sample_weights(updates: &[CollaboratorUpdate]) -> Result<KeyedWeights> {
    let cohort = sorted_cohort(updates)?;
    let total: u64 = cohort.iter().map(|u| u.sample_count()).sum();
    KeyedWeights::new(
        cohort
            .iter()
            .map(|u| (u.collaborator_id.clone(), u.sample_count() as f64 / total as f64))
            .collect(),
    )
}

pub fn fused_weights(u: &KeyedWeights, v: &KeyedWeights) -> Result<KeyedWeights> {
    u.same_keys(v)?;
    if u.is_empty() {
        return Err(Error::EmptyCohort);
    }
    let combined: Vec<f64> = u.iter().zip(v.iter()).map(|((_, a), (_, b))| a + b).collect();
    let denom: f64 = combined.iter().sum();
    KeyedWeights::new(u.ids().map(str::to_string).zip(combined.iter().map(|c| c / denom)).collect())
}

/// Weighted sum of the cohort's parameters with weights `w`.
pub fn aggregate(updates: &[CollaboratorUpdate], w: &KeyedWeights, cfg: &AggregationConfig) -> Result<ModelParams> {
    let cohort = sorted_cohort(updates)?;
    if !cohort.iter().map(|c| c.collaborator_id.as_str()).eq(w.ids()) {
        return Err(Error::KeyMismatch("weights do not cover exactly the cohort".into()));
    }
    let total = w.sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOLERANCE || w.iter().any(|(_, x)| x < 0.0) {
        return Err(Error::InvalidConfig(format!(
            "aggregation weights must be non-negative and sum to 1, got sum {total}"
        )));
    }
    // Anchored at the first member: p_0 + Σ w_c (p_c - p_0). Equal to Σ w_c p_c
    // when the weights sum to one, and exact when every member is identical.
    let layout = &cohort[0].params;
    let anchor = layout.to_flat();
    let mut acc = anchor.clone();
    for (update, (_, weight)) in cohort.iter().zip(w.iter()).skip(1) {
        for ((a, p), p0) in acc.iter_mut().zip(update.params.values()).zip(&anchor) {
            *a += weight * (p - p0);
        }
    }
    if cfg.literal_eq6 {
        let n = cohort.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
    }
    layout.with_flat(&acc)
}

/// One SimAgg aggregation step. Deterministic.
pub fn simagg_round(
    updates: &[CollaboratorUpdate],
    cfg: &AggregationConfig,
) -> Result<(ModelParams, AggregationWeights)> {
    let sim = similarity_weights(updates, cfg)?;
    let v = sample_weights(updates)?;
    let w = fused_weights(&sim.u, &v)?;
    let master = aggregate(updates, &w, cfg)?;
    Ok((master, AggregationWeights::from_parts(&sim, &v, &w)?))
}

/// Sample-count-weighted average.
pub fn fedavg_round(updates: &[CollaboratorUpdate]) -> Result<ModelParams> {
    let v = sample_weights(updates)?;
    aggregate(updates, &v, &AggregationConfig::default())
}

#[derive(Clone, Debug)]
pub struct DpRoundOutput {
    pub master: ModelParams,
    pub weights: AggregationWeights,
    pub calibration: NoiseCalibration,
    /// `(collaborator_id, stream id)` in ascending id order.
    pub streams: Vec<(String, String)>,
}

/// One DP-SimAgg step.
///
/// Weights come from the clean parameters; noise is then added to each
/// collaborator's parameters from its own `(seed, round, id)` stream, and the
/// noised parameters are fused with those weights.
pub fn dp_simagg_round(
    updates: &[CollaboratorUpdate],
    cfg: &AggregationConfig,
    privacy: &PrivacyConfig,
    round: u32,
) -> Result<DpRoundOutput> {
    let sim = similarity_weights(updates, cfg)?;
    let v = sample_weights(updates)?;
    let total_samples: u64 = updates.iter().map(|u| u.sample_count()).sum();
    let calibration = dp::calibrate(total_samples, updates.len(), privacy)?;
    let w = fused_weights(&sim.u, &v)?;

    let mut streams = Vec::with_capacity(updates.len());
    let noised = sorted_cohort(updates)?
        .into_iter()
        .map(|u| {
            let mut rng = dp::rng_stream_for(round, &u.collaborator_id, privacy.seed);
            streams.push((u.collaborator_id.clone(), rng.id().to_string()));
            dp::perturb(u, &calibration, privacy, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(DpRoundOutput {
        master: aggregate(&noised, &w, cfg)?,
        weights: AggregationWeights::from_parts(&sim, &v, &w)?,
        calibration,
        streams,
    })
}
