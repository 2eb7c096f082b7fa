//! Desk-scale stand-in for a real federated segmentation task.
//!
//! Each collaborator holds a linear-regression shard
//! `y = x·θ* + b0 + b_c + noise` with log-normally skewed size; `b_c` scales
//! with `heterogeneity`, and "adversarial" shards use `-θ*`. The model is a
//! weight vector plus an intercept, trained with full-batch gradient descent.
//!
//! Evaluation scores the pooled training MSE and, on a small synthetic label
//! volume, the segmentation metrics per region: voxels carry smooth feature
//! fields, and labels come from thresholding `x·θ + b` at fixed quantiles of
//! the true score, so a better model gives a better segmentation.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{collaborator_ids, LocalResult, LocalTrainer, TrainerError};
use crate::dp::stream::derive_stream;
use crate::error::{Error, Result};
use crate::metrics::{self, LabelVolume};
use crate::params::{CollaboratorUpdate, ModelParams};

const DOMAIN: &str = "synthetic-task";
pub const WEIGHT_GROUP: &str = "weight";
pub const BIAS_GROUP: &str = "bias";
pub const TRAIN_MSE: &str = "train_mse";

/// Score quantiles separating background | ED (2) | NCR (1) | ET (4).
const LABEL_QUANTILES: [f64; 3] = [0.6, 0.8, 0.9];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTaskConfig {
    pub n_collaborators: usize,
    pub dim: usize,
    /// In [0, 1]; scales the per-collaborator intercept shift.
    pub heterogeneity: f64,
    pub seed: u64,
    /// Collaborator indices whose shard uses the flipped coefficient vector.
    pub adversarial: Vec<usize>,
    pub local_steps: usize,
    pub learning_rate: f64,
    pub noise_std: f64,
    /// Median shard size.
    pub shard_size_median: f64,
    /// Log-space standard deviation of shard sizes.
    pub shard_size_spread: f64,
    pub min_shard_size: usize,
    /// Edge length of the evaluation volume; 0 disables segmentation metrics.
    pub eval_volume_side: usize,
}

impl Default for SyntheticTaskConfig {
    fn default() -> Self {
        Self {
            n_collaborators: 33,
            dim: 16,
            heterogeneity: 0.0,
            seed: 0,
            adversarial: Vec::new(),
            local_steps: 10,
            learning_rate: 0.1,
            noise_std: 0.05,
            shard_size_median: 60.0,
            shard_size_spread: 0.3,
            min_shard_size: 8,
            eval_volume_side: 16,
        }
    }
}

impl SyntheticTaskConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.dim == 0 {
            return bad("task dim must be at least 1".into());
        }
        if self.n_collaborators == 0 {
            return bad("task needs at least one collaborator".into());
        }
        if !(0.0..=1.0).contains(&self.heterogeneity) {
            return bad(format!("heterogeneity must lie in [0, 1], got {}", self.heterogeneity));
        }
        if let Some(i) = self.adversarial.iter().find(|&&i| i >= self.n_collaborators) {
            return bad(format!("adversarial index {i} out of range"));
        }
        // Written so that NaN fails too.
        let in_range = self.learning_rate > 0.0 && self.noise_std >= 0.0 && self.shard_size_median >= 1.0;
        if !in_range {
            return bad("learning_rate, noise_std and shard_size_median must be positive".into());
        }
        if self.min_shard_size == 0 {
            return bad("min_shard_size must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Shard {
    pub id: String,
    /// Row-major `len × dim`.
    pub features: Vec<f64>,
    pub targets: Vec<f64>,
    pub bias_shift: f64,
    pub adversarial: bool,
}

impl Shard {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn row(&self, i: usize, dim: usize) -> &[f64] {
        &self.features[i * dim..(i + 1) * dim]
    }
}

#[derive(Clone, Debug)]
struct EvalVolume {
    /// Row-major `voxels × dim`.
    features: Vec<f64>,
    thresholds: [f64; 3],
    reference: LabelVolume,
}

#[derive(Clone, Debug)]
pub struct SyntheticTask {
    cfg: SyntheticTaskConfig,
    theta: Vec<f64>,
    intercept: f64,
    shards: Vec<Shard>,
    eval: Option<EvalVolume>,
}

/// Convenience constructor with default training knobs.
pub fn make_synthetic_task(n_collaborators: usize, dim: usize, heterogeneity: f64, seed: u64) -> Result<SyntheticTask> {
    SyntheticTask::new(SyntheticTaskConfig {
        n_collaborators,
        dim,
        heterogeneity,
        seed,
        ..Default::default()
    })
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

impl SyntheticTask {
    pub fn new(cfg: SyntheticTaskConfig) -> Result<Self> {
        cfg.validate()?;
        let dim = cfg.dim;
        let mut global = derive_stream(DOMAIN, cfg.seed, 0, "global");
        let theta: Vec<f64> = (0..dim).map(|_| normal(&mut global)).collect();
        let intercept = normal(&mut global);

        let shards = collaborator_ids(cfg.n_collaborators)
            .into_iter()
            .enumerate()
            .map(|(i, id)| {
                let mut rng = derive_stream(DOMAIN, cfg.seed, 0, &id);
                let spread = cfg.shard_size_spread;
                let size = (cfg.shard_size_median * (spread * normal(&mut rng)).exp()).round() as usize;
                let size = size.max(cfg.min_shard_size);
                let bias_shift = cfg.heterogeneity * normal(&mut rng);
                let adversarial = cfg.adversarial.contains(&i);
                let sign = if adversarial { -1.0 } else { 1.0 };
                let mut features = Vec::with_capacity(size * dim);
                let mut targets = Vec::with_capacity(size);
                for _ in 0..size {
                    let row: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
                    let signal: f64 = row.iter().zip(&theta).map(|(x, t)| x * t).sum();
                    targets.push(sign * signal + intercept + bias_shift + cfg.noise_std * normal(&mut rng));
                    features.extend(row);
                }
                Shard {
                    id,
                    features,
                    targets,
                    bias_shift,
                    adversarial,
                }
            })
            .collect();

        let eval = (cfg.eval_volume_side > 0).then(|| build_eval_volume(&cfg, &theta, intercept));
        Ok(Self {
            cfg,
            theta,
            intercept,
            shards,
            eval,
        })
    }

    pub fn config(&self) -> &SyntheticTaskConfig {
        &self.cfg
    }

    pub fn shards(&self) -> &[Shard] {
        &self.shards
    }

    pub fn shard(&self, id: &str) -> Option<&Shard> {
        self.shards.iter().find(|s| s.id == id)
    }

    pub fn true_coefficients(&self) -> (&[f64], f64) {
        (&self.theta, self.intercept)
    }

    pub fn total_samples(&self) -> usize {
        self.shards.iter().map(Shard::len).sum()
    }

    /// All-zero weight and intercept.
    pub fn initial_params(&self) -> ModelParams {
        ModelParams::new([(WEIGHT_GROUP, vec![0.0; self.cfg.dim]), (BIAS_GROUP, vec![0.0])])
            .expect("zeros are finite")
    }

    pub fn params_from(&self, weight: Vec<f64>, bias: f64) -> Result<ModelParams> {
        ModelParams::new([(WEIGHT_GROUP, weight), (BIAS_GROUP, vec![bias])])
    }

    fn unpack<'a>(&self, params: &'a ModelParams) -> Result<(&'a [f64], f64)> {
        let w = params
            .group(WEIGHT_GROUP)
            .filter(|w| w.len() == self.cfg.dim)
            .ok_or_else(|| Error::ShapeMismatch(format!("expected '{WEIGHT_GROUP}' of length {}", self.cfg.dim)))?;
        let b = params
            .group(BIAS_GROUP)
            .filter(|b| b.len() == 1)
            .ok_or_else(|| Error::ShapeMismatch(format!("expected '{BIAS_GROUP}' of length 1")))?;
        Ok((w, b[0]))
    }

    /// Mean squared residual on one shard.
    pub fn shard_mse(&self, shard: &Shard, params: &ModelParams) -> Result<f64> {
        let (w, b) = self.unpack(params)?;
        let dim = self.cfg.dim;
        let sse: f64 = (0..shard.len())
            .map(|i| {
                let pred: f64 = shard.row(i, dim).iter().zip(w).map(|(x, t)| x * t).sum::<f64>() + b;
                (pred - shard.targets[i]).powi(2)
            })
            .sum();
        Ok(sse / shard.len() as f64)
    }

    /// Mean squared residual over every example of every shard.
    pub fn pooled_mse(&self, params: &ModelParams) -> Result<f64> {
        let mut sse = 0.0;
        for shard in &self.shards {
            sse += self.shard_mse(shard, params)? * shard.len() as f64;
        }
        Ok(sse / self.total_samples() as f64)
    }

    /// Predicted label volume for the evaluation grid, if enabled.
    pub fn predict_volume(&self, params: &ModelParams) -> Result<Option<LabelVolume>> {
        let Some(eval) = &self.eval else {
            return Ok(None);
        };
        let (w, b) = self.unpack(params)?;
        let scores = scores(&eval.features, w, b);
        let labels = scores.iter().map(|&s| label_for(s, &eval.thresholds)).collect();
        let reference = &eval.reference;
        LabelVolume::new(reference.dims(), reference.spacing(), labels).map(Some)
    }

    pub fn reference_volume(&self) -> Option<&LabelVolume> {
        self.eval.as_ref().map(|e| &e.reference)
    }

    fn gradient_descent(&self, shard: &Shard, initial: &ModelParams) -> Result<ModelParams> {
        let (w0, b0) = self.unpack(initial)?;
        let dim = self.cfg.dim;
        let n = shard.len() as f64;
        let mut w = w0.to_vec();
        let mut b = b0;
        let mut grad_w = vec![0.0; dim];
        for _ in 0..self.cfg.local_steps {
            grad_w.iter_mut().for_each(|g| *g = 0.0);
            let mut grad_b = 0.0;
            for i in 0..shard.len() {
                let x = shard.row(i, dim);
                let r = x.iter().zip(&w).map(|(x, t)| x * t).sum::<f64>() + b - shard.targets[i];
                for (g, xi) in grad_w.iter_mut().zip(x) {
                    *g += r * xi;
                }
                grad_b += r;
            }
            let step = self.cfg.learning_rate / n;
            for (wi, g) in w.iter_mut().zip(&grad_w) {
                *wi -= step * g;
            }
            b -= step * grad_b;
        }
        self.params_from(w, b)
    }
}

impl LocalTrainer for SyntheticTask {
    fn collaborator_ids(&self) -> Vec<String> {
        self.shards.iter().map(|s| s.id.clone()).collect()
    }

    fn train(&self, initial: &ModelParams, collaborator_id: &str, _round: u32) -> Result<LocalResult, TrainerError> {
        let shard = self
            .shard(collaborator_id)
            .ok_or_else(|| format!("unknown collaborator {collaborator_id}"))?;
        let params = self.gradient_descent(shard, initial)?;
        let loss = self.shard_mse(shard, &params)?;
        Ok(LocalResult {
            update: CollaboratorUpdate::new(collaborator_id, params, shard.len() as u64)?,
            loss,
        })
    }

    fn evaluate(&self, params: &ModelParams) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        if let Ok(mse) = self.pooled_mse(params) {
            out.insert(TRAIN_MSE.to_string(), mse);
        }
        if let (Ok(Some(pred)), Some(reference)) = (self.predict_volume(params), self.reference_volume()) {
            if let Ok(records) = metrics::evaluate_volume_pair(&pred, reference) {
                for r in records {
                    let region = r.region.name();
                    out.insert(format!("DICE {region}"), r.dice);
                    out.insert(format!("Hausdorff (95%) {region}"), r.hd95);
                    out.insert(format!("Sensitivity {region}"), r.sensitivity);
                    out.insert(format!("Specificity {region}"), r.specificity);
                }
            }
        }
        out
    }
}

fn scores(features: &[f64], w: &[f64], b: f64) -> Vec<f64> {
    features
        .chunks_exact(w.len())
        .map(|x| x.iter().zip(w).map(|(x, t)| x * t).sum::<f64>() + b)
        .collect()
}

fn label_for(score: f64, thresholds: &[f64; 3]) -> u8 {
    if score >= thresholds[2] {
        4
    } else if score >= thresholds[1] {
        1
    } else if score >= thresholds[0] {
        2
    } else {
        0
    }
}

/// Smooth per-voxel features (sums of Gaussian blobs, standardized per
/// feature) and reference labels from the true coefficients.
fn build_eval_volume(cfg: &SyntheticTaskConfig, theta: &[f64], intercept: f64) -> EvalVolume {
    let side = cfg.eval_volume_side;
    let n = side * side * side;
    let dim = cfg.dim;
    let mut rng = derive_stream(DOMAIN, cfg.seed, 0, "eval-volume");
    let mut features = vec![0.0; n * dim];
    for j in 0..dim {
        let blobs: Vec<([f64; 3], f64, f64)> = (0..4)
            .map(|_| {
                let c = [0, 1, 2].map(|_| rng.random_range(0.0..side as f64));
                let amp = normal(&mut rng);
                let width = rng.random_range(0.15..0.35) * side as f64;
                (c, amp, width)
            })
            .collect();
        let mut column: Vec<f64> = (0..n)
            .map(|v| {
                let p = [v % side, (v / side) % side, v / (side * side)].map(|c| c as f64);
                blobs
                    .iter()
                    .map(|(c, amp, width)| {
                        let d2: f64 = (0..3).map(|k| (p[k] - c[k]).powi(2)).sum();
                        amp * (-d2 / (2.0 * width * width)).exp()
                    })
                    .sum()
            })
            .collect();
        let mean = column.iter().sum::<f64>() / n as f64;
        let sd = (column.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        let sd = if sd > 0.0 { sd } else { 1.0 };
        column.iter_mut().for_each(|x| *x = (*x - mean) / sd);
        for (v, x) in column.into_iter().enumerate() {
            features[v * dim + j] = x;
        }
    }
    let truth = scores(&features, theta, intercept);
    let thresholds = LABEL_QUANTILES.map(|q| metrics::percentile(truth.clone(), q));
    let labels = truth.iter().map(|&s| label_for(s, &thresholds)).collect();
    let reference = LabelVolume::new([side; 3], [1.0; 3], labels).expect("generated labels are valid");
    EvalVolume {
        features,
        thresholds,
        reference,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Region;

    #[test]
    fn shard_sizes_reproducible() {
        let a = make_synthetic_task(33, 4, 0.5, 17).unwrap();
        let b = make_synthetic_task(33, 4, 0.5, 17).unwrap();
        assert_eq!(a.total_samples(), b.total_samples());
        assert_eq!(a.shards()[5].targets, b.shards()[5].targets);
        let sizes: Vec<usize> = a.shards().iter().map(Shard::len).collect();
        assert!(sizes.iter().any(|&s| s != sizes[0]), "sizes should be skewed");
        assert_ne!(a.total_samples(), make_synthetic_task(33, 4, 0.5, 18).unwrap().total_samples());
    }

    #[test]
    fn heterogeneity_zero_has_no_bias_shift() {
        let t = make_synthetic_task(10, 3, 0.0, 1).unwrap();
        assert!(t.shards().iter().all(|s| s.bias_shift == 0.0));
        let h = make_synthetic_task(10, 3, 1.0, 1).unwrap();
        assert!(h.shards().iter().any(|s| s.bias_shift != 0.0));
    }

    #[test]
    fn local_training_reduces_loss() {
        let t = make_synthetic_task(5, 4, 0.0, 3).unwrap();
        let init = t.initial_params();
        let shard = &t.shards()[0];
        let before = t.shard_mse(shard, &init).unwrap();
        let out = t.train(&init, &shard.id, 1).unwrap();
        assert!(out.loss < before);
        assert_eq!(out.update.sample_count(), shard.len() as u64);
        assert!(out.update.params.is_congruent(&init));
    }

    #[test]
    fn true_model_segments_perfectly() {
        let t = make_synthetic_task(3, 4, 0.0, 9).unwrap();
        let (theta, b) = t.true_coefficients();
        let truth = t.params_from(theta.to_vec(), b).unwrap();
        let m = t.evaluate(&truth);
        for r in Region::ALL {
            assert_eq!(m[&format!("DICE {}", r.name())], 1.0);
            assert_eq!(m[&format!("Hausdorff (95%) {}", r.name())], 0.0);
        }
        let reference = t.reference_volume().unwrap();
        let count = |l: u8| reference.voxels().iter().filter(|&&v| v == l).count();
        assert!(count(4) > 0 && count(1) > 0 && count(2) > 0 && count(0) > 0);
        assert!(m[TRAIN_MSE] < 0.01);
    }

    #[test]
    fn rejects_bad_config() {
        assert!(make_synthetic_task(3, 0, 0.0, 0).is_err());
        assert!(make_synthetic_task(3, 2, 1.5, 0).is_err());
        assert!(SyntheticTask::new(SyntheticTaskConfig {
            n_collaborators: 3,
            adversarial: vec![3],
            ..Default::default()
        })
        .is_err());
    }
}
