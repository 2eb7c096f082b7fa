//! Server-side differential-privacy noise for DP-SimAgg.
//!
//! Calibration follows the aggregation algorithm literally:
//! `sensitivity = 2 / (sum_N * delta)` and `scale = sensitivity / epsilon`,
//! with Gamma shape `1 / cohort_size`. Note the sensitivity term folds in
//! `delta`, which is unusual for DP calibration; it is kept verbatim.
//!
//! Noise is added only by the aggregator. Trainers never see privacy logic.

mod gamma;
pub mod stream;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use gamma::GammaSampler;
pub use stream::{rng_stream_for, RngStream};

use crate::error::{Error, Result};
use crate::params::CollaboratorUpdate;

pub const DEFAULT_DELTA: f64 = 1e-5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    /// Adds one Gamma(shape, scale) draw per element. One-sided: never lowers a value.
    #[default]
    GammaAdditive,
    /// Adds N(0, scale^2) per element.
    Gaussian,
    /// Adds Gamma(shape, scale) - Gamma(shape, scale) per element; summed over
    /// a full cohort this is Laplace(scale).
    DistributedLaplace,
    None,
}

impl Mechanism {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mechanism::GammaAdditive => "gamma_additive",
            Mechanism::Gaussian => "gaussian",
            Mechanism::DistributedLaplace => "distributed_laplace",
            Mechanism::None => "none",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyConfig {
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub mechanism: Mechanism,
    #[serde(default)]
    pub seed: u64,
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            delta: DEFAULT_DELTA,
            mechanism: Mechanism::GammaAdditive,
            seed: 0,
        }
    }
}

impl PrivacyConfig {
    pub fn new(epsilon: f64, mechanism: Mechanism, seed: u64) -> Result<Self> {
        let cfg = Self {
            epsilon,
            delta: DEFAULT_DELTA,
            mechanism,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidBudget(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidBudget(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseCalibration {
    pub sensitivity: f64,
    pub scale: f64,
    pub shape: f64,
}

pub fn calibrate(total_samples: u64, cohort_size: usize, cfg: &PrivacyConfig) -> Result<NoiseCalibration> {
    cfg.validate()?;
    if cohort_size == 0 || total_samples < cohort_size as u64 {
        return Err(Error::InvalidCalibration(format!(
            "need total_samples >= cohort_size >= 1, got {total_samples} and {cohort_size}"
        )));
    }
    let sensitivity = 2.0 / (total_samples as f64 * cfg.delta);
    let scale = sensitivity / cfg.epsilon;
    let shape = 1.0 / cohort_size as f64;
    let cal = NoiseCalibration {
        sensitivity,
        scale,
        shape,
    };
    cal.check()?;
    Ok(cal)
}

impl NoiseCalibration {
    fn check(&self) -> Result<()> {
        for (name, v) in [("sensitivity", self.sensitivity), ("scale", self.scale), ("shape", self.shape)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidCalibration(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }
}

/// Adds mechanism noise to every parameter of `update`. Sample count is kept.
pub fn perturb<R: Rng + ?Sized>(
    update: &CollaboratorUpdate,
    cal: &NoiseCalibration,
    cfg: &PrivacyConfig,
    rng: &mut R,
) -> Result<CollaboratorUpdate> {
    if cfg.mechanism == Mechanism::None {
        return Ok(update.clone());
    }
    cal.check()?;
    let flat = update.params.to_flat();
    let noised: Vec<f64> = match cfg.mechanism {
        Mechanism::GammaAdditive => {
            let g = GammaSampler::new(cal.shape, cal.scale)?;
            flat.iter().map(|v| v + g.sample(rng)).collect()
        }
        Mechanism::Gaussian => {
            let n = Normal::new(0.0, cal.scale).map_err(|e| Error::InvalidCalibration(e.to_string()))?;
            flat.iter().map(|v| v + n.sample(rng)).collect()
        }
        Mechanism::DistributedLaplace => {
            let g = GammaSampler::new(cal.shape, cal.scale)?;
            flat.iter()
                .map(|v| {
                    let pos = g.sample(rng);
                    let neg = g.sample(rng);
                    v + (pos - neg)
                })
                .collect()
        }
        Mechanism::None => unreachable!(),
    };
    Ok(update.with_params(update.params.with_flat(&noised)?))
}
