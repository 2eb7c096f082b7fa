//! Gamma(shape, scale) sampling.
//!
//! Marsaglia & Tsang's squeeze/rejection method for `shape >= 1`. For
//! `shape < 1` a Gamma(shape + 1) draw is boosted by `U^(1/shape)`, which is
//! the regime DP-SimAgg runs in (shape = 1 / cohort size).

use rand::Rng;
use rand_distr::{Distribution, Open01, StandardNormal};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaSampler {
    shape: f64,
    scale: f64,
}

impl GammaSampler {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite()) {
            return Err(Error::InvalidCalibration(format!("gamma shape must be positive, got {shape}")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidCalibration(format!("gamma scale must be positive, got {scale}")));
        }
        Ok(Self { shape, scale })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn mean(&self) -> f64 {
        self.shape * self.scale
    }

    pub fn variance(&self) -> f64 {
        self.shape * self.scale * self.scale
    }
}

impl Distribution<f64> for GammaSampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let unit = if self.shape < 1.0 {
            let boost: f64 = Open01.sample(rng);
            marsaglia_tsang(self.shape + 1.0, rng) * boost.powf(1.0 / self.shape)
        } else {
            marsaglia_tsang(self.shape, rng)
        };
        unit * self.scale
    }
}

/// Unit-scale Gamma draw for `shape >= 1`.
fn marsaglia_tsang<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape >= 1.0);
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x: f64 = StandardNormal.sample(rng);
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u: f64 = Open01.sample(rng);
        let x2 = x * x;
        // squeeze
        if u < 1.0 - 0.0331 * x2 * x2 {
            return d * v;
        }
        if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}
