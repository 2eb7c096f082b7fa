//! Segmentation metrics over 3D label volumes: Dice, 95th-percentile
//! Hausdorff distance, sensitivity and specificity, per tumor region.
//!
//! Region masks nest: ET = {4}, TC = {1, 4}, WT = {1, 2, 4}.

pub mod batch;
mod distance;
mod volume;

use serde::{Deserialize, Serialize};

pub use distance::squared_distance_field;
pub use volume::{LabelVolume, VALID_LABELS};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Region {
    #[serde(rename = "ET")]
    EnhancingTumor,
    #[serde(rename = "TC")]
    TumorCore,
    #[serde(rename = "WT")]
    WholeTumor,
}

impl Region {
    pub const ALL: [Region; 3] = [Region::EnhancingTumor, Region::TumorCore, Region::WholeTumor];

    pub fn name(&self) -> &'static str {
        match self {
            Region::EnhancingTumor => "ET",
            Region::TumorCore => "TC",
            Region::WholeTumor => "WT",
        }
    }

    pub fn labels(&self) -> &'static [u8] {
        match self {
            Region::EnhancingTumor => &[4],
            Region::TumorCore => &[1, 4],
            Region::WholeTumor => &[1, 2, 4],
        }
    }

    pub fn contains(&self, label: u8) -> bool {
        self.labels().contains(&label)
    }
}

/// Binary voxel mask, x-fastest like [`LabelVolume`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    dims: [usize; 3],
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(dims: [usize; 3], bits: Vec<bool>) -> Result<Self> {
        if bits.len() != dims.iter().product::<usize>() {
            return Err(Error::ShapeMismatch(format!("{} bits for dims {dims:?}", bits.len())));
        }
        Ok(Self { dims, bits })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    fn check_same_dims(&self, other: &Mask) -> Result<()> {
        if self.dims == other.dims {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!("mask dims {:?} vs {:?}", self.dims, other.dims)))
        }
    }

    /// Mask voxels with a face neighbour outside the mask or outside the volume.
    pub fn boundary(&self) -> Vec<bool> {
        let [nx, ny, nz] = self.dims;
        let mut out = vec![false; self.bits.len()];
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let i = x + nx * (y + ny * z);
                    if !self.bits[i] {
                        continue;
                    }
                    out[i] = x == 0
                        || y == 0
                        || z == 0
                        || x + 1 == nx
                        || y + 1 == ny
                        || z + 1 == nz
                        || !self.bits[i - 1]
                        || !self.bits[i + 1]
                        || !self.bits[i - nx]
                        || !self.bits[i + nx]
                        || !self.bits[i - nx * ny]
                        || !self.bits[i + nx * ny];
                }
            }
        }
        out
    }
}

pub fn binarize(vol: &LabelVolume, region: Region) -> Mask {
    Mask {
        dims: vol.dims(),
        bits: vol.voxels().iter().map(|&l| region.contains(l)).collect(),
    }
}

/// `2|P ∩ R| / (|P| + |R|)`; 1.0 when both masks are empty.
pub fn dice(pred: &Mask, reference: &Mask) -> Result<f64> {
    let c = confusion(pred, reference)?;
    let denom = 2 * c.true_pos + c.false_pos + c.false_neg;
    Ok(if denom == 0 {
        1.0
    } else {
        (2 * c.true_pos) as f64 / denom as f64
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_pos: u64,
    pub false_pos: u64,
    pub false_neg: u64,
    pub true_neg: u64,
}

pub fn confusion(pred: &Mask, reference: &Mask) -> Result<Confusion> {
    pred.check_same_dims(reference)?;
    let mut c = Confusion::default();
    for (&p, &r) in pred.bits.iter().zip(&reference.bits) {
        match (p, r) {
            (true, true) => c.true_pos += 1,
            (true, false) => c.false_pos += 1,
            (false, true) => c.false_neg += 1,
            (false, false) => c.true_neg += 1,
        }
    }
    Ok(c)
}

/// `(TP / (TP + FN), TN / (TN + FP))`, each 1.0 when its denominator is zero.
pub fn sensitivity_specificity(pred: &Mask, reference: &Mask) -> Result<(f64, f64)> {
    let c = confusion(pred, reference)?;
    let ratio = |num: u64, other: u64| {
        if num + other == 0 {
            1.0
        } else {
            num as f64 / (num + other) as f64
        }
    };
    Ok((ratio(c.true_pos, c.false_neg), ratio(c.true_neg, c.false_pos)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hd95 {
    /// Distance in mm; the volume diagonal when `undefined` is set.
    pub value: f64,
    /// Exactly one of the two masks was empty.
    pub undefined: bool,
}

/// Symmetric 95th-percentile Hausdorff distance between mask boundaries.
///
/// Takes the larger of the two directed 95th percentiles (linear
/// interpolation between order statistics). Both masks empty gives 0.
pub fn hd95(pred: &Mask, reference: &Mask, spacing: [f64; 3]) -> Result<Hd95> {
    pred.check_same_dims(reference)?;
    match (pred.is_empty(), reference.is_empty()) {
        (true, true) => {
            return Ok(Hd95 {
                value: 0.0,
                undefined: false,
            })
        }
        (true, false) | (false, true) => {
            return Ok(Hd95 {
                value: volume::diagonal(pred.dims, spacing),
                undefined: true,
            })
        }
        _ => {}
    }
    let pb = pred.boundary();
    let rb = reference.boundary();
    let forward = directed_distances(&pb, &rb, pred.dims, spacing);
    let backward = directed_distances(&rb, &pb, pred.dims, spacing);
    Ok(Hd95 {
        value: percentile(forward, 0.95).max(percentile(backward, 0.95)),
        undefined: false,
    })
}

/// Distance from each `from` voxel to the nearest `to` voxel.
fn directed_distances(from: &[bool], to: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> Vec<f64> {
    let field = squared_distance_field(to, dims, spacing);
    from.iter()
        .zip(field)
        .filter(|(&f, _)| f)
        .map(|(_, d2)| d2.sqrt())
        .collect()
}

/// Linear-interpolation percentile, `q` in `[0, 1]`. Input must be non-empty.
pub fn percentile(mut values: Vec<f64>, q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty set");
    values.sort_by(f64::total_cmp);
    let rank = q * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    values[lo] + (rank - lo as f64) * (values[hi] - values[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub region: Region,
    pub dice: f64,
    pub hd95: f64,
    pub hd95_undefined: bool,
    pub sensitivity: f64,
    pub specificity: f64,
}

pub fn evaluate_masks(pred: &Mask, reference: &Mask, spacing: [f64; 3], region: Region) -> Result<MetricRecord> {
    let (sensitivity, specificity) = sensitivity_specificity(pred, reference)?;
    let hd = hd95(pred, reference, spacing)?;
    Ok(MetricRecord {
        region,
        dice: dice(pred, reference)?,
        hd95: hd.value,
        hd95_undefined: hd.undefined,
        sensitivity,
        specificity,
    })
}

/// All four metrics for ET, TC and WT, in that order.
pub fn evaluate_volume_pair(pred: &LabelVolume, reference: &LabelVolume) -> Result<Vec<MetricRecord>> {
    if pred.dims() != reference.dims() {
        return Err(Error::ShapeMismatch(format!(
            "volume dims {:?} vs {:?}",
            pred.dims(),
            reference.dims()
        )));
    }
    if pred.spacing() != reference.spacing() {
        return Err(Error::SpacingMismatch(pred.spacing(), reference.spacing()));
    }
    Region::ALL
        .iter()
        .map(|&region| {
            evaluate_masks(
                &binarize(pred, region),
                &binarize(reference, region),
                reference.spacing(),
                region,
            )
        })
        .collect()
}
