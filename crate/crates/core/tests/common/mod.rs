//! Independent reference implementations shared by the integration and
//! acceptance tests. Written with plain loops on purpose: none of this calls
//! into the library's numerical code.
#![allow(dead_code)]

use fedsim::federation::synthetic::{SyntheticTask, BIAS_GROUP, WEIGHT_GROUP};
use fedsim::metrics::LabelVolume;
use fedsim::ModelParams;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Weights and master from the SimAgg formulas, evaluated in input order.
#[derive(Debug, Clone)]
pub struct OracleRound {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub master: Vec<f64>,
}

pub fn oracle_simagg(params: &[Vec<f64>], counts: &[u64], sim_epsilon: f64, divide_by_cohort: bool) -> OracleRound {
    let n = params.len();
    let len = params[0].len();

    let mut mean = vec![0.0; len];
    for p in params {
        for k in 0..len {
            mean[k] += p[k];
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }

    let mut dist = vec![0.0; n];
    for c in 0..n {
        for k in 0..len {
            dist[c] += (params[c][k] - mean[k]).abs();
        }
    }
    let total_dist: f64 = dist.iter().sum();
    let mut sim = vec![0.0; n];
    for c in 0..n {
        sim[c] = total_dist / (dist[c] + sim_epsilon);
    }
    let total_sim: f64 = sim.iter().sum();
    let u: Vec<f64> = if total_sim == 0.0 {
        vec![1.0 / n as f64; n]
    } else {
        sim.iter().map(|s| s / total_sim).collect()
    };

    let total_n: u64 = counts.iter().sum();
    let v: Vec<f64> = counts.iter().map(|&c| c as f64 / total_n as f64).collect();

    let mut z = 0.0;
    for c in 0..n {
        z += u[c] + v[c];
    }
    let w: Vec<f64> = (0..n).map(|c| (u[c] + v[c]) / z).collect();

    let mut master = vec![0.0; len];
    for c in 0..n {
        for k in 0..len {
            master[k] += w[c] * params[c][k];
        }
    }
    if divide_by_cohort {
        for m in master.iter_mut() {
            *m /= n as f64;
        }
    }
    OracleRound { u, v, w, master }
}

/// `max|a - b| / max|b|`, with an absolute floor for all-zero references.
pub fn normwise_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if b == 0.0 {
        a.abs()
    } else {
        ((a - b) / b).abs()
    }
}

/// Centralized least-squares fit over every shard: `[weight..., bias]`.
pub fn normal_equations(task: &SyntheticTask) -> Vec<f64> {
    let dim = task.config().dim;
    let p = dim + 1;
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    for shard in task.shards() {
        for i in 0..shard.len() {
            let mut x = shard.row(i, dim).to_vec();
            x.push(1.0);
            let x = DVector::from_vec(x);
            xtx += &x * x.transpose();
            xty += &x * shard.targets[i];
        }
    }
    xtx.cholesky().expect("positive definite design").solve(&xty).as_slice().to_vec()
}

/// Model parameters flattened as `[weight..., bias]`.
pub fn flatten_linear(params: &ModelParams) -> Vec<f64> {
    let mut out = params.group(WEIGHT_GROUP).unwrap().to_vec();
    out.extend_from_slice(params.group(BIAS_GROUP).unwrap());
    out
}

pub fn rmse(a: &[f64], b: &[f64]) -> f64 {
    let sse: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    (sse / a.len() as f64).sqrt()
}

// ---- segmentation oracles --------------------------------------------------

pub struct OracleMetrics {
    pub dice: f64,
    pub hd95: f64,
    pub hd95_undefined: bool,
    pub sensitivity: f64,
    pub specificity: f64,
}

fn at(dims: [usize; 3], x: usize, y: usize, z: usize) -> usize {
    (z * dims[1] + y) * dims[0] + x
}

/// Mask voxels that touch a non-mask face neighbour or the volume edge.
pub fn oracle_boundary(mask: &[bool], dims: [usize; 3]) -> Vec<[usize; 3]> {
    let mut out = Vec::new();
    for z in 0..dims[2] {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                if !mask[at(dims, x, y, z)] {
                    continue;
                }
                let c = [x as isize, y as isize, z as isize];
                let mut edge = false;
                for axis in 0..3 {
                    for step in [-1isize, 1] {
                        let mut n = c;
                        n[axis] += step;
                        let outside = n[axis] < 0 || n[axis] >= dims[axis] as isize;
                        if outside || !mask[at(dims, n[0] as usize, n[1] as usize, n[2] as usize)] {
                            edge = true;
                        }
                    }
                }
                if edge {
                    out.push([x, y, z]);
                }
            }
        }
    }
    out
}

fn oracle_percentile95(mut d: Vec<f64>) -> f64 {
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = 0.95 * (d.len() - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < d.len() {
        d[i] * (1.0 - frac) + d[i + 1] * frac
    } else {
        d[i]
    }
}

fn directed_all_pairs(from: &[[usize; 3]], to: &[[usize; 3]], spacing: [f64; 3]) -> Vec<f64> {
    from.iter()
        .map(|a| {
            to.iter()
                .map(|b| {
                    let mut s = 0.0;
                    for k in 0..3 {
                        let d = (a[k] as f64 - b[k] as f64) * spacing[k];
                        s += d * d;
                    }
                    s
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect()
}

/// Exact (100th percentile) symmetric Hausdorff distance between boundaries.
pub fn oracle_hausdorff(pred: &[bool], reference: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> f64 {
    let pb = oracle_boundary(pred, dims);
    let rb = oracle_boundary(reference, dims);
    let f = directed_all_pairs(&pb, &rb, spacing).into_iter().fold(0.0, f64::max);
    let b = directed_all_pairs(&rb, &pb, spacing).into_iter().fold(0.0, f64::max);
    f.max(b)
}

pub fn oracle_metrics(pred: &[bool], reference: &[bool], dims: [usize; 3], spacing: [f64; 3]) -> OracleMetrics {
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..pred.len() {
        match (pred[i], reference[i]) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let p = tp + fp;
    let r = tp + fn_;
    let dice = if p + r == 0 { 1.0 } else { 2.0 * tp as f64 / (p + r) as f64 };
    let sensitivity = if tp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fn_) as f64 };
    let specificity = if tn + fp == 0 { 1.0 } else { tn as f64 / (tn + fp) as f64 };

    let (hd95, hd95_undefined) = match (p == 0, r == 0) {
        (true, true) => (0.0, false),
        (true, false) | (false, true) => {
            let diag = (0..3).map(|k| (dims[k] as f64 * spacing[k]).powi(2)).sum::<f64>().sqrt();
            (diag, true)
        }
        (false, false) => {
            let pb = oracle_boundary(pred, dims);
            let rb = oracle_boundary(reference, dims);
            let f = oracle_percentile95(directed_all_pairs(&pb, &rb, spacing));
            let b = oracle_percentile95(directed_all_pairs(&rb, &pb, spacing));
            (f.max(b), false)
        }
    };
    OracleMetrics {
        dice,
        hd95,
        hd95_undefined,
        sensitivity,
        specificity,
    }
}

/// Region masks computed straight from label values: ET, TC, WT.
pub fn oracle_region_masks(vol: &LabelVolume) -> [Vec<bool>; 3] {
    let v = vol.voxels();
    [
        v.iter().map(|&l| l == 4).collect(),
        v.iter().map(|&l| l == 1 || l == 4).collect(),
        v.iter().map(|&l| l == 1 || l == 2 || l == 4).collect(),
    ]
}

/// A random label volume built from a handful of overlapping ellipsoids.
/// Some draws leave a region empty, which exercises the sentinel paths.
pub fn random_blob_volume<R: Rng>(rng: &mut R, side: usize, spacing: [f64; 3]) -> LabelVolume {
    let dims = [side; 3];
    let mut voxels = vec![0u8; side * side * side];
    let blobs = rng.random_range(0..5);
    for _ in 0..blobs {
        let label = [1u8, 2, 4][rng.random_range(0..3)];
        let c: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..side as f64));
        let r: [f64; 3] = std::array::from_fn(|_| rng.random_range(1.0..side as f64 / 3.0));
        for z in 0..side {
            for y in 0..side {
                for x in 0..side {
                    let p = [x as f64, y as f64, z as f64];
                    let q: f64 = (0..3).map(|k| ((p[k] - c[k]) / r[k]).powi(2)).sum();
                    if q <= 1.0 {
                        voxels[at(dims, x, y, z)] = label;
                    }
                }
            }
        }
    }
    LabelVolume::new(dims, spacing, voxels).unwrap()
}
