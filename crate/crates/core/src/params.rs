//! Model parameter states and the elementwise arithmetic used by aggregation.
//!
//! A [`ModelParams`] is an ordered map from parameter-group name to a flat
//! array of finite `f64` values. Binary operations require both operands to be
//! *congruent*: same group names, in the same order, with the same lengths.

use std::fmt;

use indexmap::IndexMap;

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct ModelParams {
    groups: IndexMap<String, Vec<f64>>,
    total_len: usize,
}

impl ModelParams {
    /// Builds a parameter state from `(name, values)` pairs, keeping their order.
    ///
    /// Fails on duplicate or malformed names and on non-finite values.
    pub fn new<I, S>(groups: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut map = IndexMap::new();
        let mut total_len = 0;
        for (name, values) in groups {
            let name = name.into();
            validate_group_name(&name)?;
            if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteResult(format!("group '{name}' at index {pos}")));
            }
            total_len += values.len();
            if map.insert(name.clone(), values).is_some() {
                return Err(Error::ShapeMismatch(format!("duplicate group name '{name}'")));
            }
        }
        Ok(Self {
            groups: map,
            total_len,
        })
    }

    pub fn single(name: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        Self::new([(name.into(), values)])
    }

    /// Same layout, every value zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            groups: self
                .groups
                .iter()
                .map(|(k, v)| (k.clone(), vec![0.0; v.len()]))
                .collect(),
            total_len: self.total_len,
        }
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.groups.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn group(&self, name: &str) -> Option<&[f64]> {
        self.groups.get(name).map(Vec::as_slice)
    }

    /// All values in group order.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.groups.values().flat_map(|v| v.iter().copied())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.values().collect()
    }

    /// Rebuilds a state with this layout from a flat vector of `total_len` values.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.total_len {
            return Err(Error::ShapeMismatch(format!(
                "flat vector has {} values, layout expects {}",
                flat.len(),
                self.total_len
            )));
        }
        let mut offset = 0;
        let groups = self.groups.iter().map(|(k, v)| {
            let chunk = flat[offset..offset + v.len()].to_vec();
            offset += v.len();
            (k.clone(), chunk)
        });
        Self::new(groups.collect::<Vec<_>>())
    }

    pub fn is_congruent(&self, other: &ModelParams) -> bool {
        self.groups.len() == other.groups.len()
            && self
                .groups
                .iter()
                .zip(other.groups.iter())
                .all(|((ka, va), (kb, vb))| ka == kb && va.len() == vb.len())
    }

    pub fn check_congruent(&self, other: &ModelParams) -> Result<()> {
        if self.is_congruent(other) {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "layouts differ: [{}] vs [{}]",
                self.layout_summary(),
                other.layout_summary()
            )))
        }
    }

    fn layout_summary(&self) -> String {
        self.groups
            .iter()
            .map(|(k, v)| format!("{k}:{}", v.len()))
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// Combines two congruent states elementwise. The result is checked for finiteness.
    fn zip_with(&self, other: &ModelParams, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.check_congruent(other)?;
        let groups = self
            .groups
            .iter()
            .zip(other.groups.values())
            .map(|((k, a), b)| (k.clone(), a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()))
            .collect::<Vec<(String, Vec<f64>)>>();
        Self::new(groups)
    }
}

impl fmt::Debug for ModelParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.groups.iter()).finish()
    }
}

fn validate_group_name(name: &str) -> Result<()> {
    if name.is_empty() || name.chars().any(|c| c.is_control()) {
        return Err(Error::ShapeMismatch(format!("invalid group name {name:?}")));
    }
    Ok(())
}

/// One collaborator's locally trained parameters and its example count.
#[derive(Clone, Debug, PartialEq)]
pub struct CollaboratorUpdate {
    pub collaborator_id: String,
    pub params: ModelParams,
    sample_count: u64,
}

impl CollaboratorUpdate {
    pub fn new(collaborator_id: impl Into<String>, params: ModelParams, sample_count: u64) -> Result<Self> {
        if sample_count == 0 {
            return Err(Error::InvalidConfig("sample_count must be at least 1".into()));
        }
        Ok(Self {
            collaborator_id: collaborator_id.into(),
            params,
            sample_count,
        })
    }

    pub fn sample_count(&self) -> u64 {
        self.sample_count
    }

    pub fn with_params(&self, params: ModelParams) -> Self {
        Self {
            collaborator_id: self.collaborator_id.clone(),
            params,
            sample_count: self.sample_count,
        }
    }
}

/// Elementwise arithmetic mean of a non-empty list of congruent states.
///
/// Values are summed in list order and divided by the count once.
pub fn elementwise_mean<'a, I>(params: I) -> Result<ModelParams>
where
    I: IntoIterator<Item = &'a ModelParams>,
{
    let mut iter = params.into_iter();
    let first = iter.next().ok_or(Error::EmptyCohort)?;
    let mut sums: Vec<Vec<f64>> = first.groups.values().cloned().collect();
    let mut count = 1usize;
    for p in iter {
        first.check_congruent(p)?;
        for (acc, vals) in sums.iter_mut().zip(p.groups.values()) {
            for (a, v) in acc.iter_mut().zip(vals) {
                *a += v;
            }
        }
        count += 1;
    }
    let n = count as f64;
    let groups = first
        .groups
        .keys()
        .cloned()
        .zip(sums)
        .map(|(k, mut v)| {
            v.iter_mut().for_each(|x| *x /= n);
            (k, v)
        })
        .collect::<Vec<_>>();
    ModelParams::new(groups)
}

/// Sum of absolute elementwise differences over every group.
pub fn l1_distance(a: &ModelParams, b: &ModelParams) -> Result<f64> {
    a.check_congruent(b)?;
    Ok(a.values().zip(b.values()).map(|(x, y)| (x - y).abs()).sum())
}

/// `dst + coeff * src`, elementwise.
pub fn scale_add(dst: &ModelParams, src: &ModelParams, coeff: f64) -> Result<ModelParams> {
    dst.zip_with(src, |d, s| d + coeff * s)
}
