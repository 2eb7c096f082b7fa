use std::collections::BTreeSet;

use rand::seq::index;

use super::FederationConfig;
use crate::dp::stream::{derive_stream, COHORT_DOMAIN};
use crate::error::{Error, Result};

/// Rejection-sampling attempts before giving up on finding an unseen cohort.
pub const MAX_COHORT_RETRIES: usize = 10_000;

/// Canonical collaborator ids `col_00`, `col_01`, ... zero-padded so that
/// lexicographic order equals numeric order.
pub fn collaborator_ids(n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len().max(2);
    (0..n).map(|i| format!("col_{i:0width$}")).collect()
}

/// `ceil(fraction * n)`, tolerant of binary rounding in the product.
pub fn cohort_size(n_collaborators: usize, fraction: f64) -> usize {
    let raw = fraction * n_collaborators as f64;
    ((raw - 1e-9).ceil().max(0.0) as usize).min(n_collaborators)
}

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}

/// Cohorts already used in a run, each stored as a sorted id list.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CohortHistory {
    seen: BTreeSet<Vec<String>>,
}

impl CohortHistory {
    pub fn insert(&mut self, cohort: &[String]) -> bool {
        let mut key = cohort.to_vec();
        key.sort();
        self.seen.insert(key)
    }

    pub fn contains(&self, cohort: &[String]) -> bool {
        let mut key = cohort.to_vec();
        key.sort();
        self.seen.contains(&key)
    }

    pub fn len(&self) -> usize {
        self.seen.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seen.is_empty()
    }
}

/// Draws a uniformly random cohort of `ceil(fraction * n)` collaborators for
/// `round`, rejecting any set already in `history` when uniqueness is on.
/// Returned ids are sorted.
pub fn sample_cohort(round: u32, history: &CohortHistory, cfg: &FederationConfig) -> Result<Vec<String>> {
    let n = cfg.n_collaborators;
    let k = cohort_size(n, cfg.cohort_fraction);
    if k == 0 {
        return Err(Error::InvalidConfig("cohort size rounds to zero".into()));
    }
    let exhausted = || Error::CohortsExhausted {
        round,
        seen: history.len(),
    };
    if cfg.unique_cohorts && history.len() as u128 >= binomial(n, k) {
        return Err(exhausted());
    }
    let ids = collaborator_ids(n);
    let mut rng = derive_stream(COHORT_DOMAIN, cfg.sampling_seed, round, "");
    for _ in 0..MAX_COHORT_RETRIES {
        let mut picked = index::sample(&mut rng, n, k).into_vec();
        picked.sort_unstable();
        let cohort: Vec<String> = picked.into_iter().map(|i| ids[i].clone()).collect();
        if !cfg.unique_cohorts || !history.contains(&cohort) {
            return Ok(cohort);
        }
    }
    Err(exhausted())
}
