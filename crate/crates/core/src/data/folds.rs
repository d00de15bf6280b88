//! Slide-level k-fold assignment.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldAssignment {
    pub k: usize,
    pub wsi_to_fold: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, wsi: &str) -> Option<usize> {
        self.wsi_to_fold.get(wsi).copied()
    }

    /// Slide ids of one fold, sorted.
    pub fn members(&self, fold: usize) -> Vec<&str> {
        self.wsi_to_fold.iter().filter(|(_, &f)| f == fold).map(|(w, _)| w.as_str()).collect()
    }
}

/// Seeded shuffle followed by round-robin assignment, without the
/// at-least-`k` requirement.
pub(crate) fn round_robin(wsi_ids: &[String], k: usize, seed: u64) -> FoldAssignment {
    let mut ids: Vec<&String> = wsi_ids.iter().collect();
    ids.sort();
    ids.dedup();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let wsi_to_fold = ids.into_iter().enumerate().map(|(i, id)| (id.clone(), i % k.max(1))).collect();
    FoldAssignment { k, wsi_to_fold }
}

/// Splits slide ids into `k` folds whose sizes differ by at most one.
/// Duplicate ids (several patches of one slide) share their fold.
pub fn kfold_split(wsi_ids: &[String], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k == 0 {
        return Err(Error::InvalidArgument("fold count must be positive".into()));
    }
    let mut unique: Vec<&String> = wsi_ids.iter().collect();
    unique.sort();
    unique.dedup();
    if unique.len() < k {
        return Err(Error::InvalidArgument(format!("{} slides cannot fill {k} folds", unique.len())));
    }
    Ok(round_robin(wsi_ids, k, seed))
}
