//! Deterministic balanced k-fold splits.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A balanced assignment of `n` items to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    k: usize,
    assignment: Vec<usize>,
    seed: u64,
}

/// Shuffle item indices with a seeded generator and deal them out so
/// fold sizes differ by at most one (the first `n % k` folds get the
/// extra item).
pub fn split_kfold(n_items: usize, k: usize, seed: u64) -> Result<FoldSplit> {
    if k < 2 {
        return Err(Error::invalid(format!("fold count k={k} must be >= 2")));
    }
    if k > n_items {
        return Err(Error::invalid(format!(
            "fold count k={k} exceeds item count n={n_items}"
        )));
    }
    let mut order: Vec<usize> = (0..n_items).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let base = n_items / k;
    let remainder = n_items % k;
    let mut assignment = vec![0usize; n_items];
    let mut cursor = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < remainder);
        for &item in &order[cursor..cursor + size] {
            assignment[item] = fold;
        }
        cursor += size;
    }
    Ok(FoldSplit { k, assignment, seed })
}

impl FoldSplit {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n_items(&self) -> usize {
        self.assignment.len()
    }

    pub fn fold_of(&self, item: usize) -> usize {
        self.assignment[item]
    }

    /// Item indices assigned to `fold`, ascending.
    pub fn test_items(&self, fold: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|&(_, &f)| f == fold)
            .map(|(i, _)| i)
            .collect()
    }

    /// Item indices outside `fold`, ascending.
    pub fn train_items(&self, fold: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|&(_, &f)| f != fold)
            .map(|(i, _)| i)
            .collect()
    }
}
