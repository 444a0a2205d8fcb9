use std::collections::{BTreeMap, BTreeSet};

use super::LabeledScan;
use crate::error::{Error, Result};

/// Scan indices of one cross-validation round.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub folds: Vec<Fold>,
}

pub fn make_folds(scans: &[LabeledScan], k: usize) -> Result<FoldPlan> {
    let keys: Vec<(usize, usize)> = scans
        .iter()
        .map(|s| (s.label.index(), s.location_set))
        .collect();
    make_folds_by_key(&keys, k)
}

/// Grouped folds over `(category, location_set)` keys.
///
/// Within each category the distinct location sets are ranked in ascending
/// order. Fold `i` tests every set whose rank is `i mod k`, validates on the
/// set of rank `(i + 1) mod n` and trains on the rest. A category with only
/// one non-test set keeps it for training and contributes no validation
/// scans.
pub fn make_folds_by_key(keys: &[(usize, usize)], k: usize) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::InsufficientSets(format!("k must be at least 2, got {k}")));
    }
    let mut sets: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for &(cat, set) in keys {
        sets.entry(cat).or_default().insert(set);
    }
    let mut rank: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (&cat, s) in &sets {
        if s.len() < k {
            return Err(Error::InsufficientSets(format!(
                "category {cat} has {} location sets, need at least {k}",
                s.len()
            )));
        }
        for (r, &set) in s.iter().enumerate() {
            rank.insert((cat, set), r);
        }
    }
    let folds = (0..k)
        .map(|i| {
            let mut fold = Fold::default();
            for (idx, key) in keys.iter().enumerate() {
                let n = sets[&key.0].len();
                let r = rank[key];
                if r % k == i {
                    fold.test.push(idx);
                } else if r == (i + 1) % n && has_two_non_test(n, k, i) {
                    fold.validation.push(idx);
                } else {
                    fold.train.push(idx);
                }
            }
            fold
        })
        .collect();
    Ok(FoldPlan { k, folds })
}

/// Whether a category with `n` ranked sets keeps at least two sets outside
/// the test group of fold `i`.
fn has_two_non_test(n: usize, k: usize, i: usize) -> bool {
    let tested = (0..n).filter(|r| r % k == i).count();
    n - tested >= 2
}
