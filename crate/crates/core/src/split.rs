//! Random partitions and subsamples of a comparison sample.

use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::rng::{stream_rng, streams};
use crate::{ComparisonDataset, Error, Result};

/// Balanced random assignment of `n` records to `fold_count` folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    fold_count: usize,
    assignment: Vec<usize>,
}

impl FoldAssignment {
    /// Builds an assignment from explicit fold ids, checking that every fold is used.
    pub fn from_assignment(fold_count: usize, assignment: Vec<usize>) -> Result<Self> {
        let mut sizes = alloc::vec![0usize; fold_count];
        for &f in &assignment {
            if f >= fold_count {
                return Err(Error::InvalidArgument(format!("fold id {f} out of range")));
            }
            sizes[f] += 1;
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidArgument("every fold must be nonempty".into()));
        }
        Ok(Self { fold_count, assignment })
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    pub fn fold_count(&self) -> usize {
        self.fold_count
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = alloc::vec![0; self.fold_count];
        for &f in &self.assignment {
            s[f] += 1;
        }
        s
    }

    /// Record positions in fold `k`, ascending.
    pub fn fold(&self, k: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] == k).collect()
    }

    /// Record positions outside fold `k`, ascending.
    pub fn complement(&self, k: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.assignment[i] != k).collect()
    }
}

/// Random balanced partition of `0..n` into `fold_count` folds.
///
/// A seeded shuffle is dealt round-robin, so fold sizes differ by at most one
/// and the lower-numbered folds receive the extra records.
pub fn assign_folds(n: usize, fold_count: usize, seed: u64) -> Result<FoldAssignment> {
    if fold_count < 2 {
        return Err(Error::InvalidArgument("at least two folds are required".into()));
    }
    if n < fold_count {
        return Err(Error::InvalidArgument(format!("{n} records cannot fill {fold_count} folds")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, streams::FOLDS));
    let mut assignment = alloc::vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignment[i] = pos % fold_count;
    }
    Ok(FoldAssignment { fold_count, assignment })
}

/// Uniform sample without replacement of `⌈f·n⌉` records, kept in their
/// original order. `f = 1` returns the dataset unchanged.
pub fn subsample(dataset: &ComparisonDataset, fraction: f64, seed: u64) -> Result<ComparisonDataset> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} not in (0, 1]")));
    }
    let n = dataset.len();
    if fraction == 1.0 {
        if n == 0 {
            return Err(Error::Empty("subsample"));
        }
        return Ok(dataset.clone());
    }
    let keep = num_traits::Float::ceil(fraction * n as f64 - 1e-9).max(0.0) as usize;
    if keep == 0 {
        return Err(Error::Empty("subsample"));
    }
    let mut positions: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, streams::SUBSAMPLE);
    let (chosen, _) = positions.partial_shuffle(&mut rng, keep);
    let mut chosen = chosen.to_vec();
    chosen.sort_unstable();
    Ok(dataset.select(&chosen))
}
