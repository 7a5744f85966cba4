use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::manifest::Dataset;
use crate::error::{ensure_arg, Error, Result};
use crate::rng::{self, Stream};

/// Partition of class ids into seen and unseen sets. Both lists are sorted.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassSplit {
    pub seen_ids: Vec<u32>,
    pub unseen_ids: Vec<u32>,
}

impl ClassSplit {
    pub fn new(mut seen_ids: Vec<u32>, mut unseen_ids: Vec<u32>) -> Result<Self> {
        seen_ids.sort_unstable();
        unseen_ids.sort_unstable();
        let seen: BTreeSet<u32> = seen_ids.iter().copied().collect();
        ensure_arg!(seen.len() == seen_ids.len(), "duplicate seen class ids");
        let unseen: BTreeSet<u32> = unseen_ids.iter().copied().collect();
        ensure_arg!(unseen.len() == unseen_ids.len(), "duplicate unseen class ids");
        ensure_arg!(
            seen.is_disjoint(&unseen),
            "seen and unseen class sets overlap"
        );
        Ok(Self {
            seen_ids,
            unseen_ids,
        })
    }

    pub fn validate_for(&self, num_classes: usize) -> Result<()> {
        if let Some(c) = self
            .seen_ids
            .iter()
            .chain(&self.unseen_ids)
            .find(|&&c| c as usize >= num_classes)
        {
            return Err(Error::Argument(format!(
                "class {c} not in a table of {num_classes} classes"
            )));
        }
        Ok(())
    }

    pub fn is_seen(&self, class: u32) -> bool {
        self.seen_ids.binary_search(&class).is_ok()
    }

    pub fn is_unseen(&self, class: u32) -> bool {
        self.unseen_ids.binary_search(&class).is_ok()
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: Self = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
        Self::new(s.seen_ids, s.unseen_ids)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Draws `num_unseen` of `num_classes` class ids uniformly without replacement.
pub fn make_random_split(num_classes: usize, num_unseen: usize, seed: u64) -> Result<ClassSplit> {
    ensure_arg!(
        num_unseen > 0 && num_unseen < num_classes,
        "num_unseen must be in 1..{num_classes}, got {num_unseen}"
    );
    let mut rng = rng::stream(seed, Stream::Split);
    let perm = rng::permutation(num_classes, &mut rng);
    let unseen = perm[..num_unseen].iter().map(|&c| c as u32).collect();
    let seen = perm[num_unseen..].iter().map(|&c| c as u32).collect();
    ClassSplit::new(seen, unseen)
}

/// Sample-level partition of a dataset under a class split.
///
/// Unseen-class samples are all test samples. Each seen class keeps
/// `round(holdout_fraction * n_c)` of its samples out of training for
/// seen-class evaluation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplePartition {
    pub train: Vec<usize>,
    pub test_seen: Vec<usize>,
    pub test_unseen: Vec<usize>,
}

impl SamplePartition {
    pub fn new(dataset: &Dataset, split: &ClassSplit, holdout_fraction: f64, seed: u64) -> Result<Self> {
        let all: Vec<usize> = (0..dataset.labels.len()).collect();
        let mut rng = rng::stream(seed, Stream::Holdout);
        Self::within(dataset, &all, split, holdout_fraction, &mut rng)
    }

    /// Partitions only the samples in `pool`; samples whose class is in
    /// neither side of `split` are ignored.
    pub fn within(
        dataset: &Dataset,
        pool: &[usize],
        split: &ClassSplit,
        holdout_fraction: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        ensure_arg!(
            (0.0..1.0).contains(&holdout_fraction),
            "holdout_fraction must be in [0, 1), got {holdout_fraction}"
        );
        split.validate_for(dataset.num_classes())?;
        let mut pool = pool.to_vec();
        pool.sort_unstable();
        pool.dedup();
        ensure_arg!(
            pool.last().is_none_or(|&i| i < dataset.labels.len()),
            "sample index out of range"
        );
        let mut train = Vec::new();
        let mut test_seen = Vec::new();
        for &c in &split.seen_ids {
            let mut idx: Vec<usize> = pool.iter().copied().filter(|&i| dataset.labels[i] == c).collect();
            rng::shuffle_in_place(&mut idx, rng);
            let hold = (holdout_fraction * idx.len() as f64).round() as usize;
            let hold = hold.min(idx.len().saturating_sub(1));
            test_seen.extend_from_slice(&idx[..hold]);
            train.extend_from_slice(&idx[hold..]);
        }
        train.sort_unstable();
        test_seen.sort_unstable();
        let test_unseen = pool
            .iter()
            .copied()
            .filter(|&i| split.is_unseen(dataset.labels[i]))
            .collect();
        Ok(Self {
            train,
            test_seen,
            test_unseen,
        })
    }

    /// All test samples (seen then unseen), sorted by index.
    pub fn test_all(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.test_seen.iter().chain(&self.test_unseen).copied().collect();
        all.sort_unstable();
        all
    }
}
