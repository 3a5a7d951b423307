use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dataset::LabeledDataset;
use super::label::ActivityLabel;

#[derive(Debug, Error)]
pub enum FoldError {
    #[error("fold count must be at least 2, got {0}")]
    BadK(usize),
    #[error("validation fraction must lie in [0, 1), got {0}")]
    BadValidationFraction(f64),
    #[error("class '{class}' has only {count} windows, fewer than k = {k}")]
    TooFewMembers { class: ActivityLabel, count: usize, k: usize },
}

/// A stratified k-fold plan over dataset indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    /// `k` disjoint index sets partitioning `0..n`.
    pub folds: Vec<Vec<usize>>,
}

/// Index views for one cross-validation round.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldSplit {
    pub fold: usize,
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Build `k` stratified folds: within every class the indices are shuffled
/// (seeded) and dealt round-robin, so per-fold class counts differ from an
/// even split by at most one.
pub fn stratified_folds(
    dataset: &LabeledDataset,
    k: usize,
    validation_fraction: f64,
    seed: u64,
) -> Result<FoldPlan, FoldError> {
    if k < 2 {
        return Err(FoldError::BadK(k));
    }
    if !(0.0..1.0).contains(&validation_fraction) {
        return Err(FoldError::BadValidationFraction(validation_fraction));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];
    // next fold to receive a sample, shared across classes so totals balance
    let mut cursor = 0usize;
    for label in ActivityLabel::ALL {
        let mut members: Vec<usize> = dataset
            .windows
            .iter()
            .enumerate()
            .filter(|(_, w)| w.label == Some(label))
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            continue;
        }
        if members.len() < k {
            return Err(FoldError::TooFewMembers { class: label, count: members.len(), k });
        }
        members.shuffle(&mut rng);
        for idx in members {
            folds[cursor % k].push(idx);
            cursor += 1;
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(FoldPlan { k, seed, validation_fraction, folds })
}

impl FoldPlan {
    /// Train/validation/test indices for fold `i`. The validation set is a
    /// stratified slice of the training pool, deterministic in `seed` and `i`.
    pub fn split(&self, i: usize, dataset: &LabeledDataset) -> FoldSplit {
        assert!(i < self.k, "fold index out of range");
        let test = self.folds[i].clone();
        let mut pool: Vec<usize> = (0..self.k).filter(|f| *f != i).flat_map(|f| self.folds[f].iter().copied()).collect();
        pool.sort_unstable();

        let mut rng = ChaCha20Rng::seed_from_u64(self.seed.wrapping_add(0x9e37_79b9).wrapping_add(i as u64));
        let mut validation = Vec::new();
        let mut train = Vec::new();
        for label in ActivityLabel::ALL {
            let mut members: Vec<usize> =
                pool.iter().copied().filter(|&idx| dataset.windows[idx].label == Some(label)).collect();
            if members.is_empty() {
                continue;
            }
            members.shuffle(&mut rng);
            let n_val = ((members.len() as f64) * self.validation_fraction).round() as usize;
            validation.extend_from_slice(&members[..n_val]);
            train.extend_from_slice(&members[n_val..]);
        }
        train.sort_unstable();
        validation.sort_unstable();
        FoldSplit { fold: i, train, validation, test }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::synth;

    fn tiny_dataset(per_class: &[(ActivityLabel, usize)]) -> LabeledDataset {
        synth::dataset_with_counts(per_class, 3, 99)
    }

    #[test]
    fn equal_classes_deal_one_each() {
        let ds = tiny_dataset(&[(ActivityLabel::Sleep, 5), (ActivityLabel::Cook, 5)]);
        let plan = stratified_folds(&ds, 5, 0.0, 1).unwrap();
        for fold in &plan.folds {
            assert_eq!(fold.len(), 2);
            let sleeps = fold.iter().filter(|&&i| ds.windows[i].label == Some(ActivityLabel::Sleep)).count();
            assert_eq!(sleeps, 1);
        }
    }

    #[test]
    fn folds_partition_indices() {
        let ds = tiny_dataset(&[(ActivityLabel::Sleep, 13), (ActivityLabel::Cook, 8), (ActivityLabel::Work, 6)]);
        let plan = stratified_folds(&ds, 4, 0.2, 7).unwrap();
        let mut all: Vec<usize> = plan.folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..ds.windows.len()).collect::<Vec<_>>());
        // per-class proportions within +-1
        for label in [ActivityLabel::Sleep, ActivityLabel::Cook, ActivityLabel::Work] {
            let counts: Vec<usize> = plan
                .folds
                .iter()
                .map(|f| f.iter().filter(|&&i| ds.windows[i].label == Some(label)).count())
                .collect();
            let max = counts.iter().max().unwrap();
            let min = counts.iter().min().unwrap();
            assert!(max - min <= 1, "class {label}: {counts:?}");
        }
    }

    #[test]
    fn same_seed_same_plan() {
        let ds = tiny_dataset(&[(ActivityLabel::Sleep, 10), (ActivityLabel::Cook, 10)]);
        let a = stratified_folds(&ds, 5, 0.2, 42).unwrap();
        let b = stratified_folds(&ds, 5, 0.2, 42).unwrap();
        assert_eq!(a, b);
        let c = stratified_folds(&ds, 5, 0.2, 43).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.split(2, &ds), b.split(2, &ds));
    }

    #[test]
    fn small_class_is_rejected_by_name() {
        let ds = tiny_dataset(&[(ActivityLabel::Sleep, 10), (ActivityLabel::Eat, 3)]);
        match stratified_folds(&ds, 5, 0.1, 1) {
            Err(FoldError::TooFewMembers { class, count, k }) => {
                assert_eq!(class, ActivityLabel::Eat);
                assert_eq!((count, k), (3, 5));
            }
            other => panic!("expected stratification error, got {other:?}"),
        }
    }

    #[test]
    fn split_sets_are_disjoint_and_cover() {
        let ds = tiny_dataset(&[(ActivityLabel::Sleep, 20), (ActivityLabel::Cook, 15)]);
        let plan = stratified_folds(&ds, 5, 0.25, 3).unwrap();
        let s = plan.split(1, &ds);
        let mut all = [s.train.clone(), s.validation.clone(), s.test.clone()].concat();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), ds.windows.len());
        assert!(!s.validation.is_empty());
    }
}
