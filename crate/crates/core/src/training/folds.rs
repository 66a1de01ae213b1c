//! Subject-level cross-validation splits.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Fold index of every subject for one repeat. Subjects are shuffled with
/// a stream derived from `(seed, repeat)` and dealt round-robin, so fold
/// sizes differ by at most one.
pub fn assign_folds(
    n_subjects: usize,
    folds: usize,
    seed: u64,
    repeat: usize,
) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::config("train.folds", "need at least 2 folds"));
    }
    if n_subjects < folds {
        return Err(Error::validation(format!(
            "{n_subjects} subjects cannot fill {folds} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n_subjects).collect();
    order.shuffle(&mut rng::stream(seed, "folds", repeat as u64));
    let mut fold = vec![0; n_subjects];
    for (k, &s) in order.iter().enumerate() {
        fold[s] = k % folds;
    }
    Ok(fold)
}

/// `(train, test)` subject indices of fold `f`.
pub fn split(assignment: &[usize], f: usize) -> (Vec<usize>, Vec<usize>) {
    (0..assignment.len()).partition(|&s| assignment[s] != f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::hash_map::DefaultHasher;
    use std::hash::{Hash, Hasher};

    #[test]
    fn hundred_subjects_make_ten_folds_of_ten() {
        let a = assign_folds(100, 10, 3, 0).unwrap();
        for f in 0..10 {
            let (train, test) = split(&a, f);
            assert_eq!(test.len(), 10);
            assert_eq!(train.len(), 90);
            assert!(test.iter().all(|s| !train.contains(s)));
        }
    }

    #[test]
    fn repeats_reshuffle() {
        let hash = |v: &[usize]| {
            let mut h = DefaultHasher::new();
            v.hash(&mut h);
            h.finish()
        };
        let a = assign_folds(50, 10, 3, 0).unwrap();
        let b = assign_folds(50, 10, 3, 1).unwrap();
        assert_ne!(hash(&a), hash(&b));
        assert_eq!(a, assign_folds(50, 10, 3, 0).unwrap());
    }

    #[test]
    fn too_few_subjects_is_rejected() {
        assert!(matches!(
            assign_folds(9, 10, 0, 0),
            Err(Error::Validation(_))
        ));
    }
}
