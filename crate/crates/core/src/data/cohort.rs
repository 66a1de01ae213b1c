use std::collections::BTreeMap;

use crate::data::RoiTimeSeries;
use crate::scalar::Scalar;

/// All runs and labels recorded for one subject. Either run list may be empty.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord<T> {
    pub subject_id: String,
    pub fmri_runs: Vec<RoiTimeSeries<T>>,
    pub eeg_runs: Vec<RoiTimeSeries<T>>,
    pub labels: BTreeMap<String, i64>,
}

impl<T: Scalar> SubjectRecord<T> {
    pub fn new(subject_id: impl Into<String>) -> Self {
        SubjectRecord {
            subject_id: subject_id.into(),
            fmri_runs: Vec::new(),
            eeg_runs: Vec::new(),
            labels: BTreeMap::new(),
        }
    }
}

/// One (fMRI run, EEG run) combination of a subject.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PairedSample {
    pub subject_id: String,
    pub fmri_run_index: usize,
    pub eeg_run_index: usize,
}

/// Every fMRI run of the subject paired with every EEG run.
pub fn cross_match_pairs<T: Scalar>(record: &SubjectRecord<T>) -> Vec<PairedSample> {
    pair_indices(
        &record.subject_id,
        record.fmri_runs.len(),
        record.eeg_runs.len(),
    )
}

pub(crate) fn pair_indices(subject_id: &str, n_fmri: usize, n_eeg: usize) -> Vec<PairedSample> {
    let mut pairs = Vec::with_capacity(n_fmri * n_eeg);
    for f in 0..n_fmri {
        for e in 0..n_eeg {
            pairs.push(PairedSample {
                subject_id: subject_id.to_string(),
                fmri_run_index: f,
                eeg_run_index: e,
            });
        }
    }
    pairs
}

pub fn total_cross_pairs<T: Scalar>(records: &[SubjectRecord<T>]) -> usize {
    records.iter().map(|r| cross_match_pairs(r).len()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Modality;
    use crate::matrix::Matrix;

    fn run(modality: Modality) -> RoiTimeSeries<f32> {
        RoiTimeSeries::new(Matrix::zeros(1, 2), 1.0, modality).unwrap()
    }

    fn subject(id: &str, n_fmri: usize, n_eeg: usize) -> SubjectRecord<f32> {
        let mut s = SubjectRecord::new(id);
        s.fmri_runs = (0..n_fmri).map(|_| run(Modality::Fmri)).collect();
        s.eeg_runs = (0..n_eeg).map(|_| run(Modality::Eeg)).collect();
        s
    }

    #[test]
    fn two_by_two_gives_four_pairs() {
        let pairs = cross_match_pairs(&subject("s1", 2, 2));
        assert_eq!(pairs.len(), 4);
        let combos: Vec<(usize, usize)> = pairs
            .iter()
            .map(|p| (p.fmri_run_index, p.eeg_run_index))
            .collect();
        assert_eq!(combos, vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
    }

    #[test]
    fn missing_modality_gives_no_pairs() {
        assert!(cross_match_pairs(&subject("s1", 2, 0)).is_empty());
        assert!(cross_match_pairs(&subject("s1", 0, 2)).is_empty());
    }
}
