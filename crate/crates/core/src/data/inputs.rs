use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::connectivity::{
    graph_from_connectivity, pearson_connectivity, power_envelope_connectivity, BrainGraph,
};
use crate::data::resample::{check_segmenting, resample_rows};
use crate::data::{
    fft_magnitude, unify_fmri_series, Modality, RoiTimeSeries, SegmentSet, SubjectRecord,
};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Unified fMRI length; also the fMRI spectrum length.
    pub fmri_length: usize,
    /// EEG length after resampling, before segmentation.
    pub eeg_unified_length: usize,
    pub segment_length: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            fmri_length: 200,
            eeg_unified_length: 25_000,
            segment_length: 200,
        }
    }
}

impl DataConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fmri_length < 2 {
            return Err(Error::config("data.fmri_length", "must be at least 2"));
        }
        if self.fmri_length != self.segment_length {
            return Err(Error::config(
                "data.fmri_length",
                "must equal data.segment_length so both modalities share sequence length",
            ));
        }
        check_segmenting(self.eeg_unified_length, self.segment_length)
    }

    pub fn eeg_segments(&self) -> usize {
        self.eeg_unified_length / self.segment_length.max(1)
    }
}

/// Per-domain inputs of one run: graph, unified series and its spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct RunInputs<T> {
    pub modality: Modality,
    pub graph: BrainGraph<T>,
    /// `n_roi × unified length`.
    pub temporal: Matrix<T>,
    /// `n_roi × unified length` magnitude spectrum.
    pub frequency: Matrix<T>,
}

impl<T: Scalar> RunInputs<T> {
    pub fn build(run: &RoiTimeSeries<T>, cfg: &DataConfig) -> Result<Self> {
        cfg.validate()?;
        match run.modality() {
            Modality::Fmri => {
                let temporal = unify_fmri_series(run, cfg.fmri_length)?;
                // spectrum of the raw-length run, interpolated to the unified length
                let frequency = fft_magnitude(run.values(), cfg.fmri_length)?.into_inner();
                let graph = graph_from_connectivity(&pearson_connectivity(run.values())?.matrix)?;
                Ok(RunInputs {
                    modality: Modality::Fmri,
                    graph,
                    temporal,
                    frequency,
                })
            }
            Modality::Eeg => {
                if !run.values().is_finite() {
                    return Err(Error::validation("EEG run contains non-finite values"));
                }
                let temporal = resample_rows(run.values(), cfg.eeg_unified_length);
                let frequency = fft_magnitude(&temporal, cfg.eeg_unified_length)?.into_inner();
                let graph =
                    graph_from_connectivity(&power_envelope_connectivity(run.values())?.matrix)?;
                Ok(RunInputs {
                    modality: Modality::Eeg,
                    graph,
                    temporal,
                    frequency,
                })
            }
        }
    }

    pub fn n_roi(&self) -> usize {
        self.temporal.rows()
    }

    pub fn temporal_segments(&self, segment_length: usize) -> Result<SegmentSet<T>> {
        SegmentSet::split(&self.temporal, segment_length)
    }

    pub fn frequency_segments(&self, segment_length: usize) -> Result<SegmentSet<T>> {
        SegmentSet::split(&self.frequency, segment_length)
    }
}

/// Domain inputs of every run of a subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectInputs<T> {
    pub subject_id: String,
    pub labels: BTreeMap<String, i64>,
    pub fmri: Vec<RunInputs<T>>,
    pub eeg: Vec<RunInputs<T>>,
}

impl<T: Scalar> SubjectInputs<T> {
    pub fn runs(&self, modality: Modality) -> &[RunInputs<T>] {
        match modality {
            Modality::Fmri => &self.fmri,
            Modality::Eeg => &self.eeg,
        }
    }

    pub fn n_roi(&self) -> Option<usize> {
        self.fmri.first().or(self.eeg.first()).map(RunInputs::n_roi)
    }

    pub fn is_paired(&self) -> bool {
        !self.fmri.is_empty() && !self.eeg.is_empty()
    }

    /// Drops every run of `modality`.
    pub fn without(mut self, modality: Modality) -> Self {
        match modality {
            Modality::Fmri => self.fmri.clear(),
            Modality::Eeg => self.eeg.clear(),
        }
        self
    }
}

pub fn build_subject_inputs<T: Scalar>(
    record: &SubjectRecord<T>,
    cfg: &DataConfig,
) -> Result<SubjectInputs<T>> {
    let fmri = record
        .fmri_runs
        .iter()
        .map(|r| RunInputs::build(r, cfg))
        .collect::<Result<Vec<_>>>()?;
    let eeg = record
        .eeg_runs
        .iter()
        .map(|r| RunInputs::build(r, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok(SubjectInputs {
        subject_id: record.subject_id.clone(),
        labels: record.labels.clone(),
        fmri,
        eeg,
    })
}
