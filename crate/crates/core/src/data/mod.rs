//! Dataset construction: length unification, segmentation, spectra,
//! cross-matched pairing, synthetic cohorts and the on-disk layout.

mod cohort;
mod inputs;
mod resample;
mod spectrum;
pub mod store;
mod synthetic;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

pub use cohort::{cross_match_pairs, total_cross_pairs, PairedSample, SubjectRecord};
pub use inputs::{build_subject_inputs, DataConfig, RunInputs, SubjectInputs};
pub use resample::{resample_and_segment_eeg, resample_linear, resample_rows, unify_fmri_series};
pub use spectrum::{fft_magnitude, one_sided_magnitude};
pub use synthetic::{generate_synthetic_cohort, synthesize_subject, task_name, SyntheticSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Fmri,
    Eeg,
}

impl Modality {
    pub const ALL: [Modality; 2] = [Modality::Fmri, Modality::Eeg];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Fmri => "fmri",
            Modality::Eeg => "eeg",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn other(self) -> Modality {
        match self {
            Modality::Fmri => Modality::Eeg,
            Modality::Eeg => Modality::Fmri,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fmri" => Ok(Modality::Fmri),
            "eeg" => Ok(Modality::Eeg),
            other => Err(Error::validation(format!("unknown modality `{other}`"))),
        }
    }
}

/// View of a run the encoders operate on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Spatial,
    Temporal,
    Frequency,
}

impl Domain {
    pub const ALL: [Domain; 3] = [Domain::Spatial, Domain::Temporal, Domain::Frequency];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Spatial => "spatial",
            Domain::Temporal => "temporal",
            Domain::Frequency => "frequency",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "spatial" => Ok(Domain::Spatial),
            "temporal" => Ok(Domain::Temporal),
            "frequency" => Ok(Domain::Frequency),
            other => Err(Error::validation(format!("unknown domain `{other}`"))),
        }
    }
}

/// ROI-by-time signal matrix of one recording run.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiTimeSeries<T> {
    values: Matrix<T>,
    sampling_rate: f64,
    modality: Modality,
}

impl<T: Scalar> RoiTimeSeries<T> {
    pub fn new(values: Matrix<T>, sampling_rate: f64, modality: Modality) -> Result<Self> {
        if values.rows() == 0 || values.cols() == 0 {
            return Err(Error::validation(
                "time series must have at least one ROI and one sample",
            ));
        }
        if !values.is_finite() {
            return Err(Error::validation("time series contains non-finite values"));
        }
        if !(sampling_rate.is_finite() && sampling_rate > 0.0) {
            return Err(Error::validation("sampling rate must be positive"));
        }
        Ok(RoiTimeSeries {
            values,
            sampling_rate,
            modality,
        })
    }

    pub fn values(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn n_roi(&self) -> usize {
        self.values.rows()
    }

    pub fn len(&self) -> usize {
        self.values.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn sampling_rate(&self) -> f64 {
        self.sampling_rate
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }
}

/// Equal-shape contiguous sub-sequences of one unified series.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSet<T> {
    segments: Vec<Matrix<T>>,
}

impl<T: Scalar> SegmentSet<T> {
    pub fn new(segments: Vec<Matrix<T>>) -> Result<Self> {
        if let Some(first) = segments.first() {
            if segments.iter().any(|s| s.shape() != first.shape()) {
                return Err(Error::validation("segments must share one shape"));
            }
        }
        Ok(SegmentSet { segments })
    }

    /// Splits `series` column-wise into `series.cols() / segment_length` pieces.
    pub fn split(series: &Matrix<T>, segment_length: usize) -> Result<Self> {
        if segment_length == 0 || !series.cols().is_multiple_of(segment_length) {
            return Err(Error::config(
                "data.segment_length",
                format!(
                    "length {} is not divisible by segment length {segment_length}",
                    series.cols()
                ),
            ));
        }
        let count = series.cols() / segment_length;
        let segments = (0..count)
            .map(|s| series.slice_cols(s * segment_length, segment_length))
            .collect();
        Ok(SegmentSet { segments })
    }

    pub fn segments(&self) -> &[Matrix<T>] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segment_length(&self) -> usize {
        self.segments.first().map_or(0, Matrix::cols)
    }

    pub fn into_inner(self) -> Vec<Matrix<T>> {
        self.segments
    }
}

/// Non-negative magnitude spectra, one row per ROI.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencySequence<T> {
    values: Matrix<T>,
}

impl<T: Scalar> FrequencySequence<T> {
    pub fn new(values: Matrix<T>) -> Result<Self> {
        if values
            .as_slice()
            .iter()
            .any(|v| !v.is_finite() || *v < T::zero())
        {
            return Err(Error::validation(
                "spectrum entries must be finite and non-negative",
            ));
        }
        Ok(FrequencySequence { values })
    }

    pub fn values(&self) -> &Matrix<T> {
        &self.values
    }

    pub fn into_inner(self) -> Matrix<T> {
        self.values
    }
}
