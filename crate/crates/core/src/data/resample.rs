use crate::data::{Modality, RoiTimeSeries, SegmentSet};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Linear interpolation of `src` onto `target_len` points spanning the same
/// normalised time axis. First and last samples are reproduced exactly.
pub fn resample_linear<T: Scalar>(src: &[T], target_len: usize) -> Vec<T> {
    let n = src.len();
    if n == 0 || target_len == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![src[0]; target_len];
    }
    if target_len == 1 {
        return vec![src[0]];
    }
    let last = n - 1;
    let denom = (target_len - 1) as f64;
    (0..target_len)
        .map(|k| {
            let pos = (k * last) as f64 / denom;
            let lo = (pos.floor() as usize).min(last);
            if lo == last {
                return src[last];
            }
            let frac = T::of(pos - lo as f64);
            src[lo] + frac * (src[lo + 1] - src[lo])
        })
        .collect()
}

/// Applies [`resample_linear`] to every row.
pub fn resample_rows<T: Scalar>(x: &Matrix<T>, target_len: usize) -> Matrix<T> {
    let mut out = Matrix::zeros(x.rows(), target_len);
    for i in 0..x.rows() {
        out.row_mut(i)
            .copy_from_slice(&resample_linear(x.row(i), target_len));
    }
    out
}

/// Brings an fMRI run of arbitrary length to `target_length` samples per ROI.
pub fn unify_fmri_series<T: Scalar>(
    x: &RoiTimeSeries<T>,
    target_length: usize,
) -> Result<Matrix<T>> {
    if x.modality() != Modality::Fmri {
        return Err(Error::validation("unify_fmri_series expects an fMRI run"));
    }
    if x.len() < 2 {
        return Err(Error::validation("fMRI run needs at least 2 samples"));
    }
    if target_length < 2 {
        return Err(Error::config(
            "data.fmri_length",
            "target length must be at least 2",
        ));
    }
    if !x.values().is_finite() {
        return Err(Error::validation("fMRI run contains non-finite values"));
    }
    Ok(resample_rows(x.values(), target_length))
}

/// Resamples an EEG run to `unified_length` and cuts it into contiguous segments.
pub fn resample_and_segment_eeg<T: Scalar>(
    x: &RoiTimeSeries<T>,
    unified_length: usize,
    segment_length: usize,
) -> Result<SegmentSet<T>> {
    if x.modality() != Modality::Eeg {
        return Err(Error::validation(
            "resample_and_segment_eeg expects an EEG run",
        ));
    }
    check_segmenting(unified_length, segment_length)?;
    if !x.values().is_finite() {
        return Err(Error::validation("EEG run contains non-finite values"));
    }
    SegmentSet::split(&resample_rows(x.values(), unified_length), segment_length)
}

pub(crate) fn check_segmenting(unified_length: usize, segment_length: usize) -> Result<()> {
    if segment_length == 0 || unified_length == 0 || !unified_length.is_multiple_of(segment_length)
    {
        return Err(Error::config(
            "data.eeg_segment_length",
            format!(
                "unified length {unified_length} is not a multiple of segment length {segment_length}"
            ),
        ));
    }
    Ok(())
}
