use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::data::resample::resample_linear;
use crate::data::FrequencySequence;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Unnormalised one-sided DFT magnitudes `|X_k|`, `k = 0..=L/2`.
pub fn one_sided_magnitude<T: Scalar>(row: &[T]) -> Vec<T> {
    let mut planner = FftPlanner::new();
    one_sided_with(&mut planner, row)
}

fn one_sided_with<T: Scalar>(planner: &mut FftPlanner<T>, row: &[T]) -> Vec<T> {
    let n = row.len();
    let fft = planner.plan_fft_forward(n);
    let mut buf: Vec<Complex<T>> = row.iter().map(|&v| Complex::new(v, T::zero())).collect();
    fft.process(&mut buf);
    buf.truncate(n / 2 + 1);
    buf.into_iter().map(|c| c.norm()).collect()
}

/// Per-row one-sided magnitude spectrum, linearly resampled to `freq_len` bins.
pub fn fft_magnitude<T: Scalar>(x: &Matrix<T>, freq_len: usize) -> Result<FrequencySequence<T>> {
    if x.cols() < 2 {
        return Err(Error::validation(
            "spectrum needs at least 2 samples per row",
        ));
    }
    if !x.is_finite() {
        return Err(Error::validation(
            "spectrum input contains non-finite values",
        ));
    }
    if freq_len == 0 {
        return Err(Error::config("data.frequency_length", "must be positive"));
    }
    let mut planner = FftPlanner::new();
    let mut out = Matrix::zeros(x.rows(), freq_len);
    for i in 0..x.rows() {
        let mags = one_sided_with(&mut planner, x.row(i));
        let resampled = resample_linear(&mags, freq_len);
        // interpolating non-negative values cannot go negative, but guard rounding
        for (o, v) in out.row_mut(i).iter_mut().zip(resampled) {
            *o = v.max(T::zero());
        }
    }
    FrequencySequence::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    #[test]
    fn constant_row_is_pure_dc() {
        let mags = one_sided_magnitude(&[1.0f64; 200]);
        assert!((mags[0] - 200.0).abs() < 1e-9);
        assert!(mags[1..].iter().all(|&m| m.abs() < 1e-9));
    }

    #[test]
    fn cosine_peaks_at_its_bin() {
        let row: Vec<f64> = (0..200)
            .map(|t| (2.0 * PI * 10.0 * t as f64 / 200.0).cos())
            .collect();
        let mags = one_sided_magnitude(&row);
        let argmax = mags
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 10);
        assert!((mags[10] - 100.0).abs() < 1e-9);
    }

    #[test]
    fn parseval_against_time_domain_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &len in &[200usize, 173] {
            let row: Vec<f64> = (0..len).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mags = one_sided_magnitude(&row);
            // fold the one-sided spectrum back to the full two-sided energy
            let mut spectral = 0.0;
            for (k, m) in mags.iter().enumerate() {
                let mirrored = k != 0 && !(len % 2 == 0 && k == len / 2);
                spectral += if mirrored { 2.0 } else { 1.0 } * m * m;
            }
            let energy: f64 = row.iter().map(|v| v * v).sum();
            assert!(((spectral - len as f64 * energy) / (len as f64 * energy)).abs() < 1e-6);
        }
    }

    #[test]
    fn circular_shift_leaves_magnitudes_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let row: Vec<f64> = (0..200).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut shifted = row.clone();
        shifted.rotate_left(37);
        let x = Matrix::from_rows(&[row, shifted]).unwrap();
        let f = fft_magnitude(&x, 200).unwrap();
        let v = f.values();
        for j in 0..200 {
            assert!((v[(0, j)] - v[(1, j)]).abs() < 1e-6);
        }
    }

    #[test]
    fn output_shape_and_sign() {
        let x = Matrix::from_fn(4, 173, |i, j| ((i * 31 + j * 7) % 13) as f32 - 6.0);
        let f = fft_magnitude(&x, 200).unwrap();
        assert_eq!(f.values().shape(), (4, 200));
        assert!(f.values().as_slice().iter().all(|&v| v >= 0.0));
        let bad = Matrix::from_vec(1, 2, vec![f32::NAN, 1.0]).unwrap();
        assert!(fft_magnitude(&bad, 200).is_err());
    }
}
