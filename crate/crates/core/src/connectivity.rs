//! Spatial-domain connectivity and brain-network graphs.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Offset inside the log of the squared envelope.
pub const LOG_POWER_EPS: f64 = 1e-8;
const SYMMETRY_TOL: f64 = 1e-6;

/// A connectivity matrix plus the rows that had zero variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Connectivity<T> {
    pub matrix: Matrix<T>,
    /// Degenerate (constant) channels; their off-diagonal entries are zero.
    pub degenerate: Vec<usize>,
}

impl<T: Scalar> Connectivity<T> {
    pub fn warnings(&self) -> Vec<String> {
        self.degenerate
            .iter()
            .map(|r| format!("ROI {r} has zero variance; its connectivity was set to 0"))
            .collect()
    }
}

/// Pearson correlation between every pair of rows.
pub fn pearson_connectivity<T: Scalar>(x: &Matrix<T>) -> Result<Connectivity<T>> {
    let (n, len) = x.shape();
    if len < 2 {
        return Err(Error::validation(
            "correlation needs at least 2 samples per row",
        ));
    }
    if !x.is_finite() {
        return Err(Error::validation(
            "connectivity input contains non-finite values",
        ));
    }
    let lf = T::of(len as f64);
    let mut z = Matrix::zeros(n, len);
    let mut degenerate = Vec::new();
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<T>() / lf;
        let norm = row
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .sum::<T>()
            .sqrt();
        // relative test so that rounding noise on a constant row still counts as constant
        let scale = row.iter().map(|v| v.abs()).fold(T::zero(), T::max);
        if norm <= T::epsilon() * T::of(len as f64).sqrt() * scale || norm == T::zero() {
            degenerate.push(i);
            continue;
        }
        for (o, &v) in z.row_mut(i).iter_mut().zip(row) {
            *o = (v - mean) / norm;
        }
    }
    let mut c = Matrix::identity(n);
    for i in 0..n {
        for j in (i + 1)..n {
            let r = z
                .row(i)
                .iter()
                .zip(z.row(j))
                .map(|(&a, &b)| a * b)
                .sum::<T>()
                .max(-T::one())
                .min(T::one());
            c[(i, j)] = r;
            c[(j, i)] = r;
        }
    }
    Ok(Connectivity {
        matrix: c,
        degenerate,
    })
}

/// Amplitude envelope `|x + i·H(x)|` using the FFT construction of the analytic signal.
pub fn hilbert_envelope<T: Scalar>(row: &[T]) -> Vec<T> {
    let mut planner = FftPlanner::new();
    envelope_with(&mut planner, row)
}

fn envelope_with<T: Scalar>(planner: &mut FftPlanner<T>, row: &[T]) -> Vec<T> {
    let n = row.len();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex<T>> = row.iter().map(|&v| Complex::new(v, T::zero())).collect();
    fwd.process(&mut buf);
    let two = T::of(2.0);
    let half = n / 2;
    for (k, c) in buf.iter_mut().enumerate() {
        let w = if k == 0 || (n.is_multiple_of(2) && k == half) {
            T::one()
        } else if k <= (n - 1) / 2 {
            two
        } else {
            T::zero()
        };
        *c = *c * w;
    }
    inv.process(&mut buf);
    let inv_n = T::one() / T::of(n as f64);
    buf.into_iter().map(|c| c.norm() * inv_n).collect()
}

/// Correlation of log-power amplitude envelopes.
pub fn power_envelope_connectivity<T: Scalar>(x: &Matrix<T>) -> Result<Connectivity<T>> {
    if x.cols() < 8 {
        return Err(Error::validation(
            "power envelope connectivity needs at least 8 samples",
        ));
    }
    if !x.is_finite() {
        return Err(Error::validation(
            "connectivity input contains non-finite values",
        ));
    }
    let eps = T::of(LOG_POWER_EPS);
    let mut planner = FftPlanner::new();
    let mut logp = Matrix::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        let env = envelope_with(&mut planner, x.row(i));
        for (o, e) in logp.row_mut(i).iter_mut().zip(env) {
            *o = (e * e + eps).ln();
        }
    }
    pearson_connectivity(&logp)
}

/// Functional connectome: each node's feature is its connectivity row and
/// edges carry the (signed) connectivity weight.
#[derive(Debug, Clone, PartialEq)]
pub struct BrainGraph<T> {
    pub node_features: Matrix<T>,
    pub adjacency: Matrix<T>,
}

impl<T: Scalar> BrainGraph<T> {
    pub fn n_nodes(&self) -> usize {
        self.adjacency.rows()
    }

    /// Upper-triangular `(i, j, weight)` triples with non-zero weight.
    pub fn edges(&self) -> Vec<(usize, usize, T)> {
        let n = self.n_nodes();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                let w = self.adjacency[(i, j)];
                if w != T::zero() {
                    out.push((i, j, w));
                }
            }
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        self.adjacency.is_symmetric(T::zero())
    }
}

pub fn graph_from_connectivity<T: Scalar>(c: &Matrix<T>) -> Result<BrainGraph<T>> {
    if c.rows() != c.cols() {
        return Err(Error::shape(
            "square connectivity matrix",
            format!("{}x{}", c.rows(), c.cols()),
        ));
    }
    if !c.is_finite() {
        return Err(Error::validation("connectivity contains non-finite values"));
    }
    if !c.is_symmetric(T::of(SYMMETRY_TOL)) {
        return Err(Error::validation("connectivity matrix is not symmetric"));
    }
    Ok(BrainGraph {
        node_features: c.clone(),
        adjacency: c.clone(),
    })
}
