//! Adam with bias correction.

use crate::matrix::Matrix;
use crate::params::{Grads, ParamSet};
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Matrix<T>>,
    v: Vec<Matrix<T>>,
    t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamSet<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, _, p)| Matrix::zeros(p.rows(), p.cols()))
                .collect()
        };
        Adam {
            beta1,
            beta2,
            eps,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One update of every parameter that has a gradient and passes `trainable`.
    pub fn step(
        &mut self,
        params: &mut ParamSet<T>,
        grads: &Grads<T>,
        lr: f64,
        trainable: impl Fn(&str) -> bool,
    ) {
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(self.t as i32));
        let c2 = T::of(1.0 - self.beta2.powi(self.t as i32));
        let (lr, eps) = (T::of(lr), T::of(self.eps));
        let one = T::one();
        for (id, g) in grads.iter() {
            if !trainable(params.name(id)) {
                continue;
            }
            let k = id.0;
            let m = self.m[k].as_mut_slice();
            let v = self.v[k].as_mut_slice();
            let p = params.get_mut(id).as_mut_slice();
            for i in 0..p.len() {
                let gi = g.as_slice()[i];
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] = p[i] - lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_step_decreases_a_convex_quadratic() {
        // f(x) = Σ a_i (x_i − c_i)²
        let a = [0.5, 1.0, 2.0, 4.0];
        let c = [1.0, -2.0, 0.5, 3.0];
        let mut ps = ParamSet::<f64>::new();
        let id = ps.add("x", Matrix::zeros(1, 4));
        let f = |ps: &ParamSet<f64>| {
            ps.get(id)
                .as_slice()
                .iter()
                .enumerate()
                .map(|(i, x)| a[i] * (x - c[i]).powi(2))
                .sum::<f64>()
        };
        let mut adam = Adam::new(&ps, 0.9, 0.999, 1e-8);
        let mut prev = f(&ps);
        for _ in 0..60 {
            let mut g = Grads::new(&ps);
            let x = ps.get(id).as_slice().to_vec();
            g.accumulate(
                id,
                &Matrix::row_vector((0..4).map(|i| 2.0 * a[i] * (x[i] - c[i])).collect()),
            );
            adam.step(&mut ps, &g, 1e-2, |_| true);
            let now = f(&ps);
            assert!(now < prev, "{now} >= {prev}");
            prev = now;
        }
        assert_eq!(adam.steps(), 60);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut ps = ParamSet::<f64>::new();
        let a = ps.add("enc.w", Matrix::filled(1, 2, 1.0));
        let b = ps.add("cls.w", Matrix::filled(1, 2, 1.0));
        let mut g = Grads::new(&ps);
        g.accumulate(a, &Matrix::filled(1, 2, 1.0));
        g.accumulate(b, &Matrix::filled(1, 2, 1.0));
        let mut adam = Adam::new(&ps, 0.9, 0.999, 1e-8);
        adam.step(&mut ps, &g, 0.1, |n| n.starts_with("cls."));
        assert_eq!(ps.get(a).as_slice(), &[1.0, 1.0]);
        assert!(ps.get(b).as_slice()[0] < 1.0);
    }
}
