//! Teacher-to-student distillation on class probabilities.
//!
//! The student is trained on a mix of cross-entropy against the teacher's
//! distribution (soft target) and against the true label (hard target).

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Smallest student probability fed to a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

static CLAMP_COUNT: AtomicU64 = AtomicU64::new(0);

/// Times a student probability has been clamped to [`PROB_FLOOR`] in this process.
pub fn clamp_warnings() -> u64 {
    CLAMP_COUNT.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistillConfig {
    pub lambda_soft: f64,
    pub distill_temperature: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            lambda_soft: 0.5,
            distill_temperature: 1.0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_soft) {
            return Err(Error::config("distill.lambda_soft", "must lie in [0, 1]"));
        }
        if !(self.distill_temperature > 0.0 && self.distill_temperature.is_finite()) {
            return Err(Error::config(
                "distill.distill_temperature",
                "must be positive",
            ));
        }
        Ok(())
    }
}

fn check_probs<T: Scalar>(p: &[T], what: &str) -> Result<()> {
    let sum = p.iter().map(|v| v.as_f64()).sum::<f64>();
    if (sum - 1.0).abs() > crate::losses::normalised_tol::<T>(p.len())
        || p.iter().any(|v| !(v.as_f64() >= 0.0))
    {
        return Err(Error::validation(format!(
            "{what} is not a probability vector"
        )));
    }
    Ok(())
}

fn safe_ln<T: Scalar>(q: T) -> T {
    if q.as_f64() < PROB_FLOOR {
        CLAMP_COUNT.fetch_add(1, Ordering::Relaxed);
        T::of(PROB_FLOOR).ln()
    } else {
        q.ln()
    }
}

/// `−Σ p log q`.
pub fn soft_target_loss<T: Scalar>(p_teacher: &[T], q_student: &[T]) -> Result<T> {
    if p_teacher.len() != q_student.len() {
        return Err(Error::shape(
            p_teacher.len().to_string(),
            q_student.len().to_string(),
        ));
    }
    check_probs(p_teacher, "teacher distribution")?;
    check_probs(q_student, "student distribution")?;
    Ok(p_teacher
        .iter()
        .zip(q_student)
        .filter(|(p, _)| **p > T::zero())
        .map(|(&p, &q)| -p * safe_ln(q))
        .sum())
}

/// `−log q_y`.
pub fn hard_target_loss<T: Scalar>(y: usize, q_student: &[T]) -> Result<T> {
    check_probs(q_student, "student distribution")?;
    let q = *q_student.get(y).ok_or_else(|| {
        Error::validation(format!(
            "label {y} out of range for {} classes",
            q_student.len()
        ))
    })?;
    Ok(-safe_ln(q))
}

pub fn distill_step_loss<T: Scalar>(
    p_teacher: &[T],
    q_student: &[T],
    y: usize,
    cfg: &DistillConfig,
) -> Result<T> {
    let lambda = T::of(cfg.lambda_soft);
    Ok(lambda * soft_target_loss(p_teacher, q_student)?
        + (T::one() - lambda) * hard_target_loss(y, q_student)?)
}

/// Temperature-softened softmax of a logit vector.
pub fn softmax_t<T: Scalar>(logits: &[T], temperature: f64) -> Vec<T> {
    let t = T::of(temperature);
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = logits.iter().map(|&v| ((v - max) / t).exp()).collect();
    let s = e.iter().copied().sum::<T>();
    e.into_iter().map(|v| v / s).collect()
}

/// Loss and gradient w.r.t. the student logits. The teacher enters as a
/// constant distribution (already softened by the caller), so no gradient
/// can reach it. With temperature `t`, `q = softmax(logits / t)`.
pub fn distill_logit_grad<T: Scalar>(
    p_teacher: &[T],
    student_logits: &[T],
    y: usize,
    cfg: &DistillConfig,
) -> Result<(T, Vec<T>)> {
    let q = softmax_t(student_logits, cfg.distill_temperature);
    let loss = distill_step_loss(p_teacher, &q, y, cfg)?;
    let lambda = T::of(cfg.lambda_soft);
    let inv_t = T::one() / T::of(cfg.distill_temperature);
    let grad = q
        .iter()
        .zip(p_teacher)
        .enumerate()
        .map(|(k, (&qk, &pk))| {
            let yk = if k == y { T::one() } else { T::zero() };
            (lambda * (qk - pk) + (T::one() - lambda) * (qk - yk)) * inv_t
        })
        .collect();
    Ok((loss, grad))
}
