//! Self-supervised objectives on softmax-normalised projections.
//!
//! Every loss returns its value together with the gradient w.r.t. each
//! argument, so the training loop can seed the backward pass of the
//! projector/encoder tapes directly. Functions named `*_logits` take the
//! pre-softmax projections `h` and differentiate through the softmax.
//!
//! Similarities are cosine similarities between distribution rows, scaled as
//! `exp(sim / τ)`, and every batch reduction is a mean.

use serde::{Deserialize, Serialize};

use crate::autodiff::softmax_rows;
use crate::data::{Domain, Modality};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

const NORMALISED_TOL: f64 = 1e-6;

/// Slack on `Σ = 1` that also absorbs the rounding of a length-`n` sum.
pub(crate) fn normalised_tol<T: Scalar>(n: usize) -> f64 {
    NORMALISED_TOL.max(T::epsilon().as_f64() * n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InfoNceVariant {
    /// Denominator over the anchors only, `j = i` included.
    #[default]
    Literal,
    /// `j = i` excluded and the augmented positive added to the denominator.
    Ntxent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub tau: f64,
    pub alpha_cd: f64,
    pub alpha_cm: f64,
    pub teacher_stopgrad: bool,
    pub infonce_variant: InfoNceVariant,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 0.2,
            alpha_cd: 0.5,
            alpha_cm: 0.8,
            teacher_stopgrad: true,
            infonce_variant: InfoNceVariant::Literal,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::config("loss.tau", "must be positive"));
        }
        for (key, a) in [
            ("loss.alpha_cd", self.alpha_cd),
            ("loss.alpha_cm", self.alpha_cm),
        ] {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::config(key, "must lie in [0, 1]"));
            }
        }
        Ok(())
    }
}

/// A loss value and its gradient w.r.t. each argument, in argument order.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad<T> {
    pub value: T,
    pub grads: Vec<Matrix<T>>,
}

impl<T: Scalar> LossGrad<T> {
    fn scaled(mut self, s: T) -> Self {
        self.value = self.value * s;
        self.grads.iter_mut().for_each(|g| *g = g.scale(s));
        self
    }
}

/// Which modality is the student (`x`) in the cross-modal distillation term.
/// fMRI teaches EEG in the spatial domain, EEG teaches fMRI elsewhere.
pub fn student_modality(domain: Domain) -> Modality {
    match domain {
        Domain::Spatial => Modality::Eeg,
        Domain::Temporal | Domain::Frequency => Modality::Fmri,
    }
}

pub fn softmax<T: Scalar>(h: &Matrix<T>) -> Matrix<T> {
    softmax_rows(h)
}

/// Pulls `dz` back through `z = softmax(h)` row by row.
pub fn softmax_backward<T: Scalar>(z: &Matrix<T>, dz: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(z.rows(), z.cols());
    for i in 0..z.rows() {
        let zr = z.row(i);
        let gr = dz.row(i);
        let dot = zr.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>();
        for (o, (&zv, &gv)) in out.row_mut(i).iter_mut().zip(zr.iter().zip(gr)) {
            *o = zv * (gv - dot);
        }
    }
    out
}

fn check_pair<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            format!("{}x{}", a.rows(), a.cols()),
            format!("{}x{}", b.rows(), b.cols()),
        ));
    }
    if a.rows() == 0 {
        return Err(Error::validation("empty batch"));
    }
    Ok(())
}

fn check_distribution<T: Scalar>(z: &Matrix<T>) -> Result<()> {
    for (i, r) in z.iter_rows().enumerate() {
        let sum = r.iter().copied().sum::<T>().as_f64();
        if (sum - 1.0).abs() > normalised_tol::<T>(r.len())
            || r.iter().any(|v| !(v.as_f64() >= 0.0))
        {
            return Err(Error::validation(format!(
                "row {i} is not a probability distribution"
            )));
        }
    }
    Ok(())
}

/// Rows scaled to unit norm plus the original norms.
fn unit_rows<T: Scalar>(a: &Matrix<T>) -> Result<(Matrix<T>, Vec<T>)> {
    let mut out = a.clone();
    let mut norms = Vec::with_capacity(a.rows());
    for i in 0..a.rows() {
        let r = out.row_mut(i);
        let n = r.iter().map(|&v| v * v).sum::<T>().sqrt();
        if !(n > T::zero()) || !n.is_finite() {
            return Err(Error::validation(format!(
                "row {i} has zero norm; cosine similarity undefined"
            )));
        }
        r.iter_mut().for_each(|v| *v = *v / n);
        norms.push(n);
    }
    Ok((out, norms))
}

/// `d/da` of a unit-normalisation `â = a/|a|` given `d/dâ`.
fn unit_backward<T: Scalar>(unit: &Matrix<T>, norms: &[T], g: &Matrix<T>) -> Matrix<T> {
    let mut out = Matrix::zeros(unit.rows(), unit.cols());
    for i in 0..unit.rows() {
        let u = unit.row(i);
        let gr = g.row(i);
        let dot = u.iter().zip(gr).map(|(&a, &b)| a * b).sum::<T>();
        for (o, (&uv, &gv)) in out.row_mut(i).iter_mut().zip(u.iter().zip(gr)) {
            *o = (gv - uv * dot) / norms[i];
        }
    }
    out
}

/// Pairwise cosine similarities `S[i][j] = cos(a_i, b_j)` with a closure
/// mapping `dL/dS` to `(dL/da, dL/db)`.
struct Cosine<T> {
    ua: Matrix<T>,
    na: Vec<T>,
    ub: Matrix<T>,
    nb: Vec<T>,
    sim: Matrix<T>,
}

impl<T: Scalar> Cosine<T> {
    fn new(a: &Matrix<T>, b: &Matrix<T>) -> Result<Self> {
        let (ua, na) = unit_rows(a)?;
        let (ub, nb) = unit_rows(b)?;
        let sim = ua.matmul_t(&ub);
        Ok(Cosine {
            ua,
            na,
            ub,
            nb,
            sim,
        })
    }

    fn backward(&self, g: &Matrix<T>) -> (Matrix<T>, Matrix<T>) {
        let dua = g.matmul(&self.ub);
        let dub = g.t_matmul(&self.ua);
        (
            unit_backward(&self.ua, &self.na, &dua),
            unit_backward(&self.ub, &self.nb, &dub),
        )
    }
}

/// Log-sum-exp of a slice and the softmax weights over it.
fn log_sum_exp<T: Scalar>(v: &[T]) -> (T, Vec<T>) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let e: Vec<T> = v.iter().map(|&x| (x - max).exp()).collect();
    let s = e.iter().copied().sum::<T>();
    (max + s.ln(), e.into_iter().map(|x| x / s).collect())
}

pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> T {
    let dot = a.iter().zip(b).map(|(&x, &y)| x * y).sum::<T>();
    let na = a.iter().map(|&x| x * x).sum::<T>().sqrt();
    let nb = b.iter().map(|&x| x * x).sum::<T>().sqrt();
    dot / (na * nb)
}

/// Batch-mean InfoNCE between anchors `z` and their augmented views.
/// Gradients: `[d/dz, d/dz_aug]`.
pub fn intra_domain_contrastive<T: Scalar>(
    z: &Matrix<T>,
    z_aug: &Matrix<T>,
    cfg: &LossConfig,
) -> Result<LossGrad<T>> {
    check_pair(z, z_aug)?;
    let n = z.rows();
    let tau = T::of(cfg.tau);
    let inv_n = T::one() / T::of(n as f64);
    let pos = Cosine::new(z, z_aug)?;
    let neg = Cosine::new(z, z)?;
    let mut g_pos = Matrix::zeros(n, n);
    let mut g_neg = Matrix::zeros(n, n);
    let mut total = T::zero();
    for i in 0..n {
        let p = pos.sim[(i, i)] / tau;
        match cfg.infonce_variant {
            InfoNceVariant::Literal => {
                let logits: Vec<T> = neg.sim.row(i).iter().map(|&s| s / tau).collect();
                let (lse, w) = log_sum_exp(&logits);
                total = total + lse - p;
                g_pos[(i, i)] = -inv_n / tau;
                for (j, wj) in w.into_iter().enumerate() {
                    g_neg[(i, j)] = wj * inv_n / tau;
                }
            }
            InfoNceVariant::Ntxent => {
                let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
                let mut logits = vec![p];
                logits.extend(others.iter().map(|&j| neg.sim[(i, j)] / tau));
                let (lse, w) = log_sum_exp(&logits);
                total = total + lse - p;
                g_pos[(i, i)] = (w[0] - T::one()) * inv_n / tau;
                for (k, &j) in others.iter().enumerate() {
                    g_neg[(i, j)] = w[k + 1] * inv_n / tau;
                }
            }
        }
    }
    let (dz_p, dz_aug) = pos.backward(&g_pos);
    let (dz_a, dz_b) = neg.backward(&g_neg);
    let dz = dz_p.add(&dz_a).add(&dz_b);
    Ok(LossGrad {
        value: total * inv_n,
        grads: vec![dz, dz_aug],
    })
}

/// Batch-mean InfoNCE with same-subject rows of two domains as positives.
/// Gradients: `[d/dz_x, d/dz_y]`.
pub fn cross_domain_contrastive<T: Scalar>(
    z_x: &Matrix<T>,
    z_y: &Matrix<T>,
    cfg: &LossConfig,
) -> Result<LossGrad<T>> {
    check_pair(z_x, z_y)?;
    let n = z_x.rows();
    let tau = T::of(cfg.tau);
    let inv_n = T::one() / T::of(n as f64);
    let cos = Cosine::new(z_x, z_y)?;
    let mut g = Matrix::zeros(n, n);
    let mut total = T::zero();
    for i in 0..n {
        let logits: Vec<T> = cos.sim.row(i).iter().map(|&s| s / tau).collect();
        let (lse, w) = log_sum_exp(&logits);
        total = total + lse - logits[i];
        for (j, wj) in w.into_iter().enumerate() {
            g[(i, j)] = wj * inv_n / tau;
        }
        g[(i, i)] = g[(i, i)] - inv_n / tau;
    }
    let (dx, dy) = cos.backward(&g);
    Ok(LossGrad {
        value: total * inv_n,
        grads: vec![dx, dy],
    })
}

/// Anchor and augmented distributions of the three domains of one modality.
pub struct DomainViews<'a, T> {
    pub anchor: [&'a Matrix<T>; 3],
    pub augmented: [&'a Matrix<T>; 3],
}

/// `α·mean(intra terms) + (1−α)·mean(cross terms, both directions)`.
/// Gradients: anchors S, T, F then augmented S, T, F.
pub fn cd_ssl<T: Scalar>(views: &DomainViews<'_, T>, cfg: &LossConfig) -> Result<LossGrad<T>> {
    let alpha = T::of(cfg.alpha_cd);
    let w_intra = alpha / T::of(3.0);
    let w_cross = (T::one() - alpha) / T::of(6.0);
    let mut grads: Vec<Matrix<T>> = views
        .anchor
        .iter()
        .chain(&views.augmented)
        .map(|m| Matrix::zeros(m.rows(), m.cols()))
        .collect();
    let mut value = T::zero();
    for d in 0..3 {
        let l = intra_domain_contrastive(views.anchor[d], views.augmented[d], cfg)?;
        value = value + w_intra * l.value;
        grads[d].scaled_add_assign(w_intra, &l.grads[0]);
        grads[3 + d].scaled_add_assign(w_intra, &l.grads[1]);
    }
    for x in 0..3 {
        for y in 0..3 {
            if x == y {
                continue;
            }
            let l = cross_domain_contrastive(views.anchor[x], views.anchor[y], cfg)?;
            value = value + w_cross * l.value;
            grads[x].scaled_add_assign(w_cross, &l.grads[0]);
            grads[y].scaled_add_assign(w_cross, &l.grads[1]);
        }
    }
    Ok(LossGrad { value, grads })
}

/// [`cd_ssl`] on pre-softmax projections; gradients in the same order, w.r.t. `h`.
pub fn cd_ssl_logits<T: Scalar>(
    anchor: [&Matrix<T>; 3],
    augmented: [&Matrix<T>; 3],
    cfg: &LossConfig,
) -> Result<LossGrad<T>> {
    let za: Vec<Matrix<T>> = anchor.iter().map(|h| softmax(h)).collect();
    let zg: Vec<Matrix<T>> = augmented.iter().map(|h| softmax(h)).collect();
    let views = DomainViews {
        anchor: [&za[0], &za[1], &za[2]],
        augmented: [&zg[0], &zg[1], &zg[2]],
    };
    let l = cd_ssl(&views, cfg)?;
    let zs: Vec<&Matrix<T>> = za.iter().chain(&zg).collect();
    Ok(LossGrad {
        value: l.value,
        grads: l
            .grads
            .iter()
            .zip(zs)
            .map(|(g, z)| softmax_backward(z, g))
            .collect(),
    })
}

/// Per-row `KL(p_i ‖ q_i)` summed over rows, with `(d/dp, d/dq)`.
fn kl_rows<T: Scalar>(p: &Matrix<T>, q: &Matrix<T>) -> (T, Matrix<T>, Matrix<T>) {
    let mut total = T::zero();
    let mut dp = Matrix::zeros(p.rows(), p.cols());
    let mut dq = Matrix::zeros(p.rows(), p.cols());
    for (k, (&pv, &qv)) in p.as_slice().iter().zip(q.as_slice()).enumerate() {
        if pv > T::zero() {
            let lr = (pv / qv).ln();
            total = total + pv * lr;
            dp.as_mut_slice()[k] = lr + T::one();
            dq.as_mut_slice()[k] = -pv / qv;
        }
    }
    (total, dp, dq)
}

/// Batch mean of `KL(p_i ‖ q_i)`.
pub fn kl_divergence<T: Scalar>(p: &Matrix<T>, q: &Matrix<T>) -> Result<T> {
    check_pair(p, q)?;
    Ok(kl_rows(p, q).0 / T::of(p.rows() as f64))
}

/// Directed distillation from teacher `z_y` into student `z_x`: a symmetric
/// contrastive denominator plus `KL(z_x ‖ z_y)`. Gradients `[d/dz_x, d/dz_y]`;
/// the teacher gradient is exactly zero under `teacher_stopgrad`.
pub fn intra_domain_cross_modal_distill<T: Scalar>(
    z_x: &Matrix<T>,
    z_y: &Matrix<T>,
    cfg: &LossConfig,
) -> Result<LossGrad<T>> {
    check_pair(z_x, z_y)?;
    check_distribution(z_x)?;
    check_distribution(z_y)?;
    let n = z_x.rows();
    let tau = T::of(cfg.tau);
    let inv_n = T::one() / T::of(n as f64);
    let cos = Cosine::new(z_x, z_y)?;
    let s = &cos.sim;
    let mut g = Matrix::zeros(n, n);
    let mut total = T::zero();
    for i in 0..n {
        let logits: Vec<T> = (0..n).map(|j| (s[(i, j)] + s[(j, i)]) / tau).collect();
        let (lse, w) = log_sum_exp(&logits);
        total = total + lse - s[(i, i)] / tau;
        for (j, wj) in w.into_iter().enumerate() {
            let d = wj * inv_n / tau;
            g[(i, j)] = g[(i, j)] + d;
            g[(j, i)] = g[(j, i)] + d;
        }
        g[(i, i)] = g[(i, i)] - inv_n / tau;
    }
    let (mut dx, mut dy) = cos.backward(&g);
    let (kl, dp, dq) = kl_rows(z_x, z_y);
    total = total + kl;
    dx.scaled_add_assign(inv_n, &dp);
    dy.scaled_add_assign(inv_n, &dq);
    if cfg.teacher_stopgrad {
        dy = Matrix::zeros(n, z_y.cols());
    }
    Ok(LossGrad {
        value: total * inv_n,
        grads: vec![dx, dy],
    })
}

/// The contrastive part of [`intra_domain_cross_modal_distill`] alone.
pub fn distill_contrastive_term<T: Scalar>(
    z_x: &Matrix<T>,
    z_y: &Matrix<T>,
    cfg: &LossConfig,
) -> Result<T> {
    let full = intra_domain_cross_modal_distill(z_x, z_y, cfg)?;
    Ok(full.value - kl_divergence(z_x, z_y)?)
}

/// Elementwise mean of the two modalities' projections.
pub fn fuse_embeddings<T: Scalar>(h_f: &Matrix<T>, h_e: &Matrix<T>) -> Result<Matrix<T>> {
    check_pair(h_f, h_e)?;
    Ok(h_f.zip_map(h_e, |a, b| (a + b) * T::of(0.5)))
}

/// Batch mean of `KL(f‖e) + KL(e‖fe) + KL(fe‖f)`. Gradients `[d/dz_f, d/dz_e, d/dz_fe]`.
pub fn cross_modal_consistency<T: Scalar>(
    z_f: &Matrix<T>,
    z_e: &Matrix<T>,
    z_fe: &Matrix<T>,
) -> Result<LossGrad<T>> {
    check_pair(z_f, z_e)?;
    check_pair(z_f, z_fe)?;
    let inv_n = T::one() / T::of(z_f.rows() as f64);
    let (a, da_f, da_e) = kl_rows(z_f, z_e);
    let (b, db_e, db_fe) = kl_rows(z_e, z_fe);
    let (c, dc_fe, dc_f) = kl_rows(z_fe, z_f);
    Ok(LossGrad {
        value: (a + b + c) * inv_n,
        grads: vec![
            da_f.add(&dc_f).scale(inv_n),
            da_e.add(&db_e).scale(inv_n),
            db_fe.add(&dc_fe).scale(inv_n),
        ],
    })
}

/// `α·L_IM + (1−α)·L_CM` on pre-softmax projections of one domain.
/// Gradients `[d/dh_f, d/dh_e]`.
pub fn cm_ssl<T: Scalar>(
    h_f: &Matrix<T>,
    h_e: &Matrix<T>,
    cfg: &LossConfig,
    domain: Domain,
) -> Result<LossGrad<T>> {
    let alpha = T::of(cfg.alpha_cm);
    let z_f = softmax(h_f);
    let z_e = softmax(h_e);
    let h_fe = fuse_embeddings(h_f, h_e)?;
    let z_fe = softmax(&h_fe);

    let (zx, zy) = match student_modality(domain) {
        Modality::Eeg => (&z_e, &z_f),
        Modality::Fmri => (&z_f, &z_e),
    };
    let im = intra_domain_cross_modal_distill(zx, zy, cfg)?.scaled(alpha);
    let (dz_f_im, dz_e_im) = match student_modality(domain) {
        Modality::Eeg => (&im.grads[1], &im.grads[0]),
        Modality::Fmri => (&im.grads[0], &im.grads[1]),
    };
    let cm = cross_modal_consistency(&z_f, &z_e, &z_fe)?.scaled(T::one() - alpha);

    let dz_f = dz_f_im.add(&cm.grads[0]);
    let dz_e = dz_e_im.add(&cm.grads[1]);
    let dh_fe = softmax_backward(&z_fe, &cm.grads[2]).scale(T::of(0.5));
    let mut dh_f = softmax_backward(&z_f, &dz_f);
    let mut dh_e = softmax_backward(&z_e, &dz_e);
    dh_f.add_assign(&dh_fe);
    dh_e.add_assign(&dh_fe);
    Ok(LossGrad {
        value: im.value + cm.value,
        grads: vec![dh_f, dh_e],
    })
}
