//! Modality-aware projection heads into the shared contrastive space.
//!
//! Each head is `Linear → GELU → Linear` ending at [`PROJECTION_DIM`]. EEG
//! sequence heads take the concatenation of all segment embeddings in
//! temporal order, so they see segment order.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::encoders::{apply_linear, DomainEmbedding};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::{ParamId, ParamSet};
use crate::scalar::Scalar;

pub const PROJECTION_DIM: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProjectorConfig {
    pub hidden: usize,
}

impl Default for ProjectorConfig {
    fn default() -> Self {
        ProjectorConfig { hidden: 128 }
    }
}

impl ProjectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::config("projector.hidden", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Projector {
    d_in: usize,
    n_segments: usize,
    l1: (ParamId, ParamId),
    l2: (ParamId, ParamId),
}

impl Projector {
    /// Head over `n_segments` concatenated `d_in`-wide embeddings (1 for a single embedding).
    pub fn register<T: Scalar, R: Rng>(
        ps: &mut ParamSet<T>,
        prefix: &str,
        d_in: usize,
        n_segments: usize,
        cfg: &ProjectorConfig,
        rng: &mut R,
    ) -> Self {
        let width = d_in * n_segments;
        let l1 = (
            ps.add_normal(format!("{prefix}.l1.w"), width, cfg.hidden, rng),
            ps.add_zeros(format!("{prefix}.l1.b"), 1, cfg.hidden),
        );
        let l2 = (
            ps.add_normal(format!("{prefix}.l2.w"), cfg.hidden, PROJECTION_DIM, rng),
            ps.add_zeros(format!("{prefix}.l2.b"), 1, PROJECTION_DIM),
        );
        Projector {
            d_in,
            n_segments,
            l1,
            l2,
        }
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn weights(&self) -> [(ParamId, ParamId); 2] {
        [self.l1, self.l2]
    }

    /// Projects the `1 × d_in` pooled vectors in `parts` (concatenated in order).
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<'_, T>, parts: &[Var]) -> Result<Var> {
        if parts.len() != self.n_segments {
            return Err(Error::validation(format!(
                "projector expects {} segment embeddings, got {}",
                self.n_segments,
                parts.len()
            )));
        }
        for &p in parts {
            tape.value(p)
                .ensure_shape(1, self.d_in, "pooled embedding")?;
        }
        let x = if parts.len() == 1 {
            parts[0]
        } else {
            tape.hcat(parts)
        };
        let h = apply_linear(tape, x, self.l1);
        let h = tape.gelu(h);
        Ok(apply_linear(tape, h, self.l2))
    }
}

fn project<T: Scalar>(
    pooled: Vec<Matrix<T>>,
    params: &ParamSet<T>,
    proj: &Projector,
) -> Result<Matrix<T>> {
    let mut tape = Tape::new(params);
    let vars: Vec<Var> = pooled.into_iter().map(|m| tape.input(m)).collect();
    let out = proj.forward(&mut tape, &vars)?;
    Ok(tape.value(out).clone())
}

/// `1 × 128` projection of one embedding.
pub fn project_single<T: Scalar>(
    e: &DomainEmbedding<T>,
    params: &ParamSet<T>,
    proj: &Projector,
) -> Result<Matrix<T>> {
    project(vec![e.pooled.clone()], params, proj)
}

/// `1 × 128` projection of the concatenated segment embeddings.
pub fn project_segments<T: Scalar>(
    es: &[DomainEmbedding<T>],
    params: &ParamSet<T>,
    proj: &Projector,
) -> Result<Matrix<T>> {
    project(es.iter().map(|e| e.pooled.clone()).collect(), params, proj)
}
