//! Domain encoders shared by both modalities.
//!
//! The spatial encoder is a graph transformer: one token per ROI, embedded
//! from the node's connectivity row plus a learned per-ROI position, with the
//! adjacency added to every attention logit through a learned per-head scale.
//! The temporal and frequency encoders are plain transformers over the
//! sequence axis, each token being the cross-ROI slice at one time (or
//! frequency) point. All layers are pre-norm; the pooled embedding is the
//! token mean of a final linear readout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::connectivity::BrainGraph;
use crate::data::{Domain, SegmentSet};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::{Grads, ParamId, ParamSet};
use crate::scalar::Scalar;

const STANDARDIZE_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    /// Width of the pooled output.
    pub d_enc: usize,
    /// Hidden width of each feed-forward block.
    pub d_ff: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_enc: 64,
            d_ff: 256,
        }
    }
}

impl EncoderConfig {
    /// Default for `domain`. The graph encoder is wider and deeper so that
    /// each domain's sub-model lands near the same parameter budget.
    pub fn for_domain(domain: Domain) -> Self {
        match domain {
            Domain::Spatial => EncoderConfig {
                d_model: 128,
                n_heads: 4,
                n_layers: 5,
                d_enc: 64,
                d_ff: 576,
            },
            Domain::Temporal | Domain::Frequency => EncoderConfig::default(),
        }
    }

    pub fn validate(&self, key: &str) -> Result<()> {
        for (field, v) in [
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("n_layers", self.n_layers),
            ("d_enc", self.d_enc),
            ("d_ff", self.d_ff),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{key}.{field}"), "must be positive"));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::config(
                format!("{key}.n_heads"),
                "must divide d_model",
            ));
        }
        Ok(())
    }
}

/// Token-level output and pooled vector of one encoder pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DomainEmbedding<T> {
    /// `K × d_model` normalised token states.
    pub values: Matrix<T>,
    /// `1 × d_enc`.
    pub pooled: Matrix<T>,
}

#[derive(Debug, Clone, Copy)]
pub struct EncodedVars {
    pub values: Var,
    pub pooled: Var,
}

#[derive(Debug, Clone)]
struct Layer {
    ln1: (ParamId, ParamId),
    wq: (ParamId, ParamId),
    wk: (ParamId, ParamId),
    wv: (ParamId, ParamId),
    wo: (ParamId, ParamId),
    /// One `1 × 1` adjacency scale per head (graph encoder only).
    bias_scale: Vec<ParamId>,
    ln2: (ParamId, ParamId),
    ff1: (ParamId, ParamId),
    ff2: (ParamId, ParamId),
}

/// Parameter handles of one domain encoder.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub domain: Domain,
    pub cfg: EncoderConfig,
    n_features: usize,
    n_tokens: usize,
    input: (ParamId, ParamId),
    position: Option<ParamId>,
    layers: Vec<Layer>,
    ln_out: (ParamId, ParamId),
    readout: (ParamId, ParamId),
}

fn linear<T: Scalar, R: Rng>(
    ps: &mut ParamSet<T>,
    name: &str,
    d_in: usize,
    d_out: usize,
    rng: &mut R,
) -> (ParamId, ParamId) {
    let w = ps.add_normal(format!("{name}.w"), d_in, d_out, rng);
    let b = ps.add_zeros(format!("{name}.b"), 1, d_out);
    (w, b)
}

fn norm<T: Scalar>(ps: &mut ParamSet<T>, name: &str, d: usize) -> (ParamId, ParamId) {
    let g = ps.add_filled(format!("{name}.g"), 1, d, T::one());
    let b = ps.add_zeros(format!("{name}.b"), 1, d);
    (g, b)
}

pub(crate) fn apply_linear<T: Scalar>(
    tape: &mut Tape<'_, T>,
    x: Var,
    (w, b): (ParamId, ParamId),
) -> Var {
    let w = tape.param(w);
    let b = tape.param(b);
    let h = tape.matmul(x, w);
    tape.add_row(h, b)
}

fn apply_norm<T: Scalar>(tape: &mut Tape<'_, T>, x: Var, (g, b): (ParamId, ParamId)) -> Var {
    let g = tape.param(g);
    let b = tape.param(b);
    tape.layer_norm(x, g, b)
}

/// Fixed sine/cosine position table, `n_tokens × d`.
pub fn sinusoidal_encoding<T: Scalar>(n_tokens: usize, d: usize) -> Matrix<T> {
    Matrix::from_fn(n_tokens, d, |t, j| {
        let rate = 10_000f64.powf((2 * (j / 2)) as f64 / d as f64);
        let angle = t as f64 / rate;
        T::of(if j % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// Zero-mean, unit-variance rows; constant rows become zero.
pub fn standardize_rows<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    let mut out = x.clone();
    let n = T::of(x.cols() as f64);
    for i in 0..out.rows() {
        let r = out.row_mut(i);
        let mean = r.iter().copied().sum::<T>() / n;
        let var = r.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let inv = T::one() / (var.sqrt() + T::of(STANDARDIZE_EPS));
        r.iter_mut().for_each(|v| *v = (*v - mean) * inv);
    }
    out
}

impl Encoder {
    /// Registers the parameters under `prefix` (e.g. `enc.temporal`).
    /// `n_features` is the token feature width (the ROI count) and
    /// `n_tokens` the number of tokens per input (ROIs for the graph
    /// encoder, sequence length otherwise).
    pub fn register<T: Scalar, R: Rng>(
        ps: &mut ParamSet<T>,
        prefix: &str,
        domain: Domain,
        cfg: &EncoderConfig,
        n_features: usize,
        n_tokens: usize,
        rng: &mut R,
    ) -> Self {
        let d = cfg.d_model;
        let input = linear(ps, &format!("{prefix}.in"), n_features, d, rng);
        let position = (domain == Domain::Spatial).then(|| {
            let std = 0.1;
            let dist = rand_distr::Normal::new(0.0, std).expect("finite std");
            let m = Matrix::from_fn(n_tokens, d, |_, _| {
                T::of(rand_distr::Distribution::sample(&dist, rng))
            });
            ps.add(format!("{prefix}.pos"), m)
        });
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let p = format!("{prefix}.l{l}");
                Layer {
                    ln1: norm(ps, &format!("{p}.ln1"), d),
                    wq: linear(ps, &format!("{p}.q"), d, d, rng),
                    wk: linear(ps, &format!("{p}.k"), d, d, rng),
                    wv: linear(ps, &format!("{p}.v"), d, d, rng),
                    wo: linear(ps, &format!("{p}.o"), d, d, rng),
                    bias_scale: if domain == Domain::Spatial {
                        (0..cfg.n_heads)
                            .map(|h| ps.add_filled(format!("{p}.adj{h}"), 1, 1, T::one()))
                            .collect()
                    } else {
                        Vec::new()
                    },
                    ln2: norm(ps, &format!("{p}.ln2"), d),
                    ff1: linear(ps, &format!("{p}.ff1"), d, cfg.d_ff, rng),
                    ff2: linear(ps, &format!("{p}.ff2"), cfg.d_ff, d, rng),
                }
            })
            .collect();
        let ln_out = norm(ps, &format!("{prefix}.ln"), d);
        let readout = linear(ps, &format!("{prefix}.out"), d, cfg.d_enc, rng);
        Encoder {
            domain,
            cfg: cfg.clone(),
            n_features,
            n_tokens,
            input,
            position,
            layers,
            ln_out,
            readout,
        }
    }

    pub fn n_tokens(&self) -> usize {
        self.n_tokens
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Handle of the learned ROI position table (graph encoder only).
    pub fn position_param(&self) -> Option<ParamId> {
        self.position
    }

    pub fn input_param(&self) -> ParamId {
        self.input.0
    }

    pub fn readout_params(&self) -> (ParamId, ParamId) {
        self.readout
    }

    fn attention<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        x: Var,
        layer: &Layer,
        adjacency: Option<&Matrix<T>>,
    ) -> Var {
        let q = apply_linear(tape, x, layer.wq);
        let k = apply_linear(tape, x, layer.wk);
        let v = apply_linear(tape, x, layer.wv);
        let dh = self.cfg.d_model / self.cfg.n_heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let heads: Vec<Var> = (0..self.cfg.n_heads)
            .map(|h| {
                let qh = tape.slice_cols(q, h * dh, dh);
                let kh = tape.slice_cols(k, h * dh, dh);
                let vh = tape.slice_cols(v, h * dh, dh);
                let kt = tape.transpose(kh);
                let logits = tape.matmul(qh, kt);
                let mut logits = tape.scale(logits, scale);
                if let (Some(adj), Some(&s)) = (adjacency, layer.bias_scale.get(h)) {
                    let s = tape.param(s);
                    logits = tape.add_scaled_const(logits, s, adj);
                }
                let attn = tape.softmax_rows(logits);
                tape.matmul(attn, vh)
            })
            .collect();
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            tape.hcat(&heads)
        };
        apply_linear(tape, cat, layer.wo)
    }

    fn run_tokens<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        tokens: Var,
        adjacency: Option<&Matrix<T>>,
    ) -> EncodedVars {
        let mut x = apply_linear(tape, tokens, self.input);
        x = match self.position {
            Some(pos) => {
                let p = tape.param(pos);
                tape.add(x, p)
            }
            None => {
                let pe = tape.input(sinusoidal_encoding(self.n_tokens, self.cfg.d_model));
                tape.add(x, pe)
            }
        };
        for layer in &self.layers {
            let h = apply_norm(tape, x, layer.ln1);
            let a = self.attention(tape, h, layer, adjacency);
            x = tape.add(x, a);
            let h = apply_norm(tape, x, layer.ln2);
            let h = apply_linear(tape, h, layer.ff1);
            let h = tape.gelu(h);
            let h = apply_linear(tape, h, layer.ff2);
            x = tape.add(x, h);
        }
        let values = apply_norm(tape, x, self.ln_out);
        let r = apply_linear(tape, values, self.readout);
        let pooled = tape.mean_rows(r);
        EncodedVars { values, pooled }
    }

    /// Graph encoder pass; tokens are the ROIs.
    pub fn forward_graph<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        g: &BrainGraph<T>,
    ) -> Result<EncodedVars> {
        if self.domain != Domain::Spatial {
            return Err(Error::validation(format!(
                "{} encoder cannot take a graph",
                self.domain
            )));
        }
        g.node_features
            .ensure_shape(self.n_tokens, self.n_features, "node features")?;
        g.adjacency
            .ensure_shape(self.n_tokens, self.n_tokens, "adjacency")?;
        let tokens = tape.input(g.node_features.clone());
        Ok(self.run_tokens(tape, tokens, Some(&g.adjacency)))
    }

    /// Sequence encoder pass on an `n_roi × L` matrix; tokens are the `L` points.
    pub fn forward_sequence<T: Scalar>(
        &self,
        tape: &mut Tape<'_, T>,
        x: &Matrix<T>,
    ) -> Result<EncodedVars> {
        if self.domain == Domain::Spatial {
            return Err(Error::validation(
                "spatial encoder takes graphs, not sequences",
            ));
        }
        x.ensure_shape(self.n_features, self.n_tokens, "sequence input")?;
        let tokens = tape.input(standardize_rows(x).transpose());
        Ok(self.run_tokens(tape, tokens, None))
    }

    fn embed<T: Scalar>(tape: &Tape<'_, T>, vars: EncodedVars) -> DomainEmbedding<T> {
        DomainEmbedding {
            values: tape.value(vars.values).clone(),
            pooled: tape.value(vars.pooled).clone(),
        }
    }
}

pub fn encode_spatial<T: Scalar>(
    g: &BrainGraph<T>,
    params: &ParamSet<T>,
    enc: &Encoder,
) -> Result<DomainEmbedding<T>> {
    let mut tape = Tape::new(params);
    let vars = enc.forward_graph(&mut tape, g)?;
    Ok(Encoder::embed(&tape, vars))
}

pub fn encode_sequence<T: Scalar>(
    x: &Matrix<T>,
    params: &ParamSet<T>,
    enc: &Encoder,
) -> Result<DomainEmbedding<T>> {
    let mut tape = Tape::new(params);
    let vars = enc.forward_sequence(&mut tape, x)?;
    Ok(Encoder::embed(&tape, vars))
}

/// Encodes every segment with the same parameters, in segment order.
pub fn encode_eeg_segments<T: Scalar>(
    s: &SegmentSet<T>,
    params: &ParamSet<T>,
    enc: &Encoder,
) -> Result<Vec<DomainEmbedding<T>>> {
    s.segments()
        .iter()
        .map(|seg| encode_sequence(seg, params, enc))
        .collect()
}

/// Gradient of `Σ_segments ‖pooled‖²` w.r.t. all parameters, in one tape.
pub fn segment_pooled_norm_grads<T: Scalar>(
    s: &SegmentSet<T>,
    params: &ParamSet<T>,
    enc: &Encoder,
) -> Result<Grads<T>> {
    let mut tape = Tape::new(params);
    let mut total = None;
    for seg in s.segments() {
        let vars = enc.forward_sequence(&mut tape, seg)?;
        let sq = tape.sum_squares(vars.pooled);
        total = Some(match total {
            None => sq,
            Some(t) => tape.add(t, sq),
        });
    }
    let mut grads = Grads::new(params);
    if let Some(t) = total {
        tape.backward(t, Matrix::scalar(T::one()), &mut grads);
    }
    Ok(grads)
}
