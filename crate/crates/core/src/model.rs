//! The assembled network: one encoder per domain (shared by both
//! modalities), one projection head per domain and modality, and an MLP
//! classifier over the fused per-domain projections.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::connectivity::BrainGraph;
use crate::data::{DataConfig, Domain, Modality, RunInputs};
use crate::encoders::{apply_linear, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::params::{Grads, ParamId, ParamSet};
use crate::projectors::{Projector, ProjectorConfig, PROJECTION_DIM};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSet {
    #[serde(default = "spatial_default")]
    pub spatial: EncoderConfig,
    #[serde(default)]
    pub temporal: EncoderConfig,
    #[serde(default)]
    pub frequency: EncoderConfig,
}

fn spatial_default() -> EncoderConfig {
    EncoderConfig::for_domain(Domain::Spatial)
}

impl Default for EncoderSet {
    fn default() -> Self {
        EncoderSet {
            spatial: spatial_default(),
            temporal: EncoderConfig::default(),
            frequency: EncoderConfig::default(),
        }
    }
}

impl EncoderSet {
    pub fn get(&self, d: Domain) -> &EncoderConfig {
        match d {
            Domain::Spatial => &self.spatial,
            Domain::Temporal => &self.temporal,
            Domain::Frequency => &self.frequency,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: usize,
    pub n_classes: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: 128,
            n_classes: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
#[derive(Default)]
pub struct ModelConfig {
    /// ROI count; taken from the data when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_roi: Option<usize>,
    pub encoder: EncoderSet,
    pub projector: ProjectorConfig,
    pub classifier: ClassifierConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        for d in Domain::ALL {
            self.encoder.get(d).validate(&format!("encoder.{d}"))?;
        }
        self.projector.validate()?;
        if self.classifier.hidden == 0 {
            return Err(Error::config("classifier.hidden", "must be positive"));
        }
        if self.classifier.n_classes < 2 {
            return Err(Error::config("classifier.n_classes", "must be at least 2"));
        }
        if self.n_roi == Some(0) {
            return Err(Error::config("model.n_roi", "must be positive"));
        }
        Ok(())
    }

    /// Copy with `n_roi` filled in from the data.
    pub fn resolved(&self, n_roi: usize) -> Result<Self> {
        match self.n_roi {
            Some(n) if n != n_roi => Err(Error::config(
                "model.n_roi",
                format!("configured for {n} ROIs but the data has {n_roi}"),
            )),
            _ => Ok(ModelConfig {
                n_roi: Some(n_roi),
                ..self.clone()
            }),
        }
    }
}

/// One encoder input: a graph or a single sequence segment.
pub enum Part<'a, T> {
    Graph(&'a BrainGraph<T>),
    Sequence(Matrix<T>),
}

#[derive(Debug, Clone)]
struct Classifier {
    l1: (ParamId, ParamId),
    l2: (ParamId, ParamId),
}

#[derive(Debug, Clone)]
pub struct Model<T> {
    pub cfg: ModelConfig,
    pub data: DataConfig,
    pub params: ParamSet<T>,
    domains: Vec<Domain>,
    encoders: BTreeMap<Domain, Encoder>,
    projectors: BTreeMap<(Domain, Modality), Projector>,
    classifier: Classifier,
}

/// Projections of one run in every active domain, with the pooled encoder
/// outputs they came from.
#[derive(Debug, Clone)]
pub struct RunProjection<T> {
    pub pooled: BTreeMap<Domain, Vec<Matrix<T>>>,
    pub h: BTreeMap<Domain, Matrix<T>>,
}

impl<T: Scalar> Model<T> {
    /// Builds a model over all three domains. Each component draws from its
    /// own rng stream so that, e.g., classifier initialisation does not
    /// depend on whether encoders are later overwritten.
    pub fn new(cfg: &ModelConfig, data: &DataConfig, seed: u64) -> Result<Self> {
        Self::with_domains(cfg, data, &Domain::ALL, seed)
    }

    pub fn with_domains(
        cfg: &ModelConfig,
        data: &DataConfig,
        domains: &[Domain],
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        data.validate()?;
        let n_roi = cfg
            .n_roi
            .ok_or_else(|| Error::config("model.n_roi", "unresolved ROI count"))?;
        if domains.is_empty() {
            return Err(Error::validation("model needs at least one domain"));
        }
        let mut params = ParamSet::new();
        let mut encoders = BTreeMap::new();
        let mut projectors = BTreeMap::new();
        for (k, &d) in domains.iter().enumerate() {
            let mut r = rng::stream(seed, "encoder", d.index() as u64);
            let tokens = match d {
                Domain::Spatial => n_roi,
                _ => data.segment_length,
            };
            let enc_cfg = cfg.encoder.get(d);
            encoders.insert(
                d,
                Encoder::register(
                    &mut params,
                    &format!("enc.{d}"),
                    d,
                    enc_cfg,
                    n_roi,
                    tokens,
                    &mut r,
                ),
            );
            for m in Modality::ALL {
                let mut r = rng::stream(seed, "projector", (3 * m.index() + d.index()) as u64);
                let n_seg = segments_for(d, m, data);
                let p = Projector::register(
                    &mut params,
                    &format!("proj.{d}.{m}"),
                    enc_cfg.d_enc,
                    n_seg,
                    &cfg.projector,
                    &mut r,
                );
                projectors.insert((d, m), p);
            }
            let _ = k;
        }
        let mut r = rng::stream(seed, "classifier", 0);
        let width = PROJECTION_DIM * domains.len();
        let c = &cfg.classifier;
        let classifier = Classifier {
            l1: (
                params.add_normal("cls.l1.w", width, c.hidden, &mut r),
                params.add_zeros("cls.l1.b", 1, c.hidden),
            ),
            l2: (
                params.add_normal("cls.l2.w", c.hidden, c.n_classes, &mut r),
                params.add_zeros("cls.l2.b", 1, c.n_classes),
            ),
        };
        Ok(Model {
            cfg: cfg.clone(),
            data: data.clone(),
            params,
            domains: domains.to_vec(),
            encoders,
            projectors,
            classifier,
        })
    }

    pub fn domains(&self) -> &[Domain] {
        &self.domains
    }

    pub fn n_classes(&self) -> usize {
        self.cfg.classifier.n_classes
    }

    pub fn encoder(&self, d: Domain) -> &Encoder {
        &self.encoders[&d]
    }

    pub fn projector(&self, d: Domain, m: Modality) -> &Projector {
        &self.projectors[&(d, m)]
    }

    /// Parameter count of one domain's encoder plus both of its projection heads.
    pub fn sub_model_params(&self, d: Domain) -> usize {
        self.params.count_with_prefix(&format!("enc.{d}."))
            + self.params.count_with_prefix(&format!("proj.{d}."))
    }

    pub fn classifier_params(&self) -> usize {
        self.params.count_with_prefix("cls.")
    }

    /// Copies every parameter of `other` whose name and shape match; returns how many.
    pub fn load_matching(&mut self, other: &ParamSet<T>, filter: impl Fn(&str) -> bool) -> usize {
        let mut n = 0;
        for (_, name, value) in other.iter() {
            if !filter(name) {
                continue;
            }
            if let Some(id) = self.params.id(name) {
                if self.params.get(id).shape() == value.shape() {
                    *self.params.get_mut(id) = value.clone();
                    n += 1;
                }
            }
        }
        n
    }

    /// Encoder inputs of `run` in domain `d`, in segment order.
    pub fn parts<'a>(&self, run: &'a RunInputs<T>, d: Domain) -> Result<Vec<Part<'a, T>>> {
        let seg = self.data.segment_length;
        let source = match d {
            Domain::Spatial => return Ok(vec![Part::Graph(&run.graph)]),
            Domain::Temporal => &run.temporal,
            Domain::Frequency => &run.frequency,
        };
        let n_seg = segments_for(d, run.modality, &self.data);
        if source.cols() != n_seg * seg {
            return Err(Error::shape(
                format!("{} x {}", source.rows(), n_seg * seg),
                format!("{} x {}", source.rows(), source.cols()),
            ));
        }
        Ok((0..n_seg)
            .map(|s| Part::Sequence(source.slice_cols(s * seg, seg)))
            .collect())
    }

    pub fn encode_part(
        &self,
        tape: &mut Tape<'_, T>,
        d: Domain,
        part: &Part<'_, T>,
    ) -> Result<Var> {
        let enc = self.encoder(d);
        let vars = match part {
            Part::Graph(g) => enc.forward_graph(tape, g)?,
            Part::Sequence(x) => enc.forward_sequence(tape, x)?,
        };
        Ok(vars.pooled)
    }

    /// Pooled encoder outputs for every part, without keeping any graph.
    pub fn pooled(&self, run: &RunInputs<T>, d: Domain) -> Result<Vec<Matrix<T>>> {
        self.parts(run, d)?
            .iter()
            .map(|p| {
                let mut tape = Tape::new(&self.params);
                let v = self.encode_part(&mut tape, d, p)?;
                Ok(tape.value(v).clone())
            })
            .collect()
    }

    /// Projection head on cached pooled vectors, recorded on `tape`.
    pub fn project_pooled(
        &self,
        tape: &mut Tape<'_, T>,
        d: Domain,
        m: Modality,
        pooled: &[Matrix<T>],
    ) -> Result<Var> {
        let vars: Vec<Var> = pooled.iter().map(|p| tape.input(p.clone())).collect();
        self.projector(d, m).forward(tape, &vars)
    }

    /// Forward pass of one run through every active domain.
    pub fn project_run(&self, run: &RunInputs<T>) -> Result<RunProjection<T>> {
        let mut out = RunProjection {
            pooled: BTreeMap::new(),
            h: BTreeMap::new(),
        };
        for &d in &self.domains {
            let pooled = self.pooled(run, d)?;
            let mut tape = Tape::new(&self.params);
            let h = self.project_pooled(&mut tape, d, run.modality, &pooled)?;
            out.h.insert(d, tape.value(h).clone());
            out.pooled.insert(d, pooled);
        }
        Ok(out)
    }

    /// Backpropagates `dh` (gradient w.r.t. one projection) through the head
    /// and, when `through_encoder`, through the encoder by re-running each
    /// part. Returns nothing; gradients accumulate into `grads`.
    pub fn backward_projection(
        &self,
        run: &RunInputs<T>,
        d: Domain,
        pooled: &[Matrix<T>],
        dh: &Matrix<T>,
        through_encoder: bool,
        grads: &mut Grads<T>,
    ) -> Result<()> {
        let mut tape = Tape::new(&self.params);
        let inputs: Vec<Var> = pooled.iter().map(|p| tape.input(p.clone())).collect();
        let h = self
            .projector(d, run.modality)
            .forward(&mut tape, &inputs)?;
        let node_grads = tape.backward(h, dh.clone(), grads);
        if !through_encoder {
            return Ok(());
        }
        let d_pooled: Vec<Matrix<T>> = inputs
            .iter()
            .map(|&v| {
                node_grads
                    .wrt(v)
                    .cloned()
                    .unwrap_or_else(|| Matrix::zeros(1, pooled[0].cols()))
            })
            .collect();
        self.backward_parts(run, d, &d_pooled, grads)
    }

    /// Re-runs every encoder part of `run` in domain `d` and seeds its pooled output.
    pub fn backward_parts(
        &self,
        run: &RunInputs<T>,
        d: Domain,
        d_pooled: &[Matrix<T>],
        grads: &mut Grads<T>,
    ) -> Result<()> {
        for (part, g) in self.parts(run, d)?.iter().zip(d_pooled) {
            let mut tape = Tape::new(&self.params);
            let v = self.encode_part(&mut tape, d, part)?;
            tape.backward(v, g.clone(), grads);
        }
        Ok(())
    }

    /// Classifier logits from per-domain projections of the available
    /// modalities, fused by averaging. Records on `tape`; `h_vars[k]` holds
    /// the projections of `self.domains()[k]`.
    pub fn classify(&self, tape: &mut Tape<'_, T>, h_vars: &[Vec<Var>]) -> Result<Var> {
        if h_vars.len() != self.domains.len() {
            return Err(Error::validation("one projection list per domain required"));
        }
        let mut fused = Vec::with_capacity(h_vars.len());
        for hs in h_vars {
            let f = match hs.as_slice() {
                [] => return Err(Error::validation("sample has no modality")),
                [one] => *one,
                [a, b] => {
                    let s = tape.add(*a, *b);
                    tape.scale(s, T::of(0.5))
                }
                _ => return Err(Error::validation("at most two modalities per domain")),
            };
            fused.push(f);
        }
        let x = if fused.len() == 1 {
            fused[0]
        } else {
            tape.hcat(&fused)
        };
        let h = apply_linear(tape, x, self.classifier.l1);
        let h = tape.gelu(h);
        Ok(apply_linear(tape, h, self.classifier.l2))
    }

    /// Names of parameters that belong to the classifier head.
    pub fn is_classifier_param(name: &str) -> bool {
        name.starts_with("cls.")
    }

    pub fn is_encoder_param(name: &str) -> bool {
        name.starts_with("enc.")
    }
}

pub fn segments_for(d: Domain, m: Modality, data: &DataConfig) -> usize {
    match (d, m) {
        (Domain::Spatial, _) | (_, Modality::Fmri) => 1,
        (_, Modality::Eeg) => data.eeg_segments(),
    }
}

/// Sub-model parameter counts of a default-shaped model with `n_roi` ROIs.
pub fn parameter_budget(
    cfg: &ModelConfig,
    data: &DataConfig,
    n_roi: usize,
) -> Result<BTreeMap<Domain, usize>> {
    let model = Model::<f32>::new(&cfg.resolved(n_roi)?, data, 0)?;
    Ok(Domain::ALL
        .iter()
        .map(|&d| (d, model.sub_model_params(d)))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_subject_inputs, synthesize_subject, SyntheticSpec};

    fn tiny_cfg(n_roi: usize) -> ModelConfig {
        let enc = EncoderConfig {
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_enc: 4,
            d_ff: 16,
        };
        ModelConfig {
            n_roi: Some(n_roi),
            encoder: EncoderSet {
                spatial: enc.clone(),
                temporal: enc.clone(),
                frequency: enc,
            },
            projector: ProjectorConfig { hidden: 16 },
            classifier: ClassifierConfig::default(),
        }
    }

    fn tiny_data() -> DataConfig {
        DataConfig {
            fmri_length: 50,
            eeg_unified_length: 150,
            segment_length: 50,
        }
    }

    #[test]
    fn default_budget_is_near_published_sizes() {
        let budget =
            parameter_budget(&ModelConfig::default(), &DataConfig::default(), 100).unwrap();
        let within = |n: usize, target: f64| (n as f64 / target - 1.0).abs() <= 0.10;
        assert!(within(budget[&Domain::Spatial], 1.2e6), "{budget:?}");
        assert!(within(budget[&Domain::Temporal], 1.1e6), "{budget:?}");
        assert!(within(budget[&Domain::Frequency], 1.1e6), "{budget:?}");
    }

    #[test]
    fn projects_every_domain_of_a_synthetic_run() {
        let mut spec = SyntheticSpec::new(1, 2, 5, 1.0, 3);
        spec.eeg_min_length = 300;
        let rec = synthesize_subject::<f64>(&spec, 0).unwrap();
        let inputs = build_subject_inputs(&rec, &tiny_data()).unwrap();
        let model = Model::<f64>::new(&tiny_cfg(5), &tiny_data(), 1).unwrap();
        for run in inputs.fmri.iter().chain(&inputs.eeg) {
            let p = model.project_run(run).unwrap();
            for d in Domain::ALL {
                assert_eq!(p.h[&d].shape(), (1, PROJECTION_DIM));
            }
            let expected = if run.modality == Modality::Eeg { 3 } else { 1 };
            assert_eq!(p.pooled[&Domain::Temporal].len(), expected);
        }
    }

    #[test]
    fn component_streams_are_independent() {
        let a = Model::<f64>::new(&tiny_cfg(5), &tiny_data(), 1).unwrap();
        let b =
            Model::<f64>::with_domains(&tiny_cfg(5), &tiny_data(), &[Domain::Temporal], 1).unwrap();
        let name = "enc.temporal.l0.q.w";
        assert_eq!(
            a.params.get(a.params.id(name).unwrap()),
            b.params.get(b.params.id(name).unwrap())
        );
        assert!(b.params.id("enc.spatial.in.w").is_none());
        let mut c = Model::<f64>::new(&tiny_cfg(5), &tiny_data(), 2).unwrap();
        let copied = c.load_matching(&a.params, Model::<f64>::is_encoder_param);
        assert!(copied > 0);
        assert_eq!(
            c.params.get(c.params.id(name).unwrap()),
            a.params.get(a.params.id(name).unwrap())
        );
        assert_ne!(
            c.params.get(c.params.id("cls.l1.w").unwrap()),
            a.params.get(a.params.id("cls.l1.w").unwrap())
        );
    }

    #[test]
    fn mismatched_roi_count_is_a_config_error() {
        let cfg = ModelConfig {
            n_roi: Some(10),
            ..ModelConfig::default()
        };
        assert!(matches!(cfg.resolved(12), Err(Error::Config { .. })));
        assert_eq!(cfg.resolved(10).unwrap().n_roi, Some(10));
    }
}
