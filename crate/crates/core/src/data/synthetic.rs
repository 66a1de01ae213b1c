//! Synthetic multi-modal cohort generator.
//!
//! Each subject draws a latent vector that is shared by both modalities. The
//! latent drives the ROI mixing matrix (hence the connectivity structure) of
//! fMRI-like and EEG-like runs, and the first latent coordinate also sets the
//! dominant oscillation frequency of both. Class labels shift the latent mean
//! along one coordinate per task, scaled by `class_effect`, so the class
//! signal appears as a covariance and frequency perturbation that is common to
//! both modalities. Every subject additionally gets a modality-private mixing
//! perturbation that carries no label information.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Modality, RoiTimeSeries, SubjectRecord};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;
use crate::scalar::Scalar;

pub const FMRI_SAMPLING_RATE: f64 = 0.5;
pub const EEG_SAMPLING_RATE: f64 = 250.0;
const FMRI_MIN_LEN: usize = 150;
const FMRI_MAX_LEN: usize = 300;
const RUNS_PER_MODALITY: usize = 2;

const LATENT_COUPLING: f64 = 0.6;
const PRIVATE_MIXING: f64 = 0.6;
const CLASS_SHIFT: f64 = 1.0;
const SENSOR_NOISE: f64 = 0.3;

fn default_tasks() -> usize {
    1
}

fn default_eeg_length() -> usize {
    25_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_subjects: usize,
    pub n_classes: usize,
    pub n_roi: usize,
    /// Strength of the planted class-dependent perturbation.
    pub class_effect: f64,
    pub shared_latent_dim: usize,
    pub seed: u64,
    /// Number of independent labelled tasks; task `t` is planted on latent coordinate `t`.
    #[serde(default = "default_tasks")]
    pub n_tasks: usize,
    /// Minimum raw EEG length before resampling.
    #[serde(default = "default_eeg_length")]
    pub eeg_min_length: usize,
}

impl SyntheticSpec {
    pub fn new(
        n_subjects: usize,
        n_classes: usize,
        n_roi: usize,
        class_effect: f64,
        seed: u64,
    ) -> Self {
        SyntheticSpec {
            n_subjects,
            n_classes,
            n_roi,
            class_effect,
            shared_latent_dim: 4,
            seed,
            n_tasks: 1,
            eeg_min_length: default_eeg_length(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects == 0 {
            return Err(Error::config("synthetic.n_subjects", "must be positive"));
        }
        if self.n_classes < 2 {
            return Err(Error::config(
                "synthetic.n_classes",
                "need at least 2 classes",
            ));
        }
        if self.n_roi < 2 {
            return Err(Error::config("synthetic.n_roi", "need at least 2 ROIs"));
        }
        if !(self.class_effect.is_finite() && self.class_effect >= 0.0) {
            return Err(Error::config(
                "synthetic.class_effect",
                "must be finite and >= 0",
            ));
        }
        if self.n_tasks == 0 || self.n_tasks > self.shared_latent_dim {
            return Err(Error::config(
                "synthetic.n_tasks",
                "must be between 1 and shared_latent_dim",
            ));
        }
        if self.eeg_min_length < 2 {
            return Err(Error::config(
                "synthetic.eeg_min_length",
                "must be at least 2",
            ));
        }
        Ok(())
    }

    fn n_sources(&self) -> usize {
        self.shared_latent_dim + 2
    }
}

/// Label-task name for task index `t`.
pub fn task_name(t: usize) -> String {
    format!("task{t}")
}

/// Mixing structures shared by the whole cohort.
struct CohortStructure {
    base: Matrix<f64>,
    directions: Vec<Matrix<f64>>,
}

impl CohortStructure {
    fn new(spec: &SyntheticSpec) -> Self {
        let mut rng = rng::stream(spec.seed, "cohort", 0);
        let k = spec.n_sources();
        let scale = 1.0 / (k as f64).sqrt();
        let draw = |rng: &mut rng::Rng| Matrix::from_fn(spec.n_roi, k, |_, _| normal(rng) * scale);
        let base = draw(&mut rng);
        let directions = (0..spec.shared_latent_dim)
            .map(|_| draw(&mut rng))
            .collect();
        CohortStructure { base, directions }
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn generate_synthetic_cohort<T: Scalar>(spec: &SyntheticSpec) -> Result<Vec<SubjectRecord<T>>> {
    spec.validate()?;
    let structure = CohortStructure::new(spec);
    Ok((0..spec.n_subjects)
        .map(|i| subject_with(spec, &structure, i))
        .collect())
}

/// Generates subject `index` of the cohort alone; identical to the matching
/// element of [`generate_synthetic_cohort`].
pub fn synthesize_subject<T: Scalar>(
    spec: &SyntheticSpec,
    index: usize,
) -> Result<SubjectRecord<T>> {
    spec.validate()?;
    Ok(subject_with(spec, &CohortStructure::new(spec), index))
}

fn subject_with<T: Scalar>(
    spec: &SyntheticSpec,
    structure: &CohortStructure,
    index: usize,
) -> SubjectRecord<T> {
    let mut rng = rng::stream(spec.seed, "subject", index as u64);
    let mut record = SubjectRecord::new(format!("sub-{index:04}"));

    let mut latent: Vec<f64> = (0..spec.shared_latent_dim)
        .map(|_| normal(&mut rng))
        .collect();
    let centre = (spec.n_classes as f64 - 1.0) / 2.0;
    let mut block = 1usize;
    for t in 0..spec.n_tasks {
        // balanced and mutually independent across complete blocks of subjects
        let label = (index / block) % spec.n_classes;
        block *= spec.n_classes;
        latent[t] += spec.class_effect * CLASS_SHIFT * (label as f64 - centre);
        record.labels.insert(task_name(t), label as i64);
    }

    let mut shared = structure.base.clone();
    for (u, dir) in latent.iter().zip(&structure.directions) {
        shared.scaled_add_assign(LATENT_COUPLING * u, dir);
    }
    let k = spec.n_sources();
    let private_scale = PRIVATE_MIXING / (k as f64).sqrt();
    let private = |rng: &mut rng::Rng| {
        let mut m = shared.clone();
        m.add_assign(&Matrix::from_fn(spec.n_roi, k, |_, _| {
            normal(rng) * private_scale
        }));
        m
    };
    let fmri_mixing = private(&mut rng);
    let eeg_mixing = private(&mut rng);

    let rhythm = (latent[0] / 2.0).tanh();
    for _ in 0..RUNS_PER_MODALITY {
        let len = rng.gen_range(FMRI_MIN_LEN..=FMRI_MAX_LEN);
        let values = fmri_run(&fmri_mixing, rhythm, len, &mut rng);
        record.fmri_runs.push(
            RoiTimeSeries::new(values.cast(), FMRI_SAMPLING_RATE, Modality::Fmri)
                .expect("generator emits finite series"),
        );
    }
    for _ in 0..RUNS_PER_MODALITY {
        let len = spec.eeg_min_length + rng.gen_range(0..=spec.eeg_min_length / 10);
        let values = eeg_run(&eeg_mixing, rhythm, len, &mut rng);
        record.eeg_runs.push(
            RoiTimeSeries::new(values.cast(), EEG_SAMPLING_RATE, Modality::Eeg)
                .expect("generator emits finite series"),
        );
    }
    record
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
        .sqrt()
        .max(1e-12);
    v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
}

/// Slow band-limited sources: damped AR(2) resonators whose peak frequency
/// follows the subject rhythm, mixed into ROIs plus sensor noise.
fn fmri_run(mixing: &Matrix<f64>, rhythm: f64, len: usize, rng: &mut rng::Rng) -> Matrix<f64> {
    let k = mixing.cols();
    let peak = 0.06 + 0.025 * rhythm; // cycles per sample
    let radius: f64 = 0.9;
    let a1 = 2.0 * radius * (2.0 * PI * peak).cos();
    let a2 = -radius * radius;
    let burn = 50;
    let mut sources = Matrix::zeros(k, len);
    for s in 0..k {
        let (mut p1, mut p2) = (0.0, 0.0);
        for t in 0..len + burn {
            let v = a1 * p1 + a2 * p2 + normal(rng);
            p2 = p1;
            p1 = v;
            if t >= burn {
                sources[(s, t - burn)] = v;
            }
        }
        standardize(sources.row_mut(s));
    }
    let mut x = mixing.matmul(&sources);
    for v in x.as_mut_slice() {
        *v += SENSOR_NOISE * normal(rng);
    }
    x
}

/// Alpha-band carriers whose log-amplitude envelopes follow mixed slow sources.
fn eeg_run(mixing: &Matrix<f64>, rhythm: f64, len: usize, rng: &mut rng::Rng) -> Matrix<f64> {
    let k = mixing.cols();
    let n_roi = mixing.rows();
    let carrier = 10.0 + 1.5 * rhythm; // Hz
    let smooth: f64 = 0.995;
    let innov = (1.0 - smooth * smooth).sqrt();
    let mut sources = Matrix::zeros(k, len);
    for s in 0..k {
        let mut p = normal(rng);
        for t in 0..len {
            p = smooth * p + innov * normal(rng);
            sources[(s, t)] = p;
        }
        standardize(sources.row_mut(s));
    }
    let log_amp = mixing.matmul(&sources);
    let common_phase = rng.gen_range(0.0..2.0 * PI);
    let phases: Vec<f64> = (0..n_roi)
        .map(|_| common_phase + 0.3 * normal(rng))
        .collect();
    let step = 2.0 * PI * carrier / EEG_SAMPLING_RATE;
    let mut x = Matrix::zeros(n_roi, len);
    for r in 0..n_roi {
        let row = x.row_mut(r);
        let amp = log_amp.row(r);
        for t in 0..len {
            let a = (0.5 * amp[t]).exp();
            row[t] = a * (step * t as f64 + phases[r]).sin() + SENSOR_NOISE * normal(rng);
        }
    }
    x
}
