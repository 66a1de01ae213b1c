//! Augmented views for contrastive pretraining.
//!
//! Spatial views either drop the weakest edges or jitter the strongest ones,
//! temporal views add scaled Gaussian noise (and, for EEG, blank out random
//! instants), and frequency views are always the spectrum of the augmented
//! temporal view.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::connectivity::BrainGraph;
use crate::data::{fft_magnitude, DataConfig, FrequencySequence, Modality, RunInputs};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// Largest absolute edge weight a perturbation may produce.
pub const MAX_PERTURBED_WEIGHT: f64 = 1.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeMode {
    #[default]
    Remove,
    Perturb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub edge_drop_min: f64,
    pub edge_drop_max: f64,
    pub edge_perturb_sigma: f64,
    /// Relative to each row's standard deviation.
    pub noise_sigma: f64,
    /// Fraction of EEG time points zeroed per view.
    pub point_drop_fraction: f64,
    pub mode: EdgeMode,
    pub seed: u64,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        AugmentationConfig {
            edge_drop_min: 0.20,
            edge_drop_max: 0.50,
            edge_perturb_sigma: 0.05,
            noise_sigma: 0.1,
            point_drop_fraction: 0.1,
            mode: EdgeMode::Remove,
            seed: 0,
        }
    }
}

impl AugmentationConfig {
    /// All augmentations switched off.
    pub fn identity() -> Self {
        AugmentationConfig {
            edge_drop_min: 0.0,
            edge_drop_max: 0.0,
            edge_perturb_sigma: 0.0,
            noise_sigma: 0.0,
            point_drop_fraction: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let frac = |key: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(
                    format!("augmentation.{key}"),
                    "must lie in [0, 1)",
                ))
            }
        };
        frac("edge_drop_min", self.edge_drop_min)?;
        frac("edge_drop_max", self.edge_drop_max)?;
        frac("point_drop_fraction", self.point_drop_fraction)?;
        if self.edge_drop_min > self.edge_drop_max {
            return Err(Error::config(
                "augmentation.edge_drop_min",
                "must not exceed edge_drop_max",
            ));
        }
        for (key, v) in [
            ("edge_perturb_sigma", self.edge_perturb_sigma),
            ("noise_sigma", self.noise_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(
                    format!("augmentation.{key}"),
                    "must be finite and non-negative",
                ));
            }
        }
        Ok(())
    }
}

fn set_edge<T: Scalar>(adj: &mut Matrix<T>, i: usize, j: usize, w: T) {
    adj[(i, j)] = w;
    adj[(j, i)] = w;
}

/// Zeroes the `⌊ratio·E⌋` edges with the smallest `|w|`. Ties go to the
/// lexicographically smallest `(i, j)`.
pub fn drop_weak_edges_with_ratio<T: Scalar>(g: &BrainGraph<T>, ratio: f64) -> BrainGraph<T> {
    let mut edges = g.edges();
    let n_drop = ((ratio * edges.len() as f64) + 1e-9).floor() as usize;
    // edges() is already in lexicographic order, so a stable sort keeps the tie-break
    edges.sort_by(|a, b| a.2.abs().partial_cmp(&b.2.abs()).expect("finite weights"));
    let mut out = g.clone();
    for &(i, j, _) in edges.iter().take(n_drop) {
        set_edge(&mut out.adjacency, i, j, T::zero());
    }
    out
}

pub fn drop_weak_edges<T: Scalar>(
    g: &BrainGraph<T>,
    cfg: &AugmentationConfig,
    rng: &mut impl Rng,
) -> BrainGraph<T> {
    let ratio = rng.gen_range(cfg.edge_drop_min..=cfg.edge_drop_max);
    drop_weak_edges_with_ratio(g, ratio)
}

/// Adds `N(0, σ²)` to every edge whose `|w|` exceeds the median `|w|`,
/// mirroring to keep symmetry. Magnitudes are capped at
/// [`MAX_PERTURBED_WEIGHT`] and signs are kept so no edge vanishes.
pub fn perturb_strong_edges<T: Scalar>(
    g: &BrainGraph<T>,
    cfg: &AugmentationConfig,
    rng: &mut impl Rng,
) -> BrainGraph<T> {
    let edges = g.edges();
    if edges.is_empty() || cfg.edge_perturb_sigma == 0.0 {
        return g.clone();
    }
    let mut mags: Vec<f64> = edges.iter().map(|e| e.2.as_f64().abs()).collect();
    mags.sort_by(|a, b| a.partial_cmp(b).expect("finite weights"));
    let m = mags.len();
    let median = if m % 2 == 1 {
        mags[m / 2]
    } else {
        0.5 * (mags[m / 2 - 1] + mags[m / 2])
    };
    let noise = Normal::new(0.0, cfg.edge_perturb_sigma).expect("validated sigma");
    let mut out = g.clone();
    for (i, j, w) in edges {
        let w = w.as_f64();
        if w.abs() <= median {
            continue;
        }
        let moved = w + noise.sample(rng);
        let mag = moved.abs().clamp(f64::MIN_POSITIVE, MAX_PERTURBED_WEIGHT);
        // a strong edge is never pushed through zero
        let new = if moved.signum() == w.signum() {
            mag * w.signum()
        } else {
            f64::MIN_POSITIVE * w.signum()
        };
        set_edge(&mut out.adjacency, i, j, T::of(new));
    }
    out
}

pub fn augment_graph<T: Scalar>(
    g: &BrainGraph<T>,
    cfg: &AugmentationConfig,
    rng: &mut impl Rng,
) -> BrainGraph<T> {
    match cfg.mode {
        EdgeMode::Remove => drop_weak_edges(g, cfg, rng),
        EdgeMode::Perturb => perturb_strong_edges(g, cfg, rng),
    }
}

fn row_std(row: &[f64]) -> f64 {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    (row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Gaussian noise with per-row σ = `noise_sigma × row std`; for EEG a
/// `point_drop_fraction` of time columns is also zeroed across all ROIs.
pub fn augment_temporal<T: Scalar>(
    x: &Matrix<T>,
    modality: Modality,
    cfg: &AugmentationConfig,
    rng: &mut impl Rng,
) -> Matrix<T> {
    let mut out = x.clone();
    if cfg.noise_sigma > 0.0 {
        for r in 0..x.rows() {
            let row: Vec<f64> = x.row(r).iter().map(|v| v.as_f64()).collect();
            let sd = match row_std(&row) {
                // constant rows still get unit-scale noise so the views differ
                s if s == 0.0 => cfg.noise_sigma,
                s => cfg.noise_sigma * s,
            };
            let noise = Normal::new(0.0, sd).expect("finite sigma");
            for v in out.row_mut(r) {
                *v = *v + T::of(noise.sample(rng));
            }
        }
    }
    if modality == Modality::Eeg && cfg.point_drop_fraction > 0.0 {
        let len = x.cols();
        let n_drop = ((cfg.point_drop_fraction * len as f64) + 1e-9).floor() as usize;
        for t in sample(rng, len, n_drop.min(len)).iter() {
            for r in 0..out.rows() {
                out[(r, t)] = T::zero();
            }
        }
    }
    out
}

/// Spectrum of an augmented temporal view, at the view's own length.
pub fn augment_frequency<T: Scalar>(
    x_temporal_augmented: &Matrix<T>,
) -> Result<FrequencySequence<T>> {
    fft_magnitude(x_temporal_augmented, x_temporal_augmented.cols())
}

/// One augmented view of every domain of a run. The fMRI spectrum view is
/// taken at the unified fMRI length; the EEG one over the whole unified
/// series before segmentation, matching how the anchors are built.
pub fn augment_run<T: Scalar>(
    run: &RunInputs<T>,
    cfg: &AugmentationConfig,
    data: &DataConfig,
    rng: &mut impl Rng,
) -> Result<RunInputs<T>> {
    let graph = augment_graph(&run.graph, cfg, rng);
    let temporal = augment_temporal(&run.temporal, run.modality, cfg, rng);
    let frequency = match run.modality {
        Modality::Fmri => fft_magnitude(&temporal, data.fmri_length)?.into_inner(),
        Modality::Eeg => augment_frequency(&temporal)?.into_inner(),
    };
    Ok(RunInputs {
        modality: run.modality,
        graph,
        temporal,
        frequency,
    })
}
