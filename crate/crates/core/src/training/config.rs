use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Domain, Modality};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    #[default]
    Cosine,
}

/// Pretraining objective term names accepted in `train.loss_weights`.
pub fn loss_term_names() -> Vec<String> {
    let mut names: Vec<String> = Modality::ALL.iter().map(|m| cd_term(*m)).collect();
    names.extend(Domain::ALL.iter().map(|d| cm_term(*d)));
    names
}

pub fn cd_term(m: Modality) -> String {
    format!("cd_{m}")
}

pub fn cm_term(d: Domain) -> String {
    format!("cm_{d}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Pretraining epochs.
    pub epochs: usize,
    pub finetune_epochs: usize,
    pub pretrain_batch: usize,
    pub finetune_batch: usize,
    pub learning_rate: f64,
    /// Floor reached by the cosine schedule on the last step.
    pub min_learning_rate: f64,
    pub lr_schedule: LrSchedule,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Set by the caller; run configs carry a single top-level seed.
    #[serde(skip)]
    pub seed: u64,
    pub folds: usize,
    pub repeats: usize,
    /// Train only projection and classifier heads during fine-tuning, with
    /// encoders held at their initial (pretrained or random) weights.
    pub freeze_encoders: bool,
    pub loss_weights: BTreeMap<String, f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            finetune_epochs: 50,
            pretrain_batch: 128,
            finetune_batch: 32,
            learning_rate: 5e-4,
            min_learning_rate: 5e-6,
            lr_schedule: LrSchedule::Cosine,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            folds: 10,
            repeats: 10,
            freeze_encoders: false,
            loss_weights: loss_term_names().into_iter().map(|n| (n, 1.0)).collect(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("train.epochs", self.epochs),
            ("train.finetune_epochs", self.finetune_epochs),
            ("train.pretrain_batch", self.pretrain_batch),
            ("train.finetune_batch", self.finetune_batch),
            ("train.folds", self.folds),
            ("train.repeats", self.repeats),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.folds < 2 {
            return Err(Error::config("train.folds", "need at least 2 folds"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be positive"));
        }
        if !(self.min_learning_rate >= 0.0 && self.min_learning_rate <= self.learning_rate) {
            return Err(Error::config(
                "train.min_learning_rate",
                "must lie in [0, learning_rate]",
            ));
        }
        for (key, v) in [
            ("train.adam_beta1", self.adam_beta1),
            ("train.adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::config(key, "must lie in [0, 1)"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::config("train.adam_eps", "must be positive"));
        }
        let known = loss_term_names();
        for (name, w) in &self.loss_weights {
            if !known.contains(name) {
                return Err(Error::config(
                    format!("train.loss_weights.{name}"),
                    format!("unknown term; expected one of {}", known.join(", ")),
                ));
            }
            if !(*w >= 0.0 && w.is_finite()) {
                return Err(Error::config(
                    format!("train.loss_weights.{name}"),
                    "must be non-negative",
                ));
            }
        }
        Ok(())
    }

    /// Weight of a loss term; terms left out of the map weigh 1.
    pub fn weight(&self, term: &str) -> f64 {
        self.loss_weights.get(term).copied().unwrap_or(1.0)
    }

    /// Learning rate at optimizer step `step` of `total`.
    pub fn learning_rate_at(&self, step: usize, total: usize) -> f64 {
        match self.lr_schedule {
            LrSchedule::Constant => self.learning_rate,
            LrSchedule::Cosine => {
                let frac = if total <= 1 {
                    0.0
                } else {
                    step as f64 / (total - 1) as f64
                };
                let cos = 0.5 * (1.0 + (std::f64::consts::PI * frac.min(1.0)).cos());
                self.min_learning_rate + (self.learning_rate - self.min_learning_rate) * cos
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_runs_from_initial_to_floor() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.learning_rate_at(0, 100), 5e-4);
        assert!((cfg.learning_rate_at(99, 100) - 5e-6).abs() < 1e-18);
        let mid = cfg.learning_rate_at(50, 101);
        assert!((mid - (5e-6 + 0.5 * (5e-4 - 5e-6))).abs() < 1e-15);
        let constant = TrainConfig {
            lr_schedule: LrSchedule::Constant,
            ..cfg
        };
        assert_eq!(constant.learning_rate_at(70, 100), 5e-4);
    }

    #[test]
    fn validation_names_the_key() {
        let mut cfg = TrainConfig::default();
        cfg.loss_weights.insert("cm_bogus".into(), 1.0);
        match cfg.validate() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "train.loss_weights.cm_bogus"),
            other => panic!("{other:?}"),
        }
        let cfg = TrainConfig {
            folds: 1,
            ..TrainConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
