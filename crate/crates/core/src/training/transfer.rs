//! Pretrain on one set, fine-tune on another, and compare with training from scratch.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augmentation::AugmentationConfig;
use crate::data::{DataConfig, Modality, SubjectInputs};
use crate::error::{Error, Result};
use crate::losses::LossConfig;
use crate::model::{Model, ModelConfig};
use crate::params::ParamSet;
use crate::scalar::Scalar;
use crate::training::{cross_validate, pretrain, MetricsReport, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransferScenario {
    CrossModality,
    CrossDataset,
    CrossTask,
    CrossSite,
}

impl TransferScenario {
    pub fn as_str(self) -> &'static str {
        match self {
            TransferScenario::CrossModality => "cross-modality",
            TransferScenario::CrossDataset => "cross-dataset",
            TransferScenario::CrossTask => "cross-task",
            TransferScenario::CrossSite => "cross-site",
        }
    }
}

impl fmt::Display for TransferScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TransferScenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            TransferScenario::CrossModality,
            TransferScenario::CrossDataset,
            TransferScenario::CrossTask,
            TransferScenario::CrossSite,
        ]
        .into_iter()
        .find(|t| t.as_str() == s)
        .ok_or_else(|| Error::validation(format!("unknown transfer scenario `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferReport {
    pub scenario: TransferScenario,
    pub pretrained: MetricsReport,
    pub scratch: MetricsReport,
}

impl TransferReport {
    pub fn delta_auroc(&self) -> f64 {
        self.pretrained.mean_auroc() - self.scratch.mean_auroc()
    }

    pub fn delta_accuracy(&self) -> f64 {
        self.pretrained.summary()["accuracy"].mean - self.scratch.summary()["accuracy"].mean
    }
}

/// Fresh model whose encoders and projection heads are copied from
/// `pretrained` when given; the classifier always starts from `seed`.
pub fn initial_model<T: Scalar>(
    cfg: &ModelConfig,
    data: &DataConfig,
    seed: u64,
    pretrained: Option<&ParamSet<T>>,
) -> Result<Model<T>> {
    let mut m = Model::new(cfg, data, seed)?;
    if let Some(p) = pretrained {
        let copied = m.load_matching(p, |name| !Model::<T>::is_classifier_param(name));
        let expected = m
            .params
            .iter()
            .filter(|(_, n, _)| !Model::<T>::is_classifier_param(n))
            .count();
        if copied != expected {
            return Err(Error::validation(format!(
                "pretrained weights cover {copied} of {expected} backbone arrays"
            )));
        }
    }
    Ok(m)
}

fn common_roi<T: Scalar>(sets: &[&[SubjectInputs<T>]]) -> Result<usize> {
    let mut n = None;
    for s in sets.iter().flat_map(|set| set.iter()) {
        if let Some(k) = s.n_roi() {
            match n {
                None => n = Some(k),
                Some(prev) if prev != k => {
                    return Err(Error::validation(format!(
                        "ROI counts differ between subjects ({prev} vs {k})"
                    )))
                }
                _ => {}
            }
        }
    }
    n.ok_or_else(|| Error::validation("no runs to infer the ROI count from"))
}

fn modalities<T: Scalar>(set: &[SubjectInputs<T>]) -> Vec<Modality> {
    Modality::ALL
        .into_iter()
        .filter(|&m| set.iter().any(|s| !s.runs(m).is_empty()))
        .collect()
}

/// Runs pretraining on `pretrain_set`, then cross-validates `task` on
/// `finetune_set` from the pretrained backbone and from scratch.
#[allow(clippy::too_many_arguments)]
pub fn universal_pretrain_transfer<T: Scalar>(
    pretrain_set: &[SubjectInputs<T>],
    finetune_set: &[SubjectInputs<T>],
    scenario: TransferScenario,
    task: &str,
    cfg: &ModelConfig,
    data: &DataConfig,
    train: &TrainConfig,
    loss: &LossConfig,
    aug: &AugmentationConfig,
) -> Result<TransferReport> {
    let n_roi = common_roi(&[pretrain_set, finetune_set])?;
    if scenario == TransferScenario::CrossModality {
        let a = modalities(pretrain_set);
        if modalities(finetune_set).iter().any(|m| a.contains(m)) {
            return Err(Error::validation(
                "cross-modality transfer needs disjoint modalities",
            ));
        }
    }
    let cfg = cfg.resolved(n_roi)?;
    let mut model = Model::<T>::new(&cfg, data, train.seed)?;
    pretrain(&mut model, pretrain_set, train, loss, aug)?;
    let pretrained = model.params;
    let from_pretrained = || initial_model(&cfg, data, train.seed, Some(&pretrained));
    let from_scratch = || initial_model::<T>(&cfg, data, train.seed, None);
    Ok(TransferReport {
        scenario,
        pretrained: cross_validate(&from_pretrained, finetune_set, task, train)?,
        scratch: cross_validate(&from_scratch, finetune_set, task, train)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::pretrain::tests::tiny_setup;

    #[test]
    fn scenario_names_round_trip() {
        for s in [
            "cross-modality",
            "cross-dataset",
            "cross-task",
            "cross-site",
        ] {
            assert_eq!(s.parse::<TransferScenario>().unwrap().as_str(), s);
        }
        assert!("sideways".parse::<TransferScenario>().is_err());
    }

    #[test]
    fn mismatched_roi_counts_are_rejected() {
        let (model, a) = tiny_setup(4, 1);
        let mut b = a.clone();
        b[0].fmri[0].temporal = crate::matrix::Matrix::zeros(5, 40);
        let r = universal_pretrain_transfer(
            &a,
            &b,
            TransferScenario::CrossDataset,
            "task0",
            &model.cfg,
            &model.data,
            &TrainConfig::default(),
            &LossConfig::default(),
            &AugmentationConfig::default(),
        );
        assert!(matches!(r, Err(Error::Validation(_))));
    }

    #[test]
    fn initial_model_copies_backbone_only() {
        let (model, _) = tiny_setup(2, 1);
        let mut other = model.params.clone();
        for id in other.ids().collect::<Vec<_>>() {
            let v = other.get(id).map(|x| x + 1.0);
            *other.get_mut(id) = v;
        }
        let m = initial_model(&model.cfg, &model.data, 7, Some(&other)).unwrap();
        let fresh = initial_model::<f64>(&model.cfg, &model.data, 7, None).unwrap();
        for (id, name, v) in m.params.iter() {
            if Model::<f64>::is_classifier_param(name) {
                assert_eq!(v, fresh.params.get(id));
            } else {
                assert_eq!(v, other.get(other.id(name).unwrap()));
            }
        }
    }
}
