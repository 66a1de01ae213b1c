//! Run configuration file: one TOML document with a section per stage.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mcsp_core::augmentation::AugmentationConfig;
use mcsp_core::data::DataConfig;
use mcsp_core::distillation::DistillConfig;
use mcsp_core::error::{Error, Result};
use mcsp_core::losses::LossConfig;
use mcsp_core::model::{ClassifierConfig, EncoderSet, ModelConfig};
use mcsp_core::projectors::ProjectorConfig;
use mcsp_core::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    Float32,
    Float64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Dataset directory used when neither `--data` nor `MCSP_DATA_DIR` is given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_roi: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    pub paths: Paths,
    pub data: DataConfig,
    pub model: ModelSection,
    pub encoder: EncoderSet,
    pub projector: ProjectorConfig,
    pub classifier: ClassifierConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub augmentation: AugmentationConfig,
    pub distill: DistillConfig,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            let inner = e.into_inner();
            if inner.span().is_some() && key == "." {
                Error::format(origin, inner.message().to_string())
            } else {
                Error::config(
                    if key == "." {
                        "<root>".to_string()
                    } else {
                        key
                    },
                    inner.message().trim().to_string(),
                )
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model_config().validate()?;
        self.loss.validate()?;
        self.train().validate()?;
        self.augmentation.validate()?;
        self.distill.validate()
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            n_roi: self.model.n_roi,
            encoder: self.encoder.clone(),
            projector: self.projector.clone(),
            classifier: self.classifier.clone(),
        }
    }

    /// Training settings with the run seed filled in.
    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config always serialises")
    }

    pub fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("run config always serialises")
    }
}
