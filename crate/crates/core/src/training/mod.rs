//! Pretraining, fine-tuning, cross-validation, distillation and the
//! supporting optimizer, metric and checkpoint plumbing.

pub mod checkpoint;
pub mod config;
pub mod finetune;
pub mod folds;
pub mod metrics;
pub mod optim;
pub mod parallel;
pub mod pretrain;
pub mod samples;
pub mod transfer;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use config::{LrSchedule, TrainConfig};
pub use finetune::{cross_validate, cross_validate_distill, finetune, predict, FeatureCache};
pub use metrics::{auroc, evaluate, BinaryMetrics, MetricsReport};
pub use optim::Adam;
pub use pretrain::{pretrain, PretrainStats};
pub use transfer::{initial_model, universal_pretrain_transfer, TransferReport, TransferScenario};
