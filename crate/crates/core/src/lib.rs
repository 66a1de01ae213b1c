//! Multi-modal (fMRI/EEG), cross-domain self-supervised pretraining.
//!
//! Everything numeric is generic over [`scalar::Scalar`] (`f32` or `f64`);
//! the aliases below fix the precision for callers that do not care.

pub mod augmentation;
pub mod autodiff;
pub mod connectivity;
pub mod data;
pub mod distillation;
pub mod encoders;
pub mod error;
pub mod losses;
pub mod matrix;
pub mod model;
pub mod params;
pub mod projectors;
pub mod rng;
pub mod scalar;
pub mod training;

pub use error::{Error, Result};

pub type Matrix32 = matrix::Matrix<f32>;
pub type Matrix64 = matrix::Matrix<f64>;
pub type Model32 = model::Model<f32>;
pub type Model64 = model::Model<f64>;
pub type SubjectInputs32 = data::SubjectInputs<f32>;
pub type SubjectInputs64 = data::SubjectInputs<f64>;
pub type SubjectRecord32 = data::SubjectRecord<f32>;
pub type SubjectRecord64 = data::SubjectRecord<f64>;
pub type Checkpoint32 = training::Checkpoint<f32>;
pub type Checkpoint64 = training::Checkpoint<f64>;
