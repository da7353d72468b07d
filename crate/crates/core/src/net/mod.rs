//! The trainable estimator: patch transformer encoder, unrolled
//! hard-thresholding decoder over a fixed dictionary, and a learned mapping
//! from sparse codes to model parameters.

pub mod checkpoint;
mod config;
mod model;
mod params;
mod train;

pub use config::{DecoderConfig, DecoderKind, EncoderConfig, EncoderKind, ModelConfig, ModelKind, TrainConfig};
pub use model::{DictBinding, Forward, InitOptions, Model, ModelMeta};
pub use params::{glorot, normal, ParamStore};
pub use train::{evaluate_loss, predict_all, target_scales, train, EpochRecord, History, Samples};

#[cfg(test)]
mod tests;
