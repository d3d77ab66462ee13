//! Multi-source unsupervised domain adaptation for binary text
//! classification.
//!
//! The crate trains a bank of per-domain expert encoders plus one shared
//! encoder and combines their predictions with one of four mixing rules
//! (plain averaging, searched static weights, a frozen domain classifier, or
//! learned dot-product attention). A gradient-reversal branch can push any
//! encoder layer towards domain-invariant representations. Training uses
//! single-domain episodes in which the batch's own domain plays the unseen
//! target for the mixture. A leave-one-out harness, metrics, agreement and
//! projection analyses, and a `msda` command-line tool sit on top.
//!
//! All numeric code is generic over [`Scalar`]; runs and checkpoints use
//! `f32`, gradient checks use `f64`.

// dense kernels read more clearly with explicit indices
#![allow(clippy::needless_range_loop)]

pub mod adversarial;
pub mod analysis;
pub mod checkpoint;
pub mod data;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod fsio;
pub mod graph;
pub mod mixing;
pub mod optim;
pub mod params;
pub mod run;
pub mod scalar;
pub mod tensor;
pub mod training;

#[cfg(test)]
mod testutil;

pub use data::{DatasetBundle, DomainId, Example, TrainingBundle};
pub use encoder::{Backbone, Encoder, EncoderConfig, EncoderOutput};
pub use error::{Error, Result};
pub use evaluation::{ConfusionCounts, RunReport};
pub use mixing::{AttentionParams, MixWeights};
pub use scalar::Scalar;
pub use tensor::Matrix;
pub use training::{Model, TrainConfig, Variant};

/// Element type used by runs, checkpoints and the CLI.
pub type Real = f32;

pub type Matrix32 = Matrix<f32>;
pub type Matrix64 = Matrix<f64>;
pub type Model32 = Model<f32>;
pub type Model64 = Model<f64>;
pub type MixWeights32 = MixWeights<f32>;
pub type MixWeights64 = MixWeights<f64>;
pub type EncoderOutput32 = EncoderOutput<f32>;
pub type EncoderOutput64 = EncoderOutput<f64>;
