//! Multi-task conversion-funnel modelling with adaptive information
//! transfer between adjacent steps.
//!
//! The crate is layered bottom-up:
//!
//! - [`tensor`], [`kernels`], [`tape`], [`nn`], [`optim`]: a small f64
//!   reverse-mode differentiation engine with dense layers, dropout and
//!   Adam.
//! - [`model`]: the adaptive-information-transfer network and the
//!   single-task and probability-chain baselines.
//! - [`loss`], [`metrics`]: the joint objective and evaluation metrics.
//! - [`data`]: ingestion, vocabularies, splitting, downsampling and a
//!   synthetic funnel generator.
//! - [`ranking`]: per-bank objective selection and banner scoring.
//! - [`train`], [`artifact`]: the training loop and model persistence.
//!
//! With the default `parallel` feature, matrix products, batched inference
//! and [`kernels::map_ordered`] sweeps run on the rayon pool. Results are
//! bit-identical with and without the feature.

pub mod artifact;
pub mod data;
pub mod error;
pub mod kernels;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod params;
pub mod ranking;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{ArchitectureConfig, Model, ModelVariant, TaskPredictions};
pub use params::{Gradients, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
