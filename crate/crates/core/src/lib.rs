//! Experiments on learning many categories with one convolutional network.
//!
//! The crate covers the full pipeline: category manifests and dataset
//! sampling ([`data`]), augmentation ([`augment`]), a from-scratch residual
//! network ([`model`]), class and class/category label encodings
//! ([`labeling`]), RMSProp training and multi-view evaluation ([`training`]),
//! confusion-matrix analytics ([`analytics`]), and experiment orchestration
//! with a resumable results store ([`experiment`]).

pub mod analytics;
pub mod augment;
pub mod data;
mod error;
pub mod experiment;
pub mod labeling;
pub mod model;
pub mod seed;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
