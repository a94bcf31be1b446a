//! Class-level unlearning for small MLP classifiers, with diagnostics that
//! read the classification-head bias vector.
//!
//! The crate is organised bottom-up: [`numerics`] holds the dense kernels,
//! [`data`] and [`model`] the datasets and classifier, [`unlearning`] the
//! methods, [`metrics`] the evaluation and bias scores, and [`experiment`]
//! the configuration-driven runner used by the command-line tool.

pub mod data;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod unlearning;

pub use error::{Error, Result};
