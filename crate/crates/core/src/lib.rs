//! Hybrid feature selection for tabular intrusion-detection data.
//!
//! The pipeline ranks numeric features by information gain ([`info_gain`])
//! and random-forest impurity importance ([`forest`]), keeps the union of the
//! features above each threshold plus every categorical feature
//! ([`ensemble`]), then runs patience-bounded recursive feature elimination
//! ([`rfe`]) scored by an MLP classifier ([`mlp`]). [`data`] covers loading
//! and preprocessing, [`metrics`] the multiclass evaluation, and
//! [`pipeline`] ties the stages together behind a config file.

pub mod config;
pub mod data;
pub mod ensemble;
pub mod error;
pub mod forest;
pub mod info_gain;
pub mod metrics;
pub mod mlp;
pub mod pipeline;
pub mod plot;
pub mod rfe;
pub mod rng;
pub mod synthetic;

pub use error::{Error, Result};
