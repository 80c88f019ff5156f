//! Federated-learning simulation with class-specific Shapley contribution
//! assessment.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] - small classifiers with hand-derived gradients and access to
//!   the final linear layer.
//! * [`data`] - synthetic blobs, CSV ingestion and participant partitioning.
//! * [`contribution`] - per-class cosine contributions, importance weights,
//!   momentum smoothing, the full-vector cosine baseline and an exact Shapley
//!   oracle.
//! * [`federation`] - the round loop: broadcast, local training, aggregation
//!   and contribution refresh.
//! * [`metrics`] - balanced accuracy and Pearson fairness.
//! * [`config`] and [`cli`] - the experiment description format and the
//!   commands that emit CSV/JSON results.

pub mod cli;
pub mod config;
pub mod contribution;
pub mod data;
mod error;
pub mod federation;
pub mod metrics;
pub mod model;
mod report;
pub mod rng;

pub use error::{Error, Result};
