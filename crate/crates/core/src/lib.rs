//! Inductive graph few-shot class-incremental node classification.
//!
//! A base session pre-trains a two-layer graph-attention encoder with
//! triple-branch topology augmentation ([`tmca`]); each incremental session
//! then fine-tunes on a few labeled nodes, blends parameters with an
//! exponential moving average, calibrates novel prototypes from unlabeled
//! query nodes and shifts old prototypes along the estimated feature drift
//! ([`incremental`]). The [`harness`] module builds session splits, runs
//! baselines and writes reports.

pub mod autodiff;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod gat;
pub mod graph;
pub mod harness;
pub mod incremental;
pub mod proto;
pub mod rng;
pub mod tmca;

pub use error::{Error, Result};
