//! Multi-domain training harness: a small f64 autodiff engine, a set of
//! multi-environment training algorithms behind one update/predict contract,
//! synthetic multi-domain image datasets, model-selection criteria, random
//! hyperparameter sweeps, and table reporting.

pub mod algorithms;
pub mod autodiff;
pub mod data;
pub mod hparams;
pub mod models;
pub mod records;
pub mod reporting;
pub mod seeds;
pub mod selection;
pub mod sweep;

pub use autodiff::{Tensor, Tape, NodeId, GraphError};
