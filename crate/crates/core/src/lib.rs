//! Training, diagnostics and benchmarking for single-logit classification.
//!
//! When a classifier with many classes is queried for one class at a time,
//! the logit of that class alone can answer the query - if training pushed
//! every true logit above every false logit. This crate implements the seven
//! losses relevant to that regime, instruments the separation property,
//! trains small MLPs, evaluates single-logit accuracy with precision-recall
//! metrics, and measures the inference speedup of computing one logit
//! instead of all of them.

pub mod bench;
pub mod data;
pub mod error;
pub mod losses;
pub mod network;
pub mod pols;
pub mod rng;
pub mod slc_eval;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::Tensor;
