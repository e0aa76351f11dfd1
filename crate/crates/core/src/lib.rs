//! Data and model service core: embeddings, k-means cluster index, dataset
//! distribution signatures, a persistent labelled data store with
//! pseudo-labelling, a model zoo ranked by Jensen–Shannon divergence and a
//! certainty-driven drift monitor that rebuilds the index.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod codec;
pub mod datastore;
pub mod distribution;
pub mod drift;
pub mod embedding;
pub mod error;
pub mod modelzoo;
pub mod system;
mod util;

pub use error::{Error, Result};
