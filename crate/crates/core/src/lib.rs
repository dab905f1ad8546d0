//! Few-shot univariate time-series classification with a meta-learned
//! convolutional embedding network, plus Euclidean and DTW nearest-neighbor
//! baselines and rank-based benchmark statistics.

pub mod baselines;
pub mod data;
pub mod embedder;
mod error;
pub mod eval;
pub mod gradcheck;
pub mod jsonl;
pub mod meta;
pub mod numeric;
pub mod seed;
pub mod triplet;

pub use error::{Error, Result};
