//! Sequencewise learning-to-rank: a squeeze-and-excitation scoring model over
//! each query's document list, with univariate and groupwise baselines,
//! ranking losses, NDCG evaluation, FLOP accounting, and training harnesses.

pub mod autodiff;
pub mod config;
pub mod data;
pub mod experiments;
pub mod flops;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod error;
pub mod rng;
pub mod train;

pub use error::{Error, Result};
