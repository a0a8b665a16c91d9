//! Synthetic video question answering with intervention-based training that
//! teaches a model to admit when a question cannot be answered from a video.

pub mod config;
pub mod curriculum;
pub mod error;
pub mod eval;
pub mod intervene;
pub mod nnet;
pub mod rng;
pub mod taskheads;
pub mod trainer;
pub mod worldgen;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
