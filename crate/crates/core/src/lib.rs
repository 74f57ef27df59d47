//! Physics-informed denoising diffusion for multivariate time-series anomaly
//! detection.

pub mod baselines;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod detect;
pub mod diffcore;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod par;
pub mod physics;
pub mod seqnet;
pub mod train;

pub use error::{Error, Result};
