//! Auto-encoders as compression schemes: codelength bounds, denoising and
//! contractive bounds, and the gradient of the log-determinant penalty.

pub mod codelength;
pub mod commands;
pub mod config;
pub mod contractive;
pub mod data;
pub mod error;
pub mod hessian;
pub mod linalg;
pub mod logdet_grad;
pub mod net;
pub mod noise;
pub mod outvar;
pub mod priors;
pub mod train;

pub use error::{Error, Result};
