//! One-step distillation of a deterministic DDIM sampler.
//!
//! The pipeline trains a small noise-prediction MLP on a 2-D toy density,
//! samples from it with the deterministic DDIM recursion, and trains a
//! single-evaluation student to reproduce the sampler's `x_T -> x_0` map.

pub mod binio;
pub mod config;
pub mod diffusion;
pub mod distill;
pub mod epsnet;
pub mod error;
pub mod eval;
pub mod gradcore;
pub mod pipeline;
pub mod rng;
pub mod toydata;

pub use error::{Error, Result};
