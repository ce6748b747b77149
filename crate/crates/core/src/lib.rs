//! Learnable block-level feature caching for a toy diffusion transformer.
//!
//! The crate is organized bottom-up: [`autodiff`] provides tensors and
//! reverse-mode gradients, [`dit`] the noise predictor whose Attention and
//! FFN blocks can be served from a cache, [`caching`] the router/cache
//! policy state, [`sampler`] the denoising loop, [`trainer`] router and
//! teacher training, and [`eval`] the measurement harness.

pub mod autodiff;
pub mod caching;
pub mod dit;
pub mod eval;
mod error;
pub mod io;
pub mod sampler;
pub mod trainer;

pub use autodiff::{Backend, Eager, Graph, Tensor, Var};
pub use error::{Error, Result};
