//! Toy Diffusion Transformer noise predictor with cacheable blocks.
//!
//! Block `i` is the residual branch of layer `i / 2`: an Attention block for
//! even `i`, an FFN for odd `i`. Residual additions happen outside the block,
//! so a cache slot always holds a pre-residual activation.

pub mod checkpoint;
mod config;
mod model;
mod policy;

pub use config::DiTConfig;
pub use model::{timestep_embedding, BlockKind, Condition, DiTModel};
pub use policy::{BlockPolicy, CacheMode, Cached, Gates, Plain};
