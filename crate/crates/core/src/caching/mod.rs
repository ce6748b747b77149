//! Caching policy state: the router of per-step, per-block gates, the block
//! output cache, the step mask used for proxy generation, and the cache usage
//! ratio with its FLOP-based speedup.

mod cache;
mod file;
mod mask;
mod router;

pub use cache::{Cache, CacheStats};
pub use file::ROUTER_VERSION;
pub use mask::{apply_mask, MaskMatrix};
pub use router::{cur, theoretical_speedup, GateMatrix, Router, RouterInit, DEFAULT_TAU};
