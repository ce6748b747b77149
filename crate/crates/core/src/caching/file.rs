//! Router file: a JSON object
//! `{"version": 1, "T": .., "N": .., "tau": .., "logits": [..]}` with the
//! `T·N` logits row-major, row 0 holding timestep 1.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::router::Router;
use crate::error::{Error, Result};

pub const ROUTER_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RouterFile {
    version: u32,
    #[serde(rename = "T")]
    steps: usize,
    #[serde(rename = "N")]
    blocks: usize,
    tau: f64,
    logits: Vec<f64>,
}

impl Router {
    pub fn to_json(&self) -> Result<String> {
        let file = RouterFile {
            version: ROUTER_VERSION,
            steps: self.steps(),
            blocks: self.blocks(),
            tau: self.tau(),
            logits: self.logits().to_vec(),
        };
        let mut text = serde_json::to_string_pretty(&file)?;
        text.push('\n');
        Ok(text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: RouterFile = serde_json::from_str(text)?;
        if file.version != ROUTER_VERSION {
            return Err(Error::Version {
                found: file.version,
                expected: ROUTER_VERSION,
            });
        }
        Router::from_logits(file.steps, file.blocks, file.tau, file.logits)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::io::write_atomic(path.as_ref(), self.to_json()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Loads a router and checks it against a model with `n_blocks` blocks.
    pub fn load_for(path: impl AsRef<Path>, n_blocks: usize) -> Result<Self> {
        let router = Self::load(path)?;
        router.check_blocks(n_blocks)?;
        Ok(router)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caching::RouterInit;

    #[test]
    fn round_trip_is_bit_exact() {
        let r = Router::random(6, 4, 0.1, RouterInit { mean: 0.3, std: 3.0 }, 9).unwrap();
        let back = Router::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back.steps(), 6);
        assert_eq!(back.tau().to_bits(), r.tau().to_bits());
        let bits = |r: &Router| r.logits().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&r));
    }

    #[test]
    fn version_and_dimension_errors() {
        let r = Router::constant(2, 7, 0.1, 1.0).unwrap();
        let text = r.to_json().unwrap().replace("\"version\": 1", "\"version\": 2");
        assert!(matches!(Router::from_json(&text), Err(Error::Version { found: 2, .. })));
        assert!(matches!(r.check_blocks(8), Err(Error::Dimension { .. })));
    }
}
