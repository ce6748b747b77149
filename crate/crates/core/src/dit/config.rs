use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape and initialization of the toy transformer noise predictor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiTConfig {
    /// Pixels per image side.
    pub image_size: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Transformer layers; each contributes one Attention and one FFN block.
    pub depth: usize,
    /// Real classes. Index `n_classes` is the null class used for guidance.
    pub n_classes: usize,
    /// FFN hidden width as a multiple of `d_model`.
    pub mlp_ratio: usize,
    pub seed: u64,
}

impl Default for DiTConfig {
    fn default() -> Self {
        Self {
            image_size: 8,
            channels: 1,
            patch_size: 2,
            d_model: 64,
            n_heads: 4,
            depth: 4,
            n_classes: 4,
            mlp_ratio: 4,
            seed: 0,
        }
    }
}

impl DiTConfig {
    /// Number of cacheable blocks, `2 * depth`.
    pub fn n_blocks(&self) -> usize {
        2 * self.depth
    }

    pub fn tokens(&self) -> usize {
        let side = self.image_size / self.patch_size;
        side * side
    }

    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_size * self.patch_size
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn image_shape(&self, batch: usize) -> Vec<usize> {
        vec![batch, self.channels, self.image_size, self.image_size]
    }

    pub fn null_class(&self) -> usize {
        self.n_classes
    }

    /// Every violated constraint, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let positive = [
            ("image_size", self.image_size),
            ("channels", self.channels),
            ("patch_size", self.patch_size),
            ("d_model", self.d_model),
            ("n_heads", self.n_heads),
            ("depth", self.depth),
            ("n_classes", self.n_classes),
            ("mlp_ratio", self.mlp_ratio),
        ];
        for (name, value) in positive {
            if value == 0 {
                v.push(format!("model.{name} must be positive"));
            }
        }
        if self.patch_size > 0 && self.image_size % self.patch_size != 0 {
            v.push(format!(
                "model.image_size ({}) must be divisible by model.patch_size ({})",
                self.image_size, self.patch_size
            ));
        }
        if self.n_heads > 0 && self.d_model % self.n_heads != 0 {
            v.push(format!(
                "model.d_model ({}) must be divisible by model.n_heads ({})",
                self.d_model, self.n_heads
            ));
        }
        if self.d_model % 2 != 0 {
            v.push(format!("model.d_model ({}) must be even for the timestep embedding", self.d_model));
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("; ")))
        }
    }
}
