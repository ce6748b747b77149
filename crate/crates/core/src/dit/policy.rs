//! Per-block execution policies: compute fresh, or consult a feature cache.

use crate::autodiff::{Backend, Tensor};
use crate::caching::Cache;
use crate::error::{Error, Result};

/// Decides the output `o_i` of each cacheable block during a forward pass.
pub trait BlockPolicy<B: Backend> {
    /// `compute` evaluates `b_i(h_i, cs)` on demand; `shape` is the block output shape.
    fn block_output(
        &mut self,
        be: &mut B,
        i: usize,
        shape: &[usize],
        compute: &mut dyn FnMut(&mut B) -> Result<B::Value>,
    ) -> Result<B::Value>;
}

/// Every block computed, no cache involved.
#[derive(Clone, Copy, Debug, Default)]
pub struct Plain;

impl<B: Backend> BlockPolicy<B> for Plain {
    fn block_output(
        &mut self,
        be: &mut B,
        _i: usize,
        _shape: &[usize],
        compute: &mut dyn FnMut(&mut B) -> Result<B::Value>,
    ) -> Result<B::Value> {
        compute(be)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CacheMode {
    /// Threshold rule: compute when `r > τ`, otherwise load the cached value.
    Hard,
    /// Differentiable blend `r·b + (1−r)·c`.
    Soft,
}

/// Gate values for one router row.
#[derive(Clone, Copy, Debug)]
pub enum Gates<'a, V> {
    Numeric(&'a [f64]),
    /// Scalar backend values, so gradients can reach the router.
    Tracked(&'a [V]),
}

impl<V> Gates<'_, V> {
    pub fn len(&self) -> usize {
        match self {
            Gates::Numeric(g) => g.len(),
            Gates::Tracked(g) => g.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Cache-backed execution of one denoising step.
pub struct Cached<'a, V> {
    pub gates: Gates<'a, V>,
    pub tau: f64,
    pub cache: &'a mut Cache,
    pub mode: CacheMode,
}

impl<'a, V> Cached<'a, V> {
    pub fn new(gates: Gates<'a, V>, tau: f64, cache: &'a mut Cache, mode: CacheMode) -> Self {
        Self { gates, tau, cache, mode }
    }

    pub(crate) fn check(&self, n_blocks: usize) -> Result<()> {
        if self.gates.len() != n_blocks {
            return Err(Error::dim("router row", &[self.gates.len()], &[n_blocks]));
        }
        if self.cache.len() != n_blocks {
            return Err(Error::dim("cache", &[self.cache.len()], &[n_blocks]));
        }
        Ok(())
    }
}

impl<B: Backend> BlockPolicy<B> for Cached<'_, B::Value> {
    fn block_output(
        &mut self,
        be: &mut B,
        i: usize,
        shape: &[usize],
        compute: &mut dyn FnMut(&mut B) -> Result<B::Value>,
    ) -> Result<B::Value> {
        let r = match self.gates {
            Gates::Numeric(g) => g[i],
            Gates::Tracked(g) => be.tensor(&g[i]).item(),
        };
        let fresh = r > self.tau;
        match self.mode {
            CacheMode::Hard => {
                if fresh {
                    let b = compute(be)?;
                    self.cache.record_compute();
                    self.cache.write(i, be.tensor(&b).detach())?;
                    Ok(b)
                } else {
                    let c = self.cache.read(i, shape)?.detach();
                    be.constant(c)
                }
            }
            CacheMode::Soft => {
                let b = compute(be)?;
                self.cache.record_compute();
                let c: Tensor = self.cache.read(i, shape)?.detach();
                let c = be.constant(c)?;
                let r = match self.gates {
                    Gates::Numeric(g) => be.constant(Tensor::scalar(g[i]))?,
                    Gates::Tracked(g) => g[i].clone(),
                };
                let one_minus_r = be.affine(&r, -1.0, 1.0)?;
                let rb = be.mul(&r, &b)?;
                let rc = be.mul(&one_minus_r, &c)?;
                let o = be.add(&rb, &rc)?;
                if fresh {
                    self.cache.write(i, be.tensor(&b).detach())?;
                }
                Ok(o)
            }
        }
    }
}
