//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! Model code is written once against [`Backend`]. [`Eager`] evaluates
//! immediately and records nothing; [`Graph`] records every op so that
//! [`Graph::backward`] can propagate gradients to trainable leaves. Both
//! run the same kernels, so their forward values agree bit for bit.

mod eager;
mod graph;
pub mod kernels;
pub mod ops;
mod tensor;

pub use eager::Eager;
pub use graph::{Gradients, Graph, Var};
pub use ops::{BinaryKind, UnaryKind};
pub use tensor::Tensor;

use crate::error::Result;

/// Elementwise operation selector for [`Backend::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    /// `scale * x + shift`
    Affine { scale: f64, shift: f64 },
    Gelu,
    Sigmoid,
    /// Last axis.
    Softmax,
}

pub trait Backend {
    type Value: Clone;

    /// Wraps data that never receives gradient.
    fn constant(&mut self, t: Tensor) -> Result<Self::Value>;
    /// Wraps a model parameter; gradient is tracked iff `t.requires_grad()`.
    fn param(&mut self, t: &Tensor) -> Result<Self::Value>;
    fn tensor<'a>(&'a self, v: &'a Self::Value) -> &'a Tensor;

    fn matmul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn transpose(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn binary(&mut self, kind: BinaryKind, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn unary(&mut self, kind: UnaryKind, a: &Self::Value) -> Result<Self::Value>;
    fn affine(&mut self, a: &Self::Value, scale: f64, shift: f64) -> Result<Self::Value>;
    fn softmax(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn bias_add(&mut self, a: &Self::Value, bias: &Self::Value) -> Result<Self::Value>;
    fn layernorm(&mut self, a: &Self::Value, gamma: &Self::Value, beta: &Self::Value) -> Result<Self::Value>;
    fn gather(&mut self, a: &Self::Value, indices: Vec<usize>, shape: Vec<usize>) -> Result<Self::Value>;
    fn reshape(&mut self, a: &Self::Value, shape: Vec<usize>) -> Result<Self::Value>;
    fn sum(&mut self, a: &Self::Value) -> Result<Self::Value>;
    fn frobenius_sq(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;

    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.binary(BinaryKind::Add, a, b)
    }

    fn sub(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.binary(BinaryKind::Sub, a, b)
    }

    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value> {
        self.binary(BinaryKind::Mul, a, b)
    }

    fn scale(&mut self, a: &Self::Value, s: f64) -> Result<Self::Value> {
        self.affine(a, s, 0.0)
    }

    fn elementwise(&mut self, kind: Elementwise, a: &Self::Value, b: Option<&Self::Value>) -> Result<Self::Value> {
        let rhs = || {
            b.ok_or_else(|| crate::error::Error::Config("binary elementwise op needs a second operand".into()))
        };
        match kind {
            Elementwise::Add => self.binary(BinaryKind::Add, a, rhs()?),
            Elementwise::Sub => self.binary(BinaryKind::Sub, a, rhs()?),
            Elementwise::Mul => self.binary(BinaryKind::Mul, a, rhs()?),
            Elementwise::Affine { scale, shift } => self.affine(a, scale, shift),
            Elementwise::Gelu => self.unary(UnaryKind::Gelu, a),
            Elementwise::Sigmoid => self.unary(UnaryKind::Sigmoid, a),
            Elementwise::Softmax => self.softmax(a),
        }
    }

    /// Scalar element `i` of `a` as a `[1]` value.
    fn index(&mut self, a: &Self::Value, i: usize) -> Result<Self::Value> {
        self.gather(a, vec![i], vec![1])
    }
}
