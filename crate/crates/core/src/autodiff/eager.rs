use super::ops::{self, BinaryKind, UnaryKind};
use super::{Backend, Tensor};
use crate::error::Result;

/// Graph-free evaluation. Values are plain tensors and nothing is recorded.
#[derive(Clone, Copy, Debug, Default)]
pub struct Eager;

impl Backend for Eager {
    type Value = Tensor;

    fn constant(&mut self, t: Tensor) -> Result<Tensor> {
        Ok(t)
    }

    fn param(&mut self, t: &Tensor) -> Result<Tensor> {
        Ok(t.detach())
    }

    fn tensor<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }

    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        ops::matmul(a, b).map(|(t, _)| t)
    }

    fn transpose(&mut self, a: &Tensor) -> Result<Tensor> {
        ops::transpose(a)
    }

    fn binary(&mut self, kind: BinaryKind, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        ops::binary(kind, a, b).map(|(t, _)| t)
    }

    fn unary(&mut self, kind: UnaryKind, a: &Tensor) -> Result<Tensor> {
        ops::unary(kind, a)
    }

    fn affine(&mut self, a: &Tensor, scale: f64, shift: f64) -> Result<Tensor> {
        ops::affine(a, scale, shift)
    }

    fn softmax(&mut self, a: &Tensor) -> Result<Tensor> {
        ops::softmax(a)
    }

    fn bias_add(&mut self, a: &Tensor, bias: &Tensor) -> Result<Tensor> {
        ops::bias_add(a, bias)
    }

    fn layernorm(&mut self, a: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
        ops::layernorm(a, gamma, beta).map(|(t, _)| t)
    }

    fn gather(&mut self, a: &Tensor, indices: Vec<usize>, shape: Vec<usize>) -> Result<Tensor> {
        ops::gather(a, &indices, &shape)
    }

    fn reshape(&mut self, a: &Tensor, shape: Vec<usize>) -> Result<Tensor> {
        a.reshape(&shape)
    }

    fn sum(&mut self, a: &Tensor) -> Result<Tensor> {
        ops::sum(a)
    }

    fn frobenius_sq(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        ops::frobenius_sq(a, b)
    }
}
