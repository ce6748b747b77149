//! Shape-checked forward computations on [`Tensor`]s.

use super::kernels;
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
}

impl BinaryKind {
    fn name(self) -> &'static str {
        match self {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryKind::Add => a + b,
            BinaryKind::Sub => a - b,
            BinaryKind::Mul => a * b,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Gelu,
    Sigmoid,
}

/// How the two operands of a binary elementwise op line up.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Broadcast {
    Same,
    ScalarLhs,
    ScalarRhs,
}

pub fn broadcast_of(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Broadcast> {
    if a.shape() == b.shape() {
        Ok(Broadcast::Same)
    } else if a.len() == 1 {
        Ok(Broadcast::ScalarLhs)
    } else if b.len() == 1 {
        Ok(Broadcast::ScalarRhs)
    } else {
        Err(Error::dim(op, a.shape(), b.shape()))
    }
}

pub fn binary(kind: BinaryKind, a: &Tensor, b: &Tensor) -> Result<(Tensor, Broadcast)> {
    let bc = broadcast_of(kind.name(), a, b)?;
    let out = match bc {
        Broadcast::Same => Tensor::from_parts(
            a.shape().to_vec(),
            a.data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| kind.apply(x, y))
                .collect(),
        ),
        Broadcast::ScalarLhs => {
            let s = a.item();
            Tensor::from_parts(
                b.shape().to_vec(),
                b.data().iter().map(|&y| kind.apply(s, y)).collect(),
            )
        }
        Broadcast::ScalarRhs => {
            let s = b.item();
            Tensor::from_parts(
                a.shape().to_vec(),
                a.data().iter().map(|&x| kind.apply(x, s)).collect(),
            )
        }
    };
    out.check_finite(kind.name())?;
    Ok((out, bc))
}

pub fn unary(kind: UnaryKind, a: &Tensor) -> Result<Tensor> {
    let f = match kind {
        UnaryKind::Gelu => kernels::gelu,
        UnaryKind::Sigmoid => kernels::sigmoid,
    };
    let out = Tensor::from_parts(a.shape().to_vec(), a.data().iter().map(|&x| f(x)).collect());
    out.check_finite("unary")?;
    Ok(out)
}

pub fn affine(a: &Tensor, scale: f64, shift: f64) -> Result<Tensor> {
    let out = Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().map(|&x| scale * x + shift).collect(),
    );
    out.check_finite("affine")?;
    Ok(out)
}

/// Matmul geometry: `batch` independent `[m×k]·[k×n]` products; `shared_rhs` when
/// the right operand is a single matrix reused across the batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MatmulDims {
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub shared_rhs: bool,
}

pub fn matmul_dims(a: &Tensor, b: &Tensor) -> Result<(MatmulDims, Vec<usize>)> {
    let (sa, sb) = (a.shape(), b.shape());
    let err = || Error::dim("matmul", sa, sb);
    match (sa.len(), sb.len()) {
        (2.., 2) => {
            let k = sa[sa.len() - 1];
            if k != sb[0] {
                return Err(err());
            }
            let m = a.len() / k;
            let mut out = sa[..sa.len() - 1].to_vec();
            out.push(sb[1]);
            Ok((
                MatmulDims {
                    batch: 1,
                    m,
                    k,
                    n: sb[1],
                    shared_rhs: true,
                },
                out,
            ))
        }
        (3, 3) => {
            if sa[0] != sb[0] || sa[2] != sb[1] {
                return Err(err());
            }
            Ok((
                MatmulDims {
                    batch: sa[0],
                    m: sa[1],
                    k: sa[2],
                    n: sb[2],
                    shared_rhs: false,
                },
                vec![sa[0], sa[1], sb[2]],
            ))
        }
        _ => Err(err()),
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<(Tensor, MatmulDims)> {
    let (d, shape) = matmul_dims(a, b)?;
    let data = if d.shared_rhs {
        kernels::matmul(a.data(), b.data(), d.m, d.k, d.n)
    } else {
        let mut data = Vec::with_capacity(d.batch * d.m * d.n);
        for i in 0..d.batch {
            let ab = &a.data()[i * d.m * d.k..(i + 1) * d.m * d.k];
            let bb = &b.data()[i * d.k * d.n..(i + 1) * d.k * d.n];
            data.extend(kernels::matmul(ab, bb, d.m, d.k, d.n));
        }
        data
    };
    let out = Tensor::from_parts(shape, data);
    out.check_finite("matmul")?;
    Ok((out, d))
}

/// Swaps the last two axes of a rank-2 or rank-3 tensor.
pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let s = a.shape();
    let (batch, r, c) = match s.len() {
        2 => (1, s[0], s[1]),
        3 => (s[0], s[1], s[2]),
        _ => return Err(Error::dim("transpose", s, &[])),
    };
    let mut data = vec![0.0; a.len()];
    for b in 0..batch {
        let src = &a.data()[b * r * c..(b + 1) * r * c];
        let dst = &mut data[b * r * c..(b + 1) * r * c];
        for i in 0..r {
            for j in 0..c {
                dst[j * r + i] = src[i * c + j];
            }
        }
    }
    let mut shape = s.to_vec();
    let n = shape.len();
    shape.swap(n - 2, n - 1);
    Ok(Tensor::from_parts(shape, data))
}

fn last_dim(a: &Tensor) -> usize {
    *a.shape().last().unwrap_or(&1)
}

pub fn bias_add(a: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let d = last_dim(a);
    if bias.rank() != 1 || bias.len() != d {
        return Err(Error::dim("bias_add", a.shape(), bias.shape()));
    }
    let mut data = a.data().to_vec();
    for row in data.chunks_exact_mut(d) {
        row.iter_mut().zip(bias.data()).for_each(|(x, b)| *x += b);
    }
    let out = Tensor::from_parts(a.shape().to_vec(), data);
    out.check_finite("bias_add")?;
    Ok(out)
}

pub fn softmax(a: &Tensor) -> Result<Tensor> {
    let out = Tensor::from_parts(a.shape().to_vec(), kernels::softmax_rows(a.data(), last_dim(a)));
    out.check_finite("softmax")?;
    Ok(out)
}

pub fn layernorm(a: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(Tensor, kernels::LayerNormStats)> {
    let d = last_dim(a);
    if gamma.len() != d || beta.len() != d {
        return Err(Error::dim("layernorm", a.shape(), gamma.shape()));
    }
    let (data, stats) = kernels::layernorm_rows(a.data(), gamma.data(), beta.data(), d);
    let out = Tensor::from_parts(a.shape().to_vec(), data);
    out.check_finite("layernorm")?;
    Ok((out, stats))
}

/// `out[j] = a[indices[j]]`, reshaped to `shape`.
pub fn gather(a: &Tensor, indices: &[usize], shape: &[usize]) -> Result<Tensor> {
    if shape.iter().product::<usize>() != indices.len() {
        return Err(Error::dim("gather", &[indices.len()], shape));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= a.len()) {
        return Err(Error::IndexOutOfRange {
            what: "gather",
            index: bad,
            limit: a.len(),
        });
    }
    Ok(Tensor::from_parts(
        shape.to_vec(),
        indices.iter().map(|&i| a.data()[i]).collect(),
    ))
}

pub fn sum(a: &Tensor) -> Result<Tensor> {
    let out = Tensor::scalar(a.data().iter().sum());
    out.check_finite("sum")?;
    Ok(out)
}

pub fn frobenius_sq(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::dim("frobenius_sq", a.shape(), b.shape()));
    }
    let out = Tensor::scalar(kernels::frobenius_sq(a.data(), b.data()));
    out.check_finite("frobenius_sq")?;
    Ok(out)
}
