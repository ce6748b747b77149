use super::kernels::{self, LayerNormStats};
use super::ops::{self, BinaryKind, Broadcast, MatmulDims, UnaryKind};
use super::{Backend, Tensor};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul { a: usize, b: usize, dims: MatmulDims },
    Transpose { a: usize },
    Binary { kind: BinaryKind, a: usize, b: usize, bc: Broadcast },
    Unary { kind: UnaryKind, a: usize },
    Affine { a: usize, scale: f64 },
    Softmax { a: usize },
    BiasAdd { a: usize, bias: usize },
    LayerNorm { a: usize, gamma: usize, beta: usize, stats: LayerNormStats },
    Gather { a: usize, indices: Vec<usize> },
    Reshape { a: usize },
    Sum { a: usize },
    Frobenius { a: usize, b: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    /// Leaf created from a `requires_grad` tensor.
    trainable: bool,
    /// Some trainable leaf is reachable through this node's inputs.
    needs_grad: bool,
}

/// Append-only record of operations. Inputs always precede consumers, so the
/// append order is a topological order.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    cleared: bool,
}

/// Gradients of trainable leaves produced by [`Graph::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of leaf `v` (if any) into `target`'s grad buffer.
    pub fn accumulate_into(&self, v: Var, target: &mut Tensor) -> Result<()> {
        match self.get(v) {
            Some(g) => target.accumulate_grad(g),
            None => Ok(()),
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn val(&self, v: Var) -> Result<&Tensor> {
        if self.cleared {
            return Err(Error::GraphCleared);
        }
        self.nodes.get(v.0).map(|n| &n.value).ok_or(Error::IndexOutOfRange {
            what: "graph node",
            index: v.0,
            limit: self.nodes.len(),
        })
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// New leaf with the same values and no edge back to `v`.
    pub fn detach(&mut self, v: Var) -> Result<Var> {
        let t = self.nodes[v.0].value.detach();
        self.constant(t)
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[usize]) -> Result<Var> {
        if self.cleared {
            return Err(Error::GraphCleared);
        }
        let needs_grad = inputs.iter().any(|&i| self.nodes[i].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            trainable: false,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn leaf(&mut self, value: Tensor, trainable: bool) -> Result<Var> {
        if self.cleared {
            return Err(Error::GraphCleared);
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            trainable,
            needs_grad: trainable,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Propagates d(loss)/d(node) back to every trainable leaf, then clears
    /// the graph. Nodes are visited once each in reverse append order.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.cleared {
            return Err(Error::GraphCleared);
        }
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        root.value.check_finite("loss")?;

        let nodes = &self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        let mut leaf_grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        if root.needs_grad {
            grads[loss.0] = Some(vec![1.0]);
        }

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let mut acc = |input: usize, f: &mut dyn FnMut(&mut [f64])| {
                let target = &nodes[input];
                if target.needs_grad {
                    let buf = grads[input].get_or_insert_with(|| vec![0.0; target.value.len()]);
                    f(buf);
                }
            };
            match &node.op {
                Op::Leaf => {
                    if node.trainable {
                        leaf_grads[id] = Some(g);
                    }
                }
                Op::MatMul { a, b, dims } => {
                    let av = nodes[*a].value.data();
                    let bv = nodes[*b].value.data();
                    let MatmulDims { batch, m, k, n, shared_rhs } = *dims;
                    acc(*a, &mut |ga| {
                        if shared_rhs {
                            kernels::matmul_nt_acc(&g, bv, m, n, k, ga);
                        } else {
                            for i in 0..batch {
                                kernels::matmul_nt_acc(
                                    &g[i * m * n..(i + 1) * m * n],
                                    &bv[i * k * n..(i + 1) * k * n],
                                    m,
                                    n,
                                    k,
                                    &mut ga[i * m * k..(i + 1) * m * k],
                                );
                            }
                        }
                    });
                    acc(*b, &mut |gb| {
                        if shared_rhs {
                            kernels::matmul_tn_acc(av, &g, m, k, n, gb);
                        } else {
                            for i in 0..batch {
                                kernels::matmul_tn_acc(
                                    &av[i * m * k..(i + 1) * m * k],
                                    &g[i * m * n..(i + 1) * m * n],
                                    m,
                                    k,
                                    n,
                                    &mut gb[i * k * n..(i + 1) * k * n],
                                );
                            }
                        }
                    });
                }
                Op::Transpose { a } => {
                    let gt = ops::transpose(&Tensor::from_parts(node.value.shape().to_vec(), g))?;
                    acc(*a, &mut |ga| add_into(ga, gt.data()));
                }
                Op::Binary { kind, a, b, bc } => {
                    let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
                    // d(out)/d(a) and d(out)/d(b) per element, reduced for scalar operands.
                    let lhs = |j: usize| match kind {
                        BinaryKind::Add | BinaryKind::Sub => 1.0,
                        BinaryKind::Mul => bv[if *bc == Broadcast::ScalarRhs { 0 } else { j }],
                    };
                    let rhs = |j: usize| match kind {
                        BinaryKind::Add => 1.0,
                        BinaryKind::Sub => -1.0,
                        BinaryKind::Mul => av[if *bc == Broadcast::ScalarLhs { 0 } else { j }],
                    };
                    acc(*a, &mut |ga| {
                        if *bc == Broadcast::ScalarLhs {
                            ga[0] += g.iter().enumerate().map(|(j, gj)| gj * lhs(j)).sum::<f64>();
                        } else {
                            ga.iter_mut().zip(&g).enumerate().for_each(|(j, (o, gj))| *o += gj * lhs(j));
                        }
                    });
                    acc(*b, &mut |gb| {
                        if *bc == Broadcast::ScalarRhs {
                            gb[0] += g.iter().enumerate().map(|(j, gj)| gj * rhs(j)).sum::<f64>();
                        } else {
                            gb.iter_mut().zip(&g).enumerate().for_each(|(j, (o, gj))| *o += gj * rhs(j));
                        }
                    });
                }
                Op::Unary { kind, a } => {
                    let x = nodes[*a].value.data();
                    let y = node.value.data();
                    acc(*a, &mut |ga| {
                        for j in 0..ga.len() {
                            let d = match kind {
                                UnaryKind::Gelu => kernels::gelu_grad(x[j]),
                                UnaryKind::Sigmoid => y[j] * (1.0 - y[j]),
                            };
                            ga[j] += g[j] * d;
                        }
                    });
                }
                Op::Affine { a, scale } => {
                    acc(*a, &mut |ga| ga.iter_mut().zip(&g).for_each(|(o, gj)| *o += scale * gj));
                }
                Op::Softmax { a } => {
                    let d = *node.value.shape().last().unwrap_or(&1);
                    acc(*a, &mut |ga| kernels::softmax_rows_backward(node.value.data(), &g, d, ga));
                }
                Op::BiasAdd { a, bias } => {
                    acc(*a, &mut |ga| add_into(ga, &g));
                    acc(*bias, &mut |gb| {
                        let d = gb.len();
                        for row in g.chunks_exact(d) {
                            add_into(gb, row);
                        }
                    });
                }
                Op::LayerNorm { a, gamma, beta, stats } => {
                    let d = *node.value.shape().last().unwrap_or(&1);
                    let gv = nodes[*gamma].value.data();
                    acc(*a, &mut |ga| kernels::layernorm_rows_backward(stats, gv, &g, d, Some(ga), None, None));
                    acc(*gamma, &mut |gg| kernels::layernorm_rows_backward(stats, gv, &g, d, None, Some(gg), None));
                    acc(*beta, &mut |gb| kernels::layernorm_rows_backward(stats, gv, &g, d, None, None, Some(gb)));
                }
                Op::Gather { a, indices } => {
                    acc(*a, &mut |ga| {
                        for (&i, gj) in indices.iter().zip(&g) {
                            ga[i] += gj;
                        }
                    });
                }
                Op::Reshape { a } => acc(*a, &mut |ga| add_into(ga, &g)),
                Op::Sum { a } => acc(*a, &mut |ga| ga.iter_mut().for_each(|o| *o += g[0])),
                Op::Frobenius { a, b } => {
                    let (av, bv) = (nodes[*a].value.data(), nodes[*b].value.data());
                    acc(*a, &mut |ga| {
                        for j in 0..ga.len() {
                            ga[j] += 2.0 * g[0] * (av[j] - bv[j]);
                        }
                    });
                    acc(*b, &mut |gb| {
                        for j in 0..gb.len() {
                            gb[j] -= 2.0 * g[0] * (av[j] - bv[j]);
                        }
                    });
                }
            }
        }

        for g in leaf_grads.iter().flatten() {
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: "backward" });
            }
        }
        self.nodes.clear();
        self.cleared = true;
        Ok(Gradients { grads: leaf_grads })
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}

impl Backend for Graph {
    type Value = Var;

    fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.leaf(t.detach(), false)
    }

    fn param(&mut self, t: &Tensor) -> Result<Var> {
        self.leaf(t.detach(), t.requires_grad())
    }

    fn tensor<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        &self.nodes[v.0].value
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (value, dims) = ops::matmul(self.val(*a)?, self.val(*b)?)?;
        self.push(value, Op::MatMul { a: a.0, b: b.0, dims }, &[a.0, b.0])
    }

    fn transpose(&mut self, a: &Var) -> Result<Var> {
        let value = ops::transpose(self.val(*a)?)?;
        self.push(value, Op::Transpose { a: a.0 }, &[a.0])
    }

    fn binary(&mut self, kind: BinaryKind, a: &Var, b: &Var) -> Result<Var> {
        let (value, bc) = ops::binary(kind, self.val(*a)?, self.val(*b)?)?;
        self.push(value, Op::Binary { kind, a: a.0, b: b.0, bc }, &[a.0, b.0])
    }

    fn unary(&mut self, kind: UnaryKind, a: &Var) -> Result<Var> {
        let value = ops::unary(kind, self.val(*a)?)?;
        self.push(value, Op::Unary { kind, a: a.0 }, &[a.0])
    }

    fn affine(&mut self, a: &Var, scale: f64, shift: f64) -> Result<Var> {
        let value = ops::affine(self.val(*a)?, scale, shift)?;
        self.push(value, Op::Affine { a: a.0, scale }, &[a.0])
    }

    fn softmax(&mut self, a: &Var) -> Result<Var> {
        let value = ops::softmax(self.val(*a)?)?;
        self.push(value, Op::Softmax { a: a.0 }, &[a.0])
    }

    fn bias_add(&mut self, a: &Var, bias: &Var) -> Result<Var> {
        let value = ops::bias_add(self.val(*a)?, self.val(*bias)?)?;
        self.push(value, Op::BiasAdd { a: a.0, bias: bias.0 }, &[a.0, bias.0])
    }

    fn layernorm(&mut self, a: &Var, gamma: &Var, beta: &Var) -> Result<Var> {
        let (value, stats) = ops::layernorm(self.val(*a)?, self.val(*gamma)?, self.val(*beta)?)?;
        self.push(
            value,
            Op::LayerNorm {
                a: a.0,
                gamma: gamma.0,
                beta: beta.0,
                stats,
            },
            &[a.0, gamma.0, beta.0],
        )
    }

    fn gather(&mut self, a: &Var, indices: Vec<usize>, shape: Vec<usize>) -> Result<Var> {
        let value = ops::gather(self.val(*a)?, &indices, &shape)?;
        self.push(value, Op::Gather { a: a.0, indices }, &[a.0])
    }

    fn reshape(&mut self, a: &Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.val(*a)?.reshape(&shape)?;
        self.push(value, Op::Reshape { a: a.0 }, &[a.0])
    }

    fn sum(&mut self, a: &Var) -> Result<Var> {
        let value = ops::sum(self.val(*a)?)?;
        self.push(value, Op::Sum { a: a.0 }, &[a.0])
    }

    fn frobenius_sq(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let value = ops::frobenius_sq(self.val(*a)?, self.val(*b)?)?;
        self.push(value, Op::Frobenius { a: a.0, b: b.0 }, &[a.0, b.0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_all_ones() {
        let w = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 3.0, 0.0, 1.5]).unwrap().with_grad();
        let mut g = Graph::new();
        let wv = g.param(&w).unwrap();
        let loss = g.sum(&wv).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(wv).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn frobenius_against_zero_gives_twice_w() {
        let w = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap().with_grad();
        let mut g = Graph::new();
        let wv = g.param(&w).unwrap();
        let z = g.constant(Tensor::zeros(&[3])).unwrap();
        let loss = g.frobenius_sq(&wv, &z).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(wv).unwrap(), &[1.0, -2.0, 4.0]);
    }

    #[test]
    fn frobenius_values() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
        let z = g.constant(Tensor::zeros(&[2])).unwrap();
        let same = g.frobenius_sq(&a, &a).unwrap();
        let five = g.frobenius_sq(&a, &z).unwrap();
        assert_eq!(g.value(same).item(), 0.0);
        assert_eq!(g.value(five).item(), 5.0);
        let bad = g.constant(Tensor::zeros(&[3])).unwrap();
        assert!(matches!(g.frobenius_sq(&a, &bad), Err(Error::Dimension { .. })));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let w = g.param(&Tensor::zeros(&[2]).with_grad()).unwrap();
        assert!(matches!(g.backward(w), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn second_backward_fails() {
        let mut g = Graph::new();
        let w = g.param(&Tensor::zeros(&[2]).with_grad()).unwrap();
        let loss = g.sum(&w).unwrap();
        g.backward(loss).unwrap();
        assert!(matches!(g.backward(loss), Err(Error::GraphCleared)));
        assert!(matches!(g.sum(&w), Err(Error::GraphCleared)));
    }

    #[test]
    fn detach_blocks_gradient() {
        let w = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap().with_grad();
        let mut g = Graph::new();
        let wv = g.param(&w).unwrap();
        let d = g.detach(wv).unwrap();
        assert!(!g.requires_grad(d));
        let prod = g.mul(&wv, &d).unwrap();
        let loss = g.sum(&prod).unwrap();
        let grads = g.backward(loss).unwrap();
        // only the non-detached factor contributes: d(w·c)/dw = c
        assert_eq!(grads.get(wv).unwrap(), &[1.0, 2.0]);
        assert!(grads.get(d).is_none());
    }

    #[test]
    fn matmul_identity_and_scalar() {
        let mut g = Graph::new();
        let id = g.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap()).unwrap();
        let m = Tensor::new(vec![2, 2], vec![3.0, -1.0, 2.5, 7.0]).unwrap();
        let mv = g.constant(m.clone()).unwrap();
        let out = g.matmul(&id, &mv).unwrap();
        assert_eq!(g.value(out), &m);
        let two = g.constant(Tensor::new(vec![1, 1], vec![2.0]).unwrap()).unwrap();
        let three = g.constant(Tensor::new(vec![1, 1], vec![3.0]).unwrap()).unwrap();
        let six = g.matmul(&two, &three).unwrap();
        assert_eq!(g.value(six).data(), &[6.0]);
        let bad = g.constant(Tensor::zeros(&[3, 2])).unwrap();
        let err = g.matmul(&id, &bad).unwrap_err();
        assert!(err.to_string().contains("[2, 2]") && err.to_string().contains("[3, 2]"));
    }

    #[test]
    fn unsupported_broadcast_is_dimension_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = g.constant(Tensor::zeros(&[3])).unwrap();
        assert!(matches!(g.add(&a, &b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn layernorm_of_constant_row_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::full(&[1, 4], 3.25)).unwrap();
        let gamma = g.constant(Tensor::full(&[4], 1.0)).unwrap();
        let beta = g.constant(Tensor::zeros(&[4])).unwrap();
        let y = g.layernorm(&x, &gamma, &beta).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }
}
