use std::sync::Arc;

use super::conv::ConvGeometry;
use super::norm::BnCache;
use super::tensor::Tensor;
use super::{conv, elementwise, linalg, norm, spectral};
use crate::error::{Error, Result};
use crate::signal::Stft;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

pub(crate) enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Abs(Var),
    Sqrt(Var),
    Square(Var),
    Selu(Var),
    LeakyRelu(Var, f64),
    Sum(Var),
    Mean(Var),
    L2Norm(Var),
    Reshape(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        input: Var,
        axis: usize,
        start: usize,
    },
    Transpose(Var),
    Softmax {
        input: Var,
        axis: usize,
    },
    Matmul(Var, Var),
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    ConvTranspose2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeometry,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        cache: BnCache,
    },
    Stft {
        input: Var,
        plan: Arc<Stft>,
    },
    Istft {
        input: Var,
        plan: Arc<Stft>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Append-only tape of tensor operations. Recording order is a valid
/// topological order, so the reverse pass simply walks the tape backwards.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradient slots for one reverse pass.
pub(crate) struct Grads<'a> {
    slots: Vec<Option<Vec<f64>>>,
    nodes: &'a [Node],
}

impl<'a> Grads<'a> {
    pub(crate) fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Hands a zero-initialised (or partially accumulated) gradient buffer
    /// for `v` to `f`. Skipped when `v` does not lead to a trainable leaf.
    pub(crate) fn with(&mut self, v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.needs(v) {
            return;
        }
        let n = self.nodes[v.0].value.numel();
        let slot = self.slots[v.0].get_or_insert_with(|| vec![0.0; n]);
        f(slot);
    }

    pub(crate) fn add(&mut self, v: Var, g: &[f64]) {
        self.with(v, |acc| acc.iter_mut().zip(g).for_each(|(a, b)| *a += b));
    }

    pub(crate) fn value(&self, v: Var) -> &'a Tensor {
        &self.nodes[v.0].value
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf. It receives a gradient iff `requires_grad` is set.
    pub fn leaf(&mut self, tensor: Tensor) -> Var {
        let needs_grad = tensor.requires_grad();
        self.nodes.push(Node {
            value: tensor,
            op: Op::Leaf,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(true))
    }

    /// Records a constant leaf.
    pub fn constant(&mut self, tensor: Tensor) -> Var {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad()
    }

    pub fn take_value(&mut self, v: Var) -> Tensor {
        std::mem::replace(&mut self.nodes[v.0].value, Tensor::scalar(0.0))
    }

    pub(crate) fn push(&mut self, value: Tensor, op: Op, name: &str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let needs_grad = op_inputs(&op).iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse-mode pass from a scalar. Gradients accumulate (add) into every
    /// leaf recorded with `requires_grad`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss).to_vec();
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads = Grads {
            slots: (0..self.nodes.len()).map(|_| None).collect(),
            nodes: &self.nodes,
        };
        if !grads.needs(loss) {
            return Ok(());
        }
        grads.slots[loss.0] = Some(vec![1.0]);
        let mut leaf_grads = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads.slots[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !g.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of node {i}")));
            }
            match &node.op {
                Op::Leaf => leaf_grads.push((i, g)),
                op => backward_op(op, &node.value, &g, &mut grads),
            }
        }
        for (i, g) in leaf_grads {
            self.nodes[i].value.accumulate_grad(&g);
        }
        Ok(())
    }
}

fn op_inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Matmul(a, b) => vec![*a, *b],
        Op::Scale(a, _)
        | Op::AddScalar(a)
        | Op::Abs(a)
        | Op::Sqrt(a)
        | Op::Square(a)
        | Op::Selu(a)
        | Op::LeakyRelu(a, _)
        | Op::Sum(a)
        | Op::Mean(a)
        | Op::L2Norm(a)
        | Op::Reshape(a)
        | Op::Transpose(a) => vec![*a],
        Op::Concat { inputs, .. } => inputs.clone(),
        Op::Narrow { input, .. }
        | Op::Softmax { input, .. }
        | Op::Stft { input, .. }
        | Op::Istft { input, .. } => vec![*input],
        Op::Conv2d {
            input,
            kernel,
            bias,
            ..
        }
        | Op::ConvTranspose2d {
            input,
            kernel,
            bias,
            ..
        } => vec![*input, *kernel, *bias],
        Op::BatchNorm {
            input, gamma, beta, ..
        } => vec![*input, *gamma, *beta],
    }
}

fn backward_op(op: &Op, out: &Tensor, g: &[f64], grads: &mut Grads<'_>) {
    match op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            grads.add(*a, g);
            grads.add(*b, g);
        }
        Op::Sub(a, b) => {
            grads.add(*a, g);
            grads.with(*b, |acc| acc.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
        }
        Op::Mul(a, b) => elementwise::mul_backward(*a, *b, g, grads),
        Op::Scale(a, s) => grads.with(*a, |acc| {
            acc.iter_mut().zip(g).for_each(|(x, y)| *x += s * y)
        }),
        Op::AddScalar(a) | Op::Reshape(a) => grads.add(*a, g),
        Op::Abs(a) | Op::Sqrt(a) | Op::Square(a) | Op::Selu(a) | Op::LeakyRelu(a, _) => {
            elementwise::unary_backward(op, *a, out, g, grads)
        }
        Op::Sum(a) | Op::Mean(a) | Op::L2Norm(a) => {
            elementwise::reduce_backward(op, *a, out, g, grads)
        }
        Op::Concat { inputs, axis } => linalg::concat_backward(inputs, *axis, g, grads),
        Op::Narrow { input, axis, start } => {
            linalg::narrow_backward(*input, *axis, *start, out, g, grads)
        }
        Op::Transpose(a) => linalg::transpose_backward(*a, g, grads),
        Op::Softmax { input, axis } => linalg::softmax_backward(*input, *axis, out, g, grads),
        Op::Matmul(a, b) => linalg::matmul_backward(*a, *b, g, grads),
        Op::Conv2d {
            input,
            kernel,
            bias,
            geom,
        } => conv::conv2d_backward(*input, *kernel, *bias, geom, g, grads),
        Op::ConvTranspose2d {
            input,
            kernel,
            bias,
            geom,
        } => conv::conv_transpose2d_backward(*input, *kernel, *bias, geom, g, grads),
        Op::BatchNorm {
            input,
            gamma,
            beta,
            cache,
        } => norm::batch_norm_backward(*input, *gamma, *beta, cache, g, grads),
        Op::Stft { input, plan } => spectral::stft_backward(*input, plan, out, g, grads),
        Op::Istft { input, plan } => spectral::istft_backward(*input, plan, out, g, grads),
    }
}
