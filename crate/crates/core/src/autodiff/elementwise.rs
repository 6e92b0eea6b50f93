//! Pointwise maps, binary arithmetic and full reductions.

use super::graph::{Grads, Graph, Op, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const SELU_LAMBDA: f64 = 1.0507009873554805;
pub const SELU_ALPHA: f64 = 1.6732632423543772;

pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
    }
}

/// Derivative of [`selu`]. At exactly zero the left branch `lambda * alpha`
/// is used.
pub fn selu_grad(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

impl Graph {
    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(
                name,
                format!("{:?} vs {:?}", ta.shape(), tb.shape()),
            ));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(out, op, name)
    }

    fn unary(&mut self, a: Var, name: &'static str, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let ta = self.value(a);
        let out = Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|x| f(*x)).collect(),
        )?;
        self.push(out, op, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, "scale", |x| s * x, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        self.unary(a, "add_scalar", |x| x + s, Op::AddScalar(a))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "abs", f64::abs, Op::Abs(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "sqrt", f64::sqrt, Op::Sqrt(a))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "square", |x| x * x, Op::Square(a))
    }

    pub fn selu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "selu", selu, Op::Selu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.unary(
            a,
            "leaky_relu",
            |x| if x > 0.0 { x } else { slope * x },
            Op::LeakyRelu(a, slope),
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.data(a).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let m = t.data().iter().sum::<f64>() / t.numel() as f64;
        self.push(Tensor::scalar(m), Op::Mean(a), "mean")
    }

    /// Euclidean norm of the flattened tensor.
    pub fn l2_norm(&mut self, a: Var) -> Result<Var> {
        let n = self.data(a).iter().map(|x| x * x).sum::<f64>().sqrt();
        self.push(Tensor::scalar(n), Op::L2Norm(a), "l2_norm")
    }

    pub fn reshape(&mut self, a: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let out = self
            .value(a)
            .clone()
            .reshape(shape)?
            .with_requires_grad(false);
        self.push(out, Op::Reshape(a), "reshape")
    }
}

pub(crate) fn mul_backward(a: Var, b: Var, g: &[f64], grads: &mut Grads<'_>) {
    let (av, bv) = (grads.value(a).data(), grads.value(b).data());
    grads.with(a, |acc| {
        for ((x, y), z) in acc.iter_mut().zip(g).zip(bv) {
            *x += y * z;
        }
    });
    grads.with(b, |acc| {
        for ((x, y), z) in acc.iter_mut().zip(g).zip(av) {
            *x += y * z;
        }
    });
}

pub(crate) fn unary_backward(op: &Op, a: Var, out: &Tensor, g: &[f64], grads: &mut Grads<'_>) {
    let x = grads.value(a).data();
    let y = out.data();
    grads.with(a, |acc| match op {
        Op::Abs(_) => {
            for ((s, gi), xi) in acc.iter_mut().zip(g).zip(x) {
                if *xi != 0.0 {
                    *s += gi * xi.signum();
                }
            }
        }
        Op::Sqrt(_) => {
            for ((s, gi), yi) in acc.iter_mut().zip(g).zip(y) {
                if *yi > 0.0 {
                    *s += 0.5 * gi / yi;
                }
            }
        }
        Op::Square(_) => {
            for ((s, gi), xi) in acc.iter_mut().zip(g).zip(x) {
                *s += 2.0 * gi * xi;
            }
        }
        Op::Selu(_) => {
            for ((s, gi), xi) in acc.iter_mut().zip(g).zip(x) {
                *s += gi * selu_grad(*xi);
            }
        }
        Op::LeakyRelu(_, slope) => {
            for ((s, gi), xi) in acc.iter_mut().zip(g).zip(x) {
                *s += if *xi > 0.0 { *gi } else { slope * gi };
            }
        }
        _ => unreachable!("not a unary op"),
    });
}

pub(crate) fn reduce_backward(op: &Op, a: Var, out: &Tensor, g: &[f64], grads: &mut Grads<'_>) {
    let g0 = g[0];
    match op {
        Op::Sum(_) => grads.with(a, |acc| acc.iter_mut().for_each(|s| *s += g0)),
        Op::Mean(_) => {
            let n = grads.value(a).numel() as f64;
            grads.with(a, |acc| acc.iter_mut().for_each(|s| *s += g0 / n))
        }
        Op::L2Norm(_) => {
            let norm = out.item();
            if norm == 0.0 {
                return;
            }
            let x = grads.value(a).data();
            grads.with(a, |acc| {
                for (s, xi) in acc.iter_mut().zip(x) {
                    *s += g0 * xi / norm;
                }
            })
        }
        _ => unreachable!("not a reduction"),
    }
}
