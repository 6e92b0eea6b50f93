//! Axis-wise tensor plumbing (concat, narrow, softmax) and matrix products.

use super::graph::{Grads, Graph, Op, Var};
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

/// `(outer, extent, inner)` around `axis` of a row-major shape.
pub(crate) fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::Axis {
            op,
            axis,
            rank: shape.len(),
        });
    }
    Ok(())
}

/// Row-major GEMM: `c = beta * c + op(a) * op(b)` where `op(a)` is `m x k`
/// and `op(b)` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    // Packing dominates in matrixmultiply when few output rows share a wide
    // operand, so those shapes take the direct kernels below.
    if m <= SMALL_M {
        match (a_t, b_t) {
            (_, false) => return gemm_rows(m, k, n, a, a_t, b, beta, c),
            (false, true) => return gemm_dots(m, k, n, a, b, beta, c),
            _ => {}
        }
    }
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    // SAFETY: the slices cover the strided extents asserted above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

const SMALL_M: usize = 16;
const TILE: usize = 128;

fn scale_into(c: &mut [f64], beta: f64) {
    if beta == 0.0 {
        c.fill(0.0);
    } else if beta != 1.0 {
        c.iter_mut().for_each(|v| *v *= beta);
    }
}

/// `c[i, :] += a(i, p) * b[p, :]`, tiled over columns so the `m` output
/// rows of a tile stay in L1.
#[allow(clippy::too_many_arguments)]
fn gemm_rows(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    beta: f64,
    c: &mut [f64],
) {
    scale_into(c, beta);
    let at = |i: usize, p: usize| if a_t { a[p * m + i] } else { a[i * k + p] };
    let mut j0 = 0;
    while j0 < n {
        let w = TILE.min(n - j0);
        for p in 0..k {
            let brow = &b[p * n + j0..p * n + j0 + w];
            for i in 0..m {
                let s = at(i, p);
                if s == 0.0 {
                    continue;
                }
                let crow = &mut c[i * n + j0..i * n + j0 + w];
                for (cv, bv) in crow.iter_mut().zip(brow) {
                    *cv += s * bv;
                }
            }
        }
        j0 += w;
    }
}

/// `c[i, j] += dot(a[i, :], b[j, :])` for `b` stored transposed.
fn gemm_dots(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    scale_into(c, beta);
    for j in 0..n {
        let brow = &b[j * k..(j + 1) * k];
        for i in 0..m {
            c[i * n + j] += dot(&a[i * k..(i + 1) * k], brow);
        }
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (xc, xr) = x.split_at(x.len() - x.len() % 8);
    let (yc, yr) = y.split_at(xc.len());
    for (xs, ys) in xc.chunks_exact(8).zip(yc.chunks_exact(8)) {
        for l in 0..8 {
            acc[l] += xs[l] * ys[l];
        }
    }
    let tail: f64 = xr.iter().zip(yr).map(|(a, b)| a * b).sum();
    acc.iter().sum::<f64>() + tail
}

impl Graph {
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        check_axis("concat", &base, axis)?;
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let same_rank = s.len() == base.len();
            if !same_rank
                || s.iter()
                    .enumerate()
                    .any(|(i, e)| i != axis && *e != base[i])
            {
                return Err(Error::shape(
                    "concat",
                    format!("{s:?} incompatible with {base:?} on axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = split_axis(&base, axis);
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for v in inputs {
                let len = self.shape(*v)[axis] * inner;
                data.extend_from_slice(&self.data(*v)[o * len..(o + 1) * len]);
            }
        }
        let out = Tensor::new(shape, data)?;
        self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            "concat",
        )
    }

    /// `len` consecutive entries along `axis` starting at `start`.
    pub fn narrow(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        check_axis("narrow", &shape, axis)?;
        if len == 0 || start + len > shape[axis] {
            return Err(Error::shape(
                "narrow",
                format!(
                    "range {start}..{} outside extent {}",
                    start + len,
                    shape[axis]
                ),
            ));
        }
        let (outer, dim, inner) = split_axis(&shape, axis);
        let src = self.data(input);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let out = Tensor::new(out_shape, data)?;
        self.push(out, Op::Narrow { input, axis, start }, "narrow")
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let &[r, c] = t.shape() else {
            return Err(Error::shape(
                "transpose",
                format!("expected a matrix, got {:?}", t.shape()),
            ));
        };
        let src = t.data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let out = Tensor::new([c, r], data)?;
        self.push(out, Op::Transpose(a), "transpose")
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        check_axis("softmax", &shape, axis)?;
        let (outer, dim, inner) = split_axis(&shape, axis);
        let src = self.data(input);
        let mut data = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |d: usize| (o * dim + d) * inner + i;
                let max = (0..dim)
                    .map(|d| src[idx(d)])
                    .fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for d in 0..dim {
                    let e = (src[idx(d)] - max).exp();
                    data[idx(d)] = e;
                    z += e;
                }
                for d in 0..dim {
                    data[idx(d)] /= z;
                }
            }
        }
        let out = Tensor::new(shape, data)?;
        self.push(out, Op::Softmax { input, axis }, "softmax")
    }

    /// Matrix product of `m x k` and `k x n` operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        let (&[m, k], &[k2, n]) = (sa, sb) else {
            return Err(Error::shape(
                "matmul",
                format!("expected matrices, got {sa:?} and {sb:?}"),
            ));
        };
        if k != k2 {
            return Err(Error::shape(
                "matmul",
                format!("inner extents {k} and {k2} differ"),
            ));
        }
        let mut data = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.data(a),
            false,
            self.data(b),
            false,
            0.0,
            &mut data,
        );
        let out = Tensor::new([m, n], data)?;
        self.push(out, Op::Matmul(a, b), "matmul")
    }
}

pub(crate) fn concat_backward(inputs: &[Var], axis: usize, g: &[f64], grads: &mut Grads<'_>) {
    let shape = grads.value(inputs[0]).shape();
    let (outer, _, inner) = split_axis(shape, axis);
    let total: usize = inputs.iter().map(|v| grads.value(*v).shape()[axis]).sum();
    let mut offset = 0;
    for v in inputs {
        let len = grads.value(*v).shape()[axis] * inner;
        let off = offset;
        grads.with(*v, |acc| {
            for o in 0..outer {
                let src = &g[o * total * inner + off..o * total * inner + off + len];
                for (a, b) in acc[o * len..(o + 1) * len].iter_mut().zip(src) {
                    *a += b;
                }
            }
        });
        offset += len;
    }
}

pub(crate) fn narrow_backward(
    input: Var,
    axis: usize,
    start: usize,
    out: &Tensor,
    g: &[f64],
    grads: &mut Grads<'_>,
) {
    let shape = grads.value(input).shape();
    let (outer, dim, inner) = split_axis(shape, axis);
    let len = out.shape()[axis];
    grads.with(input, |acc| {
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            let src = &g[o * len * inner..(o + 1) * len * inner];
            for (a, b) in acc[base..base + len * inner].iter_mut().zip(src) {
                *a += b;
            }
        }
    });
}

pub(crate) fn transpose_backward(a: Var, g: &[f64], grads: &mut Grads<'_>) {
    let &[r, c] = grads.value(a).shape() else {
        unreachable!("transpose of a non-matrix")
    };
    grads.with(a, |acc| {
        for i in 0..r {
            for j in 0..c {
                acc[i * c + j] += g[j * r + i];
            }
        }
    });
}

pub(crate) fn softmax_backward(
    input: Var,
    axis: usize,
    out: &Tensor,
    g: &[f64],
    grads: &mut Grads<'_>,
) {
    let (outer, dim, inner) = split_axis(out.shape(), axis);
    let y = out.data();
    grads.with(input, |acc| {
        for o in 0..outer {
            for i in 0..inner {
                let idx = |d: usize| (o * dim + d) * inner + i;
                let dot: f64 = (0..dim).map(|d| g[idx(d)] * y[idx(d)]).sum();
                for d in 0..dim {
                    acc[idx(d)] += y[idx(d)] * (g[idx(d)] - dot);
                }
            }
        }
    });
}

pub(crate) fn matmul_backward(a: Var, b: Var, g: &[f64], grads: &mut Grads<'_>) {
    let (ta, tb) = (grads.value(a), grads.value(b));
    let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
    // dA = G B^T, dB = A^T G
    grads.with(a, |acc| gemm(m, n, k, g, false, tb.data(), true, 1.0, acc));
    grads.with(b, |acc| gemm(k, m, n, ta.data(), true, g, false, 1.0, acc));
}
