use super::graph::{Grads, Graph, Op, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel running mean and (unbiased) variance.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

pub(crate) struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    mode: Mode,
    channels: usize,
    plane: usize,
}

impl Graph {
    /// Batch normalisation over `(B, H, W)` for each channel of a
    /// `[B, C, H, W]` input. Train mode normalises with batch statistics and
    /// folds them into `stats`; eval mode reads `stats` only.
    pub fn batch_norm2d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats,
        mode: Mode,
    ) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        let &[b, c, h, w] = shape.as_slice() else {
            return Err(Error::shape(
                "batch_norm2d",
                format!("input must be rank 4, got {shape:?}"),
            ));
        };
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [c] {
                return Err(Error::shape(
                    "batch_norm2d",
                    format!("{name} {:?} vs {c} channels", self.shape(v)),
                ));
            }
        }
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(Error::shape(
                "batch_norm2d",
                "running statistics do not match channel count",
            ));
        }
        let plane = h * w;
        let count = b * plane;
        if mode == Mode::Train && count < 2 {
            return Err(Error::shape(
                "batch_norm2d",
                "train mode needs at least two values per channel",
            ));
        }
        let x = self.data(input);
        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for (i, chunk) in x.chunks_exact(plane).enumerate() {
                    mean[i % c] += chunk.iter().sum::<f64>();
                }
                mean.iter_mut().for_each(|m| *m /= count as f64);
                for (i, chunk) in x.chunks_exact(plane).enumerate() {
                    let m = mean[i % c];
                    var[i % c] += chunk.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
                }
                var.iter_mut().for_each(|v| *v /= count as f64);
                let unbias = count as f64 / (count - 1) as f64;
                for ch in 0..c {
                    stats.mean[ch] = (1.0 - BN_MOMENTUM) * stats.mean[ch] + BN_MOMENTUM * mean[ch];
                    stats.var[ch] =
                        (1.0 - BN_MOMENTUM) * stats.var[ch] + BN_MOMENTUM * var[ch] * unbias;
                }
                (mean, var)
            }
            Mode::Eval => (stats.mean.clone(), stats.var.clone()),
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let (gv, bv) = (self.data(gamma), self.data(beta));
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for (i, ((src, xh), o)) in x
            .chunks_exact(plane)
            .zip(xhat.chunks_exact_mut(plane))
            .zip(out.chunks_exact_mut(plane))
            .enumerate()
        {
            let ch = i % c;
            for ((s, xh), o) in src.iter().zip(xh).zip(o) {
                *xh = (s - mean[ch]) * inv_std[ch];
                *o = gv[ch] * *xh + bv[ch];
            }
        }
        let out = Tensor::new(shape, out)?;
        let cache = BnCache {
            xhat,
            inv_std,
            mode,
            channels: c,
            plane,
        };
        self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                cache,
            },
            "batch_norm2d",
        )
    }
}

pub(crate) fn batch_norm_backward(
    input: Var,
    gamma: Var,
    beta: Var,
    cache: &BnCache,
    g: &[f64],
    grads: &mut Grads<'_>,
) {
    let c = cache.channels;
    let plane = cache.plane;
    let mut sum_g = vec![0.0; c];
    let mut sum_gx = vec![0.0; c];
    for (i, (gc, xc)) in g
        .chunks_exact(plane)
        .zip(cache.xhat.chunks_exact(plane))
        .enumerate()
    {
        sum_g[i % c] += gc.iter().sum::<f64>();
        sum_gx[i % c] += gc.iter().zip(xc).map(|(a, b)| a * b).sum::<f64>();
    }
    grads.with(beta, |acc| {
        acc.iter_mut().zip(&sum_g).for_each(|(a, b)| *a += b)
    });
    grads.with(gamma, |acc| {
        acc.iter_mut().zip(&sum_gx).for_each(|(a, b)| *a += b)
    });
    let gv = grads.value(gamma).data();
    let count = (g.len() / c) as f64;
    grads.with(input, |acc| {
        for (i, ((a, gc), xc)) in acc
            .chunks_exact_mut(plane)
            .zip(g.chunks_exact(plane))
            .zip(cache.xhat.chunks_exact(plane))
            .enumerate()
        {
            let ch = i % c;
            let scale = gv[ch] * cache.inv_std[ch];
            match cache.mode {
                Mode::Eval => a.iter_mut().zip(gc).for_each(|(a, g)| *a += scale * g),
                Mode::Train => {
                    let (mg, mgx) = (sum_g[ch] / count, sum_gx[ch] / count);
                    for ((a, g), x) in a.iter_mut().zip(gc).zip(xc) {
                        *a += scale * (g - mg - x * mgx);
                    }
                }
            }
        }
    });
}
