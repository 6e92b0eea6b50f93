//! Differentiable STFT / iSTFT. Both are linear maps, so their reverse
//! rules are the adjoint transforms provided by [`Stft`].

use std::sync::Arc;

use super::graph::{Grads, Graph, Op, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::signal::Stft;

impl Graph {
    /// `[B, N]` waveforms to `[B, 2, F, T]` (real plane, imaginary plane).
    pub fn stft(&mut self, input: Var, plan: &Arc<Stft>) -> Result<Var> {
        let &[b, n] = self.shape(input) else {
            return Err(Error::shape(
                "stft",
                format!("expected [B, N], got {:?}", self.shape(input)),
            ));
        };
        let frames = plan.frames_for(n)?;
        let bins = plan.config().num_bins();
        let plane = bins * frames;
        let mut out = vec![0.0; b * 2 * plane];
        let x = self.data(input);
        for (i, chunk) in out.chunks_exact_mut(2 * plane).enumerate() {
            let (re, im) = chunk.split_at_mut(plane);
            plan.analyze_planes(&x[i * n..(i + 1) * n], frames, re, im);
        }
        let out = Tensor::new([b, 2, bins, frames], out)?;
        self.push(
            out,
            Op::Stft {
                input,
                plan: Arc::clone(plan),
            },
            "stft",
        )
    }

    /// `[B, 2, F, T]` planes to `[B, len]` waveforms.
    pub fn istft(&mut self, input: Var, plan: &Arc<Stft>, len: usize) -> Result<Var> {
        let &[b, two, bins, frames] = self.shape(input) else {
            return Err(Error::shape(
                "istft",
                format!("expected [B, 2, F, T], got {:?}", self.shape(input)),
            ));
        };
        let cfg = plan.config();
        if two != 2 || bins != cfg.num_bins() {
            return Err(Error::ConfigMismatch(format!(
                "planes {two}x{bins} do not match {} bins",
                cfg.num_bins()
            )));
        }
        if len < (frames - 1) * cfg.hop_length + cfg.window_length {
            return Err(Error::ConfigMismatch(format!(
                "length {len} cannot hold {frames} frames"
            )));
        }
        let plane = bins * frames;
        let x = self.data(input);
        let mut out = Vec::with_capacity(b * len);
        for chunk in x.chunks_exact(2 * plane) {
            let (re, im) = chunk.split_at(plane);
            out.extend(plan.synthesize_planes(re, im, frames, len));
        }
        let out = Tensor::new([b, len], out)?;
        self.push(
            out,
            Op::Istft {
                input,
                plan: Arc::clone(plan),
            },
            "istft",
        )
    }
}

pub(crate) fn stft_backward(
    input: Var,
    plan: &Stft,
    out: &Tensor,
    g: &[f64],
    grads: &mut Grads<'_>,
) {
    let n = grads.value(input).shape()[1];
    let frames = out.shape()[3];
    let plane = out.shape()[2] * frames;
    grads.with(input, |acc| {
        for (i, gc) in g.chunks_exact(2 * plane).enumerate() {
            let (gr, gi) = gc.split_at(plane);
            let back = plan.analyze_adjoint(gr, gi, frames, n);
            acc[i * n..(i + 1) * n]
                .iter_mut()
                .zip(&back)
                .for_each(|(a, b)| *a += b);
        }
    });
}

pub(crate) fn istft_backward(
    input: Var,
    plan: &Stft,
    out: &Tensor,
    g: &[f64],
    grads: &mut Grads<'_>,
) {
    let shape = grads.value(input).shape();
    let frames = shape[3];
    let plane = shape[2] * frames;
    let len = out.shape()[1];
    grads.with(input, |acc| {
        let mut re = vec![0.0; plane];
        let mut im = vec![0.0; plane];
        for (i, a) in acc.chunks_exact_mut(2 * plane).enumerate() {
            plan.synthesize_adjoint(&g[i * len..(i + 1) * len], frames, &mut re, &mut im);
            let (ar, ai) = a.split_at_mut(plane);
            ar.iter_mut().zip(&re).for_each(|(a, b)| *a += b);
            ai.iter_mut().zip(&im).for_each(|(a, b)| *a += b);
        }
    });
}
