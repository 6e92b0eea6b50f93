//! 2-D convolution (cross-correlation) and its transpose, lowered to GEMM via
//! `im2col` / `col2im`.
//!
//! Kernel layouts follow the usual deep-learning convention: `[C_out, C_in,
//! kH, kW]` for convolution and `[C_in, C_out, kH, kW]` for the transpose.
//! With those layouts the transpose of a convolution uses the same kernel
//! buffer unchanged; the spatial flip is implicit in the scatter of
//! `col2im`.

use super::graph::{Grads, Graph, Op, Var};
use super::linalg::gemm;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `floor((input + 2 padding - kernel) / stride) + 1`, or `None` when the
/// kernel does not fit.
pub fn conv_output_size(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
) -> Option<usize> {
    let padded = input + 2 * padding;
    (stride > 0 && padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

/// `(input - 1) stride - 2 padding + kernel + output_padding`, or `None`
/// when that is not a positive size.
pub fn conv_transpose_output_size(
    input: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    output_padding: usize,
) -> Option<usize> {
    let full = (input.checked_sub(1)?) * stride + kernel + output_padding;
    full.checked_sub(2 * padding).filter(|&s| s > 0)
}

/// Everything needed to replay a convolution in the reverse pass. `image`
/// is the high-resolution side (conv input, transpose output) and `grid`
/// the side that indexes kernel placements.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeometry {
    batch: usize,
    c_in: usize,
    c_out: usize,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
    image: (usize, usize),
    grid: (usize, usize),
}

impl ConvGeometry {
    fn grid_len(&self) -> usize {
        self.grid.0 * self.grid.1
    }

    fn image_len(&self) -> usize {
        self.image.0 * self.image.1
    }

    fn taps(&self) -> usize {
        self.kernel.0 * self.kernel.1
    }
}

/// Range of grid positions `o` with `o * stride + tap - pad` inside `0..len`.
fn valid_range(grid: usize, len: usize, stride: usize, tap: usize, pad: usize) -> (usize, usize) {
    let lo = if pad > tap {
        (pad - tap).div_ceil(stride)
    } else {
        0
    };
    let hi = if len + pad > tap {
        ((len + pad - tap - 1) / stride + 1).min(grid)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// Unfolds `channels` image planes into a `[channels * kH * kW, grid]` matrix.
fn im2col(img: &[f64], channels: usize, geom: &ConvGeometry, cols: &mut [f64]) {
    let (ih, iw) = geom.image;
    let (gh, gw) = geom.grid;
    let (kh, kw) = geom.kernel;
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.padding;
    let plane = gh * gw;
    for c in 0..channels {
        let src = &img[c * ih * iw..(c + 1) * ih * iw];
        for ki in 0..kh {
            let (y_lo, y_hi) = valid_range(gh, ih, sh, ki, ph);
            for kj in 0..kw {
                let (x_lo, x_hi) = valid_range(gw, iw, sw, kj, pw);
                let row = ((c * kh + ki) * kw + kj) * plane;
                let dst = &mut cols[row..row + plane];
                dst[..y_lo * gw].fill(0.0);
                dst[y_hi * gw..].fill(0.0);
                for oh in y_lo..y_hi {
                    let y = oh * sh + ki - ph;
                    let line = &mut dst[oh * gw..(oh + 1) * gw];
                    line[..x_lo].fill(0.0);
                    line[x_hi..].fill(0.0);
                    if x_lo == x_hi {
                        continue;
                    }
                    let x0 = x_lo * sw + kj - pw;
                    let src_row = &src[y * iw + x0..(y + 1) * iw];
                    for (out, v) in line[x_lo..x_hi].iter_mut().zip(src_row.iter().step_by(sw)) {
                        *out = *v;
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back onto image planes.
fn col2im(cols: &[f64], channels: usize, geom: &ConvGeometry, img: &mut [f64]) {
    let (ih, iw) = geom.image;
    let (gh, gw) = geom.grid;
    let (kh, kw) = geom.kernel;
    let (sh, sw) = geom.stride;
    let (ph, pw) = geom.padding;
    let plane = gh * gw;
    for c in 0..channels {
        let dst = &mut img[c * ih * iw..(c + 1) * ih * iw];
        for ki in 0..kh {
            let (y_lo, y_hi) = valid_range(gh, ih, sh, ki, ph);
            for kj in 0..kw {
                let (x_lo, x_hi) = valid_range(gw, iw, sw, kj, pw);
                if x_lo == x_hi {
                    continue;
                }
                let row = ((c * kh + ki) * kw + kj) * plane;
                let src = &cols[row..row + plane];
                for oh in y_lo..y_hi {
                    let y = oh * sh + ki - ph;
                    let x0 = x_lo * sw + kj - pw;
                    let dst_row = &mut dst[y * iw + x0..(y + 1) * iw];
                    for (d, v) in dst_row
                        .iter_mut()
                        .step_by(sw)
                        .zip(&src[oh * gw + x_lo..oh * gw + x_hi])
                    {
                        *d += v;
                    }
                }
            }
        }
    }
}

fn add_bias(out: &mut [f64], bias: &[f64], plane: usize) {
    for (chunk, b) in out.chunks_exact_mut(plane).zip(bias.iter().cycle()) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn bias_grad(g: &[f64], channels: usize, plane: usize, acc: &mut [f64]) {
    for (i, chunk) in g.chunks_exact(plane).enumerate() {
        acc[i % channels] += chunk.iter().sum::<f64>();
    }
}

fn shape4(op: &'static str, name: &str, s: &[usize]) -> Result<[usize; 4]> {
    s.try_into()
        .map_err(|_| Error::shape(op, format!("{name} must be rank 4, got {s:?}")))
}

impl Graph {
    /// Cross-correlation of `[B, C_in, H, W]` with `[C_out, C_in, kH, kW]`
    /// plus a per-channel bias.
    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Var> {
        let [b, c_in, h, w] = shape4("conv2d", "input", self.shape(input))?;
        let [c_out, kc, kh, kw] = shape4("conv2d", "kernel", self.shape(kernel))?;
        if kc != c_in {
            return Err(Error::shape(
                "conv2d",
                format!("kernel expects {kc} input channels, input has {c_in}"),
            ));
        }
        if self.shape(bias) != [c_out] {
            return Err(Error::shape(
                "conv2d",
                format!("bias {:?} vs {c_out} channels", self.shape(bias)),
            ));
        }
        let (Some(oh), Some(ow)) = (
            conv_output_size(h, kh, stride.0, padding.0),
            conv_output_size(w, kw, stride.1, padding.1),
        ) else {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} exceeds padded input {h}x{w} (padding {padding:?})"),
            ));
        };
        let geom = ConvGeometry {
            batch: b,
            c_in,
            c_out,
            kernel: (kh, kw),
            stride,
            padding,
            image: (h, w),
            grid: (oh, ow),
        };
        let rows = c_in * geom.taps();
        let mut cols = vec![0.0; rows * geom.grid_len()];
        let mut out = vec![0.0; b * c_out * geom.grid_len()];
        let (x, k) = (self.data(input), self.data(kernel));
        for (n, out_n) in out.chunks_exact_mut(c_out * geom.grid_len()).enumerate() {
            im2col(
                &x[n * c_in * h * w..(n + 1) * c_in * h * w],
                c_in,
                &geom,
                &mut cols,
            );
            gemm(
                c_out,
                rows,
                geom.grid_len(),
                k,
                false,
                &cols,
                false,
                0.0,
                out_n,
            );
        }
        add_bias(&mut out, self.data(bias), geom.grid_len());
        let out = Tensor::new([b, c_out, oh, ow], out)?;
        self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
            },
            "conv2d",
        )
    }

    /// Transposed convolution of `[B, C_in, H, W]` with `[C_in, C_out, kH, kW]`.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: (usize, usize),
        padding: (usize, usize),
        output_padding: (usize, usize),
    ) -> Result<Var> {
        let [b, c_in, h, w] = shape4("conv_transpose2d", "input", self.shape(input))?;
        let [kc, c_out, kh, kw] = shape4("conv_transpose2d", "kernel", self.shape(kernel))?;
        if kc != c_in {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("kernel expects {kc} input channels, input has {c_in}"),
            ));
        }
        if self.shape(bias) != [c_out] {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("bias {:?} vs {c_out} channels", self.shape(bias)),
            ));
        }
        if output_padding.0 >= stride.0.max(1) || output_padding.1 >= stride.1.max(1) {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("output_padding {output_padding:?} must be below stride {stride:?}"),
            ));
        }
        let (Some(oh), Some(ow)) = (
            conv_transpose_output_size(h, kh, stride.0, padding.0, output_padding.0),
            conv_transpose_output_size(w, kw, stride.1, padding.1, output_padding.1),
        ) else {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("empty output for input {h}x{w}"),
            ));
        };
        if oh + 2 * padding.0 < kh || ow + 2 * padding.1 < kw {
            return Err(Error::shape(
                "conv_transpose2d",
                "kernel exceeds padded output",
            ));
        }
        let geom = ConvGeometry {
            batch: b,
            c_in,
            c_out,
            kernel: (kh, kw),
            stride,
            padding,
            image: (oh, ow),
            grid: (h, w),
        };
        let rows = c_out * geom.taps();
        let mut cols = vec![0.0; rows * geom.grid_len()];
        let mut out = vec![0.0; b * c_out * geom.image_len()];
        let (x, k) = (self.data(input), self.data(kernel));
        let in_len = c_in * geom.grid_len();
        for (n, out_n) in out.chunks_exact_mut(c_out * geom.image_len()).enumerate() {
            gemm(
                rows,
                c_in,
                geom.grid_len(),
                k,
                true,
                &x[n * in_len..(n + 1) * in_len],
                false,
                0.0,
                &mut cols,
            );
            col2im(&cols, c_out, &geom, out_n);
        }
        add_bias(&mut out, self.data(bias), geom.image_len());
        let out = Tensor::new([b, c_out, oh, ow], out)?;
        self.push(
            out,
            Op::ConvTranspose2d {
                input,
                kernel,
                bias,
                geom,
            },
            "conv_transpose2d",
        )
    }
}

pub(crate) fn conv2d_backward(
    input: Var,
    kernel: Var,
    bias: Var,
    geom: &ConvGeometry,
    g: &[f64],
    grads: &mut Grads<'_>,
) {
    let (x, k) = (grads.value(input).data(), grads.value(kernel).data());
    let rows = geom.c_in * geom.taps();
    let grid = geom.grid_len();
    let in_len = geom.c_in * geom.image_len();
    let out_len = geom.c_out * grid;
    let mut cols = vec![0.0; rows * grid];
    if grads.needs(kernel) {
        grads.with(kernel, |acc| {
            for n in 0..geom.batch {
                im2col(&x[n * in_len..(n + 1) * in_len], geom.c_in, geom, &mut cols);
                gemm(
                    geom.c_out,
                    grid,
                    rows,
                    &g[n * out_len..(n + 1) * out_len],
                    false,
                    &cols,
                    true,
                    1.0,
                    acc,
                );
            }
        });
    }
    grads.with(input, |acc| {
        for n in 0..geom.batch {
            gemm(
                rows,
                geom.c_out,
                grid,
                k,
                true,
                &g[n * out_len..(n + 1) * out_len],
                false,
                0.0,
                &mut cols,
            );
            col2im(
                &cols,
                geom.c_in,
                geom,
                &mut acc[n * in_len..(n + 1) * in_len],
            );
        }
    });
    grads.with(bias, |acc| bias_grad(g, geom.c_out, grid, acc));
}

pub(crate) fn conv_transpose2d_backward(
    input: Var,
    kernel: Var,
    bias: Var,
    geom: &ConvGeometry,
    g: &[f64],
    grads: &mut Grads<'_>,
) {
    let (x, k) = (grads.value(input).data(), grads.value(kernel).data());
    let rows = geom.c_out * geom.taps();
    let grid = geom.grid_len();
    let in_len = geom.c_in * grid;
    let out_len = geom.c_out * geom.image_len();
    let (need_x, need_k) = (grads.needs(input), grads.needs(kernel));
    let mut cols = vec![0.0; rows * grid];
    let mut dx = if need_x {
        vec![0.0; x.len()]
    } else {
        Vec::new()
    };
    let mut dk = if need_k {
        vec![0.0; k.len()]
    } else {
        Vec::new()
    };
    for n in 0..geom.batch {
        if !need_x && !need_k {
            break;
        }
        im2col(
            &g[n * out_len..(n + 1) * out_len],
            geom.c_out,
            geom,
            &mut cols,
        );
        if need_x {
            gemm(
                geom.c_in,
                rows,
                grid,
                k,
                false,
                &cols,
                false,
                0.0,
                &mut dx[n * in_len..(n + 1) * in_len],
            );
        }
        if need_k {
            gemm(
                geom.c_in,
                grid,
                rows,
                &x[n * in_len..(n + 1) * in_len],
                false,
                &cols,
                true,
                1.0,
                &mut dk,
            );
        }
    }
    if need_x {
        grads.add(input, &dx);
    }
    if need_k {
        grads.add(kernel, &dk);
    }
    grads.with(bias, |acc| bias_grad(g, geom.c_out, geom.image_len(), acc));
}
