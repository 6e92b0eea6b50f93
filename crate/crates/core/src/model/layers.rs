use super::config::Variant;
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::signal::ComplexSpectrogram;

/// Real and imaginary planes of a time-frequency mask, bin-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexMask {
    pub real: Vec<f64>,
    pub imag: Vec<f64>,
    pub bins: usize,
    pub frames: usize,
}

impl ComplexMask {
    pub fn constant(bins: usize, frames: usize, re: f64, im: f64) -> Self {
        Self {
            real: vec![re; bins * frames],
            imag: vec![im; bins * frames],
            bins,
            frames,
        }
    }
}

/// Builds the `[M, P, F, T]` network input. For [`Variant::Relunet`] channel
/// `i` carries `[Re X_i, Im X_i, Re X_r, Im X_r]`; for [`Variant::Unet`]
/// only the first two planes.
pub fn stack_relative(
    specs: &[ComplexSpectrogram],
    reference: usize,
    variant: Variant,
) -> Result<Tensor> {
    let first = specs
        .first()
        .ok_or_else(|| Error::shape("stack_relative", "no channels"))?;
    if reference >= specs.len() {
        return Err(Error::InvalidConfig(format!(
            "reference channel {reference} out of range for {} channels",
            specs.len()
        )));
    }
    if let Some((i, s)) = specs
        .iter()
        .enumerate()
        .find(|(_, s)| s.bins() != first.bins() || s.frames() != first.frames())
    {
        return Err(Error::shape(
            "stack_relative",
            format!(
                "channel {i} is {}x{}, channel 0 is {}x{}",
                s.bins(),
                s.frames(),
                first.bins(),
                first.frames()
            ),
        ));
    }
    let planes = variant.planes();
    let plane = first.bins() * first.frames();
    let r = &specs[reference];
    let mut data = Vec::with_capacity(specs.len() * planes * plane);
    for s in specs {
        data.extend_from_slice(s.real());
        data.extend_from_slice(s.imag());
        if variant == Variant::Relunet {
            data.extend_from_slice(r.real());
            data.extend_from_slice(r.imag());
        }
    }
    Tensor::new([specs.len(), planes, first.bins(), first.frames()], data)
}

/// Complex product `X * M` per cell.
pub fn apply_mask(mask: &ComplexMask, x: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    if mask.bins != x.bins() || mask.frames != x.frames() {
        return Err(Error::shape(
            "apply_mask",
            format!(
                "mask {}x{} vs spectrogram {}x{}",
                mask.bins,
                mask.frames,
                x.bins(),
                x.frames()
            ),
        ));
    }
    let mut out = ComplexSpectrogram::zeros_like(x);
    let (xr, xi) = (x.real(), x.imag());
    let n = xr.len();
    let mut re = vec![0.0; n];
    let mut im = vec![0.0; n];
    for i in 0..n {
        re[i] = xr[i] * mask.real[i] - xi[i] * mask.imag[i];
        im[i] = xr[i] * mask.imag[i] + xi[i] * mask.real[i];
    }
    out.real_mut().copy_from_slice(&re);
    out.imag_mut().copy_from_slice(&im);
    Ok(out)
}

/// Differentiable complex product of `[B, 2, F, T]` planes.
pub(crate) fn apply_mask_graph(g: &mut Graph, mask: Var, x: Var) -> Result<Var> {
    let mr = g.narrow(mask, 1, 0, 1)?;
    let mi = g.narrow(mask, 1, 1, 1)?;
    let xr = g.narrow(x, 1, 0, 1)?;
    let xi = g.narrow(x, 1, 1, 1)?;
    let rr = g.mul(xr, mr)?;
    let ii = g.mul(xi, mi)?;
    let ri = g.mul(xr, mi)?;
    let ir = g.mul(xi, mr)?;
    let re = g.sub(rr, ii)?;
    let im = g.add(ri, ir)?;
    g.concat(&[re, im], 1)
}

/// Fully connected adjacency without self-loops, repeated block-diagonally
/// for `batch` independent graphs of `nodes` nodes.
pub fn fully_connected(nodes: usize, batch: usize) -> Vec<f64> {
    let n = nodes * batch;
    let mut a = vec![0.0; n * n];
    for b in 0..batch {
        for i in 0..nodes {
            for j in 0..nodes {
                if i != j {
                    a[(b * nodes + i) * n + b * nodes + j] = 1.0;
                }
            }
        }
    }
    a
}

/// `D^{-1/2} (A + I) D^{-1/2}` with `D` the degree of `A + I`.
pub fn normalized_adjacency(adj: &[f64], n: usize) -> Result<Vec<f64>> {
    check_adjacency(adj, n)?;
    let mut a = adj.to_vec();
    for i in 0..n {
        a[i * n + i] += 1.0;
    }
    let inv: Vec<f64> = (0..n)
        .map(|i| 1.0 / a[i * n..(i + 1) * n].iter().sum::<f64>().sqrt())
        .collect();
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] *= inv[i] * inv[j];
        }
    }
    Ok(a)
}

fn check_adjacency(adj: &[f64], n: usize) -> Result<()> {
    if adj.len() != n * n {
        return Err(Error::shape(
            "adjacency",
            format!("{} entries for {n} nodes", adj.len()),
        ));
    }
    for i in 0..n {
        for j in 0..n {
            let v = adj[i * n + j];
            if v < 0.0 || v != adj[j * n + i] {
                return Err(Error::shape(
                    "adjacency",
                    "must be symmetric and nonnegative",
                ));
            }
        }
    }
    Ok(())
}

fn node_count(g: &Graph, h: Var, op: &'static str) -> Result<usize> {
    match g.shape(h) {
        &[n, _] => Ok(n),
        s => Err(Error::shape(
            op,
            format!("node features must be [N, D], got {s:?}"),
        )),
    }
}

/// `SELU(D^{-1/2} (A + I) D^{-1/2} H W)`.
pub fn gcn_layer(g: &mut Graph, h: Var, adj: &[f64], w: Var) -> Result<Var> {
    let n = node_count(g, h, "gcn_layer")?;
    let norm = g.constant(Tensor::new([n, n], normalized_adjacency(adj, n)?)?);
    let hw = g.matmul(h, w)?;
    let mixed = g.matmul(norm, hw)?;
    g.selu(mixed)
}

/// Score mask: 0 on neighbours (self included), a large negative constant
/// elsewhere so that softmax assigns them zero weight.
const NON_NEIGHBOUR: f64 = -1e30;

/// Single-head graph attention. `attention` holds `[a_src; a_dst]`, each of
/// the output feature size.
pub fn gat_layer(g: &mut Graph, h: Var, adj: &[f64], w: Var, attention: Var) -> Result<Var> {
    let n = node_count(g, h, "gat_layer")?;
    check_adjacency(adj, n)?;
    let d_out = match g.shape(w) {
        &[_, d] => d,
        s => {
            return Err(Error::shape(
                "gat_layer",
                format!("weight must be rank 2, got {s:?}"),
            ))
        }
    };
    if g.shape(attention) != [2 * d_out] {
        return Err(Error::shape(
            "gat_layer",
            format!(
                "attention vector {:?} vs output size {d_out}",
                g.shape(attention)
            ),
        ));
    }
    let wh = g.matmul(h, w)?;
    let a_src = g.narrow(attention, 0, 0, d_out)?;
    let a_src = g.reshape(a_src, [d_out, 1])?;
    let a_dst = g.narrow(attention, 0, d_out, d_out)?;
    let a_dst = g.reshape(a_dst, [d_out, 1])?;
    let s_src = g.matmul(wh, a_src)?;
    let s_dst = g.matmul(wh, a_dst)?;
    let ones_row = g.constant(Tensor::ones([1, n]));
    let ones_col = g.constant(Tensor::ones([n, 1]));
    let rows = g.matmul(s_src, ones_row)?;
    let s_dst_t = g.transpose(s_dst)?;
    let cols = g.matmul(ones_col, s_dst_t)?;
    let e = g.add(rows, cols)?;
    let e = g.leaky_relu(e, 0.2)?;
    let mask: Vec<f64> = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            if i == j || adj[k] > 0.0 {
                0.0
            } else {
                NON_NEIGHBOUR
            }
        })
        .collect();
    let mask = g.constant(Tensor::new([n, n], mask)?);
    let e = g.add(e, mask)?;
    let alpha = g.softmax(e, 1)?;
    let mixed = g.matmul(alpha, wh)?;
    g.selu(mixed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::selu;
    use crate::signal::StftConfig;
    use num_complex::Complex64;

    fn spec(seed: f64) -> ComplexSpectrogram {
        let cfg = StftConfig {
            fft_length: 8,
            hop_length: 4,
            window_length: 8,
            ..Default::default()
        };
        let x: Vec<f64> = (0..16).map(|i| ((i as f64 + seed) * 0.7).sin()).collect();
        crate::signal::stft(&x, &cfg).unwrap()
    }

    #[test]
    fn stacking_layout() {
        let s = [spec(0.0), spec(1.0)];
        let z = stack_relative(&s, 0, Variant::Relunet).unwrap();
        let plane = s[0].bins() * s[0].frames();
        assert_eq!(z.shape(), &[2, 4, s[0].bins(), s[0].frames()]);
        let p = |i: usize, k: usize| &z.data()[(i * 4 + k) * plane..(i * 4 + k + 1) * plane];
        assert_eq!(p(0, 0), s[0].real());
        assert_eq!(p(0, 2), s[0].real());
        assert_eq!(p(0, 3), s[0].imag());
        assert_eq!(p(1, 0), s[1].real());
        assert_eq!(p(1, 1), s[1].imag());
        assert_eq!(p(1, 2), s[0].real());
        assert_eq!(p(1, 3), s[0].imag());

        let single = stack_relative(&s[..1], 0, Variant::Relunet).unwrap();
        assert_eq!(&single.data()[..2 * plane], &single.data()[2 * plane..]);

        let unet = stack_relative(&s, 1, Variant::Unet).unwrap();
        assert_eq!(unet.shape(), &[2, 2, s[0].bins(), s[0].frames()]);
        assert!(stack_relative(&s, 2, Variant::Relunet).is_err());
    }

    #[test]
    fn mask_arithmetic() {
        let mut x = ComplexSpectrogram::zeros_like(&spec(0.0));
        x.set(0, 0, Complex64::new(1.0, 2.0));
        let mut m = ComplexMask::constant(x.bins(), x.frames(), 0.0, 0.0);
        m.real[0] = 3.0;
        m.imag[0] = -1.0;
        let y = apply_mask(&m, &x).unwrap();
        assert_eq!(y.get(0, 0), Complex64::new(5.0, 5.0));

        let x = spec(2.0);
        let one = ComplexMask::constant(x.bins(), x.frames(), 1.0, 0.0);
        assert_eq!(apply_mask(&one, &x).unwrap(), x);
        let zero = ComplexMask::constant(x.bins(), x.frames(), 0.0, 0.0);
        assert!(apply_mask(&zero, &x)
            .unwrap()
            .real()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn ratio_mask_reconstructs_target() {
        let x = spec(0.3);
        let s = spec(1.7);
        let mut m = ComplexMask::constant(x.bins(), x.frames(), 0.0, 0.0);
        let mut keep = Vec::new();
        for f in 0..x.bins() {
            for t in 0..x.frames() {
                let xv = x.get(f, t);
                if xv.norm() > 1e-3 {
                    let r = s.get(f, t) / xv;
                    m.real[f * x.frames() + t] = r.re;
                    m.imag[f * x.frames() + t] = r.im;
                    keep.push((f, t));
                }
            }
        }
        let y = apply_mask(&m, &x).unwrap();
        for (f, t) in keep {
            assert!((y.get(f, t) - s.get(f, t)).norm() < 1e-12);
        }
    }

    #[test]
    fn two_node_normalized_adjacency() {
        let a = normalized_adjacency(&fully_connected(2, 1), 2).unwrap();
        assert!(a.iter().all(|v| (v - 0.5).abs() < 1e-15));
        assert_eq!(normalized_adjacency(&[0.0], 1).unwrap(), vec![1.0]);
        assert!(normalized_adjacency(&[0.0, 1.0, 0.0, 0.0], 2).is_err());
    }

    #[test]
    fn single_node_layers_reduce_to_selu_of_hw() {
        let mut g = Graph::new();
        let h = g.constant(Tensor::new([1, 2], vec![0.5, -1.0]).unwrap());
        let w = g.constant(Tensor::new([2, 2], vec![1.0, 2.0, -1.0, 0.5]).unwrap());
        let a = g.constant(Tensor::new([4], vec![0.3, -0.2, 0.1, 0.9]).unwrap());
        let expect = [selu(0.5 + 1.0), selu(1.0 - 0.5)];
        let gcn = gcn_layer(&mut g, h, &[0.0], w).unwrap();
        let gat = gat_layer(&mut g, h, &[0.0], w, a).unwrap();
        for out in [gcn, gat] {
            for (x, y) in g.data(out).iter().zip(expect) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn identical_rows_stay_identical() {
        let mut g = Graph::new();
        let h = g.constant(Tensor::new([2, 3], vec![0.1, 0.2, -0.3, 0.1, 0.2, -0.3]).unwrap());
        let w = g
            .constant(Tensor::new([3, 3], (0..9).map(|i| i as f64 * 0.1 - 0.4).collect()).unwrap());
        let a = g.constant(Tensor::new([6], vec![0.2; 6]).unwrap());
        let adj = fully_connected(2, 1);
        let gcn = gcn_layer(&mut g, h, &adj, w).unwrap();
        let hw: Vec<f64> = (0..3)
            .map(|j| {
                (0..3)
                    .map(|k| {
                        [0.1, 0.2, -0.3][k] * (k * 3 + j) as f64 * 0.1 - [0.1, 0.2, -0.3][k] * 0.4
                    })
                    .sum()
            })
            .collect();
        for (i, v) in g.data(gcn).iter().enumerate() {
            assert!((v - selu(hw[i % 3])).abs() < 1e-14);
        }
        let gat = gat_layer(&mut g, h, &adj, w, a).unwrap();
        let d = g.data(gat);
        assert_eq!(&d[..3], &d[3..]);
    }

    /// Direct evaluation of attention weights for three nodes.
    #[test]
    fn gat_matches_brute_force() {
        let hv = [0.3, -0.1, 0.8, 0.5, -0.7, 0.2];
        let wv = [0.9, -0.4, 0.2, 0.6];
        let av = [0.5, -0.3, 0.7, 0.1];
        let adj = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0];
        let mut g = Graph::new();
        let h = g.constant(Tensor::new([3, 2], hv.to_vec()).unwrap());
        let w = g.constant(Tensor::new([2, 2], wv.to_vec()).unwrap());
        let a = g.constant(Tensor::new([4], av.to_vec()).unwrap());
        let out = gat_layer(&mut g, h, &adj, w, a).unwrap();

        let wh: Vec<[f64; 2]> = (0..3)
            .map(|i| {
                [
                    hv[2 * i] * wv[0] + hv[2 * i + 1] * wv[2],
                    hv[2 * i] * wv[1] + hv[2 * i + 1] * wv[3],
                ]
            })
            .collect();
        for i in 0..3 {
            let nbrs: Vec<usize> = (0..3).filter(|&j| i == j || adj[i * 3 + j] > 0.0).collect();
            let scores: Vec<f64> = nbrs
                .iter()
                .map(|&j| {
                    let s =
                        av[0] * wh[i][0] + av[1] * wh[i][1] + av[2] * wh[j][0] + av[3] * wh[j][1];
                    if s > 0.0 {
                        s
                    } else {
                        0.2 * s
                    }
                })
                .collect();
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            for c in 0..2 {
                let v: f64 = nbrs
                    .iter()
                    .zip(&scores)
                    .map(|(&j, s)| s.exp() / z * wh[j][c])
                    .sum();
                assert!((g.data(out)[i * 2 + c] - selu(v)).abs() < 1e-14);
            }
        }
    }
}
