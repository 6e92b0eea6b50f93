use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::signal::ComplexSpectrogram;

/// Relative diagonal loading `delta` in `R + delta tr(R)/M I`.
pub const DIAGONAL_LOADING: f64 = 1e-6;
/// Absolute loading added on top, so an all-zero bin stays invertible.
pub const LOADING_FLOOR: f64 = 1e-12;
/// Floor on `h^H R^-1 h`.
pub const MVDR_FLOOR: f64 = 1e-12;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Per-bin array response, `bins x channels` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SteeringVector {
    pub values: Vec<Complex64>,
    pub bins: usize,
    pub channels: usize,
}

impl SteeringVector {
    pub fn bin(&self, f: usize) -> &[Complex64] {
        &self.values[f * self.channels..(f + 1) * self.channels]
    }

    /// First `bins` rows, e.g. to match an STFT that dropped its last bin.
    pub fn truncated(&self, bins: usize) -> Self {
        let bins = bins.min(self.bins);
        Self {
            values: self.values[..bins * self.channels].to_vec(),
            bins,
            channels: self.channels,
        }
    }
}

/// `h[f][m] = g_m exp(-j 2 pi f f_s tau_m / K)` for `f` in `0..=K/2`, with
/// delays in seconds.
pub fn steering_vector(
    gains: &[f64],
    delays: &[f64],
    sample_rate: f64,
    fft_length: usize,
) -> Result<SteeringVector> {
    if gains.len() != delays.len() || gains.is_empty() {
        return Err(Error::shape(
            "steering_vector",
            format!("{} gains vs {} delays", gains.len(), delays.len()),
        ));
    }
    if fft_length == 0 || fft_length % 2 != 0 {
        return Err(Error::InvalidConfig(format!(
            "fft length must be even and positive, got {fft_length}"
        )));
    }
    let bins = fft_length / 2 + 1;
    let k = fft_length as f64;
    let mut values = Vec::with_capacity(bins * gains.len());
    for f in 0..bins {
        for (&g, &tau) in gains.iter().zip(delays) {
            let phase = -2.0 * std::f64::consts::PI * f as f64 * sample_rate * tau / k;
            values.push(Complex64::from_polar(g, phase));
        }
    }
    Ok(SteeringVector {
        values,
        bins,
        channels: gains.len(),
    })
}

/// Per-bin spatial covariance, `bins x M x M` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseCovariance {
    pub values: Vec<Complex64>,
    pub bins: usize,
    pub channels: usize,
    pub frame_count: usize,
}

impl NoiseCovariance {
    pub fn bin(&self, f: usize) -> &[Complex64] {
        let mm = self.channels * self.channels;
        &self.values[f * mm..(f + 1) * mm]
    }

    /// Builds from explicit per-bin matrices without loading.
    pub fn from_matrices(values: Vec<Complex64>, bins: usize, channels: usize) -> Result<Self> {
        if values.len() != bins * channels * channels {
            return Err(Error::shape(
                "noise_covariance",
                format!(
                    "{} values for {bins} bins of {channels}x{channels}",
                    values.len()
                ),
            ));
        }
        Ok(Self {
            values,
            bins,
            channels,
            frame_count: 0,
        })
    }
}

/// Sample covariance of the selected frames with diagonal loading
/// `DIAGONAL_LOADING * tr(R) / M + LOADING_FLOOR`.
pub fn estimate_noise_covariance(
    specs: &[ComplexSpectrogram],
    frames: &[usize],
) -> Result<NoiseCovariance> {
    let first = specs
        .first()
        .ok_or_else(|| Error::shape("noise_covariance", "no channels"))?;
    if frames.is_empty() {
        return Err(Error::InvalidConfig(
            "noise covariance needs at least one frame".into(),
        ));
    }
    if specs.iter().any(|s| !s.same_grid(first)) {
        return Err(Error::shape(
            "noise_covariance",
            "channel spectrograms differ in grid",
        ));
    }
    if let Some(&t) = frames.iter().find(|&&t| t >= first.frames()) {
        return Err(Error::InvalidConfig(format!(
            "frame {t} out of range ({} frames)",
            first.frames()
        )));
    }
    let m = specs.len();
    let bins = first.bins();
    let inv = 1.0 / frames.len() as f64;
    let mut values = vec![ZERO; bins * m * m];
    let mut x = vec![ZERO; m];
    for f in 0..bins {
        let r = &mut values[f * m * m..(f + 1) * m * m];
        for &t in frames {
            for (xi, s) in x.iter_mut().zip(specs) {
                *xi = s.get(f, t);
            }
            for i in 0..m {
                for j in i..m {
                    r[i * m + j] += x[i] * x[j].conj();
                }
            }
        }
        let trace: f64 = (0..m).map(|i| r[i * m + i].re).sum::<f64>() * inv;
        let load = DIAGONAL_LOADING * trace / m as f64 + LOADING_FLOOR;
        for i in 0..m {
            for j in i..m {
                r[i * m + j] *= inv;
            }
            r[i * m + i] = Complex64::new(r[i * m + i].re + load, 0.0);
            for j in i + 1..m {
                r[j * m + i] = r[i * m + j].conj();
            }
        }
    }
    Ok(NoiseCovariance {
        values,
        bins,
        channels: m,
        frame_count: frames.len(),
    })
}

/// Lower Cholesky factor of a Hermitian positive definite matrix, `None`
/// when a pivot is not positive.
pub(crate) fn cholesky(a: &[Complex64], m: usize) -> Option<Vec<Complex64>> {
    let mut l = vec![ZERO; m * m];
    for j in 0..m {
        let mut d = a[j * m + j].re;
        for k in 0..j {
            d -= l[j * m + k].norm_sqr();
        }
        if !(d > 0.0) {
            return None;
        }
        let d = d.sqrt();
        l[j * m + j] = Complex64::new(d, 0.0);
        for i in j + 1..m {
            let mut s = a[i * m + j];
            for k in 0..j {
                s -= l[i * m + k] * l[j * m + k].conj();
            }
            l[i * m + j] = s / d;
        }
    }
    Some(l)
}

/// Solves `L L^H x = b`.
pub(crate) fn cholesky_solve(l: &[Complex64], m: usize, b: &[Complex64]) -> Vec<Complex64> {
    let mut y = b.to_vec();
    for i in 0..m {
        for k in 0..i {
            y[i] = y[i] - l[i * m + k] * y[k];
        }
        y[i] /= l[i * m + i];
    }
    for i in (0..m).rev() {
        for k in i + 1..m {
            y[i] = y[i] - l[k * m + i].conj() * y[k];
        }
        y[i] /= l[i * m + i];
    }
    y
}

/// Beamformer weights, `bins x channels` row-major. The output at a bin is
/// `w^H x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub values: Vec<Complex64>,
    pub bins: usize,
    pub channels: usize,
}

impl Weights {
    pub fn bin(&self, f: usize) -> &[Complex64] {
        &self.values[f * self.channels..(f + 1) * self.channels]
    }

    /// `w^H h` at every bin.
    pub fn response(&self, h: &SteeringVector) -> Vec<Complex64> {
        (0..self.bins.min(h.bins))
            .map(|f| {
                self.bin(f)
                    .iter()
                    .zip(h.bin(f))
                    .map(|(w, x)| w.conj() * x)
                    .sum()
            })
            .collect()
    }

    /// `w^H x(f, t)` for every cell of the channel spectrograms.
    pub fn apply(&self, specs: &[ComplexSpectrogram]) -> Result<ComplexSpectrogram> {
        let first = specs
            .first()
            .ok_or_else(|| Error::shape("beamform", "no channels"))?;
        if specs.len() != self.channels {
            return Err(Error::ChannelCountMismatch {
                expected: self.channels,
                actual: specs.len(),
            });
        }
        if first.bins() != self.bins || specs.iter().any(|s| !s.same_grid(first)) {
            return Err(Error::shape(
                "beamform",
                format!(
                    "weights cover {} bins, spectrogram has {}",
                    self.bins,
                    first.bins()
                ),
            ));
        }
        let mut out = ComplexSpectrogram::zeros_like(first);
        for f in 0..self.bins {
            let w = self.bin(f);
            for t in 0..first.frames() {
                let y: Complex64 = w
                    .iter()
                    .zip(specs)
                    .map(|(w, s)| w.conj() * s.get(f, t))
                    .sum();
                out.set(f, t, y);
            }
        }
        Ok(out)
    }
}

/// `w = R^-1 h / (h^H R^-1 h)` per bin by Cholesky solve.
pub fn mvdr_weights(r: &NoiseCovariance, h: &SteeringVector) -> Result<Weights> {
    if r.channels != h.channels || r.bins > h.bins {
        return Err(Error::shape(
            "mvdr_weights",
            format!(
                "covariance {} bins x {} channels vs steering {} bins x {} channels",
                r.bins, r.channels, h.bins, h.channels
            ),
        ));
    }
    let m = r.channels;
    let mut values = Vec::with_capacity(r.bins * m);
    for f in 0..r.bins {
        let l = cholesky(r.bin(f), m).ok_or(Error::SingularBin(f))?;
        let hf = h.bin(f);
        let u = cholesky_solve(&l, m, hf);
        let denom: Complex64 = hf.iter().zip(&u).map(|(a, b)| a.conj() * b).sum();
        let denom = Complex64::new(denom.re.max(MVDR_FLOOR), denom.im);
        for v in u {
            let w = v / denom;
            if !w.is_finite() {
                return Err(Error::SingularBin(f));
            }
            values.push(w);
        }
    }
    Ok(Weights {
        values,
        bins: r.bins,
        channels: m,
    })
}

/// `w = h / (h^H h)` per bin.
pub fn delay_and_sum_weights(h: &SteeringVector) -> Weights {
    let mut values = Vec::with_capacity(h.values.len());
    for f in 0..h.bins {
        let hf = h.bin(f);
        let energy: f64 = hf.iter().map(|v| v.norm_sqr()).sum::<f64>().max(MVDR_FLOOR);
        values.extend(hf.iter().map(|v| v / energy));
    }
    Weights {
        values,
        bins: h.bins,
        channels: h.channels,
    }
}
