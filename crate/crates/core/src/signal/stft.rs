//! Short-time Fourier analysis and weighted overlap-add synthesis.
//!
//! Frames start at sample 0 and advance by `hop_length` with no centre
//! padding. Each frame is multiplied by a periodic Hann window, zero-padded
//! on the right to `fft_length` and transformed. Synthesis divides the
//! overlap-added, re-windowed frames by the summed squared window, which is
//! the least-squares inverse for any hop.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Squared-window sums at or below this value produce silent output samples.
pub const WOLA_FLOOR: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    #[default]
    Hann,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub fft_length: usize,
    pub hop_length: usize,
    pub window_length: usize,
    pub window: WindowKind,
    pub drop_last_bin: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            fft_length: 1024,
            hop_length: 151,
            window_length: 1024,
            window: WindowKind::Hann,
            drop_last_bin: true,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fft_length < 2 || self.fft_length % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "fft_length must be even and >= 2, got {}",
                self.fft_length
            )));
        }
        if self.window_length == 0 || self.window_length > self.fft_length {
            return Err(Error::InvalidConfig(format!(
                "window_length {} must be in 1..={}",
                self.window_length, self.fft_length
            )));
        }
        if self.hop_length == 0 {
            return Err(Error::InvalidConfig("hop_length must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of retained frequency bins `F`.
    pub fn num_bins(&self) -> usize {
        self.fft_length / 2 + 1 - usize::from(self.drop_last_bin)
    }

    /// Number of frames `T` for a signal of `len` samples, `None` when the
    /// signal is shorter than one window.
    pub fn num_frames(&self, len: usize) -> Option<usize> {
        (len >= self.window_length).then(|| (len - self.window_length) / self.hop_length + 1)
    }

    pub fn window_samples(&self) -> Vec<f64> {
        match self.window {
            WindowKind::Hann => hann_periodic(self.window_length),
        }
    }
}

/// Periodic Hann window `0.5 - 0.5 cos(2 pi n / L)`.
pub fn hann_periodic(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Complex time-frequency grid stored as two `F x T` row-major planes.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexSpectrogram {
    real: Vec<f64>,
    imag: Vec<f64>,
    bins: usize,
    frames: usize,
    config: StftConfig,
    original_length: usize,
}

impl ComplexSpectrogram {
    pub fn from_parts(
        real: Vec<f64>,
        imag: Vec<f64>,
        bins: usize,
        frames: usize,
        config: StftConfig,
        original_length: usize,
    ) -> Result<Self> {
        if real.len() != bins * frames || imag.len() != bins * frames {
            return Err(Error::shape(
                "spectrogram",
                format!(
                    "planes of length {}/{} do not match {bins}x{frames}",
                    real.len(),
                    imag.len()
                ),
            ));
        }
        Ok(Self {
            real,
            imag,
            bins,
            frames,
            config,
            original_length,
        })
    }

    pub fn zeros_like(other: &Self) -> Self {
        Self {
            real: vec![0.0; other.real.len()],
            imag: vec![0.0; other.imag.len()],
            ..other.clone()
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn original_length(&self) -> usize {
        self.original_length
    }

    pub fn real(&self) -> &[f64] {
        &self.real
    }

    pub fn imag(&self) -> &[f64] {
        &self.imag
    }

    pub fn real_mut(&mut self) -> &mut [f64] {
        &mut self.real
    }

    pub fn imag_mut(&mut self) -> &mut [f64] {
        &mut self.imag
    }

    pub fn get(&self, bin: usize, frame: usize) -> Complex64 {
        let i = bin * self.frames + frame;
        Complex64::new(self.real[i], self.imag[i])
    }

    pub fn set(&mut self, bin: usize, frame: usize, value: Complex64) {
        let i = bin * self.frames + frame;
        self.real[i] = value.re;
        self.imag[i] = value.im;
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            real: self.real.iter().map(|v| v * factor).collect(),
            imag: self.imag.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.bins == other.bins && self.frames == other.frames
    }
}

/// Planned analysis/synthesis pair for one [`StftConfig`].
#[derive(Clone)]
pub struct Stft {
    config: StftConfig,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Stft {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Stft")
            .field("config", &self.config)
            .finish()
    }
}

impl Stft {
    pub fn new(config: StftConfig) -> Result<Self> {
        config.validate()?;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(config.fft_length);
        let inverse = planner.plan_fft_inverse(config.fft_length);
        Ok(Self {
            window: config.window_samples(),
            config,
            forward,
            inverse,
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.config
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    pub fn frames_for(&self, len: usize) -> Result<usize> {
        self.config.num_frames(len).ok_or(Error::SignalTooShort {
            len,
            required: self.config.window_length,
        })
    }

    pub fn analyze(&self, wave: &[f64]) -> Result<ComplexSpectrogram> {
        if let Some(i) = wave.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample(i));
        }
        let frames = self.frames_for(wave.len())?;
        let bins = self.config.num_bins();
        let mut real = vec![0.0; bins * frames];
        let mut imag = vec![0.0; bins * frames];
        self.analyze_planes(wave, frames, &mut real, &mut imag);
        ComplexSpectrogram::from_parts(real, imag, bins, frames, self.config.clone(), wave.len())
    }

    /// Windowed DFT of every frame into `F x T` planes. The caller guarantees
    /// `wave` spans `frames` frames.
    pub(crate) fn analyze_planes(
        &self,
        wave: &[f64],
        frames: usize,
        re: &mut [f64],
        im: &mut [f64],
    ) {
        let k = self.config.fft_length;
        let bins = self.config.num_bins();
        let mut buf = vec![Complex64::new(0.0, 0.0); k * frames];
        for (t, chunk) in buf.chunks_exact_mut(k).enumerate() {
            let start = t * self.config.hop_length;
            for (n, (c, w)) in chunk.iter_mut().zip(&self.window).enumerate() {
                c.re = wave[start + n] * w;
            }
        }
        self.forward.process(&mut buf);
        for (t, chunk) in buf.chunks_exact(k).enumerate() {
            for f in 0..bins {
                re[f * frames + t] = chunk[f].re;
                im[f * frames + t] = chunk[f].im;
            }
        }
    }

    /// Adjoint of [`Self::analyze_planes`]: maps plane gradients back to a
    /// gradient over the `len` input samples.
    pub(crate) fn analyze_adjoint(
        &self,
        g_re: &[f64],
        g_im: &[f64],
        frames: usize,
        len: usize,
    ) -> Vec<f64> {
        let k = self.config.fft_length;
        let bins = self.config.num_bins();
        let mut buf = vec![Complex64::new(0.0, 0.0); k * frames];
        for (t, chunk) in buf.chunks_exact_mut(k).enumerate() {
            for f in 0..bins {
                chunk[f] = Complex64::new(g_re[f * frames + t], g_im[f * frames + t]);
            }
        }
        self.inverse.process(&mut buf);
        let mut out = vec![0.0; len];
        for (t, chunk) in buf.chunks_exact(k).enumerate() {
            let start = t * self.config.hop_length;
            for (n, w) in self.window.iter().enumerate() {
                out[start + n] += w * chunk[n].re;
            }
        }
        out
    }

    pub fn synthesize(&self, spec: &ComplexSpectrogram) -> Result<Vec<f64>> {
        if spec.config != self.config {
            return Err(Error::ConfigMismatch(format!(
                "spectrogram analysed with {:?}, synthesis configured with {:?}",
                spec.config, self.config
            )));
        }
        if spec.bins != self.config.num_bins() {
            return Err(Error::ConfigMismatch(format!(
                "spectrogram has {} bins, configuration implies {}",
                spec.bins,
                self.config.num_bins()
            )));
        }
        let needed = (spec.frames.max(1) - 1) * self.config.hop_length + self.config.window_length;
        if spec.frames == 0 || spec.original_length < needed {
            return Err(Error::ConfigMismatch(format!(
                "original length {} cannot hold {} frames",
                spec.original_length, spec.frames
            )));
        }
        Ok(self.synthesize_planes(&spec.real, &spec.imag, spec.frames, spec.original_length))
    }

    /// Inverse real DFT of each frame (Nyquist re-appended as zero when it
    /// was dropped) followed by windowed overlap-add and squared-window
    /// normalisation.
    pub(crate) fn synthesize_planes(
        &self,
        re: &[f64],
        im: &[f64],
        frames: usize,
        len: usize,
    ) -> Vec<f64> {
        let buf = self.frame_inverse(re, im, frames);
        let k = self.config.fft_length;
        let inv = self.inverse_window_sums(frames, len);
        let mut out = vec![0.0; len];
        for (t, chunk) in buf.chunks_exact(k).enumerate() {
            let start = t * self.config.hop_length;
            for (n, w) in self.window.iter().enumerate() {
                out[start + n] += w * chunk[n].re / k as f64;
            }
        }
        for (o, s) in out.iter_mut().zip(&inv) {
            *o *= s;
        }
        out
    }

    /// Adjoint of [`Self::synthesize_planes`].
    pub(crate) fn synthesize_adjoint(
        &self,
        grad: &[f64],
        frames: usize,
        re: &mut [f64],
        im: &mut [f64],
    ) {
        let k = self.config.fft_length;
        let bins = self.config.num_bins();
        let inv = self.inverse_window_sums(frames, grad.len());
        let mut buf = vec![Complex64::new(0.0, 0.0); k * frames];
        for (t, chunk) in buf.chunks_exact_mut(k).enumerate() {
            let start = t * self.config.hop_length;
            for (n, w) in self.window.iter().enumerate() {
                chunk[n].re = w * inv[start + n] * grad[start + n];
            }
        }
        self.forward.process(&mut buf);
        let half = k / 2;
        for (t, chunk) in buf.chunks_exact(k).enumerate() {
            for f in 0..bins {
                let c = if f == 0 || f == half { 1.0 } else { 2.0 } / k as f64;
                re[f * frames + t] = c * chunk[f].re;
                im[f * frames + t] = c * chunk[f].im;
            }
        }
    }

    /// Unnormalised inverse FFT of the Hermitian extension of every frame.
    fn frame_inverse(&self, re: &[f64], im: &[f64], frames: usize) -> Vec<Complex64> {
        let k = self.config.fft_length;
        let half = k / 2;
        let bins = self.config.num_bins();
        let mut buf = vec![Complex64::new(0.0, 0.0); k * frames];
        for (t, chunk) in buf.chunks_exact_mut(k).enumerate() {
            for f in 0..bins {
                let v = Complex64::new(re[f * frames + t], im[f * frames + t]);
                chunk[f] = v;
                if f > 0 && f < half {
                    chunk[k - f] = v.conj();
                }
            }
        }
        self.inverse.process(&mut buf);
        buf
    }

    fn inverse_window_sums(&self, frames: usize, len: usize) -> Vec<f64> {
        let mut sums = vec![0.0; len];
        for t in 0..frames {
            let start = t * self.config.hop_length;
            for (n, w) in self.window.iter().enumerate() {
                if let Some(s) = sums.get_mut(start + n) {
                    *s += w * w;
                }
            }
        }
        sums.iter()
            .map(|&s| if s > WOLA_FLOOR { 1.0 / s } else { 0.0 })
            .collect()
    }
}

/// Forward transform of a single channel.
pub fn stft(wave: &[f64], config: &StftConfig) -> Result<ComplexSpectrogram> {
    Stft::new(config.clone())?.analyze(wave)
}

/// Inverse transform using the configuration the spectrogram carries.
pub fn istft(spec: &ComplexSpectrogram) -> Result<Vec<f64>> {
    Stft::new(spec.config.clone())?.synthesize(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_signal(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    /// Direct DFT of one windowed frame; independent of rustfft.
    fn naive_frame_dft(frame: &[f64], window: &[f64], k: usize) -> Vec<Complex64> {
        (0..k)
            .map(|f| {
                frame
                    .iter()
                    .zip(window)
                    .enumerate()
                    .map(|(n, (x, w))| {
                        let ang = -2.0 * PI * (f * n) as f64 / k as f64;
                        Complex64::from_polar(x * w, ang)
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn default_shape_for_one_segment() {
        let spec = stft(&vec![0.0; 19200], &StftConfig::default()).unwrap();
        assert_eq!(spec.bins(), 512);
        assert_eq!(spec.frames(), 121);
        assert!(spec.real().iter().chain(spec.imag()).all(|&v| v == 0.0));
    }

    #[test]
    fn matches_direct_dft() {
        let cfg = StftConfig {
            fft_length: 64,
            hop_length: 16,
            window_length: 48,
            drop_last_bin: false,
            ..Default::default()
        };
        let x = random_signal(200, 3);
        let spec = stft(&x, &cfg).unwrap();
        let w = cfg.window_samples();
        for t in [0, 3, spec.frames() - 1] {
            let frame = &x[t * 16..t * 16 + 48];
            let dft = naive_frame_dft(frame, &w, 64);
            for f in 0..spec.bins() {
                assert!((spec.get(f, t) - dft[f]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn cosine_energy_stays_in_main_lobe() {
        let fs = 16000.0;
        let freq = 8.0 * fs / 1024.0;
        let x: Vec<f64> = (0..19200)
            .map(|n| (2.0 * PI * freq * n as f64 / fs).cos())
            .collect();
        let cfg = StftConfig::default();
        let spec = stft(&x, &cfg).unwrap();
        let w = cfg.window_samples();
        for t in [0, 60, 120] {
            // one-sided energy with the oracle DFT, bins 7..=9 against all
            let dft = naive_frame_dft(&x[t * 151..t * 151 + 1024], &w, 1024);
            let total: f64 = dft[..=512].iter().map(|c| c.norm_sqr()).sum();
            let lobe: f64 = dft[7..=9].iter().map(|c| c.norm_sqr()).sum();
            assert!(
                lobe / total >= 0.99,
                "oracle lobe fraction {}",
                lobe / total
            );
            let total: f64 = (0..512).map(|f| spec.get(f, t).norm_sqr()).sum();
            let lobe: f64 = (7..=9).map(|f| spec.get(f, t).norm_sqr()).sum();
            assert!(lobe / total >= 0.99);
        }
    }

    #[test]
    fn round_trip_interior_with_full_bins() {
        let cfg = StftConfig {
            drop_last_bin: false,
            ..Default::default()
        };
        let x = random_signal(19200, 11);
        let y = istft(&stft(&x, &cfg).unwrap()).unwrap();
        assert_eq!(y.len(), x.len());
        let err = (1024..19200 - 1024)
            .map(|i| (x[i] - y[i]).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-6, "{err}");
    }

    /// With the Nyquist bin dropped, the reconstruction differs from the
    /// exact one by the overlap-added Nyquist component of every frame.
    #[test]
    fn dropped_nyquist_loss_matches_oracle() {
        let full = StftConfig {
            drop_last_bin: false,
            ..Default::default()
        };
        let x = random_signal(6000, 12);
        let y_full = istft(&stft(&x, &full).unwrap()).unwrap();
        let y_drop = istft(&stft(&x, &StftConfig::default()).unwrap()).unwrap();
        let w = full.window_samples();
        let frames = full.num_frames(x.len()).unwrap();
        let mut lost = vec![0.0; x.len()];
        let mut norm = vec![0.0; x.len()];
        for t in 0..frames {
            let s = t * 151;
            let nyq: f64 = (0..1024)
                .map(|n| w[n] * x[s + n] * if n % 2 == 0 { 1.0 } else { -1.0 })
                .sum();
            for n in 0..1024 {
                lost[s + n] += w[n] * nyq * if n % 2 == 0 { 1.0 } else { -1.0 } / 1024.0;
                norm[s + n] += w[n] * w[n];
            }
        }
        for i in 1024..x.len() - 1024 {
            let expect = y_full[i] - lost[i] / norm[i];
            assert!((y_drop[i] - expect).abs() < 1e-12, "sample {i}");
        }
    }

    #[test]
    fn istft_is_linear_and_zero_preserving() {
        let cfg = StftConfig::default();
        let spec = stft(&random_signal(4000, 5), &cfg).unwrap();
        let zero = istft(&ComplexSpectrogram::zeros_like(&spec)).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
        let y1 = istft(&spec).unwrap();
        let y2 = istft(&spec.scaled(2.0)).unwrap();
        for (a, b) in y1.iter().zip(&y2) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn errors() {
        let cfg = StftConfig::default();
        assert!(matches!(
            stft(&[0.0; 1000], &cfg),
            Err(Error::SignalTooShort { .. })
        ));
        let mut x = vec![0.0; 2000];
        x[7] = f64::NAN;
        assert!(matches!(stft(&x, &cfg), Err(Error::NonFiniteSample(7))));

        let spec = stft(&vec![0.0; 2000], &cfg).unwrap();
        let other = Stft::new(StftConfig {
            hop_length: 128,
            ..cfg
        })
        .unwrap();
        assert!(matches!(
            other.synthesize(&spec),
            Err(Error::ConfigMismatch(_))
        ));
        assert!(StftConfig {
            window_length: 2048,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn adjoints_satisfy_inner_product_identity() {
        let cfg = StftConfig {
            fft_length: 32,
            hop_length: 7,
            window_length: 24,
            drop_last_bin: true,
            ..Default::default()
        };
        let plan = Stft::new(cfg.clone()).unwrap();
        let len = 100;
        let frames = cfg.num_frames(len).unwrap();
        let bins = cfg.num_bins();
        let x = random_signal(len, 1);
        let gr = random_signal(bins * frames, 2);
        let gi = random_signal(bins * frames, 3);

        // <A x, g> = <x, A^T g>
        let (mut re, mut im) = (vec![0.0; bins * frames], vec![0.0; bins * frames]);
        plan.analyze_planes(&x, frames, &mut re, &mut im);
        let lhs: f64 = re
            .iter()
            .zip(&gr)
            .chain(im.iter().zip(&gi))
            .map(|(a, b)| a * b)
            .sum();
        let back = plan.analyze_adjoint(&gr, &gi, frames, len);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));

        let y = plan.synthesize_planes(&gr, &gi, frames, len);
        let lhs: f64 = y.iter().zip(&x).map(|(a, b)| a * b).sum();
        let (mut ar, mut ai) = (vec![0.0; bins * frames], vec![0.0; bins * frames]);
        plan.synthesize_adjoint(&x, frames, &mut ar, &mut ai);
        let rhs: f64 = ar
            .iter()
            .zip(&gr)
            .chain(ai.iter().zip(&gi))
            .map(|(a, b)| a * b)
            .sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn frame_count_formula(len in 1024usize..6000) {
                let cfg = StftConfig::default();
                let spec = stft(&vec![0.0; len], &cfg).unwrap();
                prop_assert_eq!(spec.frames(), (len - 1024) / 151 + 1);
            }

            #[test]
            fn linearity(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
                let cfg = StftConfig::default();
                let x = random_signal(3000, seed);
                let y = random_signal(3000, seed + 7919);
                let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
                let (sx, sy, sm) = (stft(&x, &cfg).unwrap(), stft(&y, &cfg).unwrap(), stft(&mix, &cfg).unwrap());
                let scale = sm.real().iter().chain(sm.imag()).fold(1.0f64, |m, v| m.max(v.abs()));
                for i in 0..sm.real().len() {
                    prop_assert!((a * sx.real()[i] + b * sy.real()[i] - sm.real()[i]).abs() <= 1e-10 * scale);
                    prop_assert!((a * sx.imag()[i] + b * sy.imag()[i] - sm.imag()[i]).abs() <= 1e-10 * scale);
                }
            }

            #[test]
            fn parseval_per_frame(seed in 0u64..1000) {
                let cfg = StftConfig { drop_last_bin: false, ..Default::default() };
                let x = random_signal(2000, seed);
                let spec = stft(&x, &cfg).unwrap();
                let w = cfg.window_samples();
                for t in 0..spec.frames() {
                    let time: f64 = x[t * 151..t * 151 + 1024].iter().zip(&w).map(|(a, b)| (a * b).powi(2)).sum();
                    // two-sided energy rebuilt from the one-sided bins
                    let freq: f64 = (0..=512)
                        .map(|f| spec.get(f, t).norm_sqr() * if f == 0 || f == 512 { 1.0 } else { 2.0 })
                        .sum::<f64>() / 1024.0;
                    prop_assert!((time - freq).abs() <= 1e-9 * time);
                }
            }

            #[test]
            fn round_trip_random(seed in 0u64..1000, len in 3000usize..6000) {
                let x = random_signal(len, seed);
                let cfg = StftConfig { drop_last_bin: false, ..Default::default() };
                let y = istft(&stft(&x, &cfg).unwrap()).unwrap();
                for i in 1024..len - 1024 {
                    prop_assert!((x[i] - y[i]).abs() <= 1e-6);
                }
            }
        }
    }
}
