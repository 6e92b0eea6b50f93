use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

/// Silence at the start of every procedural source, in seconds. It leaves a
/// noise-only prefix for covariance estimation.
pub const LEADING_SILENCE: f64 = 0.3;

/// Peak amplitude of a procedural source.
pub const SOURCE_PEAK: f64 = 0.5;

/// Voiced, speech-like test signal: 3 to 5 harmonics of a slowly wobbling
/// fundamental under a syllable-rate envelope, after [`LEADING_SILENCE`].
pub fn speech_like(len: usize, sample_rate: u32, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fs = sample_rate as f64;
    let f0 = rng.random_range(100.0..220.0);
    let vibrato_rate = rng.random_range(3.0..6.0);
    let vibrato_depth = rng.random_range(0.01..0.04);
    let syllable_rate = rng.random_range(2.5..5.0);
    let syllable_phase = rng.random_range(0.0..2.0 * PI);
    let harmonics: Vec<(f64, f64)> = (1..=rng.random_range(3..=5))
        .map(|k| (k as f64, rng.random_range(0.5..1.0) / k as f64))
        .collect();
    let start = ((LEADING_SILENCE * fs) as usize).min(len);

    let mut phase = 0.0;
    let mut out = vec![0.0; len];
    for (n, y) in out.iter_mut().enumerate().skip(start) {
        let t = (n - start) as f64 / fs;
        let f = f0 * (1.0 + vibrato_depth * (2.0 * PI * vibrato_rate * t).sin());
        phase += 2.0 * PI * f / fs;
        let envelope =
            (0.5 - 0.5 * (2.0 * PI * syllable_rate * t + syllable_phase).cos()).powf(1.5);
        let onset = (t / 0.02).min(1.0);
        *y = onset
            * envelope
            * harmonics
                .iter()
                .map(|(k, a)| a * (k * phase).sin())
                .sum::<f64>();
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= SOURCE_PEAK / peak);
    }
    out
}

pub(crate) fn white(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// White noise shaped by `1/sqrt(k)` in amplitude (a `1/f` power
/// spectrum), zero mean and unit variance.
pub(crate) fn pink(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut buf: Vec<Complex64> = white(len, rng)
        .into_iter()
        .map(|v| Complex64::new(v, 0.0))
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(len).process(&mut buf);
    buf[0] = Complex64::new(0.0, 0.0);
    for k in 1..len {
        let freq = k.min(len - k) as f64;
        buf[k] /= freq.sqrt();
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let x: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = x.iter().sum::<f64>() / len as f64;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len as f64;
    let scale = if var > 0.0 { 1.0 / var.sqrt() } else { 0.0 };
    x.iter().map(|v| (v - mean) * scale).collect()
}
