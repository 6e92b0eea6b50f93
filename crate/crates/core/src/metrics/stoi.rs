use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

pub const STOI_RATE: u32 = 10_000;
const FRAME: usize = 256;
const HOP: usize = 128;
const NFFT: usize = 512;
const BANDS: usize = 15;
const MIN_FREQ: f64 = 150.0;
const SEGMENT: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;
/// Half-length of the resampling kernel (64 taps in total).
const SINC_HALF: usize = 32;

/// `np.hanning(len + 2)[1:-1]`.
fn inner_hanning(len: usize) -> Vec<f64> {
    (1..=len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / (len + 1) as f64).cos())
        .collect()
}

/// Windowed-sinc resampler with a 64-tap Blackman-windowed kernel whose
/// cutoff is the lower Nyquist frequency.
pub fn resample(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    if from == to {
        return x.to_vec();
    }
    let ratio = from as f64 / to as f64;
    let cutoff = (to as f64 / from as f64).min(1.0);
    let half = SINC_HALF as f64 * ratio.max(1.0);
    let out_len = (x.len() as f64 / ratio).ceil() as usize;
    let kernel = |u: f64| {
        if u.abs() >= half {
            return 0.0;
        }
        let s = if u == 0.0 {
            1.0
        } else {
            (PI * cutoff * u).sin() / (PI * cutoff * u)
        };
        let p = (u / half + 1.0) * 0.5;
        let w = 0.42 - 0.5 * (2.0 * PI * p).cos() + 0.08 * (4.0 * PI * p).cos();
        cutoff * s * w
    };
    (0..out_len)
        .map(|k| {
            let t = k as f64 * ratio;
            let lo = (t - half).ceil().max(0.0) as usize;
            let hi = ((t + half).floor() as usize).min(x.len().saturating_sub(1));
            (lo..=hi).map(|n| x[n] * kernel(t - n as f64)).sum()
        })
        .collect()
}

fn frames(x: &[f64], window: &[f64]) -> Vec<Vec<f64>> {
    let len = window.len();
    (0..x.len().saturating_sub(len))
        .step_by(HOP)
        .map(|i| {
            x[i..i + len]
                .iter()
                .zip(window)
                .map(|(a, w)| a * w)
                .collect()
        })
        .collect()
}

fn overlap_add(frames: &[&Vec<f64>]) -> Vec<f64> {
    let Some(first) = frames.first() else {
        return Vec::new();
    };
    let mut out = vec![0.0; (frames.len() - 1) * HOP + first.len()];
    for (i, f) in frames.iter().enumerate() {
        for (o, v) in out[i * HOP..].iter_mut().zip(f.iter()) {
            *o += v;
        }
    }
    out
}

/// Drops frames of both signals whose reference energy is more than
/// `DYN_RANGE_DB` below the loudest reference frame, then re-synthesises.
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = inner_hanning(FRAME);
    let xf = frames(x, &w);
    let yf = frames(y, &w);
    let energy: Vec<f64> = xf
        .iter()
        .map(|f| 20.0 * (f.iter().map(|v| v * v).sum::<f64>().sqrt() + f64::EPSILON).log10())
        .collect();
    let max = energy.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let keep: Vec<usize> = (0..xf.len())
        .filter(|&i| max - DYN_RANGE_DB - energy[i] < 0.0)
        .collect();
    let pick = |f: &[Vec<f64>]| overlap_add(&keep.iter().map(|&i| &f[i]).collect::<Vec<_>>());
    (pick(&xf), pick(&yf))
}

/// `|X|^2` for every frame, `frames x (NFFT/2 + 1)`.
fn power_spectrogram(x: &[f64], planner: &mut FftPlanner<f64>) -> Vec<Vec<f64>> {
    let fft = planner.plan_fft_forward(NFFT);
    frames(x, &inner_hanning(FRAME))
        .into_iter()
        .map(|f| {
            let mut buf: Vec<Complex64> = f.iter().map(|&v| Complex64::new(v, 0.0)).collect();
            buf.resize(NFFT, Complex64::new(0.0, 0.0));
            fft.process(&mut buf);
            buf[..NFFT / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
        })
        .collect()
}

/// Bin ranges `[lo, hi)` of the one-third-octave bands.
fn third_octave_bands() -> Vec<(usize, usize)> {
    let bins = NFFT / 2 + 1;
    let freq = |k: usize| k as f64 * STOI_RATE as f64 / NFFT as f64;
    let nearest = |target: f64| {
        (0..bins)
            .min_by(|&a, &b| {
                (freq(a) - target)
                    .powi(2)
                    .total_cmp(&(freq(b) - target).powi(2))
            })
            .expect("bins")
    };
    (0..BANDS)
        .map(|k| {
            let k = k as f64;
            let lo = MIN_FREQ * 2f64.powf((2.0 * k - 1.0) / 6.0);
            let hi = MIN_FREQ * 2f64.powf((2.0 * k + 1.0) / 6.0);
            (nearest(lo), nearest(hi))
        })
        .collect()
}

/// Band envelopes, `BANDS x frames`.
fn band_envelopes(power: &[Vec<f64>], bands: &[(usize, usize)]) -> Vec<Vec<f64>> {
    bands
        .iter()
        .map(|&(lo, hi)| {
            power
                .iter()
                .map(|p| p[lo..hi].iter().sum::<f64>().sqrt())
                .collect()
        })
        .collect()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Short-time objective intelligibility of `estimate` against `reference`
/// (the standard 10 kHz, 15-band, 384 ms formulation).
pub fn stoi(estimate: &[f64], reference: &[f64], sample_rate: u32) -> Result<f64> {
    if estimate.len() != reference.len() || estimate.is_empty() {
        return Err(Error::shape(
            "stoi",
            format!("lengths {} and {}", estimate.len(), reference.len()),
        ));
    }
    if sample_rate == 0 {
        return Err(Error::InvalidConfig("sample rate must be positive".into()));
    }
    if let Some(i) = estimate
        .iter()
        .chain(reference)
        .position(|v| !v.is_finite())
    {
        return Err(Error::NonFiniteSample(i % estimate.len()));
    }
    if reference.iter().all(|&v| v == 0.0) {
        return Err(Error::SilentInput);
    }
    let x = resample(reference, sample_rate, STOI_RATE);
    let y = resample(estimate, sample_rate, STOI_RATE);
    let (x, y) = remove_silent_frames(&x, &y);

    let mut planner = FftPlanner::new();
    let bands = third_octave_bands();
    let xb = band_envelopes(&power_spectrogram(&x, &mut planner), &bands);
    let yb = band_envelopes(&power_spectrogram(&y, &mut planner), &bands);
    let t = xb[0].len();
    if t < SEGMENT {
        return Err(Error::SignalTooShort {
            len: reference.len(),
            required: ((SEGMENT + 1) * HOP + FRAME) * sample_rate as usize / STOI_RATE as usize,
        });
    }

    let clip = 10f64.powf(-BETA_DB / 20.0);
    let eps = f64::EPSILON;
    let mut total = 0.0;
    for m in SEGMENT..=t {
        for (xr, yr) in xb.iter().zip(&yb) {
            let xs = &xr[m - SEGMENT..m];
            let ys = &yr[m - SEGMENT..m];
            let scale = norm(xs) / (norm(ys) + eps);
            let yp: Vec<f64> = ys
                .iter()
                .zip(xs)
                .map(|(y, x)| (y * scale).min(x * (1.0 + clip)))
                .collect();
            let center = |v: &[f64]| {
                let mean = v.iter().sum::<f64>() / v.len() as f64;
                let c: Vec<f64> = v.iter().map(|a| a - mean).collect();
                let n = norm(&c) + eps;
                c.into_iter().map(|a| a / n).collect::<Vec<_>>()
            };
            let (xc, yc) = (center(xs), center(&yp));
            total += xc.iter().zip(&yc).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    Ok(total / (BANDS * (t - SEGMENT + 1)) as f64)
}
