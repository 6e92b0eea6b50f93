//! Classical array processing: cross-correlation and cross-spectral density,
//! GCC-PHAT delay estimation, steering vectors, noise covariance and the
//! MVDR beamformer.
//!
//! Delays follow one sign convention throughout: a positive delay for
//! channel `m` means `m` lags the reference channel.

mod array;
mod correlation;

pub use array::{
    delay_and_sum_weights, estimate_noise_covariance, mvdr_weights, steering_vector,
    NoiseCovariance, SteeringVector, Weights, DIAGONAL_LOADING, LOADING_FLOOR, MVDR_FLOOR,
};
pub use correlation::{
    cross_correlation, cross_spectral_density, gcc_phat, linear_fft_length, Correlation, GccPhat,
    PHAT_FLOOR,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{ComplexSpectrogram, MultichannelWaveform, Stft, StftConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamformConfig {
    pub stft: StftConfig,
    pub reference: usize,
    /// Leading noise-only duration in seconds used for the covariance.
    pub noise_prefix: f64,
    /// GCC-PHAT search range in samples.
    pub max_lag: usize,
}

impl Default for BeamformConfig {
    fn default() -> Self {
        Self {
            stft: StftConfig::default(),
            reference: 0,
            noise_prefix: 0.3,
            max_lag: 32,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Mvdr,
    DelayAndSum,
}

/// Output of [`beamform`].
#[derive(Clone, Debug)]
pub struct Beamformed {
    pub waveform: Vec<f64>,
    /// Per-channel delay relative to the reference, in samples.
    pub delays: Vec<f64>,
    pub weights: Weights,
}

/// Frames whose whole window lies inside the first `prefix` seconds.
pub fn noise_frames(stft: &StftConfig, len: usize, sample_rate: u32, prefix: f64) -> Vec<usize> {
    let samples = ((prefix * sample_rate as f64).floor().max(0.0) as usize).min(len);
    stft.num_frames(samples)
        .map(|t| (0..t).collect())
        .unwrap_or_default()
}

/// GCC-PHAT delay of every channel against `reference`, in samples.
pub fn estimate_delays(
    wave: &MultichannelWaveform,
    reference: usize,
    max_lag: usize,
) -> Result<Vec<i64>> {
    check_reference(wave, reference)?;
    let r = wave.channel(reference);
    wave.channels()
        .iter()
        .enumerate()
        .map(|(m, x)| {
            if m == reference {
                Ok(0)
            } else {
                gcc_phat(r, x, max_lag).map(|g| g.delay)
            }
        })
        .collect()
}

fn check_reference(wave: &MultichannelWaveform, reference: usize) -> Result<()> {
    if reference >= wave.num_channels() {
        return Err(Error::InvalidConfig(format!(
            "reference channel {reference} out of range for {} channels",
            wave.num_channels()
        )));
    }
    Ok(())
}

/// Steering vector relative to the reference channel from optional gains
/// and delays (seconds). Missing gains are 1; missing delays are estimated
/// by GCC-PHAT.
pub fn relative_steering(
    wave: &MultichannelWaveform,
    config: &BeamformConfig,
    gains: Option<&[f64]>,
    delays: Option<&[f64]>,
) -> Result<(SteeringVector, Vec<f64>)> {
    check_reference(wave, config.reference)?;
    let m = wave.num_channels();
    let fs = wave.sample_rate() as f64;
    let gains = gains.map(<[f64]>::to_vec).unwrap_or_else(|| vec![1.0; m]);
    let delays = match delays {
        Some(d) => d.to_vec(),
        None => estimate_delays(wave, config.reference, config.max_lag)?
            .into_iter()
            .map(|d| d as f64 / fs)
            .collect(),
    };
    if gains.len() != m || delays.len() != m {
        return Err(Error::ChannelCountMismatch {
            expected: m,
            actual: if gains.len() != m {
                gains.len()
            } else {
                delays.len()
            },
        });
    }
    let g_ref = gains[config.reference];
    if g_ref == 0.0 || !g_ref.is_finite() {
        return Err(Error::InvalidConfig(
            "reference gain must be nonzero".into(),
        ));
    }
    let gains: Vec<f64> = gains.iter().map(|g| g / g_ref).collect();
    let delays: Vec<f64> = delays
        .iter()
        .map(|d| d - delays[config.reference])
        .collect();
    let h = steering_vector(&gains, &delays, fs, config.stft.fft_length)?
        .truncated(config.stft.num_bins());
    Ok((h, delays.iter().map(|d| d * fs).collect()))
}

fn analyze_all(wave: &MultichannelWaveform, plan: &Stft) -> Result<Vec<ComplexSpectrogram>> {
    wave.channels().iter().map(|c| plan.analyze(c)).collect()
}

/// STFT, weights from the noise prefix and steering vector, per-bin
/// `w^H x`, iSTFT. The output estimates the reference channel's source
/// image.
pub fn beamform(
    wave: &MultichannelWaveform,
    config: &BeamformConfig,
    gains: Option<&[f64]>,
    delays: Option<&[f64]>,
    method: Method,
) -> Result<Beamformed> {
    let plan = Stft::new(config.stft.clone())?;
    let (h, delays) = relative_steering(wave, config, gains, delays)?;
    let specs = analyze_all(wave, &plan)?;
    let weights = match method {
        Method::DelayAndSum => delay_and_sum_weights(&h),
        Method::Mvdr => {
            let m = wave.num_channels();
            let frames = noise_frames(
                &config.stft,
                wave.len(),
                wave.sample_rate(),
                config.noise_prefix,
            );
            if frames.len() < m {
                return Err(Error::InvalidConfig(format!(
                    "noise prefix of {} s covers {} frames, need at least {m}",
                    config.noise_prefix,
                    frames.len()
                )));
            }
            let r = estimate_noise_covariance(&specs, &frames)?;
            mvdr_weights(&r, &h)?
        }
    };
    let waveform = plan.synthesize(&weights.apply(&specs)?)?;
    Ok(Beamformed {
        waveform,
        delays,
        weights,
    })
}

pub fn mvdr_enhance(
    wave: &MultichannelWaveform,
    config: &BeamformConfig,
    gains: Option<&[f64]>,
    delays: Option<&[f64]>,
) -> Result<Beamformed> {
    beamform(wave, config, gains, delays, Method::Mvdr)
}

/// Output SNR in dB of fixed `weights` applied separately to the speech
/// images and the noise of a scene, measured on the interior
/// `[window_length, N - window_length)` where overlap-add is complete.
pub fn output_snr(
    weights: &Weights,
    images: &MultichannelWaveform,
    noise: &MultichannelWaveform,
    stft: &StftConfig,
) -> Result<f64> {
    let plan = Stft::new(stft.clone())?;
    let s = plan.synthesize(&weights.apply(&analyze_all(images, &plan)?)?)?;
    let n = plan.synthesize(&weights.apply(&analyze_all(noise, &plan)?)?)?;
    let w = stft.window_length;
    let interior = w..s.len().saturating_sub(w).max(w);
    let energy = |x: &[f64]| x[interior.clone()].iter().map(|v| v * v).sum::<f64>();
    Ok(10.0 * (energy(&s) / energy(&n)).log10())
}
