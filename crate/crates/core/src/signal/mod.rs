//! Waveform container, normalisation, segmentation and the STFT front end.

mod stft;
mod wav;

pub use stft::{
    hann_periodic, istft, stft, ComplexSpectrogram, Stft, StftConfig, WindowKind, WOLA_FLOOR,
};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};

/// Default segment duration used for training and inference.
pub const SEGMENT_SECONDS: f64 = 1.2;

/// `M` equally long channels of real audio at a common sample rate.
#[derive(Clone, Debug, PartialEq)]
pub struct MultichannelWaveform {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl MultichannelWaveform {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::shape("waveform", "at least one channel required"));
        }
        let n = channels[0].len();
        if n == 0 {
            return Err(Error::shape("waveform", "channels must be non-empty"));
        }
        if let Some((m, c)) = channels.iter().enumerate().find(|(_, c)| c.len() != n) {
            return Err(Error::shape(
                "waveform",
                format!("channel {m} has {} samples, channel 0 has {n}", c.len()),
            ));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel(&self, m: usize) -> &[f64] {
        &self.channels[m]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    pub fn duration(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.channels
            .iter()
            .flatten()
            .fold(0.0, |m: f64, v| m.max(v.abs()))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|v| v * factor).collect())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Samples `[start, start + len)` of every channel, zero-filled past the end.
    pub fn slice_padded(&self, start: usize, len: usize) -> Self {
        let channels = self
            .channels
            .iter()
            .map(|c| {
                let mut out = vec![0.0; len];
                if start < c.len() {
                    let end = (start + len).min(c.len());
                    out[..end - start].copy_from_slice(&c[start..end]);
                }
                out
            })
            .collect();
        Self {
            channels,
            sample_rate: self.sample_rate,
        }
    }
}

/// Divides every channel by the global absolute peak and returns that peak
/// so outputs can be mapped back to the original level.
pub fn peak_normalize(wave: &MultichannelWaveform) -> Result<(MultichannelWaveform, f64)> {
    let peak = wave.peak();
    if peak == 0.0 {
        return Err(Error::SilentInput);
    }
    if !peak.is_finite() {
        return Err(Error::NonFinite("peak_normalize input".into()));
    }
    let channels = wave
        .channels
        .iter()
        .map(|c| c.iter().map(|v| v / peak).collect())
        .collect();
    Ok((
        MultichannelWaveform {
            channels,
            sample_rate: wave.sample_rate,
        },
        peak,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TailMode {
    /// Discard a trailing partial segment (training).
    Drop,
    /// Zero-pad a trailing partial segment to full length (inference).
    Pad,
}

/// Splits into consecutive, non-overlapping segments of
/// `round(duration * sample_rate)` samples.
pub fn segment(
    wave: &MultichannelWaveform,
    duration: f64,
    mode: TailMode,
) -> Result<Vec<MultichannelWaveform>> {
    let seg_len = (duration * wave.sample_rate() as f64).round() as usize;
    if seg_len == 0 {
        return Err(Error::InvalidConfig(format!(
            "segment duration {duration} s is empty"
        )));
    }
    let full = wave.len() / seg_len;
    let count = match mode {
        TailMode::Drop => full,
        TailMode::Pad => wave.len().div_ceil(seg_len),
    };
    Ok((0..count)
        .map(|i| wave.slice_padded(i * seg_len, seg_len))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(channels: Vec<Vec<f64>>) -> MultichannelWaveform {
        MultichannelWaveform::new(channels, 16000).unwrap()
    }

    #[test]
    fn peak_normalize_examples() {
        let (out, scale) = peak_normalize(&wave(vec![vec![0.5, 0.0], vec![-2.0, 1.0]])).unwrap();
        assert_eq!(scale, 2.0);
        assert_eq!(out.channels(), &[vec![0.25, 0.0], vec![-1.0, 0.5]]);

        let w = wave(vec![vec![1.0, -0.3], vec![0.2, 0.9]]);
        let (out, scale) = peak_normalize(&w).unwrap();
        assert_eq!(scale, 1.0);
        assert_eq!(out, w);

        let (out, scale) = peak_normalize(&wave(vec![vec![0.1]])).unwrap();
        assert_eq!(scale, 0.1);
        assert_eq!(out.channel(0), &[1.0]);

        assert!(matches!(
            peak_normalize(&wave(vec![vec![0.0; 4]])),
            Err(Error::SilentInput)
        ));
    }

    #[test]
    fn segmentation_tail_policies() {
        let n = |s: f64| (s * 16000.0) as usize;
        let segs = segment(&wave(vec![vec![1.0; n(2.4)]]), 1.2, TailMode::Drop).unwrap();
        assert_eq!(segs.len(), 2);
        assert!(segs.iter().all(|s| s.len() == 19200));

        let w = wave(vec![vec![1.0; n(1.3)]]);
        assert_eq!(segment(&w, 1.2, TailMode::Drop).unwrap().len(), 1);
        let padded = segment(&w, 1.2, TailMode::Pad).unwrap();
        assert_eq!(padded.len(), 2);
        assert_eq!(
            padded[1].channel(0).iter().filter(|&&v| v == 0.0).count(),
            17600
        );

        let short = wave(vec![vec![1.0; n(0.5)]]);
        assert!(segment(&short, 1.2, TailMode::Drop).unwrap().is_empty());
        let padded = segment(&short, 1.2, TailMode::Pad).unwrap();
        assert_eq!(padded.len(), 1);
        assert_eq!(padded[0].len(), 19200);
    }

    #[test]
    fn rejects_ragged_channels() {
        assert!(MultichannelWaveform::new(vec![vec![0.0; 3], vec![0.0; 4]], 16000).is_err());
        assert!(MultichannelWaveform::new(vec![], 16000).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn normalized_peak_is_one(data in proptest::collection::vec(-5.0f64..5.0, 1..64)) {
                prop_assume!(data.iter().any(|&v| v != 0.0));
                let (out, _) = peak_normalize(&wave(vec![data])).unwrap();
                prop_assert_eq!(out.peak(), 1.0);
            }
        }
    }
}
