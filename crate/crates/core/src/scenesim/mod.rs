//! Synthetic multichannel scenes `x_m[n] = g_m s[n - n_m] + beta nu_m[n]`
//! with exact ground truth, and seeded datasets built from them.
//!
//! The SNR is defined at the reference channel. Gains are constant and
//! delays are whole samples.

mod dataset;
mod source;

pub use dataset::{
    generate_dataset, read_manifest, write_dataset, DatasetItem, ManifestEntry, SceneTemplate,
    MANIFEST_FILE,
};
pub use source::{speech_like, LEADING_SILENCE, SOURCE_PEAK};

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{read_wav, MultichannelWaveform};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Pink,
    /// Channels of a recorded noise file, cycled over microphones and
    /// looped from a seeded offset.
    WavFile(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub clean: Vec<f64>,
    pub sample_rate: u32,
    pub gains: Vec<f64>,
    /// Whole-sample delays, one per microphone.
    pub delays: Vec<usize>,
    pub noise_kind: NoiseKind,
    /// Relative noise level per microphone; empty means all 1.
    pub noise_scales: Vec<f64>,
    /// `None` (or `+inf`) gives a noiseless scene.
    pub snr_db: Option<f64>,
    pub reference: usize,
    pub seed: u64,
}

/// Mixture and its exact decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedScene {
    pub mixture: MultichannelWaveform,
    /// `g_m s[n - n_m]` per microphone.
    pub images: MultichannelWaveform,
    /// `beta nu_m[n]` per microphone.
    pub noise: MultichannelWaveform,
}

impl SimulatedScene {
    pub fn reference_snr_db(&self, reference: usize) -> f64 {
        let e = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
        10.0 * (e(self.images.channel(reference)) / e(self.noise.channel(reference))).log10()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            mixture: self.mixture.scaled(factor),
            images: self.images.scaled(factor),
            noise: self.noise.scaled(factor),
        }
    }
}

/// `s` delayed by `d` samples with zeros shifted in, same length.
pub fn shift(s: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; s.len()];
    if d < s.len() {
        out[d..].copy_from_slice(&s[..s.len() - d]);
    }
    out
}

impl Scene {
    pub fn num_channels(&self) -> usize {
        self.gains.len()
    }

    fn validate(&self) -> Result<()> {
        let m = self.gains.len();
        let n = self.clean.len();
        if m == 0 || self.delays.len() != m {
            return Err(Error::InvalidConfig(format!(
                "scene has {m} gains and {} delays",
                self.delays.len()
            )));
        }
        if !self.noise_scales.is_empty() && self.noise_scales.len() != m {
            return Err(Error::InvalidConfig(format!(
                "{} noise scales for {m} microphones",
                self.noise_scales.len()
            )));
        }
        if self.reference >= m {
            return Err(Error::InvalidConfig(format!(
                "reference {} out of range for {m} microphones",
                self.reference
            )));
        }
        let max_delay = self.delays.iter().copied().max().unwrap_or(0);
        if max_delay * 10 >= n {
            return Err(Error::InvalidConfig(format!(
                "delay {max_delay} is not below 10% of the {n}-sample signal"
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if let Some(i) = self.clean.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample(i));
        }
        if self.clean.iter().all(|&v| v == 0.0) {
            return Err(Error::SilentInput);
        }
        Ok(())
    }

    fn noise_scale(&self, m: usize) -> f64 {
        self.noise_scales.get(m).copied().unwrap_or(1.0)
    }

    fn raw_noise(&self, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
        let (m, n) = (self.num_channels(), self.clean.len());
        match &self.noise_kind {
            NoiseKind::White => Ok((0..m).map(|_| source::white(n, rng)).collect()),
            NoiseKind::Pink => Ok((0..m).map(|_| source::pink(n, rng)).collect()),
            NoiseKind::WavFile(path) => {
                let rec = read_wav(path)?;
                let len = rec.len();
                Ok((0..m)
                    .map(|mic| {
                        let c = rec.channel(mic % rec.num_channels());
                        let offset = rng.random_range(0..len);
                        (0..n).map(|i| c[(offset + i) % len]).collect()
                    })
                    .collect())
            }
        }
    }
}

/// Renders a scene. The noise is scaled by one factor `beta` so that the
/// reference channel meets `snr_db`.
pub fn simulate_scene(scene: &Scene) -> Result<SimulatedScene> {
    scene.validate()?;
    let fs = scene.sample_rate;
    let images: Vec<Vec<f64>> = scene
        .gains
        .iter()
        .zip(&scene.delays)
        .map(|(&g, &d)| shift(&scene.clean, d).into_iter().map(|v| g * v).collect())
        .collect();
    let n = scene.clean.len();
    let m = scene.num_channels();
    let images = MultichannelWaveform::new(images, fs)?;

    let snr = scene.snr_db.filter(|s| *s != f64::INFINITY);
    let noise = match snr {
        None => vec![vec![0.0; n]; m],
        Some(snr) => {
            if !snr.is_finite() {
                return Err(Error::InvalidConfig(format!(
                    "snr {snr} dB is not reachable"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
            let raw: Vec<Vec<f64>> = scene
                .raw_noise(&mut rng)?
                .into_iter()
                .enumerate()
                .map(|(mic, c)| {
                    let s = scene.noise_scale(mic);
                    c.into_iter().map(|v| s * v).collect()
                })
                .collect();
            let e = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>();
            let image_energy = e(images.channel(scene.reference));
            let noise_energy = e(&raw[scene.reference]);
            if image_energy == 0.0 {
                return Err(Error::SilentInput);
            }
            if noise_energy == 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "snr {snr} dB is not reachable: reference noise is silent"
                )));
            }
            let beta = (image_energy / (noise_energy * 10f64.powf(snr / 10.0))).sqrt();
            raw.into_iter()
                .map(|c| c.into_iter().map(|v| beta * v).collect())
                .collect()
        }
    };
    let mixture = images
        .channels()
        .iter()
        .zip(&noise)
        .map(|(x, v)| x.iter().zip(v).map(|(a, b)| a + b).collect())
        .collect();
    Ok(SimulatedScene {
        mixture: MultichannelWaveform::new(mixture, fs)?,
        images,
        noise: MultichannelWaveform::new(noise, fs)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamform::gcc_phat;
    use proptest::prelude::*;

    fn scene(gains: Vec<f64>, delays: Vec<usize>, snr: Option<f64>, seed: u64) -> Scene {
        Scene {
            clean: speech_like(19200, 16000, seed),
            sample_rate: 16000,
            gains,
            delays,
            noise_kind: NoiseKind::White,
            noise_scales: vec![],
            snr_db: snr,
            reference: 0,
            seed,
        }
    }

    #[test]
    fn noiseless_unit_scene_copies_source() {
        let s = scene(vec![1.0; 3], vec![0; 3], None, 1);
        let out = simulate_scene(&s).unwrap();
        for c in out.mixture.channels() {
            assert_eq!(c, &s.clean);
        }
    }

    #[test]
    fn zero_db_is_met_at_reference() {
        for kind in [NoiseKind::White, NoiseKind::Pink] {
            let mut s = scene(vec![0.8, 1.0], vec![0, 3], Some(0.0), 2);
            s.noise_kind = kind;
            let out = simulate_scene(&s).unwrap();
            assert!(out.reference_snr_db(0).abs() < 0.1);
        }
    }

    #[test]
    fn delayed_copy_is_found_by_gcc() {
        let out = simulate_scene(&scene(vec![1.0, 1.0], vec![0, 5], None, 3)).unwrap();
        let g = gcc_phat(out.mixture.channel(0), out.mixture.channel(1), 16).unwrap();
        assert_eq!(g.delay, 5);
    }

    #[test]
    fn invalid_scenes_rejected() {
        let mut s = scene(vec![1.0], vec![0], Some(0.0), 4);
        s.clean = vec![0.0; 19200];
        assert!(matches!(simulate_scene(&s), Err(Error::SilentInput)));
        let mut s = scene(vec![1.0, 1.0], vec![0, 0], Some(5.0), 4);
        s.noise_scales = vec![0.0, 1.0];
        assert!(matches!(simulate_scene(&s), Err(Error::InvalidConfig(_))));
        assert!(simulate_scene(&scene(vec![1.0, 1.0], vec![0, 5000], None, 4)).is_err());
        assert!(simulate_scene(&scene(vec![1.0, 1.0], vec![0], None, 4)).is_err());
    }

    #[test]
    fn wav_noise_is_looped_per_channel() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("noise.wav");
        let rec: Vec<f64> = (0..1000)
            .map(|i| ((i * 7919) % 200) as f64 / 400.0 - 0.25)
            .collect();
        crate::signal::write_wav(&path, &MultichannelWaveform::mono(rec, 16000).unwrap()).unwrap();
        let mut s = scene(vec![1.0, 1.0], vec![0, 0], Some(3.0), 5);
        s.noise_kind = NoiseKind::WavFile(path);
        let out = simulate_scene(&s).unwrap();
        assert!((out.reference_snr_db(0) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn white_noise_channels_uncorrelated() {
        let out = simulate_scene(&scene(vec![1.0; 4], vec![0; 4], Some(0.0), 6)).unwrap();
        for i in 0..4 {
            for j in i + 1..4 {
                let (a, b) = (out.noise.channel(i), out.noise.channel(j));
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!((dot / (na * nb)).abs() < 0.05);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn noiseless_decomposition_is_exact(seed in 0u64..1000, g in 0.1f64..2.0, d in 0usize..100) {
            let out = simulate_scene(&scene(vec![1.0, g], vec![0, d], None, seed)).unwrap();
            for m in 0..2 {
                let residual: Vec<f64> = out.mixture.channel(m).iter().zip(out.images.channel(m)).map(|(x, s)| x - s).collect();
                prop_assert_eq!(&residual, &out.noise.channel(m).to_vec());
            }
            let s = &out.images;
            prop_assert_eq!(s.channel(1).to_vec(), shift(&speech_like(19200, 16000, seed), d).iter().map(|v| g * v).collect::<Vec<_>>());
        }

        #[test]
        fn snr_target_met(seed in 0u64..1000, snr in -5.0f64..20.0) {
            let out = simulate_scene(&scene(vec![1.0, 0.7], vec![2, 0], Some(snr), seed)).unwrap();
            prop_assert!((out.reference_snr_db(0) - snr).abs() < 0.1);
        }

        #[test]
        fn seeded_determinism(seed in 0u64..1000) {
            let s = scene(vec![1.0, 0.9], vec![0, 4], Some(5.0), seed);
            prop_assert_eq!(simulate_scene(&s).unwrap(), simulate_scene(&s).unwrap());
        }
    }
}
