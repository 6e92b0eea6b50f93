use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::source::speech_like;
use super::{simulate_scene, NoiseKind, Scene};
use crate::error::{Error, Result};
use crate::model::TrainingItem;
use crate::signal::{read_wav, write_wav, MultichannelWaveform};
use crate::util::atomic_write;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Mixtures are scaled down to this peak before they are stored.
const MAX_PEAK: f64 = 0.95;

/// Sampling ranges for [`generate_dataset`]. Ranges are inclusive `[lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneTemplate {
    pub num_channels: usize,
    pub reference: usize,
    pub sample_rate: u32,
    pub duration: f64,
    pub snr_db: [f64; 2],
    pub max_delay: usize,
    pub gain: [f64; 2],
    pub noise_scale: [f64; 2],
    pub noise_kind: NoiseKind,
    /// Falls back to [`speech_like`] sources when no recordings are given.
    pub procedural: bool,
}

impl Default for SceneTemplate {
    fn default() -> Self {
        Self {
            num_channels: 6,
            reference: 4,
            sample_rate: 16000,
            duration: 1.2,
            snr_db: [0.0, 10.0],
            max_delay: 8,
            gain: [0.7, 1.0],
            noise_scale: [1.0, 1.0],
            noise_kind: NoiseKind::White,
            procedural: true,
        }
    }
}

impl SceneTemplate {
    pub fn segment_length(&self) -> usize {
        (self.duration * self.sample_rate as f64).round() as usize
    }

    fn validate(&self) -> Result<()> {
        let ordered = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if self.num_channels == 0 || self.reference >= self.num_channels {
            return Err(Error::InvalidConfig(format!(
                "reference {} invalid for {} channels",
                self.reference, self.num_channels
            )));
        }
        if !ordered(self.snr_db) || !ordered(self.gain) || !ordered(self.noise_scale) {
            return Err(Error::InvalidConfig(
                "template ranges must be finite with lo <= hi".into(),
            ));
        }
        if self.gain[0] <= 0.0 || self.noise_scale[0] < 0.0 {
            return Err(Error::InvalidConfig(
                "gains must be positive and noise scales nonnegative".into(),
            ));
        }
        if self.segment_length() == 0 {
            return Err(Error::InvalidConfig(
                "duration must cover at least one sample".into(),
            ));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// One generated pair with the parameters that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetItem {
    pub noisy: MultichannelWaveform,
    /// Reference-channel speech image `g_r s[n - n_r]`.
    pub clean: Vec<f64>,
    /// Reference-channel noise, so metrics can be split per component.
    pub noise: Vec<f64>,
    pub snr_db: f64,
    pub delays: Vec<usize>,
    pub gains: Vec<f64>,
    pub noise_scales: Vec<f64>,
    pub seed: u64,
}

impl DatasetItem {
    pub fn training_item(&self) -> TrainingItem {
        TrainingItem {
            noisy: self.noisy.clone(),
            clean: self.clean.clone(),
        }
    }
}

fn crop(source: &[f64], len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; len];
    if source.len() <= len {
        out[..source.len()].copy_from_slice(source);
    } else {
        let start = rng.random_range(0..=source.len() - len);
        out.copy_from_slice(&source[start..start + len]);
    }
    out
}

/// Seeded dataset of `count` scenes drawn from `template`. Sources are
/// random crops of `sources`, or procedural when `sources` is empty.
pub fn generate_dataset(
    sources: &[Vec<f64>],
    template: &SceneTemplate,
    count: usize,
    seed: u64,
) -> Result<Vec<DatasetItem>> {
    template.validate()?;
    if count == 0 {
        return Err(Error::InvalidConfig(
            "dataset count must be at least 1".into(),
        ));
    }
    if sources.is_empty() && !template.procedural {
        return Err(Error::EmptyDataset);
    }
    let len = template.segment_length();
    let m = template.num_channels;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let mut items = Vec::with_capacity(count);
    for _ in 0..count {
        let item_seed = master.next_u64();
        let mut rng = ChaCha8Rng::seed_from_u64(item_seed);
        let clean = if sources.is_empty() {
            speech_like(len, template.sample_rate, rng.next_u64())
        } else {
            let k = rng.random_range(0..sources.len());
            crop(&sources[k], len, &mut rng)
        };
        let snr_db = uniform(&mut rng, template.snr_db);
        let delays: Vec<usize> = (0..m)
            .map(|_| rng.random_range(0..=template.max_delay))
            .collect();
        let gains: Vec<f64> = (0..m).map(|_| uniform(&mut rng, template.gain)).collect();
        let noise_scales: Vec<f64> = (0..m)
            .map(|_| uniform(&mut rng, template.noise_scale))
            .collect();
        let scene = Scene {
            clean,
            sample_rate: template.sample_rate,
            gains: gains.clone(),
            delays: delays.clone(),
            noise_kind: template.noise_kind.clone(),
            noise_scales: noise_scales.clone(),
            snr_db: Some(snr_db),
            reference: template.reference,
            seed: rng.next_u64(),
        };
        let mut out = simulate_scene(&scene)?;
        let peak = out.mixture.peak();
        if peak > MAX_PEAK {
            out = out.scaled(MAX_PEAK / peak);
        }
        let r = template.reference;
        items.push(DatasetItem {
            clean: out.images.channel(r).to_vec(),
            noise: out.noise.channel(r).to_vec(),
            noisy: out.mixture,
            snr_db,
            delays,
            gains,
            noise_scales,
            seed: item_seed,
        });
    }
    Ok(items)
}

/// One manifest row. Paths are relative to the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub noisy_wav_path: PathBuf,
    pub clean_wav_path: PathBuf,
    pub snr_db: f64,
    pub delays: Vec<usize>,
    pub gains: Vec<f64>,
    pub seed: u64,
}

/// Writes `item_NNNN_noisy.wav` / `item_NNNN_clean.wav` pairs and
/// [`MANIFEST_FILE`] into `dir`, returning the manifest path.
pub fn write_dataset(items: &[DatasetItem], dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let noisy = PathBuf::from(format!("item_{i:04}_noisy.wav"));
        let clean = PathBuf::from(format!("item_{i:04}_clean.wav"));
        write_wav(dir.join(&noisy), &item.noisy)?;
        write_wav(
            dir.join(&clean),
            &MultichannelWaveform::mono(item.clean.clone(), item.noisy.sample_rate())?,
        )?;
        entries.push(ManifestEntry {
            noisy_wav_path: noisy,
            clean_wav_path: clean,
            snr_db: item.snr_db,
            delays: item.delays.clone(),
            gains: item.gains.clone(),
            seed: item.seed,
        });
    }
    let path = dir.join(MANIFEST_FILE);
    let mut json = serde_json::to_string_pretty(&entries)?;
    json.push('\n');
    atomic_write(&path, json.as_bytes())?;
    Ok(path)
}

/// Parses a manifest and resolves its paths against the manifest's
/// directory.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut entries: Vec<ManifestEntry> = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    for e in &mut entries {
        e.noisy_wav_path = base.join(&e.noisy_wav_path);
        e.clean_wav_path = base.join(&e.clean_wav_path);
    }
    Ok(entries)
}

impl ManifestEntry {
    /// Loads the pair; the clean file's first channel is the target.
    pub fn load(&self) -> Result<TrainingItem> {
        let noisy = read_wav(&self.noisy_wav_path)?;
        let clean = read_wav(&self.clean_wav_path)?;
        if clean.len() != noisy.len() {
            return Err(Error::shape(
                "manifest",
                format!(
                    "{} has {} samples, {} has {}",
                    self.clean_wav_path.display(),
                    clean.len(),
                    self.noisy_wav_path.display(),
                    noisy.len()
                ),
            ));
        }
        Ok(TrainingItem {
            noisy,
            clean: clean.channel(0).to_vec(),
        })
    }
}
