//! Finite-difference check of the full training loss against every
//! trainable parameter of a tiny two-channel model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use relunet::model::{batch_gradients, Bottleneck, ModelConfig, ModelParams, TrainingItem};
use relunet::signal::{MultichannelWaveform, StftConfig};

pub const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-3;

pub fn tiny(m: usize, bottleneck: Bottleneck) -> ModelConfig {
    ModelConfig {
        encoder_widths: vec![2; 6],
        num_channels: m,
        reference_index: 0,
        bottleneck,
        stft: StftConfig {
            fft_length: 128,
            hop_length: 32,
            window_length: 128,
            ..Default::default()
        },
        segment_length: 128 + 32 * 15,
        ..Default::default()
    }
}

pub fn wave(m: usize, n: usize, seed: u64) -> MultichannelWaveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let channels = (0..m)
        .map(|_| {
            (0..n)
                .map(|_| {
                    let v: f64 = StandardNormal.sample(&mut rng);
                    0.3 * v
                })
                .collect()
        })
        .collect();
    MultichannelWaveform::new(channels, 16000).unwrap()
}

/// Items whose target is half the reference channel.
pub fn items(config: &ModelConfig, count: usize, seed: u64) -> Vec<TrainingItem> {
    (0..count as u64)
        .map(|i| {
            let noisy = wave(config.num_channels, config.segment_length, seed + i);
            let clean = noisy
                .channel(config.reference_index)
                .iter()
                .map(|v| 0.5 * v)
                .collect();
            TrainingItem { noisy, clean }
        })
        .collect()
}

/// Worst relative error over every trainable entry, and the number of
/// entries checked.
pub fn worst_relative_error() -> (f64, usize) {
    let config = tiny(2, Bottleneck::None);
    let data = items(&config, 2, 40);
    let init = ModelParams::init(&config).unwrap();
    let (_, grads) = batch_gradients(&mut init.clone(), &data).unwrap();
    let eval = |p: &ModelParams| {
        batch_gradients(&mut p.clone(), &data)
            .map(|(l, _)| l)
            .unwrap()
    };
    // conv biases ahead of training-mode batch norm have an exactly zero
    // gradient; their difference quotient is round-off at the loss scale
    let floor = 1e-6 * grads.values().flatten().fold(0.0f64, |m, g| m.max(g.abs()));
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (name, g) in &grads {
        for (j, &a) in g.iter().enumerate() {
            let mut p = init.clone();
            let orig = p.tensor(name).unwrap().data()[j];
            p.params.get_mut(name).unwrap().data_mut()[j] = orig + STEP;
            let up = eval(&p);
            p.params.get_mut(name).unwrap().data_mut()[j] = orig - STEP;
            let down = eval(&p);
            let numeric = (up - down) / (2.0 * STEP);
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(floor));
            checked += 1;
        }
    }
    assert_eq!(checked, init.num_trainable());
    (worst, checked)
}
