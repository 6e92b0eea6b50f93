use std::sync::Arc;

use super::config::{ChannelPolicy, ModelConfig};
use super::layers::{apply_mask_graph, stack_relative, ComplexMask};
use super::net::Network;
use super::params::ModelParams;
use crate::autodiff::{Graph, Mode, Tensor, Var};
use crate::error::{Error, Result};
use crate::signal::{peak_normalize, ComplexSpectrogram, MultichannelWaveform, Stft, StftConfig};

/// Magnitude floor inside the loss: `sqrt(re^2 + im^2 + MAG_EPS)`.
pub const MAG_EPS: f64 = 1e-12;

/// Brings `wave` to the trained channel count. Under
/// [`ChannelPolicy::Replicate`] missing channels are copies of the reference
/// (clamped to the last available channel).
pub fn conform_channels(
    wave: &MultichannelWaveform,
    config: &ModelConfig,
    policy: ChannelPolicy,
) -> Result<MultichannelWaveform> {
    let want = config.num_channels;
    let have = wave.num_channels();
    if have == want {
        return Ok(wave.clone());
    }
    if have > want || policy == ChannelPolicy::Strict {
        return Err(Error::ChannelCountMismatch {
            expected: want,
            actual: have,
        });
    }
    let source = config.reference_index.min(have - 1);
    let mut channels = wave.channels().to_vec();
    channels.extend((have..want).map(|_| wave.channel(source).to_vec()));
    MultichannelWaveform::new(channels, wave.sample_rate())
}

/// Network-ready tensors for a batch of multichannel segments.
pub struct PreparedBatch {
    /// `[B * M, P, F, T]` stacked input.
    pub input: Tensor,
    /// `[B, 2, F, T]` reference-channel spectrogram planes.
    pub reference: Tensor,
    /// Peak-normalisation factor of every item.
    pub peaks: Vec<f64>,
    pub len: usize,
}

pub fn prepare_batch(
    waves: &[&MultichannelWaveform],
    config: &ModelConfig,
    policy: ChannelPolicy,
    plan: &Stft,
) -> Result<PreparedBatch> {
    let first = waves.first().ok_or(Error::EmptyDataset)?;
    let len = first.len();
    let mut input = Vec::new();
    let mut reference = Vec::new();
    let mut peaks = Vec::with_capacity(waves.len());
    let mut grid = (0, 0);
    for wave in waves {
        if wave.len() != len {
            return Err(Error::shape(
                "batch",
                format!("segment lengths {} and {len} differ", wave.len()),
            ));
        }
        let wave = conform_channels(wave, config, policy)?;
        let (norm, peak) = peak_normalize(&wave)?;
        let specs = norm
            .channels()
            .iter()
            .map(|c| plan.analyze(c))
            .collect::<Result<Vec<_>>>()?;
        let z = stack_relative(&specs, config.reference_index, config.variant)?;
        input.extend_from_slice(z.data());
        let r = &specs[config.reference_index];
        reference.extend_from_slice(r.real());
        reference.extend_from_slice(r.imag());
        grid = (r.bins(), r.frames());
        peaks.push(peak);
    }
    let (f, t) = grid;
    let b = waves.len();
    Ok(PreparedBatch {
        input: Tensor::new(
            [b * config.num_channels, config.variant.planes(), f, t],
            input,
        )?,
        reference: Tensor::new([b, 2, f, t], reference)?,
        peaks,
        len,
    })
}

/// Graph nodes of one batched forward pass.
pub(crate) struct ForwardVars {
    pub mask: Var,
    pub estimate: Var,
    pub waveform: Var,
}

/// Mask, masked reference and resynthesised waveform, all at the
/// normalised scale.
pub(crate) fn forward_graph(
    g: &mut Graph,
    net: &mut Network<'_>,
    batch: &PreparedBatch,
    plan: &Arc<Stft>,
) -> Result<ForwardVars> {
    let input = g.constant(batch.input.clone());
    let reference = g.constant(batch.reference.clone());
    let mask = net.mask(g, input)?;
    let estimate = apply_mask_graph(g, mask, reference)?;
    let waveform = g.istft(estimate, plan, batch.len)?;
    Ok(ForwardVars {
        mask,
        estimate,
        waveform,
    })
}

fn magnitude(g: &mut Graph, spec: Var) -> Result<Var> {
    let sq = g.square(spec)?;
    let re = g.narrow(sq, 1, 0, 1)?;
    let im = g.narrow(sq, 1, 1, 1)?;
    let power = g.add(re, im)?;
    let power = g.add_scalar(power, MAG_EPS)?;
    g.sqrt(power)
}

/// Batch mean of `2 ||s_hat - s||_2 + || |STFT s_hat| - |STFT s| ||_2` for
/// `[B, N]` waveforms.
pub(crate) fn loss_graph(
    g: &mut Graph,
    estimate: Var,
    target: Var,
    plan: &Arc<Stft>,
) -> Result<Var> {
    if g.shape(estimate) != g.shape(target) {
        return Err(Error::shape(
            "loss",
            format!(
                "estimate {:?} vs target {:?}",
                g.shape(estimate),
                g.shape(target)
            ),
        ));
    }
    let b = g.shape(estimate)[0];
    let diff = g.sub(estimate, target)?;
    let se = g.stft(estimate, plan)?;
    let st = g.stft(target, plan)?;
    let me = magnitude(g, se)?;
    let mt = magnitude(g, st)?;
    let mdiff = g.sub(me, mt)?;
    let mut terms = Vec::with_capacity(b);
    for i in 0..b {
        let d = g.narrow(diff, 0, i, 1)?;
        let wave_term = g.l2_norm(d)?;
        let wave_term = g.scale(wave_term, 2.0)?;
        let m = g.narrow(mdiff, 0, i, 1)?;
        let mag_term = g.l2_norm(m)?;
        let item = g.add(wave_term, mag_term)?;
        terms.push(g.reshape(item, [1])?);
    }
    let stacked = g.concat(&terms, 0)?;
    g.mean(stacked)
}

/// Loss between two single-channel waveforms.
pub fn loss(estimate: &[f64], target: &[f64], stft: &StftConfig) -> Result<f64> {
    if estimate.len() != target.len() {
        return Err(Error::shape(
            "loss",
            format!("lengths {} and {} differ", estimate.len(), target.len()),
        ));
    }
    let plan = Arc::new(Stft::new(stft.clone())?);
    let mut g = Graph::new();
    let e = g.constant(Tensor::new([1, estimate.len()], estimate.to_vec())?);
    let t = g.constant(Tensor::new([1, target.len()], target.to_vec())?);
    let l = loss_graph(&mut g, e, t, &plan)?;
    Ok(g.data(l)[0])
}

/// Result of enhancing one multichannel segment.
#[derive(Clone, Debug)]
pub struct Enhanced {
    /// Enhanced reference channel at the input's scale.
    pub waveform: Vec<f64>,
    pub mask: ComplexMask,
    /// Masked reference spectrogram at the normalised scale.
    pub estimate: ComplexSpectrogram,
}

/// Inference pass with eval-mode batch norm. The input is peak-normalised
/// on the way in and the output is scaled back by the same factor.
pub fn forward(
    wave: &MultichannelWaveform,
    params: &ModelParams,
    policy: ChannelPolicy,
) -> Result<Enhanced> {
    let config = &params.config;
    let plan = Arc::new(Stft::new(config.stft.clone())?);
    let batch = prepare_batch(&[wave], config, policy, &plan)?;
    let mut stats = params.stats.clone();
    let mut g = Graph::new();
    let mut net = Network::bind_parts(
        &mut g,
        config,
        &params.params,
        &mut stats,
        Mode::Eval,
        false,
    );
    let out = forward_graph(&mut g, &mut net, &batch, &plan)?;
    let shape = g.shape(out.mask).to_vec();
    let (f, t) = (shape[2], shape[3]);
    let plane = f * t;
    let m = g.data(out.mask);
    let mask = ComplexMask {
        real: m[..plane].to_vec(),
        imag: m[plane..].to_vec(),
        bins: f,
        frames: t,
    };
    let e = g.data(out.estimate);
    let estimate = ComplexSpectrogram::from_parts(
        e[..plane].to_vec(),
        e[plane..].to_vec(),
        f,
        t,
        config.stft.clone(),
        batch.len,
    )?;
    let peak = batch.peaks[0];
    let waveform = g.data(out.waveform).iter().map(|v| v * peak).collect();
    Ok(Enhanced {
        waveform,
        mask,
        estimate,
    })
}
