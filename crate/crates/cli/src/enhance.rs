use std::path::{Path, PathBuf};

use relunet::beamform::{beamform, BeamformConfig, Method};
use relunet::model::{forward, ChannelPolicy, ModelParams};
use relunet::signal::{read_wav, segment, write_wav, MultichannelWaveform, TailMode};

use crate::config::{CliError, CliResult, RunConfig};
use crate::logging::info;

/// Runs the model over consecutive segments of the trained length (the
/// last one zero-padded) and joins the outputs. Silent segments stay
/// silent.
pub fn enhance_waveform(
    wave: &MultichannelWaveform,
    params: &ModelParams,
    policy: ChannelPolicy,
) -> relunet::Result<Vec<f64>> {
    let seg_len = params.config.segment_length;
    let duration = seg_len as f64 / wave.sample_rate() as f64;
    let mut out = Vec::with_capacity(wave.len() + seg_len);
    for piece in segment(wave, duration, TailMode::Pad)? {
        match forward(&piece, params, policy) {
            Ok(e) => out.extend(e.waveform),
            Err(relunet::Error::SilentInput) => out.extend(std::iter::repeat_n(0.0, piece.len())),
            Err(e) => return Err(e),
        }
    }
    out.truncate(wave.len());
    Ok(out)
}

pub fn run_enhance(
    model: &Path,
    input: &Path,
    output: &Path,
    policy: ChannelPolicy,
) -> CliResult<()> {
    let params = ModelParams::load(model)?;
    let wave = read_wav(input)?;
    info!(
        "event=enhance input={} channels={} samples={} model_channels={} policy={policy:?}",
        input.display(),
        wave.num_channels(),
        wave.len(),
        params.config.num_channels
    );
    let enhanced = enhance_waveform(&wave, &params, policy)?;
    write_wav(
        output,
        &MultichannelWaveform::mono(enhanced, wave.sample_rate())?,
    )?;
    info!("event=enhance_done output={}", output.display());
    Ok(())
}

pub struct BeamformOptions {
    pub input: PathBuf,
    pub output: PathBuf,
    pub noise_prefix: f64,
    pub reference: usize,
    /// Samples, one per channel.
    pub delays: Option<Vec<f64>>,
    pub gains: Option<Vec<f64>>,
    pub method: Method,
    pub max_lag: usize,
}

pub fn run_beamform(config: &RunConfig, options: &BeamformOptions) -> CliResult<()> {
    let wave = read_wav(&options.input)?;
    let fs = wave.sample_rate() as f64;
    let bf = BeamformConfig {
        stft: config.stft().clone(),
        reference: options.reference,
        noise_prefix: options.noise_prefix,
        max_lag: options.max_lag,
    };
    let delays_sec: Option<Vec<f64>> = options
        .delays
        .as_ref()
        .map(|d| d.iter().map(|v| v / fs).collect());
    if let Some(d) = &options.delays {
        if d.len() != wave.num_channels() {
            return Err(CliError::Config(format!(
                "{} delays for {} channels",
                d.len(),
                wave.num_channels()
            )));
        }
    }
    let out = beamform(
        &wave,
        &bf,
        options.gains.as_deref(),
        delays_sec.as_deref(),
        options.method,
    )?;
    let source = if options.delays.is_some() {
        "given"
    } else {
        "gcc_phat"
    };
    let taus: Vec<String> = out.delays.iter().map(|d| format!("{d}")).collect();
    info!(
        "event=delays source={source} reference={} tau_samples={}",
        options.reference,
        taus.join(",")
    );
    write_wav(
        &options.output,
        &MultichannelWaveform::mono(out.waveform, wave.sample_rate())?,
    )?;
    info!(
        "event=beamform_done method={:?} output={}",
        options.method,
        options.output.display()
    );
    Ok(())
}
