//! `relunet`: simulate data, train and run the enhancement models, apply
//! classical beamformers and score the results.

mod config;
mod enhance;
mod evaluate;
mod logging;
mod simulate;
mod spectrogram;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use relunet::beamform::Method;
use relunet::metrics::Metric;
use relunet::model::{Bottleneck, ChannelPolicy, Variant};

use crate::config::{CliResult, RunConfig};
use crate::logging::emit;

#[derive(Parser, Debug)]
#[command(
    name = "relunet",
    version,
    about = "Multichannel speech enhancement toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArg {
    /// JSON run configuration with optional stft/model/train/simulate sections
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded synthetic dataset and its manifest
    Simulate {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
        /// Clean recordings to crop sources from (procedural when omitted)
        #[arg(long, num_args = 1..)]
        sources: Vec<PathBuf>,
    },
    /// Train a mask estimator on a manifest
    Train {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Held-out manifest used to pick the best parameters
        #[arg(long)]
        validation: Option<PathBuf>,
        /// History CSV path; defaults to `<out>.history.csv`
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long, value_enum)]
        variant: Option<VariantArg>,
        #[arg(long, value_enum)]
        bottleneck: Option<BottleneckArg>,
        /// Stop after this many optimiser steps
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Enhance a multichannel recording with a trained model
    Enhance {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = PolicyArg::Strict)]
        channel_policy: PolicyArg,
    },
    /// MVDR or delay-and-sum beamforming
    Beamform {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Leading noise-only duration in seconds
        #[arg(long, default_value_t = 0.3)]
        noise_prefix: f64,
        #[arg(long, default_value_t = 0)]
        reference: usize,
        /// Per-channel delays in samples; estimated by GCC-PHAT when omitted
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        delays: Option<Vec<f64>>,
        /// Per-channel gains; 1 when omitted
        #[arg(long, value_delimiter = ',')]
        gains: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value_t = MethodArg::Mvdr)]
        method: MethodArg,
        /// GCC-PHAT search range in samples
        #[arg(long, default_value_t = 32)]
        max_lag: usize,
    },
    /// Score estimate/reference pairs listed in a JSON file
    Evaluate {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "si_sdr,stoi", value_parser = parse_metric)]
        metrics: Vec<Metric>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export a log-magnitude spectrogram as CSV and PGM
    Spectrogram {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long = "in")]
        input: PathBuf,
        /// Output prefix; `.csv` and `.pgm` are appended
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        channel: usize,
    },
    /// Table of noisy, model and MVDR scores over a manifest
    Compare {
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, num_args = 0..)]
        models: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "si_sdr,stoi", value_parser = parse_metric)]
        metrics: Vec<Metric>,
        /// Reference channel; defaults to the first model's
        #[arg(long)]
        reference: Option<usize>,
        #[arg(long, default_value_t = 0.3)]
        noise_prefix: f64,
        #[arg(long, value_enum, default_value_t = PolicyArg::Strict)]
        channel_policy: PolicyArg,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    Unet,
    Relunet,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BottleneckArg {
    None,
    Gcn,
    Gat,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum PolicyArg {
    Strict,
    Replicate,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Mvdr,
    Das,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Unet => Variant::Unet,
            VariantArg::Relunet => Variant::Relunet,
        }
    }
}

impl From<BottleneckArg> for Bottleneck {
    fn from(b: BottleneckArg) -> Self {
        match b {
            BottleneckArg::None => Bottleneck::None,
            BottleneckArg::Gcn => Bottleneck::Gcn,
            BottleneckArg::Gat => Bottleneck::Gat,
        }
    }
}

impl From<PolicyArg> for ChannelPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Strict => ChannelPolicy::Strict,
            PolicyArg::Replicate => ChannelPolicy::Replicate,
        }
    }
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Mvdr => Method::Mvdr,
            MethodArg::Das => Method::DelayAndSum,
        }
    }
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse().map_err(|e: relunet::Error| e.to_string())
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Simulate {
            config,
            count,
            seed,
            out_dir,
            sources,
        } => {
            let config = RunConfig::load(config.config.as_deref())?;
            simulate::run(&config, count, seed, &sources, &out_dir)
        }
        Command::Train {
            config,
            manifest,
            out,
            validation,
            history,
            variant,
            bottleneck,
            steps,
            seed,
        } => {
            let config = RunConfig::load(config.config.as_deref())?;
            let options = train::TrainOptions {
                manifest,
                validation,
                out,
                history,
                variant: variant.map(Into::into),
                bottleneck: bottleneck.map(Into::into),
                steps,
                seed,
            };
            train::run(&config, &options)
        }
        Command::Enhance {
            model,
            input,
            out,
            channel_policy,
        } => enhance::run_enhance(&model, &input, &out, channel_policy.into()),
        Command::Beamform {
            config,
            input,
            out,
            noise_prefix,
            reference,
            delays,
            gains,
            method,
            max_lag,
        } => {
            let config = RunConfig::load(config.config.as_deref())?;
            let options = enhance::BeamformOptions {
                input,
                output: out,
                noise_prefix,
                reference,
                delays,
                gains,
                method: method.into(),
                max_lag,
            };
            enhance::run_beamform(&config, &options)
        }
        Command::Evaluate {
            pairs,
            metrics,
            out,
        } => evaluate::run_evaluate(&pairs, &metrics, &out),
        Command::Spectrogram {
            config,
            input,
            out,
            channel,
        } => {
            let config = RunConfig::load(config.config.as_deref())?;
            spectrogram::run(&config, &input, &out, channel)
        }
        Command::Compare {
            config,
            manifest,
            models,
            out,
            metrics,
            reference,
            noise_prefix,
            channel_policy,
        } => {
            let config = RunConfig::load(config.config.as_deref())?;
            let options = evaluate::CompareOptions {
                manifest,
                models,
                out,
                metrics,
                reference,
                noise_prefix,
                policy: channel_policy.into(),
            };
            evaluate::run_compare(&config, &options)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            emit("ERROR", format_args!("code={code} message=\"{e}\""));
            ExitCode::from(code)
        }
    }
}
