use std::path::{Path, PathBuf};

use relunet::signal::{read_wav, ComplexSpectrogram, Stft};
use relunet::util::atomic_write;

use crate::config::{CliError, CliResult, RunConfig};
use crate::logging::info;

/// Added to the magnitude before the logarithm.
pub const LOG_FLOOR: f64 = 1e-10;

/// `20 log10(|X| + 1e-10)`, bin-major.
pub fn log_magnitude(spec: &ComplexSpectrogram) -> Vec<f64> {
    spec.real()
        .iter()
        .zip(spec.imag())
        .map(|(re, im)| 20.0 * (re.hypot(*im) + LOG_FLOOR).log10())
        .collect()
}

/// One line per frequency bin, one column per frame.
pub fn to_csv(values: &[f64], bins: usize, frames: usize) -> String {
    let mut out = String::with_capacity(values.len() * 12);
    for f in 0..bins {
        let row: Vec<String> = values[f * frames..(f + 1) * frames]
            .iter()
            .map(|v| format!("{v:.6}"))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Binary 8-bit greymap, min-max scaled, lowest frequency on the bottom
/// row. A flat grid maps to all zeros.
pub fn to_pgm(values: &[f64], bins: usize, frames: usize) -> Vec<u8> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    let mut out = format!("P5\n{frames} {bins}\n255\n").into_bytes();
    for row in 0..bins {
        let f = bins - 1 - row;
        out.extend(values[f * frames..(f + 1) * frames].iter().map(|&v| {
            if span > 0.0 && span.is_finite() {
                (255.0 * (v - lo) / span).round() as u8
            } else {
                0
            }
        }));
    }
    out
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn run(config: &RunConfig, input: &Path, prefix: &Path, channel: usize) -> CliResult<()> {
    let wave = read_wav(input)?;
    if channel >= wave.num_channels() {
        return Err(CliError::Config(format!(
            "channel {channel} requested from a {}-channel file",
            wave.num_channels()
        )));
    }
    let spec = Stft::new(config.stft().clone())?.analyze(wave.channel(channel))?;
    let (bins, frames) = (spec.bins(), spec.frames());
    let values = log_magnitude(&spec);
    let csv = with_suffix(prefix, ".csv");
    let pgm = with_suffix(prefix, ".pgm");
    atomic_write(&csv, to_csv(&values, bins, frames).as_bytes())?;
    atomic_write(&pgm, &to_pgm(&values, bins, frames))?;
    info!(
        "event=spectrogram bins={bins} frames={frames} csv={} pgm={}",
        csv.display(),
        pgm.display()
    );
    Ok(())
}
