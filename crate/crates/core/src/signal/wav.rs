use std::fs::File;
use std::io::{BufWriter, ErrorKind};
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::MultichannelWaveform;
use crate::error::{Error, Result};
use crate::util::atomic_write_path;

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        // hound reports short reads as `Other`
        hound::Error::IoError(e)
            if matches!(e.kind(), ErrorKind::UnexpectedEof | ErrorKind::Other) =>
        {
            Error::MalformedHeader {
                path: path.into(),
                reason: format!("truncated file: {e}"),
            }
        }
        hound::Error::IoError(e) => Error::io(path, e),
        hound::Error::FormatError(reason) => Error::MalformedHeader {
            path: path.into(),
            reason: reason.into(),
        },
        hound::Error::UnfinishedSample => Error::MalformedHeader {
            path: path.into(),
            reason: "data chunk ends mid-sample".into(),
        },
        other => Error::UnsupportedCodec {
            path: path.into(),
            reason: other.to_string(),
        },
    }
}

/// Reads a 16-bit PCM or 32-bit float WAV file. Integer samples are mapped
/// to `[-1, 1)` by division by 32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<MultichannelWaveform> {
    let path = path.as_ref();
    let reader = WavReader::open(path).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::MalformedHeader {
            path: path.into(),
            reason: "zero channels".into(),
        });
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>(),
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>(),
        (format, bits) => {
            return Err(Error::UnsupportedCodec {
                path: path.into(),
                reason: format!("{bits}-bit {format:?} samples"),
            })
        }
    }
    .map_err(|e| map_hound(path, e))?;
    if interleaved.is_empty() {
        return Err(Error::MalformedHeader {
            path: path.into(),
            reason: "no samples".into(),
        });
    }
    let frames = interleaved.len() / channels;
    let mut data = vec![Vec::with_capacity(frames); channels];
    for frame in interleaved.chunks_exact(channels) {
        for (c, &v) in data.iter_mut().zip(frame) {
            c.push(v);
        }
    }
    MultichannelWaveform::new(data, spec.sample_rate)
}

/// Writes 16-bit PCM with saturation. The file appears atomically.
pub fn write_wav(path: impl AsRef<Path>, wave: &MultichannelWaveform) -> Result<()> {
    let path = path.as_ref();
    let spec = WavSpec {
        channels: wave.num_channels() as u16,
        sample_rate: wave.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    atomic_write_path(path, |tmp| {
        let file = File::create(tmp).map_err(|e| Error::io(tmp, e))?;
        let mut writer =
            WavWriter::new(BufWriter::new(file), spec).map_err(|e| map_hound(tmp, e))?;
        for n in 0..wave.len() {
            for c in wave.channels() {
                let q = (c[n] * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                writer.write_sample(q).map_err(|e| map_hound(tmp, e))?;
            }
        }
        writer.finalize().map_err(|e| map_hound(tmp, e))
    })
}
