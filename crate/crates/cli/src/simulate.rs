use std::path::{Path, PathBuf};

use relunet::scenesim::{generate_dataset, write_dataset};
use relunet::signal::read_wav;

use crate::config::{CliError, CliResult, RunConfig};
use crate::logging::info;

/// Writes `count` seeded scenes and their manifest into `out_dir`. Source
/// recordings contribute their first channel; without any, sources are
/// procedural.
pub fn run(
    config: &RunConfig,
    count: usize,
    seed: u64,
    sources: &[PathBuf],
    out_dir: &Path,
) -> CliResult<()> {
    let template = &config.simulate;
    let mut clips = Vec::with_capacity(sources.len());
    for path in sources {
        let wave = read_wav(path)?;
        if wave.sample_rate() != template.sample_rate {
            return Err(CliError::Config(format!(
                "{} is sampled at {} Hz, the scene template at {} Hz",
                path.display(),
                wave.sample_rate(),
                template.sample_rate
            )));
        }
        clips.push(wave.channel(0).to_vec());
    }
    let items = generate_dataset(&clips, template, count, seed)?;
    let manifest = write_dataset(&items, out_dir)?;
    let mean_snr = items.iter().map(|i| i.snr_db).sum::<f64>() / items.len().max(1) as f64;
    info!(
        "event=simulate count={} channels={} seed={seed} mean_snr_db={mean_snr:.3} manifest={}",
        items.len(),
        template.num_channels,
        manifest.display()
    );
    println!("{}", manifest.display());
    Ok(())
}
