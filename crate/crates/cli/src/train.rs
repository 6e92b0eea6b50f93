use std::path::{Path, PathBuf};

use relunet::model::{
    count_parameters, train_with, Bottleneck, ModelConfig, TrainingItem, Variant,
};
use relunet::scenesim::read_manifest;
use relunet::util::atomic_write;
use serde::Serialize;

use crate::config::{CliError, CliResult, RunConfig};
use crate::logging::info;

pub struct TrainOptions {
    pub manifest: PathBuf,
    pub validation: Option<PathBuf>,
    pub out: PathBuf,
    pub history: Option<PathBuf>,
    pub variant: Option<Variant>,
    pub bottleneck: Option<Bottleneck>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct Summary<'a> {
    checkpoint: &'a Path,
    history: &'a Path,
    variant: Variant,
    bottleneck: Bottleneck,
    parameters: usize,
    steps: usize,
    initial_train_loss: f64,
    final_train_loss: f64,
    best_step: Option<usize>,
    best_val_loss: Option<f64>,
}

pub fn load_items(manifest: &Path, model: &ModelConfig) -> CliResult<Vec<TrainingItem>> {
    let items = read_manifest(manifest)?
        .iter()
        .map(|e| e.load())
        .collect::<relunet::Result<Vec<_>>>()?;
    if let Some(item) = items.iter().find(|i| i.noisy.len() != model.segment_length) {
        return Err(CliError::Config(format!(
            "{} holds {}-sample segments but model.segment_length is {}",
            manifest.display(),
            item.noisy.len(),
            model.segment_length
        )));
    }
    Ok(items)
}

/// `<checkpoint>.history.csv` unless given explicitly.
fn history_path(out: &Path, explicit: Option<&Path>) -> PathBuf {
    explicit.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut s = out.as_os_str().to_os_string();
        s.push(".history.csv");
        PathBuf::from(s)
    })
}

pub fn run(config: &RunConfig, options: &TrainOptions) -> CliResult<()> {
    let mut model = config.model.clone();
    if let Some(v) = options.variant {
        model.variant = v;
    }
    if let Some(b) = options.bottleneck {
        model.bottleneck = b;
    }
    if let Some(seed) = options.seed {
        model.seed = seed;
    }
    model
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut train = config.train.clone();
    if options.steps.is_some() {
        train.max_steps = options.steps;
    }

    let dataset = load_items(&options.manifest, &model)?;
    let validation = match &options.validation {
        Some(p) => load_items(p, &model)?,
        None => Vec::new(),
    };
    let count = count_parameters(&model)?;
    info!(
        "event=model variant={:?} bottleneck={:?} channels={} parameters={} encoder={} bottleneck_params={} decoder={} head={}",
        model.variant,
        model.bottleneck,
        model.num_channels,
        count.total,
        count.encoder,
        count.bottleneck,
        count.decoder,
        count.head
    );
    info!(
        "event=train_start items={} validation_items={} batch_size={} learning_rate={}",
        dataset.len(),
        validation.len(),
        train.batch_size,
        train.learning_rate
    );
    let interval = train.validation_interval;
    let (params, history) = train_with(&dataset, &validation, &model, &train, |row| {
        if row.step == 1 || row.step % interval == 0 {
            match row.val_loss {
                Some(v) => info!(
                    "event=step step={} train_loss={:.6e} val_loss={v:.6e}",
                    row.step, row.train_loss
                ),
                None => info!(
                    "event=step step={} train_loss={:.6e}",
                    row.step, row.train_loss
                ),
            }
        }
    })?;

    params.save(&options.out)?;
    let history_file = history_path(&options.out, options.history.as_deref());
    atomic_write(&history_file, history.to_csv().as_bytes())?;
    let best = history.best_validation();
    let summary = Summary {
        checkpoint: &options.out,
        history: &history_file,
        variant: model.variant,
        bottleneck: model.bottleneck,
        parameters: count.total,
        steps: history.rows.len(),
        initial_train_loss: history.rows.first().map_or(f64::NAN, |r| r.train_loss),
        final_train_loss: history.rows.last().map_or(f64::NAN, |r| r.train_loss),
        best_step: best.map(|b| b.0),
        best_val_loss: best.map(|b| b.1),
    };
    info!(
        "event=train_done checkpoint={} history={}",
        options.out.display(),
        history_file.display()
    );
    println!(
        "{}",
        serde_json::to_string(&summary).map_err(relunet::Error::from)?
    );
    Ok(())
}
