use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ChannelPolicy, ModelConfig};
use super::net::Network;
use super::params::ModelParams;
use super::pipeline::{forward_graph, loss_graph, prepare_batch, PreparedBatch};
use crate::autodiff::{adam_step, AdamState, Graph, Mode, Tensor};
use crate::error::{Error, Result};
use crate::signal::{MultichannelWaveform, Stft};

/// A noisy multichannel segment and the clean reference-channel signal.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingItem {
    pub noisy: MultichannelWaveform,
    pub clean: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Stops after this many optimiser steps when set, regardless of epochs.
    pub max_steps: Option<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Validation loss is computed every this many steps and after the last.
    pub validation_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            max_steps: None,
            batch_size: 32,
            learning_rate: 1e-4,
            validation_interval: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.validation_interval == 0 {
            return Err(Error::InvalidConfig(
                "batch_size and validation_interval must be positive".into(),
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(
                "learning_rate must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRow {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

impl History {
    /// `step,train_loss,val_loss`; the last column is empty on steps
    /// without validation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,train_loss,val_loss\n");
        for r in &self.rows {
            let val = r.val_loss.map(|v| format!("{v:.10e}")).unwrap_or_default();
            out.push_str(&format!("{},{:.10e},{}\n", r.step, r.train_loss, val));
        }
        out
    }

    pub fn best_validation(&self) -> Option<(usize, f64)> {
        self.rows
            .iter()
            .filter_map(|r| r.val_loss.map(|v| (r.step, v)))
            .fold(None, |best, (s, v)| match best {
                Some((_, b)) if b <= v => best,
                _ => Some((s, v)),
            })
    }
}

/// Precomputed network input for one item.
struct Cached {
    input: Vec<f64>,
    reference: Vec<f64>,
    target: Vec<f64>,
}

struct Cache {
    items: Vec<Cached>,
    input_item: Vec<usize>,
    reference_item: Vec<usize>,
    len: usize,
}

impl Cache {
    fn build(items: &[TrainingItem], config: &ModelConfig, plan: &Stft) -> Result<Self> {
        let mut cached = Vec::with_capacity(items.len());
        let mut shapes = None;
        for item in items {
            if item.clean.len() != item.noisy.len() {
                return Err(Error::shape(
                    "train",
                    format!(
                        "clean length {} vs noisy length {}",
                        item.clean.len(),
                        item.noisy.len()
                    ),
                ));
            }
            let p = prepare_batch(&[&item.noisy], config, ChannelPolicy::Strict, plan)?;
            let shape = (
                p.input.shape().to_vec(),
                p.reference.shape().to_vec(),
                p.len,
            );
            match &shapes {
                None => shapes = Some(shape),
                Some(s) if *s != shape => {
                    return Err(Error::shape(
                        "train",
                        "all items must share one segment length",
                    ))
                }
                _ => {}
            }
            let scale = 1.0 / p.peaks[0];
            cached.push(Cached {
                input: p.input.into_data(),
                reference: p.reference.into_data(),
                target: item.clean.iter().map(|v| v * scale).collect(),
            });
        }
        let (input_item, reference_item, len) = shapes.ok_or(Error::EmptyDataset)?;
        Ok(Self {
            items: cached,
            input_item,
            reference_item,
            len,
        })
    }

    fn batch(&self, indices: &[usize]) -> Result<(PreparedBatch, Tensor)> {
        let b = indices.len();
        let cat = |f: fn(&Cached) -> &Vec<f64>| {
            indices
                .iter()
                .flat_map(|&i| f(&self.items[i]).iter().copied())
                .collect()
        };
        let mut input_shape = self.input_item.clone();
        input_shape[0] *= b;
        let mut reference_shape = self.reference_item.clone();
        reference_shape[0] *= b;
        let batch = PreparedBatch {
            input: Tensor::new(input_shape, cat(|c| &c.input))?,
            reference: Tensor::new(reference_shape, cat(|c| &c.reference))?,
            peaks: vec![1.0; b],
            len: self.len,
        };
        let target = Tensor::new([b, self.len], cat(|c| &c.target))?;
        Ok((batch, target))
    }
}

fn batch_loss(
    params: &mut ModelParams,
    cache: &Cache,
    indices: &[usize],
    plan: &Arc<Stft>,
    mode: Mode,
    trainable: bool,
) -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
    let (batch, target) = cache.batch(indices)?;
    let mut g = Graph::new();
    let ModelParams {
        config,
        params,
        stats,
    } = params;
    let mut net = Network::bind_parts(&mut g, config, params, stats, mode, trainable);
    let out = forward_graph(&mut g, &mut net, &batch, plan)?;
    let vars = net.vars().clone();
    let target = g.constant(target);
    let loss = loss_graph(&mut g, out.waveform, target, plan)?;
    let value = g.data(loss)[0];
    let mut grads = BTreeMap::new();
    if trainable {
        g.backward(loss)?;
        for (name, v) in vars {
            if let Some(grad) = g.grad(v) {
                grads.insert(name, grad.to_vec());
            }
        }
    }
    Ok((value, grads))
}

fn validation_loss(
    params: &mut ModelParams,
    cache: &Cache,
    batch: usize,
    plan: &Arc<Stft>,
) -> Result<f64> {
    let n = cache.items.len();
    let mut total = 0.0;
    let indices: Vec<usize> = (0..n).collect();
    for chunk in indices.chunks(batch) {
        let (l, _) = batch_loss(params, cache, chunk, plan, Mode::Eval, false)?;
        total += l * chunk.len() as f64;
    }
    Ok(total / n as f64)
}

/// Training-mode loss on `items` as one batch, with the gradient of every
/// trainable parameter. Running statistics of `params` are updated.
pub fn batch_gradients(
    params: &mut ModelParams,
    items: &[TrainingItem],
) -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
    let plan = Arc::new(Stft::new(params.config.stft.clone())?);
    let cache = Cache::build(items, &params.config, &plan)?;
    let indices: Vec<usize> = (0..items.len()).collect();
    batch_loss(params, &cache, &indices, &plan, Mode::Train, true)
}

/// Mini-batch Adam training. Returns the parameters with the lowest
/// validation loss (the final ones when `validation` is empty) together
/// with the per-step history.
pub fn train(
    dataset: &[TrainingItem],
    validation: &[TrainingItem],
    model: &ModelConfig,
    options: &TrainConfig,
) -> Result<(ModelParams, History)> {
    train_with(dataset, validation, model, options, |_| {})
}

/// [`train`] with a callback invoked after every recorded step.
pub fn train_with(
    dataset: &[TrainingItem],
    validation: &[TrainingItem],
    model: &ModelConfig,
    options: &TrainConfig,
    mut on_step: impl FnMut(&HistoryRow),
) -> Result<(ModelParams, History)> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    model.validate()?;
    options.validate()?;
    let plan = Arc::new(Stft::new(model.stft.clone())?);
    let train_cache = Cache::build(dataset, model, &plan)?;
    let val_cache = if validation.is_empty() {
        None
    } else {
        Some(Cache::build(validation, model, &plan)?)
    };

    let mut params = ModelParams::init(model)?;
    let mut adam = AdamState::new(options.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed ^ 0x5eed_0f5a);
    let per_epoch = dataset.len().div_ceil(options.batch_size);
    let total = options.max_steps.unwrap_or(options.epochs * per_epoch);
    let mut history = History::default();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    let mut step = 0;
    'epochs: while step < total {
        order.shuffle(&mut rng);
        for chunk in order.chunks(options.batch_size) {
            if step == total {
                break 'epochs;
            }
            step += 1;
            let (loss, grads) =
                batch_loss(&mut params, &train_cache, chunk, &plan, Mode::Train, true).map_err(
                    |e| match e {
                        Error::NonFinite(_) => Error::Diverged {
                            step,
                            loss: f64::NAN,
                        },
                        other => other,
                    },
                )?;
            if !loss.is_finite() {
                return Err(Error::Diverged { step, loss });
            }
            adam_step(&mut params.params, &grads, &mut adam)?;
            let mut row = HistoryRow {
                step,
                train_loss: loss,
                val_loss: None,
            };
            if let Some(cache) = &val_cache {
                if step % options.validation_interval == 0 || step == total {
                    let v = validation_loss(&mut params, cache, options.batch_size, &plan)?;
                    if !v.is_finite() {
                        return Err(Error::Diverged { step, loss: v });
                    }
                    row.val_loss = Some(v);
                    if best.as_ref().is_none_or(|(b, _)| v < *b) {
                        best = Some((v, params.clone()));
                    }
                }
            }
            on_step(&row);
            history.rows.push(row);
        }
    }
    let params = best.map(|(_, p)| p).unwrap_or(params);
    Ok((params, history))
}
