use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Bottleneck, ModelConfig, DEPTH};
use crate::autodiff::{checkpoint, ParamSet, RunningStats, Tensor};
use crate::error::{Error, Result};
use crate::util::atomic_write;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    Encoder,
    Bottleneck,
    Decoder,
    Head,
}

/// Shape and initialisation rule of one trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub component: Component,
    init: Init,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    /// Normal with standard deviation `1 / sqrt(fan_in)`.
    FanIn(usize),
    Zeros,
    Ones,
}

pub(crate) fn enc(k: usize, part: &str) -> String {
    format!("enc{k}.{part}")
}

pub(crate) fn dec(k: usize, part: &str) -> String {
    format!("dec{k}.{part}")
}

pub(crate) fn gnn(l: usize, part: &str) -> String {
    format!("gnn{l}.{part}")
}

/// Channels entering decoder stage `k` (previous output plus skip).
pub(crate) fn decoder_channels(config: &ModelConfig, k: usize) -> (usize, usize) {
    // the previous stage already has the width of the skip it meets
    let w = &config.encoder_widths;
    let out = if k + 1 < DEPTH {
        w[DEPTH - 2 - k]
    } else {
        config.latent_width()
    };
    (2 * w[DEPTH - 1 - k], out)
}

/// Every trainable tensor implied by `config`, in initialisation order.
pub fn param_specs(config: &ModelConfig) -> Result<Vec<ParamSpec>> {
    config.validate()?;
    let (kh, kw) = config.kernel;
    let mut specs = Vec::new();
    let mut push = |name: String, shape: Vec<usize>, component, init| {
        specs.push(ParamSpec {
            name,
            shape,
            component,
            init,
        })
    };
    let widths = &config.encoder_widths;
    let mut c_in = config.variant.planes();
    for (k, &c_out) in widths.iter().enumerate() {
        let fan = c_in * kh * kw;
        push(
            enc(k, "conv.weight"),
            vec![c_out, c_in, kh, kw],
            Component::Encoder,
            Init::FanIn(fan),
        );
        push(
            enc(k, "conv.bias"),
            vec![c_out],
            Component::Encoder,
            Init::Zeros,
        );
        push(
            enc(k, "bn.gamma"),
            vec![c_out],
            Component::Encoder,
            Init::Ones,
        );
        push(
            enc(k, "bn.beta"),
            vec![c_out],
            Component::Encoder,
            Init::Zeros,
        );
        c_in = c_out;
    }
    if config.bottleneck != Bottleneck::None {
        let d = config.node_features()?;
        for l in 0..config.gnn_layers {
            push(
                gnn(l, "weight"),
                vec![d, d],
                Component::Bottleneck,
                Init::FanIn(d),
            );
            if config.bottleneck == Bottleneck::Gat {
                push(
                    gnn(l, "attention"),
                    vec![2 * d],
                    Component::Bottleneck,
                    Init::FanIn(d),
                );
            }
        }
    }
    for k in 0..DEPTH {
        let (c_in, c_out) = decoder_channels(config, k);
        let fan = c_in * kh * kw;
        push(
            dec(k, "conv.weight"),
            vec![c_in, c_out, kh, kw],
            Component::Decoder,
            Init::FanIn(fan),
        );
        push(
            dec(k, "conv.bias"),
            vec![c_out],
            Component::Decoder,
            Init::Zeros,
        );
        push(
            dec(k, "bn.gamma"),
            vec![c_out],
            Component::Decoder,
            Init::Ones,
        );
        push(
            dec(k, "bn.beta"),
            vec![c_out],
            Component::Decoder,
            Init::Zeros,
        );
    }
    let head_in = config.num_channels * config.latent_width();
    push(
        "head.weight".into(),
        vec![2, head_in, 1, 1],
        Component::Head,
        Init::FanIn(head_in),
    );
    push("head.bias".into(), vec![2], Component::Head, Init::Zeros);
    Ok(specs)
}

/// Batch-norm layers and their channel counts.
pub(crate) fn norm_layers(config: &ModelConfig) -> Vec<(String, usize)> {
    let enc_layers = config
        .encoder_widths
        .iter()
        .enumerate()
        .map(|(k, &c)| (enc(k, "bn"), c));
    let dec_layers = (0..DEPTH).map(|k| (dec(k, "bn"), decoder_channels(config, k).1));
    enc_layers.chain(dec_layers).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCount {
    pub total: usize,
    pub encoder: usize,
    pub bottleneck: usize,
    pub decoder: usize,
    pub head: usize,
}

/// Trainable element counts; running statistics are excluded.
pub fn count_parameters(config: &ModelConfig) -> Result<ParameterCount> {
    let mut count = ParameterCount::default();
    for spec in param_specs(config)? {
        let n: usize = spec.shape.iter().product();
        count.total += n;
        *match spec.component {
            Component::Encoder => &mut count.encoder,
            Component::Bottleneck => &mut count.bottleneck,
            Component::Decoder => &mut count.decoder,
            Component::Head => &mut count.head,
        } += n;
    }
    Ok(count)
}

/// Trainable tensors plus batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub params: ParamSet,
    pub stats: BTreeMap<String, RunningStats>,
}

const MEAN_SUFFIX: &str = ".running_mean";
const VAR_SUFFIX: &str = ".running_var";

impl ModelParams {
    /// Seeded initialisation: fan-in scaled normal weights, zero biases,
    /// unit batch-norm scale.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamSet::new();
        for spec in param_specs(config)? {
            let t = match spec.init {
                Init::FanIn(fan) => Tensor::randn(spec.shape, 1.0 / (fan as f64).sqrt(), &mut rng),
                Init::Zeros => Tensor::zeros(spec.shape),
                Init::Ones => Tensor::ones(spec.shape),
            };
            params.insert(spec.name, t);
        }
        let stats = norm_layers(config)
            .into_iter()
            .map(|(name, c)| (name, RunningStats::new(c)))
            .collect();
        Ok(Self {
            config: config.clone(),
            params,
            stats,
        })
    }

    pub fn num_trainable(&self) -> usize {
        self.params.count()
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::MissingParameter(name.into()))
    }

    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_os_string();
        s.push(".json");
        PathBuf::from(s)
    }

    fn stat_tensors(&self) -> Result<Vec<(String, Tensor)>> {
        let mut out = Vec::new();
        for (name, s) in &self.stats {
            out.push((
                format!("{name}{MEAN_SUFFIX}"),
                Tensor::new([s.mean.len()], s.mean.clone())?,
            ));
            out.push((
                format!("{name}{VAR_SUFFIX}"),
                Tensor::new([s.var.len()], s.var.clone())?,
            ));
        }
        Ok(out)
    }

    /// Writes the tensor container to `path` and the configuration to
    /// `<path>.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let stats = self.stat_tensors()?;
        let all = self
            .params
            .iter()
            .chain(stats.iter().map(|(n, t)| (n.as_str(), t)));
        checkpoint::save(path, all)?;
        atomic_write(&Self::sidecar_path(path), self.config.to_json()?.as_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side = Self::sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let config = ModelConfig::from_json(&text)?;
        Self::from_tensors(config, checkpoint::load(path)?)
    }

    /// Assembles parameters from named tensors, checking the name set and
    /// every shape against `config`.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let mut by_name: BTreeMap<String, Tensor> = tensors.into_iter().collect();
        let mut params = ParamSet::new();
        for spec in param_specs(&config)? {
            let t = by_name
                .remove(&spec.name)
                .ok_or_else(|| Error::MissingParameter(spec.name.clone()))?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "`{}` has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
            params.insert(spec.name, t);
        }
        let mut stats = BTreeMap::new();
        for (name, c) in norm_layers(&config) {
            let mut take = |suffix: &str| -> Result<Vec<f64>> {
                let key = format!("{name}{suffix}");
                let t = by_name
                    .remove(&key)
                    .ok_or_else(|| Error::MissingParameter(key.clone()))?;
                if t.shape() != [c] {
                    return Err(Error::Checkpoint(format!(
                        "`{key}` has shape {:?}, expected [{c}]",
                        t.shape()
                    )));
                }
                Ok(t.into_data())
            };
            let mean = take(MEAN_SUFFIX)?;
            let var = take(VAR_SUFFIX)?;
            stats.insert(name, RunningStats { mean, var });
        }
        if let Some(extra) = by_name.keys().next() {
            return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
        }
        Ok(Self {
            config,
            params,
            stats,
        })
    }

    pub fn names(&self) -> BTreeSet<String> {
        self.params.names().map(String::from).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::Variant;

    #[test]
    fn variant_delta_is_first_layer_only() {
        let relunet = count_parameters(&ModelConfig::default()).unwrap();
        let unet = count_parameters(&ModelConfig {
            variant: Variant::Unet,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(relunet.total - unet.total, 2 * 16 * 4 * 3);
        assert_eq!(relunet.total - unet.total, 384);
        assert!((384.0 / unet.total as f64) < 0.01);
        assert_eq!(relunet.head, 770);
        assert_eq!(relunet.bottleneck, 0);
    }

    #[test]
    fn graph_bottleneck_counts() {
        let gcn = count_parameters(&ModelConfig {
            bottleneck: Bottleneck::Gcn,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(gcn.bottleneck, 2 * 1024 * 1024);
        let gat = count_parameters(&ModelConfig {
            bottleneck: Bottleneck::Gat,
            ..Default::default()
        })
        .unwrap();
        assert_eq!(gat.bottleneck, 2 * (1024 * 1024 + 2048));
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig::default();
        let a = ModelParams::init(&cfg).unwrap();
        let b = ModelParams::init(&cfg).unwrap();
        assert_eq!(a, b);
        let c = ModelParams::init(&ModelConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.params, c.params);
        assert_eq!(
            a.num_trainable(),
            count_parameters(&a.config).unwrap().total
        );
        assert!(a
            .tensor("enc0.conv.bias")
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let mut p = ModelParams::init(&ModelConfig {
            encoder_widths: vec![2; 6],
            ..Default::default()
        })
        .unwrap();
        p.stats.get_mut("dec3.bn").unwrap().mean[0] = 0.125;
        p.save(&path).unwrap();
        assert!(ModelParams::sidecar_path(&path).exists());
        let back = ModelParams::load(&path).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn missing_tensor_is_reported() {
        let cfg = ModelConfig {
            encoder_widths: vec![2; 6],
            ..Default::default()
        };
        let p = ModelParams::init(&cfg).unwrap();
        let tensors: Vec<(String, Tensor)> = p
            .params
            .iter()
            .filter(|(n, _)| *n != "head.bias")
            .map(|(n, t)| (n.to_string(), t.clone()))
            .chain(p.stat_tensors().unwrap())
            .collect();
        assert!(matches!(
            ModelParams::from_tensors(cfg, tensors),
            Err(Error::MissingParameter(n)) if n == "head.bias"
        ));
    }
}
