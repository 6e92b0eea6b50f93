use std::collections::BTreeMap;

use super::config::{Bottleneck, ModelConfig, DEPTH};
use super::layers::{fully_connected, gat_layer, gcn_layer};
use super::params::{dec, enc, gnn, ModelParams};
use crate::autodiff::{conv_output_size, Graph, Mode, ParamSet, RunningStats, Var};
use crate::error::{Error, Result};

/// Encoder activations kept for the skip connections.
pub struct Encoded {
    /// Output of every encoder stage; the last one is the latent.
    pub activations: Vec<Var>,
    /// Spatial sizes, input grid first.
    pub ledger: Vec<(usize, usize)>,
}

impl Encoded {
    pub fn latent(&self) -> Var {
        self.activations[DEPTH - 1]
    }
}

/// Model parameters recorded on a graph, plus the running statistics the
/// batch-norm layers read (eval) or update (train).
pub struct Network<'a> {
    config: &'a ModelConfig,
    vars: BTreeMap<String, Var>,
    stats: &'a mut BTreeMap<String, RunningStats>,
    mode: Mode,
}

impl<'a> Network<'a> {
    /// Records every parameter on `g`, as trainable leaves when `trainable`.
    pub fn bind(g: &mut Graph, params: &'a mut ModelParams, mode: Mode, trainable: bool) -> Self {
        let ModelParams {
            config,
            params,
            stats,
        } = params;
        Self::bind_parts(g, config, params, stats, mode, trainable)
    }

    pub fn bind_parts(
        g: &mut Graph,
        config: &'a ModelConfig,
        params: &ParamSet,
        stats: &'a mut BTreeMap<String, RunningStats>,
        mode: Mode,
        trainable: bool,
    ) -> Self {
        let vars = params
            .iter()
            .map(|(name, t)| {
                let v = if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                };
                (name.to_string(), v)
            })
            .collect();
        Self {
            config,
            vars,
            stats,
            mode,
        }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParameter(name.into()))
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    fn norm_selu(&mut self, g: &mut Graph, x: Var, layer: String) -> Result<Var> {
        let gamma = self.var(&format!("{layer}.gamma"))?;
        let beta = self.var(&format!("{layer}.beta"))?;
        let stats = self
            .stats
            .get_mut(&layer)
            .ok_or_else(|| Error::MissingParameter(layer.clone()))?;
        let y = g.batch_norm2d(x, gamma, beta, stats, self.mode)?;
        g.selu(y)
    }

    /// Six conv, batch-norm, SELU stages over a `[N, P, F, T]` input, where
    /// `N` folds items and channels together so every channel shares weights.
    pub fn encode(&mut self, g: &mut Graph, input: Var) -> Result<Encoded> {
        let shape = g.shape(input).to_vec();
        let &[_, planes, f, t] = shape.as_slice() else {
            return Err(Error::shape(
                "encoder",
                format!("input must be rank 4, got {shape:?}"),
            ));
        };
        if planes != self.config.variant.planes() {
            return Err(Error::shape(
                "encoder",
                format!(
                    "{planes} input planes, {:?} expects {}",
                    self.config.variant,
                    self.config.variant.planes()
                ),
            ));
        }
        let mut ledger = vec![(f, t)];
        let mut x = input;
        let mut activations = Vec::with_capacity(DEPTH);
        for k in 0..DEPTH {
            let (h, w) = ledger[k];
            let next = (
                conv_output_size(
                    h,
                    self.config.kernel.0,
                    self.config.stride.0,
                    self.config.padding.0,
                ),
                conv_output_size(
                    w,
                    self.config.kernel.1,
                    self.config.stride.1,
                    self.config.padding.1,
                ),
            );
            let (Some(nh), Some(nw)) = next else {
                return Err(Error::InputTooSmall {
                    depth: DEPTH,
                    layer: k,
                    height: h,
                    width: w,
                });
            };
            ledger.push((nh, nw));
            let kernel = self.var(&enc(k, "conv.weight"))?;
            let bias = self.var(&enc(k, "conv.bias"))?;
            let y = g.conv2d(x, kernel, bias, self.config.stride, self.config.padding)?;
            x = self.norm_selu(g, y, enc(k, "bn"))?;
            activations.push(x);
        }
        Ok(Encoded {
            activations,
            ledger,
        })
    }

    /// Graph layers over the per-channel latents, one fully connected graph
    /// of `num_channels` nodes per batch item. Identity without a bottleneck.
    pub fn bottleneck(&mut self, g: &mut Graph, latent: Var) -> Result<Var> {
        if self.config.bottleneck == Bottleneck::None {
            return Ok(latent);
        }
        let shape = g.shape(latent).to_vec();
        let nodes = self.config.num_channels;
        let n = shape[0];
        if n % nodes != 0 {
            return Err(Error::ChannelCountMismatch {
                expected: nodes,
                actual: n,
            });
        }
        let features: usize = shape[1..].iter().product();
        let expected = self.config.node_features()?;
        if features != expected {
            return Err(Error::shape(
                "bottleneck",
                format!("latent has {features} features per node, weights expect {expected}"),
            ));
        }
        let adj = fully_connected(nodes, n / nodes);
        let mut h = g.reshape(latent, [n, features])?;
        for l in 0..self.config.gnn_layers {
            let w = self.var(&gnn(l, "weight"))?;
            h = match self.config.bottleneck {
                Bottleneck::Gcn => gcn_layer(g, h, &adj, w)?,
                Bottleneck::Gat => {
                    let a = self.var(&gnn(l, "attention"))?;
                    gat_layer(g, h, &adj, w, a)?
                }
                Bottleneck::None => unreachable!(),
            };
        }
        g.reshape(h, shape)
    }

    /// Six transposed-conv, batch-norm, SELU stages. Stage `k` consumes the
    /// previous output concatenated with the mirrored encoder activation and
    /// lands exactly on the size recorded by the encoder.
    pub fn decode(&mut self, g: &mut Graph, latent: Var, encoded: &Encoded) -> Result<Var> {
        if encoded.activations.len() != DEPTH || encoded.ledger.len() != DEPTH + 1 {
            return Err(Error::shape(
                "decoder",
                "skip list does not match the encoder depth",
            ));
        }
        let pads = self.config.output_paddings(&encoded.ledger)?;
        let mut x = latent;
        for (k, &pad) in pads.iter().enumerate() {
            let skip = encoded.activations[DEPTH - 1 - k];
            if g.shape(x)[2..] != g.shape(skip)[2..] {
                return Err(Error::shape(
                    "decoder",
                    format!(
                        "stage {k} input {:?} vs skip {:?}",
                        g.shape(x),
                        g.shape(skip)
                    ),
                ));
            }
            let joined = g.concat(&[x, skip], 1)?;
            let kernel = self.var(&dec(k, "conv.weight"))?;
            let bias = self.var(&dec(k, "conv.bias"))?;
            let y = g.conv_transpose2d(
                joined,
                kernel,
                bias,
                self.config.stride,
                self.config.padding,
                pad,
            )?;
            x = self.norm_selu(g, y, dec(k, "bn"))?;
        }
        Ok(x)
    }

    /// Concatenates the per-channel decoder outputs of each item along the
    /// feature axis (channel order) and maps them to two mask planes.
    pub fn head(&mut self, g: &mut Graph, decoded: Var) -> Result<Var> {
        let shape = g.shape(decoded).to_vec();
        let m = self.config.num_channels;
        if shape[0] % m != 0 {
            return Err(Error::ChannelCountMismatch {
                expected: m,
                actual: shape[0],
            });
        }
        let joined = g.reshape(decoded, [shape[0] / m, m * shape[1], shape[2], shape[3]])?;
        let w = self.var("head.weight")?;
        let b = self.var("head.bias")?;
        g.conv2d(joined, w, b, (1, 1), (0, 0))
    }

    /// Stacked input `[B * M, P, F, T]` to mask `[B, 2, F, T]`.
    pub fn mask(&mut self, g: &mut Graph, input: Var) -> Result<Var> {
        let encoded = self.encode(g, input)?;
        let latent = self.bottleneck(g, encoded.latent())?;
        let decoded = self.decode(g, latent, &encoded)?;
        self.head(g, decoded)
    }
}
