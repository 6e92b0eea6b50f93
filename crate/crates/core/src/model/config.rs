use serde::{Deserialize, Serialize};

use crate::autodiff::{conv_output_size, conv_transpose_output_size};
use crate::error::{Error, Result};
use crate::signal::StftConfig;

/// Number of down/up-sampling stages.
pub const DEPTH: usize = 6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Each channel on its own: planes `[Re X_i, Im X_i]`.
    Unet,
    /// Each channel stacked with the reference: `[Re X_i, Im X_i, Re X_r, Im X_r]`.
    #[default]
    Relunet,
}

impl Variant {
    pub fn planes(self) -> usize {
        match self {
            Variant::Unet => 2,
            Variant::Relunet => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bottleneck {
    #[default]
    None,
    Gcn,
    Gat,
}

/// What to do when fewer channels arrive than the model was trained on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelPolicy {
    #[default]
    Strict,
    /// Fill the missing channels with copies of the reference channel.
    Replicate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: Variant,
    pub bottleneck: Bottleneck,
    pub num_channels: usize,
    pub encoder_widths: Vec<usize>,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub gnn_layers: usize,
    pub gat_heads: usize,
    pub reference_index: usize,
    /// Segment length in samples. Fixes the latent grid, and with it the
    /// node-feature size of a graph bottleneck.
    pub segment_length: usize,
    pub stft: StftConfig,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Relunet,
            bottleneck: Bottleneck::None,
            num_channels: 6,
            encoder_widths: vec![16, 32, 64, 64, 64, 64],
            kernel: (4, 3),
            stride: (2, 2),
            padding: (1, 1),
            gnn_layers: 2,
            gat_heads: 1,
            reference_index: 4,
            segment_length: 19200,
            stft: StftConfig::default(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        if self.encoder_widths.len() != DEPTH {
            return Err(Error::InvalidConfig(format!(
                "encoder_widths needs {DEPTH} entries, got {}",
                self.encoder_widths.len()
            )));
        }
        if self.encoder_widths.contains(&0) {
            return Err(Error::InvalidConfig(
                "encoder widths must be positive".into(),
            ));
        }
        if self.num_channels == 0 {
            return Err(Error::InvalidConfig("num_channels must be positive".into()));
        }
        if self.reference_index >= self.num_channels {
            return Err(Error::InvalidConfig(format!(
                "reference_index {} is not below num_channels {}",
                self.reference_index, self.num_channels
            )));
        }
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
            return Err(Error::InvalidConfig(
                "kernel and stride must be positive".into(),
            ));
        }
        if self.padding.0 >= kh || self.padding.1 >= kw {
            return Err(Error::InvalidConfig(
                "padding must be smaller than the kernel".into(),
            ));
        }
        if self.gat_heads != 1 {
            return Err(Error::InvalidConfig(
                "only a single attention head is supported".into(),
            ));
        }
        if self.bottleneck != Bottleneck::None && self.gnn_layers == 0 {
            return Err(Error::InvalidConfig(
                "a graph bottleneck needs at least one layer".into(),
            ));
        }
        self.size_ledger(self.segment_length)?;
        Ok(())
    }

    /// Latent width `d`.
    pub fn latent_width(&self) -> usize {
        self.encoder_widths[DEPTH - 1]
    }

    /// `(F, T)` of the network input for a segment of `len` samples.
    pub fn input_grid(&self, len: usize) -> Result<(usize, usize)> {
        let frames = self.stft.num_frames(len).ok_or(Error::SignalTooShort {
            len,
            required: self.stft.window_length,
        })?;
        Ok((self.stft.num_bins(), frames))
    }

    /// Spatial size after every encoder stage, starting with the input grid.
    pub fn size_ledger(&self, len: usize) -> Result<Vec<(usize, usize)>> {
        let (mut h, mut w) = self.input_grid(len)?;
        let mut ledger = vec![(h, w)];
        for layer in 0..DEPTH {
            let next_h = conv_output_size(h, self.kernel.0, self.stride.0, self.padding.0);
            let next_w = conv_output_size(w, self.kernel.1, self.stride.1, self.padding.1);
            match (next_h, next_w) {
                (Some(nh), Some(nw)) => {
                    h = nh;
                    w = nw;
                    ledger.push((h, w));
                }
                _ => {
                    return Err(Error::InputTooSmall {
                        depth: DEPTH,
                        layer,
                        height: h,
                        width: w,
                    })
                }
            }
        }
        Ok(ledger)
    }

    /// Output padding for each decoder stage so that it lands exactly on
    /// the matching encoder size. Decoder stage `k` maps `ledger[6 - k]`
    /// back to `ledger[5 - k]`.
    pub fn output_paddings(&self, ledger: &[(usize, usize)]) -> Result<Vec<(usize, usize)>> {
        (0..DEPTH)
            .map(|k| {
                let (h, w) = ledger[DEPTH - k];
                let (th, tw) = ledger[DEPTH - 1 - k];
                let base_h =
                    conv_transpose_output_size(h, self.kernel.0, self.stride.0, self.padding.0, 0);
                let base_w =
                    conv_transpose_output_size(w, self.kernel.1, self.stride.1, self.padding.1, 0);
                match (base_h, base_w) {
                    (Some(bh), Some(bw))
                        if th >= bh
                            && tw >= bw
                            && th - bh < self.stride.0
                            && tw - bw < self.stride.1 =>
                    {
                        Ok((th - bh, tw - bw))
                    }
                    _ => Err(Error::InvalidConfig(format!(
                        "decoder stage {k} cannot map {h}x{w} back to {th}x{tw}"
                    ))),
                }
            })
            .collect()
    }

    /// Node-feature length of the graph bottleneck.
    pub fn node_features(&self) -> Result<usize> {
        let ledger = self.size_ledger(self.segment_length)?;
        let (h, w) = ledger[DEPTH];
        Ok(self.latent_width() * h * w)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_ledger() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        let ledger = cfg.size_ledger(19200).unwrap();
        assert_eq!(
            ledger,
            vec![
                (512, 121),
                (256, 61),
                (128, 31),
                (64, 16),
                (32, 8),
                (16, 4),
                (8, 2)
            ]
        );
        assert_eq!(cfg.node_features().unwrap(), 1024);
        let pads = cfg.output_paddings(&ledger).unwrap();
        assert!(pads.iter().all(|&(a, b)| a < 2 && b < 2));
    }

    #[test]
    fn tiny_input_is_rejected() {
        let cfg = ModelConfig {
            stft: StftConfig {
                fft_length: 64,
                hop_length: 16,
                window_length: 64,
                ..Default::default()
            },
            ..Default::default()
        };
        // 32 bins halve to 1 after five stages; the sixth has nothing to cover
        let err = cfg.size_ledger(4000).unwrap_err();
        assert!(
            matches!(err, Error::InputTooSmall { layer: 5, .. }),
            "{err}"
        );
    }

    #[test]
    fn json_is_strict() {
        let cfg = ModelConfig::default();
        let back = ModelConfig::from_json(&cfg.to_json().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert!(ModelConfig::from_json(r#"{"variantt": "unet"}"#).is_err());
        let unet = ModelConfig::from_json(r#"{"variant": "unet", "bottleneck": "gat"}"#).unwrap();
        assert_eq!(
            (unet.variant, unet.bottleneck),
            (Variant::Unet, Bottleneck::Gat)
        );
    }

    #[test]
    fn invalid_configs() {
        let bad = |f: fn(&mut ModelConfig)| {
            let mut c = ModelConfig::default();
            f(&mut c);
            c.validate().is_err()
        };
        assert!(bad(|c| c.encoder_widths.pop().map(|_| ()).unwrap()));
        assert!(bad(|c| c.reference_index = 6));
        assert!(bad(|c| c.gat_heads = 2));
        assert!(bad(|c| c.num_channels = 0));
    }
}
