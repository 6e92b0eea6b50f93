//! RelUNet and U-Net mask estimators with optional graph bottleneck, the
//! training loss and the training loop.
//!
//! Every microphone channel passes through the same encoder/decoder. In the
//! relative variant each channel is stacked with the reference channel
//! before the first convolution; the per-channel decoder outputs are joined
//! by a 1x1 convolution into one complex mask for the reference channel.

mod config;
mod layers;
mod net;
mod params;
mod pipeline;
mod train;

pub use config::{Bottleneck, ChannelPolicy, ModelConfig, Variant, DEPTH};
pub use layers::{
    apply_mask, fully_connected, gat_layer, gcn_layer, normalized_adjacency, stack_relative,
    ComplexMask,
};
pub use net::{Encoded, Network};
pub use params::{
    count_parameters, param_specs, Component, ModelParams, ParamSpec, ParameterCount,
};
pub use pipeline::{
    conform_channels, forward, loss, prepare_batch, Enhanced, PreparedBatch, MAG_EPS,
};
pub use train::{
    batch_gradients, train, train_with, History, HistoryRow, TrainConfig, TrainingItem,
};
