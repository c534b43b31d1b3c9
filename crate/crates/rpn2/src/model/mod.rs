//! Heads, layers and stacked models, with training and diagnostics.
//!
//! A head runs each channel through the stations
//! `X → X·A_attr_prior → A_inst_priorᵀ·(·) → κ → (·)·A_attr_post →
//! A_inst_postᵀ·(·)`, takes the inner product with `ψ(w)` and adds `π(X)`.
//! Channels are fused per head, heads are fused per layer and layers stack.

mod diagnostics;
mod forward;
mod params;
mod train;

#[cfg(test)]
mod tests;

use serde::{Deserialize, Serialize};

use crate::fusion::FusionSpec;
use crate::interdependence::{InterdependenceKind, PostNorm};
use crate::reconciliation::{ReconciliationMethod, Remainder};
use crate::transformation::DataTransform;

pub use diagnostics::{diagnostics, DiagnosticsReport, LayerDiagnostics, StationReport};
pub use forward::{head_forward, layer_forward, model_forward, model_forward_on_tape};
pub use params::{Component, ParameterStore, Slot};
pub use train::{
    accuracy, evaluate, train, EpochRecord, History, Loss, Optimizer, Targets, TrainConfig,
};

/// Elementwise activation or reshape applied at a processing point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Processor {
    Sigmoid,
    Tanh,
    Relu,
    /// Row-wise softmax.
    Softmax,
    /// Row-major reshape to the given column count.
    Reshape {
        cols: usize,
    },
}

/// Processing points of a head. `inner` acts on the channel inner product
/// before the remainder is added; `output` acts on the fused head output.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Processors {
    #[serde(default)]
    pub input: Vec<Processor>,
    #[serde(default)]
    pub expansion: Vec<Processor>,
    #[serde(default)]
    pub inner: Vec<Processor>,
    #[serde(default)]
    pub output: Vec<Processor>,
}

/// Interdependence at one station; the station fixes the dispatch axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationSpec {
    pub kind: InterdependenceKind,
    #[serde(default)]
    pub post_norm: PostNorm,
}

impl StationSpec {
    pub fn new(kind: InterdependenceKind) -> Self {
        Self {
            kind,
            post_norm: PostNorm::None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stations {
    #[serde(default)]
    pub attr_prior: Option<StationSpec>,
    #[serde(default)]
    pub inst_prior: Option<StationSpec>,
    #[serde(default)]
    pub attr_post: Option<StationSpec>,
    #[serde(default)]
    pub inst_post: Option<StationSpec>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    #[serde(default)]
    pub transform: DataTransform,
    #[serde(default)]
    pub interdependence: Stations,
    #[serde(default = "one")]
    pub channels: usize,
    pub reconciliation: ReconciliationMethod,
    #[serde(default)]
    pub remainder: Remainder,
    #[serde(default)]
    pub processors: Processors,
    /// Row count `n` of `ψ(w)`.
    pub output_dim: usize,
}

impl HeadConfig {
    /// Plain head: identity transform and stations, zero remainder.
    pub fn new(reconciliation: ReconciliationMethod, output_dim: usize) -> Self {
        Self {
            transform: DataTransform::Identity,
            interdependence: Stations::default(),
            channels: 1,
            reconciliation,
            remainder: Remainder::Zero,
            processors: Processors::default(),
            output_dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    pub heads: Vec<HeadConfig>,
    #[serde(default)]
    pub head_fusion: FusionSpec,
    #[serde(default)]
    pub channel_fusion: FusionSpec,
}

impl LayerConfig {
    pub fn single(head: HeadConfig) -> Self {
        Self {
            heads: vec![head],
            head_fusion: FusionSpec::Sum,
            channel_fusion: FusionSpec::Sum,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: Vec<LayerConfig>,
}
