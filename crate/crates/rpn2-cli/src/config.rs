//! JSON schemas for every subcommand. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use rpn2::backbone_equiv::BackboneKind;
use rpn2::datasets::DatasetKind;
use rpn2::interdependence::InterdependenceSpec;
use rpn2::model::{Loss, ModelConfig, Optimizer};

/// Reads and validates a JSON config; errors carry the path, line and column.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("invalid config {}", path.display()))
}

/// Shuffled train/test split drawn from `seed`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    /// Fraction of rows kept for training, in `(0, 1]`.
    pub train: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl DatasetSpec {
    pub fn with_seed(mut self, seed: u64) -> Self {
        match &mut self.kind {
            DatasetKind::TwoMoons { seed: s, .. }
            | DatasetKind::ChainSeries { seed: s, .. }
            | DatasetKind::GridImages { seed: s, .. }
            | DatasetKind::RandomGraph { seed: s, .. } => *s = seed,
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenDataConfig {
    pub data: DatasetSpec,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildMatrixConfig {
    pub interdependence: InterdependenceSpec,
    /// Batch shape `[b, m]` the matrix is built for.
    pub input_shape: (usize, usize),
    /// Learnable parameters for parametric kinds; zeros when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<Vec<f64>>,
    /// Batch for data-dependent kinds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DatasetSpec>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub loss: Loss,
    pub optimizer: Optimizer,
    pub epochs: usize,
    /// Parameter initialization seed.
    pub seed: u64,
}

fn default_metrics() -> PathBuf {
    PathBuf::from("metrics.csv")
}

fn default_checkpoint() -> PathBuf {
    PathBuf::from("checkpoint.json")
}

/// Output files, relative to `--out` when that is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default = "default_metrics")]
    pub metrics: PathBuf,
    #[serde(default = "default_checkpoint")]
    pub checkpoint: PathBuf,
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            metrics: default_metrics(),
            checkpoint: default_checkpoint(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: DatasetSpec,
    pub train: TrainSection,
    #[serde(default)]
    pub outputs: Outputs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BackboneChoice {
    /// One of `cnn`, `pool`, `rnn`, `gnn`, `transformer` at default sizes.
    Preset(String),
    Custom(BackboneKind),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EquivConfig {
    pub backbone: BackboneChoice,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseConfig {
    pub model: ModelConfig,
    pub data: DatasetSpec,
    /// Initialization seed, used when no checkpoint is given.
    #[serde(default)]
    pub seed: u64,
    /// Checkpoint written by `train`; its parameters replace the initialization.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn run_config_round_trips() {
        let text = r#"{
            "model": {"layers": [{"heads": [{"reconciliation": {"lorr": {"rank": 2}}, "output_dim": 2}]}]},
            "data": {"kind": {"two_moons": {"n": 20, "noise": 0.1, "seed": 3}}, "split": {"train": 0.8, "seed": 1}},
            "train": {"loss": "cross_entropy", "optimizer": {"sgd": {"lr": 0.1}}, "epochs": 5, "seed": 0}
        }"#;
        let config: RunConfig = serde_json::from_str(text).unwrap();
        let again: RunConfig =
            serde_json::from_str(&serde_json::to_string(&config).unwrap()).unwrap();
        assert_eq!(config, again);
        assert_eq!(config.outputs, Outputs::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"data": {"kind": {"two_moons": {"n": 20, "noise": 0.1, "seed": 3}}, "shuffle": true}}"#;
        let error = serde_json::from_str::<GenDataConfig>(text)
            .unwrap_err()
            .to_string();
        assert!(error.contains("shuffle"), "{error}");
    }

    #[test]
    fn backbone_presets_and_custom_kinds_parse() {
        let preset: EquivConfig =
            serde_json::from_str(r#"{"backbone": "rnn", "seed": 1}"#).unwrap();
        assert_eq!(preset.backbone, BackboneChoice::Preset("rnn".into()));
        let custom: EquivConfig =
            serde_json::from_str(r#"{"backbone": {"rnn": {"b": 4, "d_h": 2}}, "seed": 1}"#)
                .unwrap();
        assert_eq!(
            custom.backbone,
            BackboneChoice::Custom(BackboneKind::Rnn { b: 4, d_h: 2 })
        );
    }
}
