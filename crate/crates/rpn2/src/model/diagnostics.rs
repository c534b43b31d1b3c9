use serde::{Deserialize, Serialize};

use super::forward::model_forward_probed;
use super::{Component, ModelConfig, ParameterStore, Slot};
use crate::error::Result;
use crate::interdependence::InterdependenceMatrix;
use crate::numeric_core::{numerical_rank, NormKind};

const RANK_TOLERANCE: f64 = 1e-10;

/// Measurements of one station matrix `A` applied to batch `X`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StationReport {
    pub slot: Slot,
    pub rows: usize,
    pub cols: usize,
    pub nnz: usize,
    pub nnz_ratio: f64,
    /// Singular values above `1e-10·σ_max`.
    pub rank: usize,
    /// `‖Aᵀ‖_∞`, the largest absolute column sum of `A`.
    pub transpose_inf_norm: f64,
    /// `‖AᵀX‖_{2→∞}` for instance stations, `‖XA‖_{2→∞}` for attribute ones.
    pub applied_two_to_inf_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerDiagnostics {
    pub layer: usize,
    pub input_rows: usize,
    pub input_cols: usize,
    /// Smallest rank among instance stations; a layer without one acts as
    /// the identity and reports its batch size.
    pub instance_rank: usize,
    /// `min(instance_rank, input width)`.
    pub capacity_rank: usize,
    pub parameters: usize,
    pub stations: Vec<StationReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub batch_size: usize,
    pub total_parameters: usize,
    pub layers: Vec<LayerDiagnostics>,
}

fn station_report(
    slot: Slot,
    matrix: &InterdependenceMatrix,
    input: &crate::Matrix,
) -> Result<StationReport> {
    let dense = matrix.to_dense();
    let (rows, cols) = dense.shape();
    let nnz = matrix.nnz();
    let transposed = dense.transpose();
    let applied = match slot.component {
        Component::InstPrior | Component::InstPost => transposed.matmul(input)?,
        _ => input.matmul(&dense)?,
    };
    Ok(StationReport {
        slot,
        rows,
        cols,
        nnz,
        nnz_ratio: nnz as f64 / (rows * cols).max(1) as f64,
        rank: numerical_rank(&dense, RANK_TOLERANCE),
        transpose_inf_norm: transposed.norm(NormKind::Infinity),
        applied_two_to_inf_norm: applied.norm(NormKind::TwoToInfinity),
    })
}

/// Runs the model on `x` and reports every station of every layer.
pub fn diagnostics(
    model: &ModelConfig,
    store: &ParameterStore,
    x: &crate::Matrix,
) -> Result<DiagnosticsReport> {
    let mut records = Vec::new();
    model_forward_probed(model, store, x, &mut records)?;
    let mut layers = Vec::with_capacity(model.layers.len());
    let mut input_shape = x.shape();
    for k in 0..model.layers.len() {
        let stations = records
            .iter()
            .filter(|r| r.slot.layer == k)
            .map(|r| station_report(r.slot, &r.matrix, &r.input))
            .collect::<Result<Vec<_>>>()?;
        let instance_rank = stations
            .iter()
            .filter(|s| matches!(s.slot.component, Component::InstPrior | Component::InstPost))
            .map(|s| s.rank)
            .min()
            .unwrap_or(input_shape.0);
        layers.push(LayerDiagnostics {
            layer: k,
            input_rows: input_shape.0,
            input_cols: input_shape.1,
            instance_rank,
            capacity_rank: instance_rank.min(input_shape.1),
            parameters: store.layer_total(k),
            stations,
        });
        if k + 1 < model.layers.len() {
            // The next layer's input is this layer's output.
            let partial = super::ModelConfig {
                layers: model.layers[..=k].to_vec(),
            };
            input_shape = super::model_forward(&partial, store, x)?.shape();
        }
    }
    Ok(DiagnosticsReport {
        batch_size: x.rows(),
        total_parameters: store.len(),
        layers,
    })
}
