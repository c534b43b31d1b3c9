use serde::{Deserialize, Serialize};

use super::{model_forward_on_tape, ModelConfig, ParameterStore};
use crate::error::{shape_err, Error, Result};
use crate::numeric_core::{Tape, Var};
use crate::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// `Σ(ŷ − y)² / (b·n)`.
    Mse,
    /// Mean negative log-likelihood of a row-wise log-softmax.
    CrossEntropy,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd {
        lr: f64,
        #[serde(default)]
        momentum: f64,
    },
    AdaptiveMoments {
        lr: f64,
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_eps")]
        eps: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

/// Full-batch training settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: Loss,
    pub optimizer: Optimizer,
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// Class index per row (cross-entropy).
    Classes(Vec<usize>),
    /// Target matrix matching the model output (MSE, or soft labels).
    Values(Matrix),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// Accuracy for class targets, otherwise the mean squared error.
    pub metric: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn final_record(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

fn target_matrix(targets: &Targets, shape: (usize, usize)) -> Result<Matrix> {
    match targets {
        Targets::Values(y) => {
            if y.shape() != shape {
                return Err(shape_err(
                    "targets",
                    format!("{}x{}", shape.0, shape.1),
                    format!("{}x{}", y.rows(), y.cols()),
                ));
            }
            Ok(y.clone())
        }
        Targets::Classes(labels) => {
            if labels.len() != shape.0 {
                return Err(shape_err("class labels", shape.0, labels.len()));
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= shape.1) {
                return Err(Error::OutOfRange(format!(
                    "class {bad} with {} outputs",
                    shape.1
                )));
            }
            Ok(Matrix::from_fn(shape.0, shape.1, |i, j| {
                if labels[i] == j {
                    1.0
                } else {
                    0.0
                }
            }))
        }
    }
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (j, &v)| {
            if v > best.1 {
                (j, v)
            } else {
                best
            }
        })
        .0
}

/// Fraction of rows whose largest output matches the label.
pub fn accuracy(output: &Matrix, labels: &[usize]) -> f64 {
    let hits = (0..output.rows())
        .filter(|&i| argmax(output.row(i)) == labels[i])
        .count();
    hits as f64 / output.rows().max(1) as f64
}

fn loss_on_tape(tape: &mut Tape, out: Var, target: &Matrix, loss: Loss) -> Result<Var> {
    let (b, n) = tape.value(out).shape();
    let y = tape.constant(target.clone());
    Ok(match loss {
        Loss::Mse => {
            let d = tape.sub(out, y)?;
            let sq = tape.mul(d, d)?;
            let total = tape.sum(sq);
            tape.scale(total, 1.0 / (b * n) as f64)
        }
        Loss::CrossEntropy => {
            let logp = tape.log_softmax_rows(out);
            let picked = tape.mul(logp, y)?;
            let total = tape.sum(picked);
            tape.scale(total, -1.0 / b as f64)
        }
    })
}

/// One evaluation of the loss and its gradient with respect to every
/// stored parameter.
pub(crate) fn loss_and_gradient(
    model: &ModelConfig,
    store: &ParameterStore,
    x: &Matrix,
    target: &Matrix,
    loss: Loss,
) -> Result<(f64, Matrix, Vec<f64>)> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let pv = tape.parameter(Matrix::row_vector(store.values().to_vec()));
    let out = model_forward_on_tape(&mut tape, model, store, xv, pv)?;
    let lv = loss_on_tape(&mut tape, out, target, loss)?;
    let value = tape.value(lv)[(0, 0)];
    let output = tape.value(out).clone();
    let grads = tape.backward(lv)?;
    let grad = grads
        .get(pv)
        .map(|g| g.as_slice().to_vec())
        .unwrap_or_else(|| vec![0.0; store.len()]);
    Ok((value, output, grad))
}

/// Loss of the model on `(x, targets)` without updating anything.
pub fn evaluate(
    model: &ModelConfig,
    store: &ParameterStore,
    x: &Matrix,
    targets: &Targets,
    loss: Loss,
) -> Result<EpochRecord> {
    let out = super::model_forward(model, store, x)?;
    let target = target_matrix(targets, out.shape())?;
    let mut tape = Tape::new();
    let ov = tape.constant(out.clone());
    let lv = loss_on_tape(&mut tape, ov, &target, loss)?;
    Ok(record(0, tape.value(lv)[(0, 0)], &out, &target, targets))
}

fn record(
    epoch: usize,
    loss: f64,
    out: &Matrix,
    target: &Matrix,
    targets: &Targets,
) -> EpochRecord {
    let metric = match targets {
        Targets::Classes(labels) => accuracy(out, labels),
        Targets::Values(_) => {
            let d = out.sub(target).expect("shapes checked");
            d.hadamard(&d).expect("same shape").sum() / d.len().max(1) as f64
        }
    };
    EpochRecord {
        epoch,
        loss,
        metric,
    }
}

/// Full-batch gradient descent. Each record holds the loss before that
/// epoch's update; a non-finite loss or gradient aborts.
pub fn train(
    model: &ModelConfig,
    store: &mut ParameterStore,
    x: &Matrix,
    targets: &Targets,
    config: &TrainConfig,
) -> Result<History> {
    if x.shape() != store.input_shape() {
        let (b, m) = store.input_shape();
        return Err(shape_err(
            "training batch",
            format!("{b}x{m}"),
            format!("{}x{}", x.rows(), x.cols()),
        ));
    }
    let len = store.len();
    let mut first = vec![0.0; len];
    let mut second = vec![0.0; len];
    let mut history = History::default();
    let mut target: Option<Matrix> = None;
    for epoch in 0..config.epochs {
        let target_ref = match &target {
            Some(t) => t,
            None => {
                let out = super::model_forward(model, store, x)?;
                target.insert(target_matrix(targets, out.shape())?)
            }
        };
        let (loss, out, grad) = loss_and_gradient(model, store, x, target_ref, config.loss)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "training loss {loss} at epoch {epoch}"
            )));
        }
        history
            .epochs
            .push(record(epoch, loss, &out, target_ref, targets));
        let t = (epoch + 1) as i32;
        let values = store.values_mut();
        match config.optimizer {
            Optimizer::Sgd { lr, momentum } => {
                for k in 0..len {
                    first[k] = momentum * first[k] + grad[k];
                    values[k] -= lr * first[k];
                }
            }
            Optimizer::AdaptiveMoments {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                let (c1, c2) = (1.0 - beta1.powi(t), 1.0 - beta2.powi(t));
                for k in 0..len {
                    first[k] = beta1 * first[k] + (1.0 - beta1) * grad[k];
                    second[k] = beta2 * second[k] + (1.0 - beta2) * grad[k] * grad[k];
                    values[k] -= lr * (first[k] / c1) / ((second[k] / c2).sqrt() + eps);
                }
            }
        }
    }
    Ok(history)
}
