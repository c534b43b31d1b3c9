//! Deterministic synthetic datasets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interdependence::Graph;
use crate::numeric_core::Prng;
use crate::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetKind {
    TwoMoons {
        n: usize,
        noise: f64,
        seed: u64,
    },
    /// Noisy sinusoids of length `m`; the target is the next value.
    ChainSeries {
        m: usize,
        b: usize,
        seed: u64,
    },
    /// Flattened `h×w×d` images with values in `[0, 1)`.
    GridImages {
        h: usize,
        w: usize,
        d: usize,
        b: usize,
        seed: u64,
    },
    /// Erdős–Rényi graph with class-dependent Gaussian node features.
    RandomGraph {
        n_v: usize,
        edge_prob: f64,
        feature_dim: usize,
        classes: usize,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    None,
    Classes(Vec<usize>),
    Values(Matrix),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Labels,
    pub graph: Option<Graph>,
}

/// Two interleaving half circles, `n/2` points each (the first half gets
/// the extra point when `n` is odd), with isotropic Gaussian noise.
pub fn two_moons(n: usize, noise: f64, seed: u64) -> (Matrix, Vec<usize>) {
    let mut prng = Prng::new(seed).fork("two_moons");
    let outer = n - n / 2;
    let inner = n / 2;
    let step = |count: usize, i: usize| {
        if count > 1 {
            std::f64::consts::PI * i as f64 / (count - 1) as f64
        } else {
            0.0
        }
    };
    let mut x = Matrix::zeros(n, 2);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let (px, py, label) = if i < outer {
            let t = step(outer, i);
            (t.cos(), t.sin(), 0)
        } else {
            let t = step(inner, i - outer);
            (1.0 - t.cos(), 0.5 - t.sin(), 1)
        };
        x[(i, 0)] = px + noise * prng.normal();
        x[(i, 1)] = py + noise * prng.normal();
        labels.push(label);
    }
    (x, labels)
}

pub fn chain_series(m: usize, b: usize, seed: u64) -> (Matrix, Matrix) {
    let mut prng = Prng::new(seed).fork("chain_series");
    let mut x = Matrix::zeros(b, m);
    let mut y = Matrix::zeros(b, 1);
    for i in 0..b {
        let phase = prng.uniform(0.0, std::f64::consts::TAU);
        let freq = prng.uniform(0.1, 0.5);
        for t in 0..=m {
            let v = (freq * t as f64 + phase).sin() + 0.05 * prng.normal();
            if t < m {
                x[(i, t)] = v;
            } else {
                y[(i, 0)] = v;
            }
        }
    }
    (x, y)
}

pub fn grid_images(h: usize, w: usize, d: usize, b: usize, seed: u64) -> Matrix {
    let mut prng = Prng::new(seed).fork("grid_images");
    Matrix::from_fn(b, h * w * d, |_, _| prng.next_f64())
}

pub fn random_graph(
    n_v: usize,
    edge_prob: f64,
    feature_dim: usize,
    classes: usize,
    seed: u64,
) -> Result<(Graph, Matrix, Vec<usize>)> {
    if !(0.0..=1.0).contains(&edge_prob) {
        return Err(Error::InvalidParameter(
            "edge probability must be in [0, 1]".into(),
        ));
    }
    if classes == 0 {
        return Err(Error::InvalidParameter(
            "random graph needs at least one class".into(),
        ));
    }
    let mut prng = Prng::new(seed).fork("random_graph");
    let mut edges = Vec::new();
    for u in 0..n_v {
        for v in u + 1..n_v {
            if prng.next_f64() < edge_prob {
                edges.push((u, v));
            }
        }
    }
    let centers = Matrix::from_fn(classes, feature_dim, |_, _| prng.normal());
    let labels: Vec<usize> = (0..n_v).map(|_| prng.below(classes)).collect();
    let features = Matrix::from_fn(n_v, feature_dim, |i, j| {
        centers[(labels[i], j)] + 0.5 * prng.normal()
    });
    Ok((Graph::new(n_v, edges, false)?, features, labels))
}

impl DatasetKind {
    pub fn generate(&self) -> Result<Dataset> {
        Ok(match *self {
            Self::TwoMoons { n, noise, seed } => {
                let (features, labels) = two_moons(n, noise, seed);
                Dataset {
                    features,
                    labels: Labels::Classes(labels),
                    graph: None,
                }
            }
            Self::ChainSeries { m, b, seed } => {
                let (features, y) = chain_series(m, b, seed);
                Dataset {
                    features,
                    labels: Labels::Values(y),
                    graph: None,
                }
            }
            Self::GridImages { h, w, d, b, seed } => Dataset {
                features: grid_images(h, w, d, b, seed),
                labels: Labels::None,
                graph: None,
            },
            Self::RandomGraph {
                n_v,
                edge_prob,
                feature_dim,
                classes,
                seed,
            } => {
                let (graph, features, labels) =
                    random_graph(n_v, edge_prob, feature_dim, classes, seed)?;
                Dataset {
                    features,
                    labels: Labels::Classes(labels),
                    graph: Some(graph),
                }
            }
        })
    }
}
