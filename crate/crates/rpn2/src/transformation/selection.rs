//! Incremental feature selection keeping running per-attribute statistics.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Top-k attributes by running variance.
    Variance,
    /// k clusters by running cosine similarity, one representative each.
    Cluster,
}

/// Single-owner selector state. Each call to [`SelectorState::update`] counts
/// as one batch; after `early_stop` batches the state freezes and selection
/// reuses the stored indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectorState {
    mode: SelectionMode,
    k: usize,
    early_stop: Option<usize>,
    variance: Vec<f64>,
    similarity: Option<Matrix>,
    batches: usize,
    frozen: bool,
    selected: Vec<usize>,
}

/// Unbiased per-column variance (0 for single-row batches).
pub fn column_variances(x: &Matrix) -> Vec<f64> {
    let (b, m) = x.shape();
    (0..m)
        .map(|j| {
            if b < 2 {
                return 0.0;
            }
            let col = x.column(j);
            let mean = col.iter().sum::<f64>() / b as f64;
            col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (b - 1) as f64
        })
        .collect()
}

/// Cosine similarity between columns; zero columns are similar only to themselves.
fn column_cosine(x: &Matrix) -> Matrix {
    let m = x.cols();
    let cols: Vec<Vec<f64>> = (0..m).map(|j| x.column(j)).collect();
    let norms: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    Matrix::from_fn(m, m, |i, j| {
        if i == j {
            1.0
        } else if norms[i] == 0.0 || norms[j] == 0.0 {
            0.0
        } else {
            cols[i]
                .iter()
                .zip(&cols[j])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / (norms[i] * norms[j])
        }
    })
}

impl SelectorState {
    pub fn new(m: usize, mode: SelectionMode, k: usize, early_stop: Option<usize>) -> Result<Self> {
        if k == 0 || k > m {
            return Err(Error::InvalidParameter(format!(
                "selection size {k} outside 1..={m}"
            )));
        }
        Ok(Self {
            mode,
            k,
            early_stop,
            variance: vec![0.0; m],
            similarity: (mode == SelectionMode::Cluster).then(|| Matrix::zeros(m, m)),
            batches: 0,
            frozen: false,
            selected: (0..k).collect(),
        })
    }

    pub fn variance_record(&self) -> &[f64] {
        &self.variance
    }

    pub fn batches(&self) -> usize {
        self.batches
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Folds one batch into the running records, `v̄ ← ((t−1)·v̄ + v)/t`, and
    /// recomputes the selection. No-op once frozen.
    pub fn update(&mut self, x: &Matrix) -> Result<()> {
        if x.cols() != self.variance.len() {
            return Err(shape_err("selector width", self.variance.len(), x.cols()));
        }
        if self.frozen {
            return Ok(());
        }
        self.batches += 1;
        let t = self.batches as f64;
        for (acc, v) in self.variance.iter_mut().zip(column_variances(x)) {
            *acc = ((t - 1.0) * *acc + v) / t;
        }
        if let Some(sim) = &mut self.similarity {
            let batch = column_cosine(x);
            *sim = sim.scale((t - 1.0) / t).add(&batch.scale(1.0 / t))?;
        }
        self.selected = match self.mode {
            SelectionMode::Variance => top_k(&self.variance, self.k),
            SelectionMode::Cluster => cluster_representatives(
                self.similarity
                    .as_ref()
                    .expect("cluster mode keeps similarity"),
                &self.variance,
                self.k,
            ),
        };
        if self.early_stop.is_some_and(|stop| self.batches >= stop) {
            self.frozen = true;
        }
        Ok(())
    }

    /// Columns of `x` at the selected indices, in ascending index order.
    pub fn project(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.variance.len() {
            return Err(shape_err("selector width", self.variance.len(), x.cols()));
        }
        Ok(Matrix::from_fn(x.rows(), self.k, |i, c| {
            x[(i, self.selected[c])]
        }))
    }

    /// Update then project.
    pub fn select(&mut self, x: &Matrix) -> Result<(Matrix, Vec<usize>)> {
        self.update(x)?;
        Ok((self.project(x)?, self.selected.clone()))
    }
}

/// Indices of the `k` largest values (ties to the lower index), ascending.
fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Greedy farthest-point seeding on `1 − similarity`, nearest-seed
/// assignment, then the highest-variance member of each cluster.
fn cluster_representatives(sim: &Matrix, variance: &[f64], k: usize) -> Vec<usize> {
    let m = variance.len();
    let dissim = |i: usize, j: usize| 1.0 - sim[(i, j)];
    let mut seeds = Vec::with_capacity(k);
    let first = (0..m)
        .map(|i| (i, (0..m).map(|j| dissim(i, j)).sum::<f64>()))
        .fold((0, f64::NEG_INFINITY), |best, (i, s)| {
            if s > best.1 {
                (i, s)
            } else {
                best
            }
        })
        .0;
    seeds.push(first);
    while seeds.len() < k {
        let mut best = (usize::MAX, f64::NEG_INFINITY);
        for i in (0..m).filter(|i| !seeds.contains(i)) {
            let spread = seeds
                .iter()
                .map(|&s| dissim(i, s))
                .fold(f64::INFINITY, f64::min);
            if spread > best.1 {
                best = (i, spread);
            }
        }
        seeds.push(best.0);
    }
    let mut clusters: Vec<Vec<usize>> = seeds.iter().map(|&s| vec![s]).collect();
    for i in (0..m).filter(|i| !seeds.contains(i)) {
        let mut target = 0;
        for (c, &s) in seeds.iter().enumerate() {
            if sim[(i, s)] > sim[(i, seeds[target])] {
                target = c;
            }
        }
        clusters[target].push(i);
    }
    let mut chosen: Vec<usize> = clusters
        .iter()
        .map(|members| {
            *members
                .iter()
                .min_by(|&&a, &&b| variance[b].total_cmp(&variance[a]).then(a.cmp(&b)))
                .expect("clusters are non-empty")
        })
        .collect();
    chosen.sort_unstable();
    chosen
}
