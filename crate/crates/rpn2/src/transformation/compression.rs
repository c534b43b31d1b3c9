//! Stateless compressions: elementwise, geometric patch summaries and
//! probabilistic sampling.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::grid_geometry::{packing_centers, patch_cells, GridSpec, PackingSpec, PatchShape};
use crate::numeric_core::{Dense, Prng, Scalar, Tape, Var};
use crate::Matrix;

const RECIPROCAL_FLOOR: f64 = 1e-12;

/// Elementwise `1/x`; entries closer to zero than 1e-12 are rejected.
pub fn compress_reciprocal<T: Scalar>(x: &Dense<T>) -> Result<Dense<T>> {
    check_reciprocal(x)?;
    Ok(x.map(T::recip))
}

fn check_reciprocal<T: Scalar>(x: &Dense<T>) -> Result<()> {
    if x.as_slice()
        .iter()
        .any(|v| v.abs() < T::lit(RECIPROCAL_FLOOR))
    {
        return Err(Error::InvalidParameter(
            "reciprocal compression of a near-zero entry".into(),
        ));
    }
    Ok(())
}

pub(crate) fn reciprocal_on_tape(tape: &mut Tape, x: Var) -> Result<Var> {
    let xv = tape.value(x).clone();
    check_reciprocal(&xv)?;
    let value = xv.map(f64::recip);
    let local = xv.map(|v| -1.0 / (v * v));
    tape.linearized(&[x], value, vec![local])
}

/// `X·C` for a fixed `m×d` matrix.
pub fn compress_linear<T: Scalar>(x: &Dense<T>, c: &Dense<T>) -> Result<Dense<T>> {
    if c.rows() != x.cols() {
        return Err(shape_err("linear compression rows", x.cols(), c.rows()));
    }
    x.matmul(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormOrder {
    L1,
    L2,
    Inf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchStatistic {
    Variance,
    Std,
    Skewness,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchOperator {
    Max,
    Min,
    Sum,
    Prod,
    ArithMean,
    GeoMean,
    HarmonicMean,
    Median,
    Mode,
}

/// Scalar summary of one patch vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PatchMapping {
    Norm { order: NormOrder },
    Entropy,
    Metric { kind: PatchStatistic },
    Operator { kind: PatchOperator },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchCompression {
    pub grid: GridSpec,
    pub shape: PatchShape,
    pub packing: PackingSpec,
    pub mapping: PatchMapping,
}

/// Result of a patch compression. `nonpositive_mean` is set when a geometric
/// or harmonic mean met a non-positive patch and returned 0 for it.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchOutput {
    pub values: Matrix,
    pub nonpositive_mean: bool,
}

impl PatchCompression {
    pub fn output_dim(&self) -> Result<usize> {
        Ok(packing_centers(&self.grid, &self.packing)?.len())
    }

    /// One output column per packing center; out-of-grid cells contribute 0.
    pub fn apply(&self, x: &Matrix) -> Result<PatchOutput> {
        if x.cols() != self.grid.size() {
            return Err(shape_err(
                "patch compression width",
                self.grid.size(),
                x.cols(),
            ));
        }
        let centers = packing_centers(&self.grid, &self.packing)?;
        let offsets = self.shape.offsets();
        let cells: Vec<Vec<Option<usize>>> = centers
            .iter()
            .map(|&c| patch_cells(&self.grid, c, &offsets))
            .collect();
        let mut values = Matrix::zeros(x.rows(), centers.len());
        let mut nonpositive_mean = false;
        let mut patch = vec![0.0; offsets.len()];
        for i in 0..x.rows() {
            let row = x.row(i);
            for (c, members) in cells.iter().enumerate() {
                for (slot, cell) in patch.iter_mut().zip(members) {
                    *slot = cell.map_or(0.0, |idx| row[idx]);
                }
                let (v, warned) = summarize(&patch, self.mapping)?;
                nonpositive_mean |= warned;
                values[(i, c)] = v;
            }
        }
        Ok(PatchOutput {
            values,
            nonpositive_mean,
        })
    }
}

fn summarize(p: &[f64], mapping: PatchMapping) -> Result<(f64, bool)> {
    let len = p.len() as f64;
    let mean = p.iter().sum::<f64>() / len;
    let value = match mapping {
        PatchMapping::Norm { order } => match order {
            NormOrder::L1 => p.iter().map(|v| v.abs()).sum(),
            NormOrder::L2 => p.iter().map(|v| v * v).sum::<f64>().sqrt(),
            NormOrder::Inf => p.iter().fold(0.0, |a: f64, v| a.max(v.abs())),
        },
        PatchMapping::Entropy => {
            if p.iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidParameter(
                    "entropy mapping needs non-negative patch values".into(),
                ));
            }
            -p.iter()
                .filter(|&&v| v > 0.0)
                .map(|v| v * v.ln())
                .sum::<f64>()
        }
        PatchMapping::Metric { kind } => {
            let var = p.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / len;
            match kind {
                PatchStatistic::Variance => var,
                PatchStatistic::Std => var.sqrt(),
                PatchStatistic::Skewness => {
                    if var == 0.0 {
                        0.0
                    } else {
                        p.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / len / var.powf(1.5)
                    }
                }
            }
        }
        PatchMapping::Operator { kind } => match kind {
            PatchOperator::Max => p.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            PatchOperator::Min => p.iter().copied().fold(f64::INFINITY, f64::min),
            PatchOperator::Sum => p.iter().sum(),
            PatchOperator::Prod => p.iter().product(),
            PatchOperator::ArithMean => mean,
            PatchOperator::GeoMean | PatchOperator::HarmonicMean => {
                if p.iter().any(|&v| v <= 0.0) {
                    return Ok((0.0, true));
                }
                if kind == PatchOperator::GeoMean {
                    (p.iter().map(|v| v.ln()).sum::<f64>() / len).exp()
                } else {
                    len / p.iter().map(|v| v.recip()).sum::<f64>()
                }
            }
            PatchOperator::Median => {
                let mut sorted = p.to_vec();
                sorted.sort_by(f64::total_cmp);
                let k = sorted.len();
                if k % 2 == 1 {
                    sorted[k / 2]
                } else {
                    0.5 * (sorted[k / 2 - 1] + sorted[k / 2])
                }
            }
            PatchOperator::Mode => {
                // Most frequent value, ties broken toward the smallest value.
                let mut sorted = p.to_vec();
                sorted.sort_by(f64::total_cmp);
                let (mut best, mut best_count) = (sorted[0], 0);
                let mut start = 0;
                while start < sorted.len() {
                    let mut end = start;
                    while end < sorted.len() && sorted[end] == sorted[start] {
                        end += 1;
                    }
                    if end - start > best_count {
                        best = sorted[start];
                        best_count = end - start;
                    }
                    start = end;
                }
                best
            }
        },
    };
    Ok((value, false))
}

/// Density used to weight or score sampled attributes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Density {
    Gaussian { mean: f64, std: f64 },
    Laplace { loc: f64, scale: f64 },
}

impl Default for Density {
    fn default() -> Self {
        Self::Gaussian {
            mean: 0.0,
            std: 1.0,
        }
    }
}

impl Density {
    pub fn log_pdf(self, x: f64) -> f64 {
        match self {
            Self::Gaussian { mean, std } => {
                let z = (x - mean) / std;
                -0.5 * z * z - std.ln() - 0.5 * (2.0 * PI).ln()
            }
            Self::Laplace { loc, scale } => -(x - loc).abs() / scale - (2.0 * scale).ln(),
        }
    }

    fn validate(self) -> Result<()> {
        let ok = match self {
            Self::Gaussian { std, .. } => std > 0.0,
            Self::Laplace { scale, .. } => scale > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(
                "density width must be positive".into(),
            ))
        }
    }
}

/// How naive sampling weighs attributes within an instance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingWeights {
    /// Softmax over the instance's values.
    #[default]
    Softmax,
    Uniform,
    /// The configured density evaluated at each value.
    Density,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProbabilisticMode {
    /// Sequential weighted sampling of attributes without replacement.
    Naive,
    /// Uniform sampling of attribute tuples of arity `1..=k`.
    Combinatorial { k: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbabilisticCompression {
    pub mode: ProbabilisticMode,
    /// Output width.
    pub d: usize,
    #[serde(default)]
    pub distribution: Density,
    #[serde(default)]
    pub weights: SamplingWeights,
    #[serde(default)]
    pub log_likelihood: bool,
    pub seed: u64,
}

/// Tuples of `1..=k` distinct attributes out of `m`, by arity then lexicographically.
fn tuples(m: usize, k: usize) -> Vec<Vec<usize>> {
    fn extend(
        start: usize,
        m: usize,
        left: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for j in start..m {
            cur.push(j);
            extend(j + 1, m, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    for arity in 1..=k {
        extend(0, m, arity, &mut Vec::new(), &mut out);
    }
    out
}

impl ProbabilisticCompression {
    pub fn validate(&self, m: usize) -> Result<()> {
        self.distribution.validate()?;
        let limit = match self.mode {
            ProbabilisticMode::Naive => m,
            ProbabilisticMode::Combinatorial { k } => {
                if k == 0 || k > 3 {
                    return Err(Error::InvalidParameter(
                        "combinatorial arity must be 1..=3".into(),
                    ));
                }
                tuples(m, k).len()
            }
        };
        if self.d == 0 || self.d > limit {
            return Err(Error::InvalidParameter(format!(
                "probabilistic output width {} outside 1..={limit}",
                self.d
            )));
        }
        Ok(())
    }

    /// Sampling restarts from `seed` on every call, so identical inputs give
    /// identical outputs. Naive mode samples per instance; combinatorial mode
    /// draws one tuple set shared by the whole batch.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let (b, m) = x.shape();
        self.validate(m)?;
        let mut prng = Prng::new(self.seed).fork("probabilistic");
        let mut out = Matrix::zeros(b, self.d);
        match self.mode {
            ProbabilisticMode::Naive => {
                for i in 0..b {
                    let row = x.row(i);
                    let mut weights = self.attribute_weights(row);
                    for slot in 0..self.d {
                        let j = draw_weighted(&mut prng, &weights);
                        weights[j] = -1.0;
                        out[(i, slot)] = if self.log_likelihood {
                            self.distribution.log_pdf(row[j])
                        } else {
                            row[j]
                        };
                    }
                }
            }
            ProbabilisticMode::Combinatorial { k } => {
                let mut all = tuples(m, k);
                for t in 0..self.d {
                    let pick = t + prng.below(all.len() - t);
                    all.swap(t, pick);
                }
                for i in 0..b {
                    let row = x.row(i);
                    for (slot, tuple) in all[..self.d].iter().enumerate() {
                        out[(i, slot)] = if self.log_likelihood {
                            tuple
                                .iter()
                                .map(|&j| self.distribution.log_pdf(row[j]))
                                .sum()
                        } else {
                            tuple.iter().map(|&j| row[j]).product()
                        };
                    }
                }
            }
        }
        Ok(out)
    }

    fn attribute_weights(&self, row: &[f64]) -> Vec<f64> {
        match self.weights {
            SamplingWeights::Uniform => vec![1.0; row.len()],
            SamplingWeights::Softmax => {
                let top = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                row.iter().map(|v| (v - top).exp()).collect()
            }
            SamplingWeights::Density => row
                .iter()
                .map(|&v| self.distribution.log_pdf(v).exp())
                .collect(),
        }
    }
}

/// Index drawn with probability proportional to `weights`, where negative
/// entries mark slots already taken. Falls back to a uniform pick among open
/// slots when all remaining mass underflows.
fn draw_weighted(prng: &mut Prng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().filter(|&&w| w > 0.0).sum();
    if total > 0.0 && total.is_finite() {
        let mut u = prng.next_f64() * total;
        let mut last = 0;
        for (j, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                last = j;
                if u < w {
                    return j;
                }
                u -= w;
            }
        }
        return last;
    }
    let open: Vec<usize> = (0..weights.len()).filter(|&j| weights[j] >= 0.0).collect();
    open[prng.below(open.len())]
}
