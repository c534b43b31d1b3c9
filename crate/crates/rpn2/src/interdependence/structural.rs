//! Data-independent interdependence from known structure: grids, chains and
//! graphs. Every builder returns a sparse matrix except dense closed forms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_geometry::{packing_centers, patch_cells, GridSpec, PackingSpec, PatchShape};
use crate::numeric_core::solve;
use crate::{Matrix, SparseMatrix};

const SERIES_CUTOFF: f64 = 1e-15;
const SERIES_MAX_TERMS: usize = 200;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridMode {
    /// Column `c·p + s` marks the `s`-th cell of patch `c`; out-of-grid cells
    /// leave their column empty, which zero-pads the patch.
    #[default]
    Padding,
    /// Column `c` marks every in-grid cell of patch `c`.
    Aggregation,
}

/// Grid patch structure over `m = h·w·d` attributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridStructure {
    pub grid: GridSpec,
    pub shape: PatchShape,
    pub packing: PackingSpec,
    #[serde(default)]
    pub mode: GridMode,
}

impl GridStructure {
    pub fn output_dim(&self) -> Result<usize> {
        let centers = packing_centers(&self.grid, &self.packing)?.len();
        Ok(match self.mode {
            GridMode::Padding => self.shape.size() * centers,
            GridMode::Aggregation => centers,
        })
    }

    pub fn matrix(&self) -> Result<SparseMatrix> {
        let centers = packing_centers(&self.grid, &self.packing)?;
        let offsets = self.shape.offsets();
        let p = offsets.len();
        let mut triplets = Vec::new();
        for (c, &center) in centers.iter().enumerate() {
            for (slot, cell) in patch_cells(&self.grid, center, &offsets)
                .into_iter()
                .enumerate()
            {
                if let Some(q) = cell {
                    let col = match self.mode {
                        GridMode::Padding => c * p + slot,
                        GridMode::Aggregation => c,
                    };
                    triplets.push((q, col, 1.0));
                }
            }
        }
        let m = self.grid.size();
        let cols = self.output_dim()?;
        let raw = SparseMatrix::from_triplets(m, cols, triplets)?;
        // Aggregation marks membership; repeated offsets must not double count.
        let entries = raw.entries().iter().map(|&(i, j, _)| (i, j, 1.0)).collect();
        SparseMatrix::from_triplets(m, cols, entries)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChainDirection {
    /// `A(i, i+1) = 1`.
    #[default]
    Uni,
    /// Both neighbours.
    Bi,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ChainVariant {
    #[default]
    OneHop,
    /// `A^h`.
    Multihop { h: usize },
    /// `Σ_{i=0}^{h} A^i`.
    Accumulative { h: usize },
    /// `exp(A)`.
    Exponential,
    /// `(I − A)^{-1}`; bidirectional chains use the accumulative sum up to
    /// `m − 1` hops instead.
    Reciprocal,
}

/// Sequential structure over `m` positions.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainStructure {
    #[serde(default)]
    pub direction: ChainDirection,
    #[serde(default)]
    pub variant: ChainVariant,
    /// Adds `I` to variants that have no zero-hop term.
    #[serde(default)]
    pub include_self: bool,
}

/// Sum of `A^i` for `i = 0..=h`, reusing each power.
fn accumulate_powers(a: &SparseMatrix, h: usize) -> Result<SparseMatrix> {
    let n = a.rows();
    let mut power = SparseMatrix::identity(n);
    let mut sum = power.clone();
    for _ in 0..h {
        power = power.matmul(a)?;
        sum = sum.add(&power)?;
    }
    Ok(sum)
}

/// Sparse exponential series; `nilpotent` stops after `A^{m−1}`.
fn sparse_exp(a: &SparseMatrix, nilpotent: bool) -> Result<SparseMatrix> {
    let n = a.rows();
    let mut term = SparseMatrix::identity(n);
    let mut sum = term.clone();
    let last = if nilpotent {
        n.saturating_sub(1)
    } else {
        SERIES_MAX_TERMS
    };
    for k in 1..=last {
        term = term.matmul(a)?.scale(1.0 / k as f64);
        let largest = term
            .entries()
            .iter()
            .fold(0.0f64, |acc, e| acc.max(e.2.abs()));
        if largest == 0.0 || (!nilpotent && largest < SERIES_CUTOFF) {
            break;
        }
        sum = sum.add(&term)?;
    }
    Ok(sum)
}

impl ChainStructure {
    pub fn adjacency(&self, m: usize) -> Result<SparseMatrix> {
        let mut triplets: Vec<(usize, usize, f64)> =
            (0..m.saturating_sub(1)).map(|i| (i, i + 1, 1.0)).collect();
        if self.direction == ChainDirection::Bi {
            triplets.extend((0..m.saturating_sub(1)).map(|i| (i + 1, i, 1.0)));
        }
        SparseMatrix::from_triplets(m, m, triplets)
    }

    pub fn matrix(&self, m: usize) -> Result<SparseMatrix> {
        let a = self.adjacency(m)?;
        let check_hops = |h: usize| {
            if h >= m {
                Err(Error::InvalidParameter(format!(
                    "chain of length {m} has no {h}-hop relation"
                )))
            } else {
                Ok(())
            }
        };
        let uni = self.direction == ChainDirection::Uni;
        let (base, has_self) = match self.variant {
            ChainVariant::OneHop => (a, false),
            ChainVariant::Multihop { h } => {
                check_hops(h)?;
                (a.pow(h)?, h == 0)
            }
            ChainVariant::Accumulative { h } => {
                check_hops(h)?;
                (accumulate_powers(&a, h)?, true)
            }
            ChainVariant::Exponential => (sparse_exp(&a, uni)?, true),
            ChainVariant::Reciprocal if uni => {
                let eye = Matrix::identity(m);
                let inv = solve(&eye.sub(&a.to_dense())?, &eye)?;
                (SparseMatrix::from_dense(&inv), true)
            }
            ChainVariant::Reciprocal => (accumulate_powers(&a, m.saturating_sub(1))?, true),
        };
        if self.include_self && !has_self {
            base.add(&SparseMatrix::identity(m))
        } else {
            Ok(base)
        }
    }
}

/// Simple graph on `nodes` vertices without self-loops.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Graph {
    pub nodes: usize,
    pub edges: Vec<(usize, usize)>,
    #[serde(default)]
    pub directed: bool,
}

impl Graph {
    pub fn new(nodes: usize, edges: Vec<(usize, usize)>, directed: bool) -> Result<Self> {
        let graph = Self {
            nodes,
            edges,
            directed,
        };
        graph.validate()?;
        Ok(graph)
    }

    pub fn validate(&self) -> Result<()> {
        for &(u, v) in &self.edges {
            if u >= self.nodes || v >= self.nodes {
                return Err(Error::OutOfRange(format!(
                    "edge ({u}, {v}) in {}-node graph",
                    self.nodes
                )));
            }
            if u == v {
                return Err(Error::InvalidParameter(format!("self-loop at node {u}")));
            }
        }
        Ok(())
    }

    /// Binary adjacency, symmetric unless directed.
    pub fn adjacency(&self) -> Result<SparseMatrix> {
        self.validate()?;
        let mut triplets: Vec<(usize, usize, f64)> =
            self.edges.iter().map(|&(u, v)| (u, v, 1.0)).collect();
        if !self.directed {
            triplets.extend(self.edges.iter().map(|&(u, v)| (v, u, 1.0)));
        }
        let summed = SparseMatrix::from_triplets(self.nodes, self.nodes, triplets)?;
        let binary = summed
            .entries()
            .iter()
            .map(|&(i, j, _)| (i, j, 1.0))
            .collect();
        SparseMatrix::from_triplets(self.nodes, self.nodes, binary)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphVariant {
    #[default]
    Adjacency,
    Multihop {
        h: usize,
    },
    Accumulative {
        h: usize,
    },
    /// `α·(I − (1−α)·Â)^{-1}`, dense.
    Pagerank {
        alpha: f64,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphNormalization {
    #[default]
    None,
    /// `D⁻¹A` with `D` the out-degrees; isolated nodes keep a zero row.
    Row,
    /// `D⁻¹A + I`.
    RowPlusSelf,
    /// `(D⁻¹A + I)ᵀ`, so that applying it on the instance side computes
    /// `(D⁻¹A + I)·X`.
    ColumnPlusSelf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphStructure {
    pub graph: Graph,
    #[serde(default)]
    pub variant: GraphVariant,
    #[serde(default)]
    pub normalization: GraphNormalization,
}

fn row_normalize(a: &SparseMatrix) -> Result<SparseMatrix> {
    let mut degree = vec![0.0; a.rows()];
    for &(i, _, v) in a.entries() {
        degree[i] += v;
    }
    let scaled = a
        .entries()
        .iter()
        .map(|&(i, j, v)| (i, j, v / degree[i]))
        .collect();
    SparseMatrix::from_triplets(a.rows(), a.cols(), scaled)
}

impl GraphStructure {
    pub fn normalized_adjacency(&self) -> Result<SparseMatrix> {
        let a = self.graph.adjacency()?;
        let n = a.rows();
        Ok(match self.normalization {
            GraphNormalization::None => a,
            GraphNormalization::Row => row_normalize(&a)?,
            GraphNormalization::RowPlusSelf => {
                row_normalize(&a)?.add(&SparseMatrix::identity(n))?
            }
            GraphNormalization::ColumnPlusSelf => row_normalize(&a)?
                .add(&SparseMatrix::identity(n))?
                .transpose(),
        })
    }

    pub fn matrix(&self) -> Result<SparseMatrix> {
        let a = self.normalized_adjacency()?;
        match self.variant {
            GraphVariant::Adjacency => Ok(a),
            GraphVariant::Multihop { h } => a.pow(h),
            GraphVariant::Accumulative { h } => accumulate_powers(&a, h),
            GraphVariant::Pagerank { alpha } => {
                if !(alpha > 0.0 && alpha <= 1.0) {
                    return Err(Error::InvalidParameter(
                        "pagerank alpha must be in (0, 1]".into(),
                    ));
                }
                let eye = Matrix::identity(a.rows());
                let system = eye.sub(&a.to_dense().scale(1.0 - alpha))?;
                Ok(SparseMatrix::from_dense(
                    &solve(&system, &eye)?.scale(alpha),
                ))
            }
        }
    }
}
