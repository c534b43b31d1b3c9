//! Reference convolution, pooling, recurrence, graph convolution and
//! attention, and builders that configure equivalent models.
//!
//! Each builder draws random backbone weights, writes them into the slots of
//! a [`ParameterStore`] and returns the reference evaluator that uses the
//! same weights, so `model_forward(X)` can be compared with it directly.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::fusion::FusionSpec;
use crate::grid_geometry::{GridSpec, PackingSpec, PatchShape};
use crate::interdependence::{
    ChainStructure, Graph, GraphNormalization, GraphStructure, GraphVariant, InterdependenceKind,
    PostNorm,
};
use crate::model::{
    Component, HeadConfig, LayerConfig, ModelConfig, ParameterStore, Processor, Slot, StationSpec,
};
use crate::numeric_core::Prng;
use crate::reconciliation::{ReconciliationMethod, Remainder};
use crate::transformation::{DataTransform, PatchCompression, PatchMapping, PatchOperator};
use crate::Matrix;

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Cross-correlation kernel over offsets `(r, s, t)` with
/// `r ∈ [−h_before, h_after]` and likewise for width and depth. Each output
/// channel stores its weights with `t` fastest, then `s`, then `r`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    pub h: (usize, usize),
    pub w: (usize, usize),
    pub d: (usize, usize),
    pub channels: Vec<Vec<f64>>,
}

impl ConvKernel {
    fn extent(&self) -> (usize, usize, usize) {
        (
            self.h.0 + self.h.1 + 1,
            self.w.0 + self.w.1 + 1,
            self.d.0 + self.d.1 + 1,
        )
    }

    fn weight(&self, channel: usize, (r, s, t): (i64, i64, i64)) -> f64 {
        let (_, kw, kd) = self.extent();
        let i = (r + self.h.0 as i64) as usize;
        let j = (s + self.w.0 as i64) as usize;
        let k = (t + self.d.0 as i64) as usize;
        self.channels[channel][(i * kw + j) * kd + k]
    }
}

fn grid_value(image: &[f64], grid: &GridSpec, i: i64, j: i64, k: i64) -> f64 {
    let inside = (0..grid.h as i64).contains(&i)
        && (0..grid.w as i64).contains(&j)
        && (0..grid.d as i64).contains(&k);
    if inside {
        image[(i as usize * grid.w + j as usize) * grid.d + k as usize]
    } else {
        0.0
    }
}

fn check_strides((sh, sw): (usize, usize)) -> Result<()> {
    if sh == 0 || sw == 0 {
        return Err(Error::InvalidParameter("strides must be positive".into()));
    }
    Ok(())
}

/// Zero-padded cross-correlation with output positions `(i·s_h, j·s_w, 0)`
/// inside the grid. Output is ordered by position, then channel.
pub fn ref_cross_correlation(
    image: &[f64],
    grid: &GridSpec,
    kernel: &ConvKernel,
    strides: (usize, usize),
) -> Result<Vec<f64>> {
    check_strides(strides)?;
    if image.len() != grid.size() {
        return Err(shape_err("image length", grid.size(), image.len()));
    }
    let (kh, kw, kd) = kernel.extent();
    if kernel.channels.iter().any(|c| c.len() != kh * kw * kd) {
        return Err(shape_err(
            "kernel weights",
            kh * kw * kd,
            "a channel of another length",
        ));
    }
    let mut out = Vec::new();
    for i in (0..grid.h).step_by(strides.0) {
        for j in (0..grid.w).step_by(strides.1) {
            for c in 0..kernel.channels.len() {
                let mut acc = 0.0;
                for r in -(kernel.h.0 as i64)..=kernel.h.1 as i64 {
                    for s in -(kernel.w.0 as i64)..=kernel.w.1 as i64 {
                        for t in -(kernel.d.0 as i64)..=kernel.d.1 as i64 {
                            let v = grid_value(image, grid, i as i64 + r, j as i64 + s, t);
                            acc += v * kernel.weight(c, (r, s, t));
                        }
                    }
                }
                out.push(acc);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolOp {
    Max,
    Mean,
    Min,
}

/// Per-depth pooling over `window` cells starting at `(i·s_h, j·s_w)`;
/// cells past the border count as zero. Output is ordered `(i, j, k)`.
pub fn ref_pool(
    map: &[f64],
    grid: &GridSpec,
    window: (usize, usize),
    strides: (usize, usize),
    op: PoolOp,
) -> Result<Vec<f64>> {
    check_strides(strides)?;
    if window.0 == 0 || window.1 == 0 {
        return Err(Error::InvalidParameter(
            "pooling window must be non-empty".into(),
        ));
    }
    if map.len() != grid.size() {
        return Err(shape_err("map length", grid.size(), map.len()));
    }
    let mut out = Vec::new();
    for i in (0..grid.h).step_by(strides.0) {
        for j in (0..grid.w).step_by(strides.1) {
            for k in 0..grid.d {
                let mut cells = Vec::with_capacity(window.0 * window.1);
                for r in 0..window.0 {
                    for s in 0..window.1 {
                        cells.push(grid_value(
                            map,
                            grid,
                            (i + r) as i64,
                            (j + s) as i64,
                            k as i64,
                        ));
                    }
                }
                out.push(match op {
                    PoolOp::Max => cells.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    PoolOp::Min => cells.iter().copied().fold(f64::INFINITY, f64::min),
                    PoolOp::Mean => cells.iter().sum::<f64>() / cells.len() as f64,
                });
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RnnVariant {
    /// `h'_i = σ(h'_{i−1}·U + h_i)`.
    Recursive,
    /// `h'_i = σ(h_{i−1}·U + h_i)`.
    OneHop,
}

/// Step-by-step scan over the rows of `h`.
pub fn ref_rnn_scan(h: &Matrix, u: &Matrix, variant: RnnVariant) -> Result<Matrix> {
    let d = h.cols();
    if u.shape() != (d, d) {
        return Err(shape_err(
            "recurrent weights",
            format!("{d}x{d}"),
            format!("{}x{}", u.rows(), u.cols()),
        ));
    }
    let mut out = Matrix::zeros(h.rows(), d);
    for i in 0..h.rows() {
        for c in 0..d {
            let mut acc = h[(i, c)];
            if i > 0 {
                for k in 0..d {
                    let prev = match variant {
                        RnnVariant::Recursive => out[(i - 1, k)],
                        RnnVariant::OneHop => h[(i - 1, k)],
                    };
                    acc += prev * u[(k, c)];
                }
            }
            out[(i, c)] = sigmoid(acc);
        }
    }
    Ok(out)
}

/// `σ(Â·X·W)` with `Â = D⁻¹A + I`, evaluated node by node: each node adds
/// the mean of its neighbours' features to its own.
pub fn ref_sgc(x: &Matrix, graph: &Graph, w: &Matrix) -> Result<Matrix> {
    graph.validate()?;
    if x.rows() != graph.nodes {
        return Err(shape_err("node features", graph.nodes, x.rows()));
    }
    if w.rows() != x.cols() {
        return Err(shape_err("graph convolution weights", x.cols(), w.rows()));
    }
    let mut neighbours = vec![std::collections::BTreeSet::new(); graph.nodes];
    for &(u, v) in &graph.edges {
        neighbours[u].insert(v);
        if !graph.directed {
            neighbours[v].insert(u);
        }
    }
    let m = x.cols();
    let mut mixed = Matrix::zeros(graph.nodes, m);
    for node in 0..graph.nodes {
        let count = neighbours[node].len() as f64;
        for j in 0..m {
            let mut acc = x[(node, j)];
            for &v in &neighbours[node] {
                acc += x[(v, j)] / count;
            }
            mixed[(node, j)] = acc;
        }
    }
    Ok(mixed.matmul(w)?.map(sigmoid))
}

/// Single-head attention `softmax(QKᵀ/√r)·V` computed in two explicit stages.
pub fn ref_attention(
    x: &Matrix,
    wq: &Matrix,
    wk: &Matrix,
    wv: &Matrix,
    r: usize,
) -> Result<Matrix> {
    if wq.shape() != (x.cols(), r) || wk.shape() != (x.cols(), r) {
        return Err(shape_err(
            "query/key weights",
            format!("{}x{r}", x.cols()),
            format!("{}x{}", wq.rows(), wq.cols()),
        ));
    }
    if wv.rows() != x.cols() {
        return Err(shape_err("value weights", x.cols(), wv.rows()));
    }
    let (q, k, v) = (x.matmul(wq)?, x.matmul(wk)?, x.matmul(wv)?);
    let b = x.rows();
    let scale = 1.0 / (r as f64).sqrt();
    let mut out = Matrix::zeros(b, v.cols());
    for i in 0..b {
        let scores: Vec<f64> = (0..b)
            .map(|j| (0..r).map(|c| q[(i, c)] * k[(j, c)]).sum::<f64>() * scale)
            .collect();
        let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = scores.iter().map(|s| (s - top).exp()).collect();
        let total: f64 = weights.iter().sum();
        for c in 0..v.cols() {
            out[(i, c)] = (0..b).map(|j| weights[j] / total * v[(j, c)]).sum();
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BackboneKind {
    /// Centered `kernel` window over the full depth, stride `stride`.
    Cnn {
        grid: GridSpec,
        kernel: (usize, usize),
        out_channels: usize,
        stride: (usize, usize),
        batch: usize,
    },
    Pool {
        grid: GridSpec,
        window: (usize, usize),
        stride: (usize, usize),
        op: PoolOp,
        batch: usize,
    },
    Rnn {
        b: usize,
        d_h: usize,
    },
    /// Erdős–Rényi graph with `nodes` vertices and `m → n` features.
    Gnn {
        nodes: usize,
        edge_prob: f64,
        m: usize,
        n: usize,
        #[serde(default)]
        pagerank: Option<f64>,
    },
    Transformer {
        b: usize,
        m: usize,
        r: usize,
        n: usize,
    },
}

impl BackboneKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Cnn { .. } => "cnn",
            Self::Pool { .. } => "pool",
            Self::Rnn { .. } => "rnn",
            Self::Gnn { .. } => "gnn",
            Self::Transformer { .. } => "transformer",
        }
    }

    /// Default sizes used by the equivalence suite.
    pub fn preset(name: &str) -> Result<Self> {
        Ok(match name {
            "cnn" => Self::Cnn {
                grid: GridSpec::new(8, 8, 3)?,
                kernel: (3, 3),
                out_channels: 1,
                stride: (1, 1),
                batch: 4,
            },
            "pool" => Self::Pool {
                grid: GridSpec::new(8, 8, 3)?,
                window: (2, 2),
                stride: (2, 2),
                op: PoolOp::Max,
                batch: 4,
            },
            "rnn" => Self::Rnn { b: 16, d_h: 8 },
            "gnn" => Self::Gnn {
                nodes: 12,
                edge_prob: 0.3,
                m: 5,
                n: 3,
                pagerank: None,
            },
            "transformer" => Self::Transformer {
                b: 10,
                m: 8,
                r: 4,
                n: 6,
            },
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown backbone '{other}'"
                )))
            }
        })
    }

    /// Largest accepted `max |model − reference|`.
    pub fn tolerance(&self) -> f64 {
        match self {
            Self::Cnn { .. } | Self::Transformer { .. } => 1e-10,
            Self::Pool { .. } => 0.0,
            Self::Rnn { .. } | Self::Gnn { .. } => 1e-12,
        }
    }
}

type Reference = Box<dyn Fn(&Matrix) -> Result<Matrix> + Send + Sync>;

/// A configured model, its parameters and the matching reference evaluator.
pub struct Equivalent {
    pub model: ModelConfig,
    pub store: ParameterStore,
    pub reference: Reference,
    /// Batch shape the store was laid out for.
    pub input_shape: (usize, usize),
}

impl Equivalent {
    /// Runs both sides on `x` and returns `max |model − reference|`.
    pub fn max_diff(&self, x: &Matrix) -> Result<f64> {
        let ours = crate::model::model_forward(&self.model, &self.store, x)?;
        let theirs = (self.reference)(x)?;
        ours.max_abs_diff(&theirs).ok_or_else(|| {
            shape_err(
                "equivalence outputs",
                format!("{:?}", theirs.shape()),
                format!("{:?}", ours.shape()),
            )
        })
    }

    /// Random input batch of the laid-out shape.
    pub fn sample_input(&self, prng: &mut Prng) -> Matrix {
        Matrix::from_fn(self.input_shape.0, self.input_shape.1, |_, _| {
            prng.uniform(-1.0, 1.0)
        })
    }
}

fn recon_slot() -> Slot {
    Slot {
        layer: 0,
        head: Some(0),
        channel: Some(0),
        component: Component::Reconciliation,
    }
}

fn random_matrix(prng: &mut Prng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| prng.uniform(-1.0, 1.0))
}

fn single_layer(head: HeadConfig) -> ModelConfig {
    ModelConfig {
        layers: vec![LayerConfig {
            heads: vec![head],
            head_fusion: FusionSpec::Sum,
            channel_fusion: FusionSpec::Sum,
        }],
    }
}

fn finish(
    model: ModelConfig,
    input_shape: (usize, usize),
    weights: &[f64],
    extra: Option<(Slot, Vec<f64>)>,
    reference: Reference,
) -> Result<Equivalent> {
    let mut store = ParameterStore::init(&model, input_shape, 0)?;
    if !weights.is_empty() {
        store.set_slot(recon_slot(), weights)?;
    }
    if let Some((slot, values)) = extra {
        store.set_slot(slot, &values)?;
    }
    Ok(Equivalent {
        model,
        store,
        reference,
        input_shape,
    })
}

fn cnn_patch(
    grid: &GridSpec,
    kernel: (usize, usize),
    stride: (usize, usize),
) -> Result<(PatchShape, PackingSpec)> {
    check_strides(stride)?;
    if kernel.0 == 0 || kernel.1 == 0 {
        return Err(Error::InvalidParameter(
            "kernel extents must be positive".into(),
        ));
    }
    let shape = PatchShape::cuboid(
        (kernel.0 / 2, kernel.0 - 1 - kernel.0 / 2),
        (kernel.1 / 2, kernel.1 - 1 - kernel.1 / 2),
        (0, grid.d - 1),
    );
    let packing =
        PackingSpec::distances(stride.0 as f64, stride.1 as f64, grid.d as f64).clipped(true);
    Ok((shape, packing))
}

fn conv_kernel(shape: &PatchShape, channels: Vec<Vec<f64>>) -> ConvKernel {
    let PatchShape::Cuboid {
        h_before,
        h_after,
        w_before,
        w_after,
        d_before,
        d_after,
    } = *shape
    else {
        unreachable!("convolution patches are cuboids")
    };
    ConvKernel {
        h: (h_before, h_after),
        w: (w_before, w_after),
        d: (d_before, d_after),
        channels,
    }
}

fn rowwise(x: &Matrix, f: impl Fn(&[f64]) -> Result<Vec<f64>>) -> Result<Matrix> {
    let rows = (0..x.rows())
        .map(|i| f(x.row(i)))
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(&rows)
}

/// Configures the model equal to `kind` with weights drawn from `prng`.
pub fn build_equivalent(kind: &BackboneKind, prng: &mut Prng) -> Result<Equivalent> {
    match kind.clone() {
        BackboneKind::Cnn {
            grid,
            kernel,
            out_channels,
            stride,
            batch,
        } => {
            let (shape, packing) = cnn_patch(&grid, kernel, stride)?;
            let structure = crate::interdependence::GridStructure {
                grid,
                shape,
                packing,
                mode: crate::interdependence::GridMode::Padding,
            };
            let p = shape.size();
            let p_count = structure.output_dim()? / p;
            let mut head = HeadConfig::new(ReconciliationMethod::Identity, out_channels);
            head.interdependence.attr_prior =
                Some(StationSpec::new(InterdependenceKind::Grid(structure)));
            head.processors
                .expansion
                .push(Processor::Reshape { cols: p });
            head.processors.inner.push(Processor::Reshape {
                cols: p_count * out_channels,
            });
            // ψ row c is output channel c's kernel in patch offset order.
            let offsets = shape.offsets();
            let channels: Vec<Vec<f64>> = (0..out_channels)
                .map(|_| (0..p).map(|_| prng.uniform(-1.0, 1.0)).collect())
                .collect();
            let conv = conv_kernel(&shape, channels);
            let mut weights = Vec::with_capacity(out_channels * p);
            for c in 0..out_channels {
                weights.extend(offsets.iter().map(|&o| conv.weight(c, o)));
            }
            let reference: Reference = Box::new(move |x| {
                rowwise(x, |row| ref_cross_correlation(row, &grid, &conv, stride))
            });
            finish(
                single_layer(head),
                (batch, grid.size()),
                &weights,
                None,
                reference,
            )
        }
        BackboneKind::Pool {
            grid,
            window,
            stride,
            op,
            batch,
        } => {
            check_strides(stride)?;
            let shape = PatchShape::cuboid(
                (0, window.0.saturating_sub(1)),
                (0, window.1.saturating_sub(1)),
                (0, 0),
            );
            let packing =
                PackingSpec::distances(stride.0 as f64, stride.1 as f64, 1.0).clipped(true);
            let kind = match op {
                PoolOp::Max => PatchOperator::Max,
                PoolOp::Min => PatchOperator::Min,
                PoolOp::Mean => PatchOperator::ArithMean,
            };
            let compression = PatchCompression {
                grid,
                shape,
                packing,
                mapping: PatchMapping::Operator { kind },
            };
            let p_count = compression.output_dim()?;
            let mut head = HeadConfig::new(ReconciliationMethod::ConstantEye, p_count);
            head.transform = DataTransform::Patch(compression);
            let reference: Reference =
                Box::new(move |x| rowwise(x, |row| ref_pool(row, &grid, window, stride, op)));
            finish(
                single_layer(head),
                (batch, grid.size()),
                &[],
                None,
                reference,
            )
        }
        BackboneKind::Rnn { b, d_h } => {
            let mut head = HeadConfig::new(ReconciliationMethod::Identity, d_h);
            head.interdependence.inst_prior = Some(StationSpec::new(InterdependenceKind::Chain(
                ChainStructure::default(),
            )));
            head.remainder = Remainder::Identity;
            head.processors.output.push(Processor::Sigmoid);
            let u = random_matrix(prng, d_h, d_h);
            let weights = u.transpose().into_vec();
            let reference: Reference = Box::new(move |x| ref_rnn_scan(x, &u, RnnVariant::OneHop));
            finish(single_layer(head), (b, d_h), &weights, None, reference)
        }
        BackboneKind::Gnn {
            nodes,
            edge_prob,
            m,
            n,
            pagerank,
        } => {
            let mut edges = Vec::new();
            for u in 0..nodes {
                for v in u + 1..nodes {
                    if prng.next_f64() < edge_prob {
                        edges.push((u, v));
                    }
                }
            }
            let graph = Graph::new(nodes, edges, false)?;
            let structure = GraphStructure {
                graph: graph.clone(),
                variant: match pagerank {
                    Some(alpha) => GraphVariant::Pagerank { alpha },
                    None => GraphVariant::Adjacency,
                },
                normalization: GraphNormalization::ColumnPlusSelf,
            };
            let mut head = HeadConfig::new(ReconciliationMethod::Identity, n);
            head.interdependence.inst_prior = Some(StationSpec::new(InterdependenceKind::Graph(
                structure.clone(),
            )));
            head.processors.output.push(Processor::Sigmoid);
            let w = random_matrix(prng, m, n);
            let weights = w.transpose().into_vec();
            let reference: Reference = match pagerank {
                None => Box::new(move |x| ref_sgc(x, &graph, &w)),
                Some(_) => {
                    // σ(A_prᵀ·X·W) with the propagation matrix built directly.
                    let propagation = structure.matrix()?.to_dense().transpose();
                    Box::new(move |x| Ok(propagation.matmul(x)?.matmul(&w)?.map(sigmoid)))
                }
            };
            finish(single_layer(head), (nodes, m), &weights, None, reference)
        }
        BackboneKind::Transformer { b, m, r, n } => {
            let mut head = HeadConfig::new(ReconciliationMethod::Identity, n);
            head.interdependence.inst_prior = Some(StationSpec {
                kind: InterdependenceKind::LowRankBilinear { rank: r },
                post_norm: PostNorm::ScaledColSoftmax { r },
            });
            let wq = random_matrix(prng, m, r);
            let wk = random_matrix(prng, m, r);
            let wv = random_matrix(prng, m, n);
            // The station applies softmax_col(X·W_k·W_qᵀ·Xᵀ)ᵀ, which equals
            // row_softmax(Q·Kᵀ), so the key weights are stored first.
            let mut bilinear = wk.clone().into_vec();
            bilinear.extend_from_slice(wq.as_slice());
            let slot = Slot {
                component: Component::InstPrior,
                ..recon_slot()
            };
            let weights = wv.transpose().into_vec();
            let reference: Reference = Box::new(move |x| ref_attention(x, &wq, &wk, &wv, r));
            finish(
                single_layer(head),
                (b, m),
                &weights,
                Some((slot, bilinear)),
                reference,
            )
        }
    }
}

/// Block form of a single-channel convolution head: `ψ = I_{p_count} ⊗ w`
/// applied to the padded patches without any reshape.
pub fn build_cnn_block_form(
    grid: GridSpec,
    kernel: (usize, usize),
    stride: (usize, usize),
    batch: usize,
    prng: &mut Prng,
) -> Result<Equivalent> {
    let (shape, packing) = cnn_patch(&grid, kernel, stride)?;
    let structure = crate::interdependence::GridStructure {
        grid,
        shape,
        packing,
        mode: crate::interdependence::GridMode::Padding,
    };
    let p = shape.size();
    let p_count = structure.output_dim()? / p;
    let mut head = HeadConfig::new(
        ReconciliationMethod::DuplicatedPadding { p, p_count },
        p_count,
    );
    head.interdependence.attr_prior = Some(StationSpec::new(InterdependenceKind::Grid(structure)));
    let channel: Vec<f64> = (0..p).map(|_| prng.uniform(-1.0, 1.0)).collect();
    let conv = conv_kernel(&shape, vec![channel]);
    let weights: Vec<f64> = shape.offsets().iter().map(|&o| conv.weight(0, o)).collect();
    let reference: Reference =
        Box::new(move |x| rowwise(x, |row| ref_cross_correlation(row, &grid, &conv, stride)));
    finish(
        single_layer(head),
        (batch, grid.size()),
        &weights,
        None,
        reference,
    )
}
