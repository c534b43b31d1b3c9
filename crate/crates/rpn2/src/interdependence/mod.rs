//! Interdependence matrices `A ∈ R^{c×c'}` relating the columns of a
//! dispatched input `Z`.
//!
//! With attribute dispatch `Z = X` (`b×m`) and the head applies `X·A`; with
//! instance dispatch `Z = Xᵀ` and the head applies `Aᵀ·X`. Structural kinds
//! ignore `Z`, statistical and numerical kernels read it as a constant, and
//! the parametric kinds are recorded on the tape so their parameters train.

pub mod kernels;
pub mod structural;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::fusion::FusionSpec;
use crate::numeric_core::{Axis, Tape, Var};
use crate::reconciliation::{ReconciliationMethod, ReconciliationSpec, Remainder};
use crate::transformation::DataTransform;
use crate::{Matrix, SparseMatrix};

pub use kernels::{gaussian_mutual_information, rv_coefficient, NumKernel, StatKernel};
pub use structural::{
    ChainDirection, ChainStructure, ChainVariant, Graph, GraphNormalization, GraphStructure,
    GraphVariant, GridMode, GridStructure,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispatchAxis {
    #[default]
    Attribute,
    Instance,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PostNorm {
    #[default]
    None,
    RowL1,
    ColL1,
    ColSoftmax,
    /// Column softmax of `A/√r`.
    ScaledColSoftmax {
        r: usize,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ParamForm {
    #[default]
    Full,
    /// `P·Qᵀ` with `P: c×rank`, `Q: c'×rank`.
    LowRank { rank: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InterdependenceKind {
    Identity,
    Constant {
        matrix: Matrix,
    },
    Statistical {
        kernel: StatKernel,
    },
    Numerical {
        kernel: NumKernel,
    },
    /// Free `c×cols` matrix reconciled from the parameters.
    Parameterized {
        cols: usize,
        #[serde(default)]
        form: ParamForm,
    },
    /// `Zᵀ·W·Z` with `W: r×r`.
    Bilinear,
    /// `Zᵀ·W_p·W_qᵀ·Z` with `W_p, W_q: r×rank`.
    LowRankBilinear {
        rank: usize,
    },
    /// A nested head on `vec(Z)` whose `1×(c·cols)` output is reshaped into `A`.
    RpnHead {
        #[serde(default)]
        transform: DataTransform,
        reconciliation: ReconciliationMethod,
        #[serde(default)]
        remainder: Remainder,
        cols: usize,
    },
    Grid(GridStructure),
    Chain(ChainStructure),
    Graph(GraphStructure),
    /// Fuses several constituents; parameters are the constituents' in order,
    /// followed by the fusion's.
    Hybrid {
        parts: Vec<InterdependenceKind>,
        #[serde(default)]
        fusion: FusionSpec,
    },
}

/// A built matrix, kept sparse when the construction allows it.
#[derive(Clone, Debug, PartialEq)]
pub enum InterdependenceMatrix {
    Dense(Matrix),
    Sparse(SparseMatrix),
}

impl InterdependenceMatrix {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Self::Dense(m) => m.shape(),
            Self::Sparse(s) => s.shape(),
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            Self::Dense(m) => m.count_nonzero(),
            Self::Sparse(s) => s.nnz(),
        }
    }

    pub fn to_dense(&self) -> Matrix {
        match self {
            Self::Dense(m) => m.clone(),
            Self::Sparse(s) => s.to_dense(),
        }
    }

    pub fn to_sparse(&self) -> SparseMatrix {
        match self {
            Self::Dense(m) => SparseMatrix::from_dense(m),
            Self::Sparse(s) => s.clone(),
        }
    }
}

/// An interdependence matrix as it enters a head's forward pass.
#[derive(Clone, Debug)]
pub enum StationMatrix {
    Sparse(Arc<SparseMatrix>),
    Node(Var),
}

impl StationMatrix {
    pub fn shape(&self, tape: &Tape) -> (usize, usize) {
        match self {
            Self::Sparse(s) => s.shape(),
            Self::Node(v) => tape.value(*v).shape(),
        }
    }

    pub fn value(&self, tape: &Tape) -> InterdependenceMatrix {
        match self {
            Self::Sparse(s) => InterdependenceMatrix::Sparse((**s).clone()),
            Self::Node(v) => InterdependenceMatrix::Dense(tape.value(*v).clone()),
        }
    }

    /// `x·A`.
    pub fn apply_attribute(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Self::Sparse(s) => tape.sparse_right(x, s.clone()),
            Self::Node(a) => tape.matmul(x, *a),
        }
    }

    /// `Aᵀ·x`.
    pub fn apply_instance(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Self::Sparse(s) => tape.sparse_left(Arc::new(s.transpose()), x),
            Self::Node(a) => {
                let at = tape.transpose(*a);
                tape.matmul(at, x)
            }
        }
    }

    fn into_node(self, tape: &mut Tape) -> Var {
        match self {
            Self::Sparse(s) => tape.constant(s.to_dense()),
            Self::Node(v) => v,
        }
    }
}

impl InterdependenceKind {
    /// Whether building needs the input batch.
    pub fn needs_data(&self) -> bool {
        match self {
            Self::Statistical { .. }
            | Self::Numerical { .. }
            | Self::Bilinear
            | Self::LowRankBilinear { .. }
            | Self::RpnHead { .. } => true,
            Self::Hybrid { parts, .. } => parts.iter().any(Self::needs_data),
            _ => false,
        }
    }

    fn rpn_spec(
        transform: &DataTransform,
        method: &ReconciliationMethod,
        (r, c): (usize, usize),
        cols: usize,
    ) -> Result<ReconciliationSpec> {
        let spec = ReconciliationSpec::new(method.clone(), c * cols, transform.output_dim(r * c)?);
        spec.validate()?;
        Ok(spec)
    }

    /// Output column count for a dispatched input of shape `(r, c)`.
    pub fn output_cols(&self, dims: (usize, usize)) -> Result<usize> {
        let c = dims.1;
        Ok(match self {
            Self::Identity
            | Self::Statistical { .. }
            | Self::Numerical { .. }
            | Self::Bilinear
            | Self::LowRankBilinear { .. }
            | Self::Chain(_) => c,
            Self::Constant { matrix } => {
                if matrix.rows() != c {
                    return Err(shape_err("constant interdependence rows", c, matrix.rows()));
                }
                matrix.cols()
            }
            Self::Parameterized { cols, .. } | Self::RpnHead { cols, .. } => *cols,
            Self::Grid(g) => {
                if g.grid.size() != c {
                    return Err(shape_err("grid interdependence width", g.grid.size(), c));
                }
                g.output_dim()?
            }
            Self::Graph(g) => {
                if g.graph.nodes != c {
                    return Err(shape_err("graph interdependence width", g.graph.nodes, c));
                }
                c
            }
            Self::Hybrid { parts, fusion } => {
                let widths = self.part_widths(parts, dims)?;
                fusion.output_width(&widths)
            }
        })
    }

    fn part_widths(
        &self,
        parts: &[InterdependenceKind],
        dims: (usize, usize),
    ) -> Result<Vec<usize>> {
        if parts.is_empty() {
            return Err(Error::InvalidParameter(
                "hybrid interdependence needs parts".into(),
            ));
        }
        parts.iter().map(|p| p.output_cols(dims)).collect()
    }

    /// Learnable parameter count for a dispatched input of shape `(r, c)`.
    pub fn param_length(&self, dims: (usize, usize)) -> Result<usize> {
        let (r, c) = dims;
        Ok(match self {
            Self::Parameterized { cols, form } => match form {
                ParamForm::Full => c * cols,
                ParamForm::LowRank { rank } => (c + cols) * rank,
            },
            Self::Bilinear => r * r,
            Self::LowRankBilinear { rank } => 2 * r * rank,
            Self::RpnHead {
                transform,
                reconciliation,
                cols,
                ..
            } => Self::rpn_spec(transform, reconciliation, dims, *cols)?.param_length(),
            Self::Hybrid { parts, fusion } => {
                let mut total = 0;
                for p in parts {
                    total += p.param_length(dims)?;
                }
                total + fusion.param_length(&self.part_widths(parts, dims)?)
            }
            _ => 0,
        })
    }

    /// Records the construction on `tape`. `z` is the dispatched input (only
    /// read by data-dependent kinds) and `params` a `1×l` node.
    pub fn build_on_tape(
        &self,
        tape: &mut Tape,
        z: Option<Var>,
        dims: (usize, usize),
        params: Var,
    ) -> Result<StationMatrix> {
        let expected = self.param_length(dims)?;
        let found = tape.value(params).len();
        if found != expected {
            return Err(Error::ParamLength {
                context: "interdependence".into(),
                expected,
                found,
            });
        }
        let (r, c) = dims;
        let data = || {
            z.ok_or_else(|| {
                Error::MissingData("data-dependent interdependence needs an input batch".into())
            })
        };
        if let Some(zv) = z {
            if tape.value(zv).shape() != dims {
                let (zr, zc) = tape.value(zv).shape();
                return Err(shape_err(
                    "dispatched input",
                    format!("{r}x{c}"),
                    format!("{zr}x{zc}"),
                ));
            }
        }
        let sparse = |s: SparseMatrix| Ok(StationMatrix::Sparse(Arc::new(s)));
        match self {
            Self::Identity => sparse(SparseMatrix::identity(c)),
            Self::Constant { matrix } => {
                self.output_cols(dims)?;
                Ok(StationMatrix::Node(tape.constant(matrix.clone())))
            }
            Self::Statistical { kernel } => {
                let a = kernel.matrix(tape.value(data()?))?;
                Ok(StationMatrix::Node(tape.constant(a)))
            }
            Self::Numerical { kernel } => {
                let a = kernel.matrix(tape.value(data()?))?;
                Ok(StationMatrix::Node(tape.constant(a)))
            }
            Self::Parameterized { cols, form } => {
                let method = match form {
                    ParamForm::Full => ReconciliationMethod::Identity,
                    ParamForm::LowRank { rank } => ReconciliationMethod::Lorr { rank: *rank },
                };
                let a =
                    ReconciliationSpec::new(method, c, *cols).reconcile_on_tape(tape, params)?;
                Ok(StationMatrix::Node(a))
            }
            Self::Bilinear => {
                let z = data()?;
                let w = tape.reshape(params, r, r)?;
                let zt = tape.transpose(z);
                let left = tape.matmul(zt, w)?;
                Ok(StationMatrix::Node(tape.matmul(left, z)?))
            }
            Self::LowRankBilinear { rank } => {
                let z = data()?;
                let len = r * rank;
                let wp = tape.slice_cols(params, 0, len)?;
                let wp = tape.reshape(wp, r, *rank)?;
                let wq = tape.slice_cols(params, len, len)?;
                let wq = tape.reshape(wq, r, *rank)?;
                let zt = tape.transpose(z);
                let left = tape.matmul(zt, wp)?;
                let wqt = tape.transpose(wq);
                let right = tape.matmul(wqt, z)?;
                Ok(StationMatrix::Node(tape.matmul(left, right)?))
            }
            Self::RpnHead {
                transform,
                reconciliation,
                remainder,
                cols,
            } => {
                let z = data()?;
                let spec = Self::rpn_spec(transform, reconciliation, dims, *cols)?;
                let flat = tape.reshape(z, 1, r * c)?;
                let expanded = transform.apply_on_tape(tape, flat)?;
                let psi = spec.reconcile_on_tape(tape, params)?;
                let psi_t = tape.transpose(psi);
                let inner = tape.matmul(expanded, psi_t)?;
                let rest = remainder.apply_on_tape(tape, flat, c * cols)?;
                let out = tape.add(inner, rest)?;
                Ok(StationMatrix::Node(tape.reshape(out, c, *cols)?))
            }
            Self::Grid(g) => {
                self.output_cols(dims)?;
                sparse(g.matrix()?)
            }
            Self::Chain(chain) => sparse(chain.matrix(c)?),
            Self::Graph(g) => {
                self.output_cols(dims)?;
                sparse(g.matrix()?)
            }
            Self::Hybrid { parts, fusion } => {
                let mut offset = 0;
                let mut nodes = Vec::with_capacity(parts.len());
                for part in parts {
                    let len = part.param_length(dims)?;
                    let slice = tape.slice_cols(params, offset, len)?;
                    offset += len;
                    nodes.push(part.build_on_tape(tape, z, dims, slice)?.into_node(tape));
                }
                let rest = tape.slice_cols(params, offset, expected - offset)?;
                Ok(StationMatrix::Node(
                    fusion.fuse_on_tape(tape, &nodes, rest)?,
                ))
            }
        }
    }
}

/// Full specification of one interdependence station.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterdependenceSpec {
    pub kind: InterdependenceKind,
    #[serde(default)]
    pub axis: DispatchAxis,
    #[serde(default)]
    pub post_norm: PostNorm,
}

impl InterdependenceSpec {
    pub fn new(kind: InterdependenceKind, axis: DispatchAxis) -> Self {
        Self {
            kind,
            axis,
            post_norm: PostNorm::None,
        }
    }

    pub fn with_post_norm(mut self, post_norm: PostNorm) -> Self {
        self.post_norm = post_norm;
        self
    }

    /// Shape of the dispatched input for a `b×m` batch.
    pub fn dispatched_dims(&self, (b, m): (usize, usize)) -> (usize, usize) {
        match self.axis {
            DispatchAxis::Attribute => (b, m),
            DispatchAxis::Instance => (m, b),
        }
    }

    pub fn param_length(&self, x_shape: (usize, usize)) -> Result<usize> {
        self.kind.param_length(self.dispatched_dims(x_shape))
    }

    /// `m'` for attribute dispatch, `b'` for instance dispatch.
    pub fn output_dim(&self, x_shape: (usize, usize)) -> Result<usize> {
        self.kind.output_cols(self.dispatched_dims(x_shape))
    }

    /// Builds the matrix for the batch node `x` on `tape`.
    pub fn build_on_tape(&self, tape: &mut Tape, x: Var, params: Var) -> Result<StationMatrix> {
        let dims = self.dispatched_dims(tape.value(x).shape());
        let z = self.kind.needs_data().then(|| match self.axis {
            DispatchAxis::Attribute => x,
            DispatchAxis::Instance => tape.transpose(x),
        });
        let built = self.kind.build_on_tape(tape, z, dims, params)?;
        normalize(tape, built, self.post_norm)
    }

    /// Value-only construction.
    pub fn build(&self, x: &Matrix, params: &[f64]) -> Result<InterdependenceMatrix> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let pv = tape.constant(Matrix::row_vector(params.to_vec()));
        Ok(self.build_on_tape(&mut tape, xv, pv)?.value(&tape))
    }

    /// Construction for data-independent kinds given the undispatched
    /// `(b, m)` shape.
    pub fn build_structural(
        &self,
        x_shape: (usize, usize),
        params: &[f64],
    ) -> Result<InterdependenceMatrix> {
        if self.kind.needs_data() {
            return Err(Error::MissingData(
                "interdependence kind reads the input batch".into(),
            ));
        }
        let mut tape = Tape::new();
        let pv = tape.constant(Matrix::row_vector(params.to_vec()));
        let dims = self.dispatched_dims(x_shape);
        let built = self.kind.build_on_tape(&mut tape, None, dims, pv)?;
        Ok(normalize(&mut tape, built, self.post_norm)?.value(&tape))
    }
}

fn normalize_sparse(s: &SparseMatrix, by_row: bool) -> Result<SparseMatrix> {
    let len = if by_row { s.rows() } else { s.cols() };
    let mut mass = vec![0.0; len];
    for &(i, j, v) in s.entries() {
        mass[if by_row { i } else { j }] += v.abs();
    }
    let scaled = s
        .entries()
        .iter()
        .map(|&(i, j, v)| (i, j, v / mass[if by_row { i } else { j }]))
        .collect();
    SparseMatrix::from_triplets(s.rows(), s.cols(), scaled)
}

fn normalize(tape: &mut Tape, built: StationMatrix, post: PostNorm) -> Result<StationMatrix> {
    Ok(match (post, built) {
        (PostNorm::None, built) => built,
        (PostNorm::RowL1, StationMatrix::Sparse(s)) => {
            StationMatrix::Sparse(Arc::new(normalize_sparse(&s, true)?))
        }
        (PostNorm::ColL1, StationMatrix::Sparse(s)) => {
            StationMatrix::Sparse(Arc::new(normalize_sparse(&s, false)?))
        }
        (PostNorm::RowL1, built) => {
            let a = built.into_node(tape);
            StationMatrix::Node(tape.normalize_l1(a, Axis::Row))
        }
        (PostNorm::ColL1, built) => {
            let a = built.into_node(tape);
            StationMatrix::Node(tape.normalize_l1(a, Axis::Column))
        }
        (PostNorm::ColSoftmax, built) => {
            let a = built.into_node(tape);
            StationMatrix::Node(tape.softmax(a, Axis::Column, 1.0))
        }
        (PostNorm::ScaledColSoftmax { r }, built) => {
            let a = built.into_node(tape);
            StationMatrix::Node(tape.scaled_softmax(a, r, Axis::Column)?)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric_core::{finite_difference, max_relative_error, NormKind, Prng};
    use proptest::prelude::*;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut prng = Prng::new(seed);
        Matrix::from_fn(rows, cols, |_, _| prng.normal())
    }

    fn random_params(len: usize, seed: u64) -> Vec<f64> {
        let mut prng = Prng::new(seed);
        (0..len).map(|_| prng.normal()).collect()
    }

    /// Gradient of `sum(A ⊙ G)` with respect to the parameters, by tape and
    /// by central differences.
    fn gradient_check(spec: &InterdependenceSpec, x: &Matrix, seed: u64) -> f64 {
        let len = spec.param_length(x.shape()).unwrap();
        let w = random_params(len, seed);
        let (rows, cols) = spec.build(x, &w).unwrap().shape();
        let g = random(rows, cols, seed + 1);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let pv = tape.parameter(Matrix::row_vector(w.clone()));
        let a = spec.build_on_tape(&mut tape, xv, pv).unwrap();
        let StationMatrix::Node(a) = a else {
            panic!("parametric kinds are dense")
        };
        let gv = tape.constant(g.clone());
        let prod = tape.mul(a, gv).unwrap();
        let loss = tape.sum(prod);
        let analytic = tape.backward(loss).unwrap().get(pv).unwrap().clone();
        let numeric = finite_difference(&Matrix::row_vector(w), 1e-6, |p| {
            spec.build(x, p.as_slice())
                .unwrap()
                .to_dense()
                .hadamard(&g)
                .unwrap()
                .sum()
        });
        max_relative_error(&analytic, &numeric)
    }

    #[test]
    fn low_rank_bilinear_matches_dense_oracle() {
        for seed in 0..5 {
            let x = random(6, 4, seed);
            let spec = InterdependenceSpec::new(
                InterdependenceKind::LowRankBilinear { rank: 2 },
                DispatchAxis::Attribute,
            );
            assert_eq!(spec.param_length(x.shape()).unwrap(), 2 * 6 * 2);
            let w = random_params(24, seed + 10);
            let got = spec.build(&x, &w).unwrap().to_dense();
            let wp = Matrix::new(6, 2, w[..12].to_vec()).unwrap();
            let wq = Matrix::new(6, 2, w[12..].to_vec()).unwrap();
            // Entry-wise oracle: A(i, j) = Σ_{k, l, s} X(k,i) Wp(k,s) Wq(l,s) X(l,j).
            let oracle = Matrix::from_fn(4, 4, |i, j| {
                let mut acc = 0.0;
                for k in 0..6 {
                    for l in 0..6 {
                        for s in 0..2 {
                            acc += x[(k, i)] * wp[(k, s)] * wq[(l, s)] * x[(l, j)];
                        }
                    }
                }
                acc
            });
            assert!(got.max_abs_diff(&oracle).unwrap() < 1e-12);
        }
    }

    #[test]
    fn identity_bilinear_is_linear_kernel() {
        let x = random(5, 3, 2);
        let mut eye = vec![0.0; 25];
        for i in 0..5 {
            eye[i * 5 + i] = 1.0;
        }
        let bilinear =
            InterdependenceSpec::new(InterdependenceKind::Bilinear, DispatchAxis::Attribute);
        let linear = InterdependenceSpec::new(
            InterdependenceKind::Numerical {
                kernel: NumKernel::Linear,
            },
            DispatchAxis::Attribute,
        );
        let a = bilinear.build(&x, &eye).unwrap().to_dense();
        let b = linear.build(&x, &[]).unwrap().to_dense();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-12);
    }

    #[test]
    fn parametric_gradients_match_finite_differences() {
        let x = random(4, 3, 5);
        let kinds = [
            InterdependenceKind::Bilinear,
            InterdependenceKind::LowRankBilinear { rank: 2 },
            InterdependenceKind::Parameterized {
                cols: 2,
                form: ParamForm::Full,
            },
            InterdependenceKind::Parameterized {
                cols: 5,
                form: ParamForm::LowRank { rank: 2 },
            },
            InterdependenceKind::RpnHead {
                transform: DataTransform::Identity,
                reconciliation: ReconciliationMethod::Lorr { rank: 2 },
                remainder: Remainder::Zero,
                cols: 2,
            },
        ];
        for (i, kind) in kinds.into_iter().enumerate() {
            for axis in [DispatchAxis::Attribute, DispatchAxis::Instance] {
                let spec = InterdependenceSpec::new(kind.clone(), axis);
                let err = gradient_check(&spec, &x, i as u64);
                assert!(err < 1e-5, "{kind:?} {axis:?}: {err}");
            }
        }
    }

    #[test]
    fn softmax_post_norm_gradient() {
        let x = random(4, 3, 8);
        let spec = InterdependenceSpec::new(
            InterdependenceKind::LowRankBilinear { rank: 2 },
            DispatchAxis::Instance,
        )
        .with_post_norm(PostNorm::ScaledColSoftmax { r: 2 });
        assert!(gradient_check(&spec, &x, 3) < 1e-5);
    }

    #[test]
    fn rpn_head_with_constant_remainder_returns_it() {
        let x = random(3, 2, 4);
        let base = random(2, 3, 9);
        let spec = InterdependenceSpec::new(
            InterdependenceKind::RpnHead {
                transform: DataTransform::Identity,
                reconciliation: ReconciliationMethod::Zero,
                remainder: Remainder::Constant {
                    value: base.reshape(1, 6).unwrap(),
                },
                cols: 3,
            },
            DispatchAxis::Attribute,
        );
        assert_eq!(spec.param_length(x.shape()).unwrap(), 0);
        assert_eq!(spec.build(&x, &[]).unwrap().to_dense(), base);
    }

    #[test]
    fn rpn_head_on_unit_input_is_parameterized() {
        // With Z = [[1]] the nested head returns ψ(w) reshaped, which is the
        // free parameter matrix.
        let x = Matrix::filled(1, 1, 1.0);
        let w = random_params(4, 6);
        let nested = InterdependenceSpec::new(
            InterdependenceKind::RpnHead {
                transform: DataTransform::Identity,
                reconciliation: ReconciliationMethod::Identity,
                remainder: Remainder::Zero,
                cols: 4,
            },
            DispatchAxis::Attribute,
        );
        let free = InterdependenceSpec::new(
            InterdependenceKind::Parameterized {
                cols: 4,
                form: ParamForm::Full,
            },
            DispatchAxis::Attribute,
        );
        assert_eq!(nested.build(&x, &w).unwrap(), free.build(&x, &w).unwrap());
    }

    #[test]
    fn structural_build_rejects_data_kinds() {
        let spec = InterdependenceSpec::new(InterdependenceKind::Bilinear, DispatchAxis::Attribute);
        assert!(matches!(
            spec.build_structural((2, 3), &[0.0; 4]),
            Err(Error::MissingData(_))
        ));
        let chain = InterdependenceSpec::new(
            InterdependenceKind::Chain(ChainStructure::default()),
            DispatchAxis::Instance,
        );
        let a = chain.build_structural((5, 2), &[]).unwrap();
        assert_eq!(a.shape(), (5, 5));
        assert!(matches!(a, InterdependenceMatrix::Sparse(_)));
    }

    #[test]
    fn parameter_length_is_checked() {
        let spec = InterdependenceSpec::new(
            InterdependenceKind::Parameterized {
                cols: 2,
                form: ParamForm::Full,
            },
            DispatchAxis::Attribute,
        );
        let x = random(2, 3, 1);
        assert!(matches!(
            spec.build(&x, &[0.0; 5]),
            Err(Error::ParamLength { .. })
        ));
    }

    #[test]
    fn hybrid_support_contains_each_part() {
        let chain = ChainStructure {
            direction: ChainDirection::Bi,
            ..Default::default()
        };
        let spec = InterdependenceSpec::new(
            InterdependenceKind::Hybrid {
                parts: vec![
                    InterdependenceKind::Identity,
                    InterdependenceKind::Chain(chain),
                ],
                fusion: FusionSpec::Sum,
            },
            DispatchAxis::Attribute,
        );
        let a = spec.build_structural((3, 6), &[]).unwrap().to_dense();
        let parts = [
            SparseMatrix::identity(6).to_dense(),
            chain.matrix(6).unwrap().to_dense(),
        ];
        for part in parts {
            for i in 0..6 {
                for j in 0..6 {
                    if part[(i, j)] != 0.0 {
                        assert_ne!(a[(i, j)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn hybrid_parameters_are_split_in_order() {
        let x = random(3, 2, 7);
        let first = InterdependenceKind::Parameterized {
            cols: 2,
            form: ParamForm::Full,
        };
        let spec = InterdependenceSpec::new(
            InterdependenceKind::Hybrid {
                parts: vec![first.clone(), InterdependenceKind::Bilinear],
                fusion: FusionSpec::WeightedSum {
                    weights: vec![1.0, 0.0],
                    learnable: true,
                },
            },
            DispatchAxis::Attribute,
        );
        assert_eq!(spec.param_length(x.shape()).unwrap(), 4 + 9 + 2);
        let w = random_params(15, 1);
        let mut w = w;
        w[13] = 1.0;
        w[14] = 0.0;
        let got = spec.build(&x, &w).unwrap().to_dense();
        let alone = InterdependenceSpec::new(first, DispatchAxis::Attribute)
            .build(&x, &w[..4])
            .unwrap();
        assert!(got.max_abs_diff(&alone.to_dense()).unwrap() < 1e-15);
    }

    #[test]
    fn instance_dispatch_sees_transposed_batch() {
        let x = random(4, 3, 2);
        let spec = InterdependenceSpec::new(
            InterdependenceKind::Numerical {
                kernel: NumKernel::Linear,
            },
            DispatchAxis::Instance,
        );
        let a = spec.build(&x, &[]).unwrap().to_dense();
        assert_eq!(a.shape(), (4, 4));
        assert!(a.max_abs_diff(&x.matmul(&x.transpose()).unwrap()).unwrap() < 1e-12);
    }

    #[test]
    fn sparse_post_norm_stays_sparse() {
        let spec = InterdependenceSpec::new(
            InterdependenceKind::Chain(ChainStructure {
                variant: ChainVariant::Accumulative { h: 2 },
                ..Default::default()
            }),
            DispatchAxis::Attribute,
        )
        .with_post_norm(PostNorm::ColL1);
        let a = spec.build_structural((1, 7), &[]).unwrap();
        let InterdependenceMatrix::Sparse(s) = &a else {
            panic!("expected sparse")
        };
        let dense = s.to_dense();
        for j in 0..7 {
            assert!((dense.column(j).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn serde_rejects_unknown_fields() {
        let text = r#"{"kind":{"chain":{"direction":"bi","variant":{"multihop":{"h":2}}}},"axis":"instance"}"#;
        let spec: InterdependenceSpec = serde_json::from_str(text).unwrap();
        assert_eq!(spec.axis, DispatchAxis::Instance);
        let bad = r#"{"kind":"identity","axis":"instance","extra":1}"#;
        assert!(serde_json::from_str::<InterdependenceSpec>(bad).is_err());
    }

    proptest! {
        #[test]
        fn column_l1_gives_unit_column_sums(seed in 0u64..200) {
            let x = random(3, 5, seed).map(f64::abs);
            let spec = InterdependenceSpec::new(
                InterdependenceKind::Numerical { kernel: NumKernel::GaussianRbf { sigma: 1.0 } },
                DispatchAxis::Attribute,
            )
            .with_post_norm(PostNorm::ColL1);
            let a = spec.build(&x, &[]).unwrap().to_dense();
            for j in 0..5 {
                prop_assert!((a.column(j).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn instance_dispatch_equals_attribute_dispatch_of_transpose(seed in 0u64..200) {
            let x = random(4, 3, seed);
            let w = random_params(2 * 3 * 2, seed + 1);
            let kind = InterdependenceKind::LowRankBilinear { rank: 2 };
            let inst = InterdependenceSpec::new(kind.clone(), DispatchAxis::Instance).build(&x, &w).unwrap();
            let attr = InterdependenceSpec::new(kind, DispatchAxis::Attribute).build(&x.transpose(), &w).unwrap();
            prop_assert!(inst.to_dense().sub(&attr.to_dense()).unwrap().norm(NormKind::Frobenius) < 1e-12);
        }
    }
}
