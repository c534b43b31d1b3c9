//! Reverse-mode differentiation over matrix-valued nodes.
//!
//! Every operation appends a node holding its value and the ids of its
//! parents, so node ids are already a topological order. [`Tape::backward`]
//! walks the ids in reverse and visits each node once.

use std::sync::Arc;

use super::{Axis, Dense, SparseCoo};
use crate::error::{shape_err, Error, Result};
use crate::Matrix;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SparseLeft(Arc<SparseCoo<f64>>, Var),
    SparseRight(Var, Arc<SparseCoo<f64>>),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    ScaleRows(Var, Var),
    ScaleCols(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax {
        input: Var,
        axis: Axis,
        scale: f64,
    },
    LogSoftmaxRows(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Transpose(Var),
    NormalizeL1 {
        input: Var,
        axis: Axis,
    },
    Sum(Var),
    SliceCols {
        input: Var,
        start: usize,
    },
    KronRows(Var, Var),
    /// Elementwise map whose Jacobian is diagonal in each input.
    Linearized {
        inputs: Vec<Var>,
        local: Vec<Matrix>,
    },
}

#[derive(Clone, Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Record of a forward computation.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    parameters: Vec<Var>,
}

/// Gradients of a scalar loss with respect to every node that requires them.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }
}

fn dims(m: &Matrix) -> String {
    format!("{}x{}", m.rows(), m.cols())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn parameter(&mut self, value: Matrix) -> Var {
        let var = self.push(value, Op::Leaf, true);
        self.parameters.push(var);
        var
    }

    pub fn parameters(&self) -> &[Var] {
        &self.parameters
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn push_op(&mut self, value: Matrix, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push_op(value, Op::MatMul(a, b), &[a, b]))
    }

    /// `sparse · a` with a constant sparse factor.
    pub fn sparse_left(&mut self, sparse: Arc<SparseCoo<f64>>, a: Var) -> Result<Var> {
        let value = sparse.matmul_dense(self.value(a))?;
        Ok(self.push_op(value, Op::SparseLeft(sparse, a), &[a]))
    }

    /// `a · sparse` with a constant sparse factor.
    pub fn sparse_right(&mut self, a: Var, sparse: Arc<SparseCoo<f64>>) -> Result<Var> {
        let value = sparse.left_matmul_dense(self.value(a))?;
        Ok(self.push_op(value, Op::SparseRight(a, sparse), &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push_op(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push_op(value, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push_op(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).scale(factor);
        self.push_op(value, Op::Scale(a, factor), &[a])
    }

    /// Adds a scalar to every entry.
    pub fn offset(&mut self, a: Var, shift: f64) -> Var {
        let value = self.value(a).map(|v| v + shift);
        self.push_op(value, Op::Offset(a), &[a])
    }

    /// Multiplies row `i` of `a` by `factors[i]`; `factors` is a column vector.
    pub fn scale_rows(&mut self, a: Var, factors: Var) -> Result<Var> {
        let (m, f) = (self.value(a), self.value(factors));
        if f.cols() != 1 || f.rows() != m.rows() {
            return Err(shape_err("scale_rows", format!("{}x1", m.rows()), dims(f)));
        }
        let value = Dense::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)] * f[(i, 0)]);
        Ok(self.push_op(value, Op::ScaleRows(a, factors), &[a, factors]))
    }

    /// Multiplies column `j` of `a` by `factors[j]`; `factors` is a row vector.
    pub fn scale_cols(&mut self, a: Var, factors: Var) -> Result<Var> {
        let (m, f) = (self.value(a), self.value(factors));
        if f.rows() != 1 || f.cols() != m.cols() {
            return Err(shape_err("scale_cols", format!("1x{}", m.cols()), dims(f)));
        }
        let value = Dense::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)] * f[(0, j)]);
        Ok(self.push_op(value, Op::ScaleCols(a, factors), &[a, factors]))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push_op(value, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push_op(value, Op::Sigmoid(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push_op(value, Op::Relu(a), &[a])
    }

    /// `softmax(scale · a)` along `axis`.
    pub fn softmax(&mut self, a: Var, axis: Axis, scale: f64) -> Var {
        let value = self.value(a).softmax_with_scale(scale, axis);
        self.push_op(
            value,
            Op::Softmax {
                input: a,
                axis,
                scale,
            },
            &[a],
        )
    }

    /// `softmax(a / √r)` along `axis`.
    pub fn scaled_softmax(&mut self, a: Var, r: usize, axis: Axis) -> Result<Var> {
        if r == 0 {
            return Err(Error::InvalidParameter(
                "scaled_softmax requires r >= 1".into(),
            ));
        }
        Ok(self.softmax(a, axis, 1.0 / (r as f64).sqrt()))
    }

    pub fn log_softmax_rows(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let mut value = m.clone();
        for i in 0..m.rows() {
            let row = value.row_mut(i);
            let max = row.iter().fold(f64::NEG_INFINITY, |x, &v| x.max(v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.push_op(value, Op::LogSoftmaxRows(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let value = self.value(a).reshape(rows, cols)?;
        Ok(self.push_op(value, Op::Reshape(a), &[a]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Dense::hcat(&refs)?;
        Ok(self.push_op(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let refs: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Dense::vcat(&refs)?;
        Ok(self.push_op(value, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push_op(value, Op::Transpose(a), &[a])
    }

    /// Divides each slice by its absolute sum; zero-mass slices pass through.
    pub fn normalize_l1(&mut self, a: Var, axis: Axis) -> Var {
        let value = self.value(a).normalize_l1(axis);
        self.push_op(value, Op::NormalizeL1 { input: a, axis }, &[a])
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Dense::filled(1, 1, self.value(a).sum());
        self.push_op(value, Op::Sum(a), &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.value(a).column_block(start, len)?;
        Ok(self.push_op(value, Op::SliceCols { input: a, start }, &[a]))
    }

    /// Row-wise Kronecker product: row `i` of the output is `a_i ⊗ b_i`.
    pub fn kron_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ma, mb) = (self.value(a), self.value(b));
        if ma.rows() != mb.rows() {
            return Err(shape_err("kron_rows", ma.rows(), mb.rows()));
        }
        let nb = mb.cols();
        let value = Dense::from_fn(ma.rows(), ma.cols() * nb, |i, k| {
            ma[(i, k / nb)] * mb[(i, k % nb)]
        });
        Ok(self.push_op(value, Op::KronRows(a, b), &[a, b]))
    }

    /// Records an elementwise function of `inputs` from its value and its
    /// per-input partial derivatives.
    pub fn linearized(&mut self, inputs: &[Var], value: Matrix, local: Vec<Matrix>) -> Result<Var> {
        if inputs.len() != local.len() {
            return Err(shape_err("linearized partials", inputs.len(), local.len()));
        }
        for (&v, d) in inputs.iter().zip(&local) {
            value.ensure_same_shape(self.value(v), "linearized input")?;
            value.ensure_same_shape(d, "linearized partial")?;
        }
        Ok(self.push_op(
            value,
            Op::Linearized {
                inputs: inputs.to_vec(),
                local,
            },
            inputs,
        ))
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(Error::NonScalarLoss {
                rows: lv.rows(),
                cols: lv.cols(),
            });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Dense::filled(1, 1, 1.0));
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            self.propagate(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, g: &Matrix, grads: &mut [Option<Matrix>]) -> Result<()> {
        let node = &self.nodes[id];
        let y = &node.value;
        let mut send = |target: Var, delta: Matrix| -> Result<()> {
            if !self.nodes[target.0].requires_grad {
                return Ok(());
            }
            match &mut grads[target.0] {
                Some(acc) => acc.add_scaled(&delta, 1.0)?,
                slot @ None => *slot = Some(delta),
            }
            Ok(())
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    send(*a, g.matmul(&self.value(*b).transpose())?)?;
                }
                if self.requires_grad(*b) {
                    send(*b, self.value(*a).transpose().matmul(g)?)?;
                }
            }
            Op::SparseLeft(s, a) => send(*a, s.transpose().matmul_dense(g)?)?,
            Op::SparseRight(a, s) => send(*a, s.transpose().left_matmul_dense(g)?)?,
            Op::Add(a, b) => {
                send(*a, g.clone())?;
                send(*b, g.clone())?;
            }
            Op::Sub(a, b) => {
                send(*a, g.clone())?;
                send(*b, g.scale(-1.0))?;
            }
            Op::Mul(a, b) => {
                send(*a, g.hadamard(self.value(*b))?)?;
                send(*b, g.hadamard(self.value(*a))?)?;
            }
            Op::Scale(a, c) => send(*a, g.scale(*c))?,
            Op::Offset(a) => send(*a, g.clone())?,
            Op::ScaleRows(a, f) => {
                let (m, fv) = (self.value(*a), self.value(*f));
                send(
                    *a,
                    Dense::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * fv[(i, 0)]),
                )?;
                let df = (0..m.rows())
                    .map(|i| (0..m.cols()).map(|j| g[(i, j)] * m[(i, j)]).sum())
                    .collect();
                send(*f, Dense::column_vector(df))?;
            }
            Op::ScaleCols(a, f) => {
                let (m, fv) = (self.value(*a), self.value(*f));
                send(
                    *a,
                    Dense::from_fn(g.rows(), g.cols(), |i, j| g[(i, j)] * fv[(0, j)]),
                )?;
                let df = (0..m.cols())
                    .map(|j| (0..m.rows()).map(|i| g[(i, j)] * m[(i, j)]).sum())
                    .collect();
                send(*f, Dense::row_vector(df))?;
            }
            Op::Tanh(a) => send(*a, g.zip_map(y, |gv, yv| gv * (1.0 - yv * yv))?)?,
            Op::Sigmoid(a) => send(*a, g.zip_map(y, |gv, yv| gv * yv * (1.0 - yv))?)?,
            Op::Relu(a) => send(
                *a,
                g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })?,
            )?,
            Op::Softmax { input, axis, scale } => {
                let mut da = Dense::zeros(y.rows(), y.cols());
                for_slices(y.shape(), *axis, |idx| {
                    let dot: f64 = idx.iter().map(|&k| g.as_slice()[k] * y.as_slice()[k]).sum();
                    for &k in idx {
                        da.as_mut_slice()[k] = scale * y.as_slice()[k] * (g.as_slice()[k] - dot);
                    }
                });
                send(*input, da)?;
            }
            Op::LogSoftmaxRows(a) => {
                let mut da = g.clone();
                for i in 0..y.rows() {
                    let total: f64 = g.row(i).iter().sum();
                    for (d, &lv) in da.row_mut(i).iter_mut().zip(y.row(i)) {
                        *d -= lv.exp() * total;
                    }
                }
                send(*a, da)?;
            }
            Op::Reshape(a) => {
                let src = self.value(*a);
                send(*a, g.reshape(src.rows(), src.cols())?)?;
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let width = self.value(p).cols();
                    send(p, g.column_block(start, width)?)?;
                    start += width;
                }
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let (rows, cols) = self.value(p).shape();
                    let block = g.as_slice()[start * cols..(start + rows) * cols].to_vec();
                    send(p, Dense::new(rows, cols, block)?)?;
                    start += rows;
                }
            }
            Op::Transpose(a) => send(*a, g.transpose())?,
            Op::NormalizeL1 { input, axis } => {
                let x = self.value(*input);
                let mut da = g.clone();
                for_slices(x.shape(), *axis, |idx| {
                    let mass: f64 = idx.iter().map(|&k| x.as_slice()[k].abs()).sum();
                    if mass == 0.0 {
                        return;
                    }
                    let dot: f64 = idx.iter().map(|&k| g.as_slice()[k] * y.as_slice()[k]).sum();
                    for &k in idx {
                        let sign = x.as_slice()[k].signum() * f64::from(x.as_slice()[k] != 0.0);
                        da.as_mut_slice()[k] = (g.as_slice()[k] - sign * dot) / mass;
                    }
                });
                send(*input, da)?;
            }
            Op::Sum(a) => {
                let (rows, cols) = self.value(*a).shape();
                send(*a, Dense::filled(rows, cols, g[(0, 0)]))?;
            }
            Op::SliceCols { input, start } => {
                let (rows, cols) = self.value(*input).shape();
                let mut da = Dense::zeros(rows, cols);
                for i in 0..rows {
                    da.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                }
                send(*input, da)?;
            }
            Op::KronRows(a, b) => {
                let (ma, mb) = (self.value(*a), self.value(*b));
                let nb = mb.cols();
                let mut da = Dense::zeros(ma.rows(), ma.cols());
                let mut db = Dense::zeros(mb.rows(), nb);
                for i in 0..ma.rows() {
                    for p in 0..ma.cols() {
                        for q in 0..nb {
                            let gv = g[(i, p * nb + q)];
                            da[(i, p)] += gv * mb[(i, q)];
                            db[(i, q)] += gv * ma[(i, p)];
                        }
                    }
                }
                send(*a, da)?;
                send(*b, db)?;
            }
            Op::Linearized { inputs, local } => {
                for (&v, d) in inputs.iter().zip(local) {
                    send(v, g.hadamard(d)?)?;
                }
            }
        }
        Ok(())
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn for_slices(shape: (usize, usize), axis: Axis, mut f: impl FnMut(&[usize])) {
    let (rows, cols) = shape;
    match axis {
        Axis::Row => {
            for i in 0..rows {
                let idx: Vec<usize> = (i * cols..(i + 1) * cols).collect();
                f(&idx);
            }
        }
        Axis::Column => {
            for j in 0..cols {
                let idx: Vec<usize> = (0..rows).map(|i| i * cols + j).collect();
                f(&idx);
            }
        }
    }
}

/// Central finite-difference gradient of `f` at `x`, for test oracles.
pub fn finite_difference(x: &Matrix, step: f64, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut grad = Dense::zeros(x.rows(), x.cols());
    let mut probe = x.clone();
    for k in 0..x.len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + step;
        let up = f(&probe);
        probe.as_mut_slice()[k] = orig - step;
        let down = f(&probe);
        probe.as_mut_slice()[k] = orig;
        grad.as_mut_slice()[k] = (up - down) / (2.0 * step);
    }
    grad
}

/// Largest `|a - b| / max(1, |a|, |b|)` over matching entries.
pub fn max_relative_error(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(&x, &y)| (x - y).abs() / 1f64.max(x.abs()).max(y.abs()))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric_core::Prng;

    fn random(rows: usize, cols: usize, prng: &mut Prng) -> Matrix {
        Dense::from_fn(rows, cols, |_, _| prng.uniform(-1.0, 1.0))
    }

    /// Checks the tape gradient of `build(tape, param)` against central differences.
    fn check(rows: usize, cols: usize, seed: u64, build: impl Fn(&mut Tape, Var) -> Var) {
        let mut prng = Prng::new(seed);
        let x0 = random(rows, cols, &mut prng);
        let mut tape = Tape::new();
        let p = tape.parameter(x0.clone());
        let loss = build(&mut tape, p);
        let grads = tape.backward(loss).unwrap();
        let analytic = grads
            .get(p)
            .cloned()
            .unwrap_or_else(|| Dense::zeros(rows, cols));
        let numeric = finite_difference(&x0, 1e-6, |x| {
            let mut t = Tape::new();
            let v = t.parameter(x.clone());
            let out = build(&mut t, v);
            t.value(out)[(0, 0)]
        });
        let err = max_relative_error(&analytic, &numeric);
        assert!(err < 1e-5, "relative error {err}");
    }

    /// Weighted sum so that every output entry influences the loss differently.
    fn weighted_sum(tape: &mut Tape, v: Var, seed: u64) -> Var {
        let (rows, cols) = tape.value(v).shape();
        let mut prng = Prng::new(seed);
        let w = tape.constant(random(rows, cols, &mut prng));
        let prod = tape.mul(v, w).unwrap();
        tape.sum(prod)
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let w = tape.parameter(Dense::filled(2, 2, 0.3));
        let loss = tape.sum(w);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap(), &Dense::filled(2, 2, 1.0));
    }

    #[test]
    fn squared_frobenius_of_product() {
        let mut prng = Prng::new(4);
        let x = random(5, 3, &mut prng);
        let w0 = random(3, 2, &mut prng);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let w = tape.parameter(w0.clone());
        let xw = tape.matmul(xv, w).unwrap();
        let sq = tape.mul(xw, xw).unwrap();
        let loss = tape.sum(sq);
        let g = tape.backward(loss).unwrap();
        let expected = x
            .transpose()
            .matmul(&x)
            .unwrap()
            .matmul(&w0)
            .unwrap()
            .scale(2.0);
        assert!(g.get(w).unwrap().max_abs_diff(&expected).unwrap() < 1e-12);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let w = tape.parameter(Dense::zeros(2, 1));
        assert!(matches!(tape.backward(w), Err(Error::NonScalarLoss { .. })));
    }

    #[test]
    fn matmul_both_sides() {
        let mut prng = Prng::new(8);
        let c = random(3, 4, &mut prng);
        let d = random(4, 3, &mut prng);
        check(4, 2, 1, |t, p| {
            let cv = t.constant(c.clone());
            let dv = t.constant(d.clone());
            let left = t.matmul(cv, p).unwrap();
            let pt = t.transpose(p);
            let right = t.matmul(pt, dv).unwrap();
            let a = weighted_sum(t, left, 2);
            let b = weighted_sum(t, right, 3);
            t.add(a, b).unwrap()
        });
    }

    #[test]
    fn sparse_products() {
        let s = Arc::new(
            SparseCoo::from_triplets(3, 4, vec![(0, 1, 2.0), (2, 3, -1.0), (1, 0, 0.5)]).unwrap(),
        );
        check(4, 2, 2, |t, p| {
            let y = t.sparse_left(s.clone(), p).unwrap();
            weighted_sum(t, y, 5)
        });
        check(2, 3, 3, |t, p| {
            let y = t.sparse_right(p, s.clone()).unwrap();
            weighted_sum(t, y, 6)
        });
    }

    #[test]
    fn elementwise_and_scalar_ops() {
        check(3, 3, 4, |t, p| {
            let a = t.tanh(p);
            let b = t.sigmoid(p);
            let c = t.mul(a, b).unwrap();
            let d = t.scale(c, 1.7);
            let e = t.offset(d, 0.4);
            let f = t.sub(e, p).unwrap();
            weighted_sum(t, f, 7)
        });
    }

    #[test]
    fn relu_away_from_kink() {
        check(3, 2, 5, |t, p| {
            let shifted = t.offset(p, 0.05);
            let r = t.relu(shifted);
            weighted_sum(t, r, 8)
        });
    }

    #[test]
    fn softmax_both_axes() {
        for (axis, seed) in [(Axis::Row, 9), (Axis::Column, 10)] {
            check(3, 4, seed, |t, p| {
                let s = t.scaled_softmax(p, 3, axis).unwrap();
                weighted_sum(t, s, seed + 100)
            });
        }
    }

    #[test]
    fn log_softmax_rows() {
        check(4, 3, 11, |t, p| {
            let s = t.log_softmax_rows(p);
            weighted_sum(t, s, 12)
        });
    }

    #[test]
    fn reshape_transpose_concat_slice() {
        check(2, 6, 13, |t, p| {
            let r = t.reshape(p, 3, 4).unwrap();
            let tr = t.transpose(r);
            let rows = t.concat_rows(&[tr, tr]).unwrap();
            let cols = t.concat_cols(&[r, r]).unwrap();
            let sl = t.slice_cols(cols, 2, 5).unwrap();
            let a = weighted_sum(t, rows, 14);
            let b = weighted_sum(t, sl, 15);
            t.add(a, b).unwrap()
        });
    }

    #[test]
    fn l1_normalization_both_axes() {
        for (axis, seed) in [(Axis::Row, 16), (Axis::Column, 17)] {
            check(3, 3, seed, |t, p| {
                let n = t.normalize_l1(p, axis);
                weighted_sum(t, n, seed + 50)
            });
        }
    }

    #[test]
    fn row_and_column_scaling() {
        let mut prng = Prng::new(18);
        let m = random(3, 4, &mut prng);
        check(3, 1, 19, |t, p| {
            let mv = t.constant(m.clone());
            let y = t.scale_rows(mv, p).unwrap();
            weighted_sum(t, y, 20)
        });
        check(1, 4, 21, |t, p| {
            let mv = t.constant(m.clone());
            let y = t.scale_cols(mv, p).unwrap();
            weighted_sum(t, y, 22)
        });
    }

    #[test]
    fn row_kronecker() {
        check(3, 2, 23, |t, p| {
            let sq = t.mul(p, p).unwrap();
            let k = t.kron_rows(p, sq).unwrap();
            weighted_sum(t, k, 24)
        });
    }

    #[test]
    fn linearized_map() {
        check(2, 3, 25, |t, p| {
            let x = t.value(p).clone();
            let value = x.map(f64::sin);
            let local = x.map(f64::cos);
            let y = t.linearized(&[p], value, vec![local]).unwrap();
            weighted_sum(t, y, 26)
        });
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Dense::filled(2, 2, 1.0));
        let w = tape.parameter(Dense::filled(2, 2, 2.0));
        let prod = tape.matmul(c, w).unwrap();
        let loss = tape.sum(prod);
        let g = tape.backward(loss).unwrap();
        assert!(g.get(c).is_none());
        assert!(g.get(w).is_some());
    }
}
