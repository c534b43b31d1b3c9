use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::{shape_err, Error, Result};

/// Slice direction for softmax and normalization kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Row,
    Column,
}

/// Matrix norms reported by diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Frobenius,
    /// Maximum absolute row sum.
    Infinity,
    /// `sup ‖Az‖_∞` over unit `z`, which is the largest row Euclidean norm.
    TwoToInfinity,
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense<T = f64> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape_err(
                "Dense::new",
                format!("{} values for {rows}x{cols}", rows * cols),
                data.len(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut out = Self::zeros(n, n);
        for i in 0..n {
            out[(i, i)] = T::one();
        }
        out
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(shape_err("Dense::from_rows", cols, bad.len()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn row_vector(data: Vec<T>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn column_vector(data: Vec<T>) -> Self {
        Self {
            rows: data.len(),
            cols: 1,
            data,
        }
    }

    pub fn diagonal(values: &[T]) -> Self {
        let mut out = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            out[(i, i)] = v;
        }
        out
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.ensure_same_shape(other, "elementwise op")?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|v| v * factor)
    }

    /// In-place `self += factor * other`.
    pub fn add_scaled(&mut self, other: &Self, factor: T) -> Result<()> {
        self.ensure_same_shape(other, "add_scaled")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += factor * b;
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(shape_err(
                "matmul",
                format!("inner dimension {}", self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(other.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Integer matrix power by repeated squaring.
    pub fn pow(&self, exponent: usize) -> Result<Self> {
        self.ensure_square("pow")?;
        let mut result = Self::identity(self.rows);
        let mut base = self.clone();
        let mut e = exponent;
        while e > 0 {
            if e & 1 == 1 {
                result = result.matmul(&base)?;
            }
            e >>= 1;
            if e > 0 {
                base = base.matmul(&base)?;
            }
        }
        Ok(result)
    }

    /// Reinterprets the row-major buffer with a new shape.
    pub fn reshape(&self, rows: usize, cols: usize) -> Result<Self> {
        Self::new(rows, cols, self.data.clone())
    }

    /// Concatenates side by side; all parts need the same row count.
    pub fn hcat(parts: &[&Self]) -> Result<Self> {
        let rows = parts.first().map_or(0, |p| p.rows);
        if let Some(bad) = parts.iter().find(|p| p.rows != rows) {
            return Err(shape_err("hcat", format!("{rows} rows"), bad.rows));
        }
        let cols = parts.iter().map(|p| p.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for p in parts {
                data.extend_from_slice(p.row(i));
            }
        }
        Ok(Self { rows, cols, data })
    }

    pub fn vcat(parts: &[&Self]) -> Result<Self> {
        let cols = parts.first().map_or(0, |p| p.cols);
        if let Some(bad) = parts.iter().find(|p| p.cols != cols) {
            return Err(shape_err("vcat", format!("{cols} cols"), bad.cols));
        }
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            rows: data.len() / cols.max(1),
            cols,
            data,
        })
    }

    /// Columns `start..start + len`.
    pub fn column_block(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.cols {
            return Err(Error::OutOfRange(format!(
                "columns {start}..{} of {}",
                start + len,
                self.cols
            )));
        }
        Ok(Self::from_fn(self.rows, len, |i, j| self[(i, start + j)]))
    }

    pub fn sum(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc + v)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != T::zero()).count()
    }

    /// Largest absolute entrywise difference; `None` when shapes differ.
    pub fn max_abs_diff(&self, other: &Self) -> Option<T> {
        self.zip_map(other, |a, b| (a - b).abs())
            .ok()
            .map(|d| d.max_abs())
    }

    pub fn norm(&self, kind: NormKind) -> T {
        match kind {
            NormKind::Frobenius => self.data.iter().fold(T::zero(), |a, &v| a + v * v).sqrt(),
            NormKind::Infinity => (0..self.rows)
                .map(|i| self.row(i).iter().fold(T::zero(), |a, &v| a + v.abs()))
                .fold(T::zero(), T::max),
            NormKind::TwoToInfinity => (0..self.rows)
                .map(|i| self.row(i).iter().fold(T::zero(), |a, &v| a + v * v).sqrt())
                .fold(T::zero(), T::max),
        }
    }

    /// `softmax(A / √r)` along each slice of `axis`, stabilized by max subtraction.
    pub fn scaled_softmax(&self, r: usize, axis: Axis) -> Result<Self> {
        if r == 0 {
            return Err(Error::InvalidParameter(
                "scaled_softmax requires r >= 1".into(),
            ));
        }
        let scale = T::one() / T::from_usize_lossy(r).sqrt();
        Ok(self.softmax_with_scale(scale, axis))
    }

    pub(crate) fn softmax_with_scale(&self, scale: T, axis: Axis) -> Self {
        let mut out = self.scale(scale);
        out.for_each_slice(axis, |slice| {
            let max = slice.iter().fold(T::neg_infinity(), |m, v| m.max(**v));
            let mut total = T::zero();
            for v in slice.iter_mut() {
                **v = (**v - max).exp();
                total += **v;
            }
            for v in slice.iter_mut() {
                **v /= total;
            }
        });
        out
    }

    /// Divides each slice by its absolute sum; zero-mass slices are left as is.
    pub fn normalize_l1(&self, axis: Axis) -> Self {
        let mut out = self.clone();
        out.for_each_slice(axis, |slice| {
            let mass = slice.iter().fold(T::zero(), |a, v| a + v.abs());
            if mass > T::zero() {
                for v in slice.iter_mut() {
                    **v /= mass;
                }
            }
        });
        out
    }

    fn for_each_slice(&mut self, axis: Axis, mut f: impl FnMut(&mut [&mut T])) {
        let (rows, cols) = (self.rows, self.cols);
        match axis {
            Axis::Row => {
                for chunk in self.data.chunks_mut(cols.max(1)) {
                    let mut refs: Vec<&mut T> = chunk.iter_mut().collect();
                    f(&mut refs);
                }
            }
            Axis::Column => {
                for j in 0..cols {
                    let mut refs: Vec<&mut T> = self
                        .data
                        .iter_mut()
                        .skip(j)
                        .step_by(cols)
                        .take(rows)
                        .collect();
                    f(&mut refs);
                }
            }
        }
    }

    pub(crate) fn ensure_same_shape(&self, other: &Self, context: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(shape_err(
                context,
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        Ok(())
    }

    pub(crate) fn ensure_square(&self, context: &str) -> Result<()> {
        if self.rows != self.cols {
            return Err(Error::NotSquare(context.into()));
        }
        Ok(())
    }
}

impl<T> Index<(usize, usize)> for Dense<T> {
    type Output = T;

    fn index(&self, (i, j): (usize, usize)) -> &T {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Dense<T> {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}
