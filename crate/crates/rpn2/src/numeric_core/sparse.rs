use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Dense, NormKind, Scalar};
use crate::error::{shape_err, Error, Result};

/// Coordinate-format sparse matrix kept in canonical form: triplets sorted by
/// `(row, col)`, duplicates summed, explicit zeros dropped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparseCoo<T = f64> {
    rows: usize,
    cols: usize,
    entries: Vec<(usize, usize, T)>,
}

impl<T: Scalar> SparseCoo<T> {
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(usize, usize, T)>,
    ) -> Result<Self> {
        if let Some(&(i, j, _)) = triplets.iter().find(|(i, j, _)| *i >= rows || *j >= cols) {
            return Err(Error::OutOfRange(format!(
                "triplet ({i}, {j}) in {rows}x{cols} matrix"
            )));
        }
        triplets.sort_by_key(|&(i, j, _)| (i, j));
        let mut entries: Vec<(usize, usize, T)> = Vec::with_capacity(triplets.len());
        for (i, j, v) in triplets {
            match entries.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => entries.push((i, j, v)),
            }
        }
        entries.retain(|e| e.2 != T::zero());
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            entries: (0..n).map(|i| (i, i, T::one())).collect(),
        }
    }

    pub fn from_dense(dense: &Dense<T>) -> Self {
        let mut entries = Vec::new();
        for i in 0..dense.rows() {
            for (j, &v) in dense.row(i).iter().enumerate() {
                if v != T::zero() {
                    entries.push((i, j, v));
                }
            }
        }
        Self {
            rows: dense.rows(),
            cols: dense.cols(),
            entries,
        }
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

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// Fraction of stored entries among all `rows × cols` cells.
    pub fn nnz_ratio(&self) -> f64 {
        let cells = self.rows * self.cols;
        if cells == 0 {
            0.0
        } else {
            self.nnz() as f64 / cells as f64
        }
    }

    pub fn entries(&self) -> &[(usize, usize, T)] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries
            .binary_search_by_key(&(i, j), |&(r, c, _)| (r, c))
            .map_or(T::zero(), |k| self.entries[k].2)
    }

    pub fn to_dense(&self) -> Dense<T> {
        let mut out = Dense::zeros(self.rows, self.cols);
        for &(i, j, v) in &self.entries {
            out[(i, j)] = v;
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut entries: Vec<_> = self.entries.iter().map(|&(i, j, v)| (j, i, v)).collect();
        entries.sort_by_key(|&(i, j, _)| (i, j));
        Self {
            rows: self.cols,
            cols: self.rows,
            entries,
        }
    }

    pub fn scale(&self, factor: T) -> Self {
        let entries = self
            .entries
            .iter()
            .map(|&(i, j, v)| (i, j, v * factor))
            .filter(|e| e.2 != T::zero())
            .collect();
        Self {
            rows: self.rows,
            cols: self.cols,
            entries,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(shape_err(
                "sparse add",
                format!("{}x{}", self.rows, self.cols),
                format!("{}x{}", other.rows, other.cols),
            ));
        }
        let mut triplets = self.entries.clone();
        triplets.extend_from_slice(&other.entries);
        Self::from_triplets(self.rows, self.cols, triplets)
    }

    /// `self · dense` without densifying `self`.
    pub fn matmul_dense(&self, dense: &Dense<T>) -> Result<Dense<T>> {
        if self.cols != dense.rows() {
            return Err(shape_err(
                "sparse x dense",
                format!("{} rows", self.cols),
                dense.rows(),
            ));
        }
        let mut out = Dense::zeros(self.rows, dense.cols());
        for &(i, k, v) in &self.entries {
            let src = dense.row(k);
            for (o, &b) in out.row_mut(i).iter_mut().zip(src) {
                *o += v * b;
            }
        }
        Ok(out)
    }

    /// `dense · self` without densifying `self`.
    pub fn left_matmul_dense(&self, dense: &Dense<T>) -> Result<Dense<T>> {
        if dense.cols() != self.rows {
            return Err(shape_err(
                "dense x sparse",
                format!("{} cols", self.rows),
                dense.cols(),
            ));
        }
        let mut out = Dense::zeros(dense.rows(), self.cols);
        for r in 0..dense.rows() {
            let src = dense.row(r);
            let dst = out.row_mut(r);
            for &(k, j, v) in &self.entries {
                dst[j] += src[k] * v;
            }
        }
        Ok(out)
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(shape_err("sparse x sparse", self.cols, other.rows));
        }
        let mut row_starts = vec![0usize; other.rows + 1];
        for &(i, _, _) in &other.entries {
            row_starts[i + 1] += 1;
        }
        for i in 0..other.rows {
            row_starts[i + 1] += row_starts[i];
        }
        let mut triplets = Vec::new();
        for &(i, k, a) in &self.entries {
            for &(_, j, b) in &other.entries[row_starts[k]..row_starts[k + 1]] {
                triplets.push((i, j, a * b));
            }
        }
        Self::from_triplets(self.rows, other.cols, triplets)
    }

    pub fn pow(&self, exponent: usize) -> Result<Self> {
        if self.rows != self.cols {
            return Err(Error::NotSquare("sparse pow".into()));
        }
        let mut result = Self::identity(self.rows);
        for _ in 0..exponent {
            result = result.matmul(self)?;
        }
        Ok(result)
    }

    pub fn norm(&self, kind: NormKind) -> T {
        match kind {
            NormKind::Frobenius => self
                .entries
                .iter()
                .fold(T::zero(), |a, e| a + e.2 * e.2)
                .sqrt(),
            NormKind::Infinity | NormKind::TwoToInfinity => {
                let mut acc = vec![T::zero(); self.rows];
                for &(i, _, v) in &self.entries {
                    acc[i] += if kind == NormKind::Infinity {
                        v.abs()
                    } else {
                        v * v
                    };
                }
                let best = acc.into_iter().fold(T::zero(), T::max);
                if kind == NormKind::Infinity {
                    best
                } else {
                    best.sqrt()
                }
            }
        }
    }

    /// Matrix Market coordinate text with 1-based indices.
    pub fn to_matrix_market(&self) -> String {
        let mut out = String::from("%%MatrixMarket matrix coordinate real general\n");
        let _ = writeln!(out, "{} {} {}", self.rows, self.cols, self.nnz());
        for &(i, j, v) in &self.entries {
            let _ = writeln!(out, "{} {} {}", i + 1, j + 1, v);
        }
        out
    }

    pub fn from_matrix_market(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().unwrap_or_default();
        if !header.starts_with("%%MatrixMarket matrix coordinate real general") {
            return Err(Error::InvalidParameter(format!(
                "unsupported Matrix Market header: {header}"
            )));
        }
        let mut lines = lines.filter(|l| !l.starts_with('%'));
        let parse_err =
            |line: &str| Error::InvalidParameter(format!("bad Matrix Market line: {line}"));
        let size_line = lines.next().ok_or_else(|| parse_err("<missing size>"))?;
        let dims: Vec<usize> = size_line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| parse_err(size_line)))
            .collect::<Result<_>>()?;
        if dims.len() != 3 {
            return Err(parse_err(size_line));
        }
        let mut triplets = Vec::with_capacity(dims[2]);
        for line in lines {
            let mut tokens = line.split_whitespace();
            let mut next_index = || -> Result<usize> {
                let idx: usize = tokens
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| parse_err(line))?;
                idx.checked_sub(1).ok_or_else(|| parse_err(line))
            };
            let i = next_index()?;
            let j = next_index()?;
            let v: f64 = tokens
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| parse_err(line))?;
            triplets.push((i, j, T::lit(v)));
        }
        Self::from_triplets(dims[0], dims[1], triplets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric_core::Prng;

    #[test]
    fn canonicalization_sums_duplicates_and_drops_zeros() {
        let s = SparseCoo::from_triplets(
            2,
            2,
            vec![
                (1, 0, 2.0),
                (0, 1, 1.0),
                (1, 0, 3.0),
                (0, 0, 1.0),
                (0, 0, -1.0),
            ],
        )
        .unwrap();
        assert_eq!(s.entries(), &[(0, 1, 1.0), (1, 0, 5.0)]);
        assert_eq!(s.nnz(), 2);
    }

    #[test]
    fn out_of_range_triplet_is_rejected() {
        assert!(SparseCoo::from_triplets(2, 2, vec![(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn products_match_dense() {
        let mut prng = Prng::new(5);
        let mut triplets = Vec::new();
        for _ in 0..12 {
            triplets.push((prng.below(6), prng.below(4), prng.uniform(-1.0, 1.0)));
        }
        let s = SparseCoo::from_triplets(6, 4, triplets).unwrap();
        let d = s.to_dense();
        let right = Dense::from_fn(4, 3, |_, _| prng.uniform(-1.0, 1.0));
        let left = Dense::from_fn(2, 6, |_, _| prng.uniform(-1.0, 1.0));
        let a = s.matmul_dense(&right).unwrap();
        assert!(a.max_abs_diff(&d.matmul(&right).unwrap()).unwrap() < 1e-14);
        let b = s.left_matmul_dense(&left).unwrap();
        assert!(b.max_abs_diff(&left.matmul(&d).unwrap()).unwrap() < 1e-14);
        let st = s.transpose();
        let ss = s.matmul(&st).unwrap().to_dense();
        let dd = d.matmul(&d.transpose()).unwrap();
        assert!(ss.max_abs_diff(&dd).unwrap() < 1e-14);
    }

    #[test]
    fn norms_agree_with_dense() {
        let s =
            SparseCoo::from_triplets(2, 3, vec![(0, 0, 3.0), (0, 2, -4.0), (1, 1, 2.0)]).unwrap();
        for kind in [
            NormKind::Frobenius,
            NormKind::Infinity,
            NormKind::TwoToInfinity,
        ] {
            assert_eq!(s.norm(kind), s.to_dense().norm(kind));
        }
    }

    #[test]
    fn matrix_market_round_trip() {
        let s = SparseCoo::from_triplets(3, 2, vec![(0, 1, 1.5), (2, 0, -2.0)]).unwrap();
        let text = s.to_matrix_market();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate real general\n3 2 2\n1 2 "));
        assert_eq!(SparseCoo::<f64>::from_matrix_market(&text).unwrap(), s);
    }
}
