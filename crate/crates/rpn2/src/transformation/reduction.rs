//! Dimension reduction: streaming PCA and frozen random projections.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numeric_core::{symmetric_eigen, Prng};
use crate::Matrix;

/// Running mean and scatter of every batch seen, with the top-`k`
/// eigenvectors of the sample covariance cached after each update.
#[derive(Clone, Debug, PartialEq)]
pub struct PcaState {
    k: usize,
    count: usize,
    mean: Vec<f64>,
    scatter: Matrix,
    basis: Option<Matrix>,
    frozen: bool,
}

impl PcaState {
    pub fn new(m: usize, k: usize) -> Result<Self> {
        if k == 0 || k > m {
            return Err(Error::InvalidParameter(format!(
                "pca rank {k} outside 1..={m}"
            )));
        }
        Ok(Self {
            k,
            count: 0,
            mean: vec![0.0; m],
            scatter: Matrix::zeros(m, m),
            basis: None,
            frozen: false,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn basis(&self) -> Option<&Matrix> {
        self.basis.as_ref()
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Sample covariance `scatter / (count − 1)`.
    pub fn covariance(&self) -> Matrix {
        let denom = self.count.saturating_sub(1).max(1) as f64;
        self.scatter.scale(1.0 / denom)
    }

    /// Merges a batch with the pairwise mean/scatter combination rule.
    pub fn update(&mut self, x: &Matrix) -> Result<()> {
        let m = self.mean.len();
        if x.cols() != m {
            return Err(shape_err("pca width", m, x.cols()));
        }
        if self.frozen || x.rows() == 0 {
            return Ok(());
        }
        let nb = x.rows() as f64;
        let batch_mean: Vec<f64> = (0..m)
            .map(|j| x.column(j).iter().sum::<f64>() / nb)
            .collect();
        let centered = Matrix::from_fn(x.rows(), m, |i, j| x[(i, j)] - batch_mean[j]);
        let batch_scatter = centered.transpose().matmul(&centered)?;
        let na = self.count as f64;
        let total = na + nb;
        let delta: Vec<f64> = batch_mean
            .iter()
            .zip(&self.mean)
            .map(|(b, a)| b - a)
            .collect();
        let cross = Matrix::from_fn(m, m, |i, j| delta[i] * delta[j] * na * nb / total);
        self.scatter = self.scatter.add(&batch_scatter)?.add(&cross)?;
        for (mu, d) in self.mean.iter_mut().zip(&delta) {
            *mu += d * nb / total;
        }
        self.count += x.rows();
        self.refresh_basis()
    }

    fn refresh_basis(&mut self) -> Result<()> {
        let (_, vectors) = symmetric_eigen(&self.covariance())?;
        let m = self.mean.len();
        let mut basis = Matrix::zeros(m, self.k);
        for c in 0..self.k {
            let col = vectors.column(c);
            // Sign convention: the largest-magnitude component is positive.
            let pivot = col
                .iter()
                .copied()
                .fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            for (r, v) in col.iter().enumerate() {
                basis[(r, c)] = sign * v;
            }
        }
        self.basis = Some(basis);
        Ok(())
    }

    /// `X·V_k` (no centering).
    pub fn project(&self, x: &Matrix) -> Result<Matrix> {
        let basis = self
            .basis
            .as_ref()
            .ok_or_else(|| Error::MissingData("pca projection before any update".into()))?;
        x.matmul(basis)
    }

    pub fn fit_transform(&mut self, x: &Matrix) -> Result<Matrix> {
        self.update(x)?;
        self.project(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProjectionKind {
    /// Entries `N(0, 1/k)`.
    Gaussian,
    /// Entries `±√(1/(s·k))` each with probability `s/2`, else 0.
    Sparse { s: f64 },
}

/// `m×k` projection matrix drawn once from its seed.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomProjection {
    matrix: Matrix,
}

impl RandomProjection {
    pub fn new(kind: ProjectionKind, m: usize, k: usize, seed: u64) -> Result<Self> {
        if k == 0 || k > m {
            return Err(Error::InvalidParameter(format!(
                "projection width {k} outside 1..={m}"
            )));
        }
        let mut prng = Prng::new(seed).fork("random_projection");
        let kf = k as f64;
        let matrix = match kind {
            ProjectionKind::Gaussian => {
                let std = (1.0 / kf).sqrt();
                Matrix::from_fn(m, k, |_, _| std * prng.normal())
            }
            ProjectionKind::Sparse { s } => {
                if !(s > 0.0 && s <= 1.0) {
                    return Err(Error::InvalidParameter(
                        "sparse projection needs s in (0, 1]".into(),
                    ));
                }
                let mag = (1.0 / (s * kf)).sqrt();
                Matrix::from_fn(m, k, |_, _| {
                    let u = prng.next_f64();
                    if u < s / 2.0 {
                        mag
                    } else if u < s {
                        -mag
                    } else {
                        0.0
                    }
                })
            }
        };
        Ok(Self { matrix })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn project(&self, x: &Matrix) -> Result<Matrix> {
        x.matmul(&self.matrix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_one_batch_reconstructs() {
        let mut prng = Prng::new(1);
        let u: Vec<f64> = (0..12).map(|_| prng.normal()).collect();
        let v: Vec<f64> = (0..5).map(|_| prng.normal()).collect();
        let x = Matrix::from_fn(12, 5, |i, j| u[i] * v[j]);
        let mut pca = PcaState::new(5, 1).unwrap();
        let z = pca.fit_transform(&x).unwrap();
        let basis = pca.basis().unwrap();
        let recon = z.matmul(&basis.transpose()).unwrap();
        assert!(recon.max_abs_diff(&x).unwrap() < 1e-8);
    }

    #[test]
    fn streaming_matches_single_pass() {
        let mut prng = Prng::new(2);
        let x = Matrix::from_fn(30, 4, |_, j| (j + 1) as f64 * prng.normal() + j as f64);
        let mut whole = PcaState::new(4, 2).unwrap();
        whole.update(&x).unwrap();
        let mut parts = PcaState::new(4, 2).unwrap();
        for start in [0, 7, 19] {
            let end = match start {
                0 => 7,
                7 => 19,
                _ => 30,
            };
            let rows: Vec<Vec<f64>> = (start..end).map(|i| x.row(i).to_vec()).collect();
            parts.update(&Matrix::from_rows(&rows).unwrap()).unwrap();
        }
        assert!(
            whole
                .covariance()
                .max_abs_diff(&parts.covariance())
                .unwrap()
                < 1e-10
        );
        let cov = parts.covariance();
        assert!(cov.max_abs_diff(&cov.transpose()).unwrap() < 1e-12);
        let basis = parts.basis().unwrap();
        let gram = basis.transpose().matmul(basis).unwrap();
        assert!(gram.max_abs_diff(&Matrix::identity(2)).unwrap() < 1e-8);
        assert!(whole.basis().unwrap().max_abs_diff(basis).unwrap() < 1e-8);
    }

    #[test]
    fn frozen_pca_is_stable() {
        let mut prng = Prng::new(3);
        let x = Matrix::from_fn(10, 3, |_, _| prng.normal());
        let mut pca = PcaState::new(3, 2).unwrap();
        pca.update(&x).unwrap();
        pca.freeze();
        let first = pca.fit_transform(&x).unwrap();
        let other = Matrix::from_fn(10, 3, |_, _| prng.normal());
        pca.update(&other).unwrap();
        assert_eq!(pca.fit_transform(&x).unwrap(), first);
        assert_eq!(pca.count(), 10);
    }

    #[test]
    fn gaussian_projection_variance() {
        let k = 4;
        let rp = RandomProjection::new(ProjectionKind::Gaussian, 10_000, k, 7).unwrap();
        let n = 10_000.0;
        for c in 0..k {
            let col = rp.matrix().column(c);
            let var = col.iter().map(|v| v * v).sum::<f64>() / n;
            // Sample variance of N(0, σ²) has std σ²·√(2/n).
            let sigma2 = 1.0 / k as f64;
            assert!((var - sigma2).abs() < 3.0 * sigma2 * (2.0 / n).sqrt());
        }
    }

    #[test]
    fn sparse_projection_with_full_density() {
        let k = 9;
        let rp = RandomProjection::new(ProjectionKind::Sparse { s: 1.0 }, 50, k, 3).unwrap();
        let mag = (1.0 / k as f64).sqrt();
        assert!(rp
            .matrix()
            .as_slice()
            .iter()
            .all(|&v| v == mag || v == -mag));
        assert!(RandomProjection::new(ProjectionKind::Sparse { s: 0.0 }, 5, 2, 1).is_err());
        assert!(RandomProjection::new(ProjectionKind::Gaussian, 5, 6, 1).is_err());
    }
}
