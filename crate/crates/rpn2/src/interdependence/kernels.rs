//! Column-pair kernels: `A(i, j) = kernel(Z(:, i), Z(:, j))`.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numeric_core::log_abs_det;
use crate::Matrix;

const KL_FLOOR: f64 = 1e-12;
const MI_RIDGE: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatKernel {
    /// Kullback–Leibler divergence of L1-normalized non-negative columns.
    Kl,
    Pearson,
    /// RV coefficient of single-column blocks.
    Rv,
    /// Gaussian mutual information with a small ridge on every block.
    MutualInfo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum NumKernel {
    Linear,
    Polynomial {
        c: f64,
        degree: i32,
    },
    Tanh {
        alpha: f64,
        c: f64,
    },
    /// `exp(−γ‖x−y‖₁)`.
    Exponential {
        gamma: f64,
    },
    Cosine,
    /// `1 − ‖x−y‖_p`; `p` may be infinite when built in code.
    Minkowski {
        p: f64,
    },
    GaussianRbf {
        sigma: f64,
    },
    /// `exp(−‖x−y‖₁/σ)`.
    Laplacian {
        sigma: f64,
    },
    /// `exp(−(x−y)·M·(x−y)ᵀ)` for a fixed `M`.
    AnisotropicRbf {
        metric: Matrix,
    },
    /// `α·k₁ + β·k₂`.
    Hybrid {
        first: Box<NumKernel>,
        second: Box<NumKernel>,
        alpha: f64,
        beta: f64,
    },
}

fn columns(z: &Matrix) -> Vec<Vec<f64>> {
    (0..z.cols()).map(|j| z.column(j)).collect()
}

fn pairwise(cols: &[Vec<f64>], f: impl Fn(&[f64], &[f64]) -> f64) -> Matrix {
    let m = cols.len();
    Matrix::from_fn(m, m, |i, j| f(&cols[i], &cols[j]))
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample covariance of two columns with the `1/(b−1)` normalization.
fn covariance(x: &[f64], y: &[f64]) -> f64 {
    let (mx, my) = (mean(x), mean(y));
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / (x.len() - 1) as f64
}

impl StatKernel {
    pub fn matrix(self, z: &Matrix) -> Result<Matrix> {
        if z.rows() < 2 {
            return Err(shape_err("statistical kernel batch", ">= 2 rows", z.rows()));
        }
        let cols = columns(z);
        match self {
            Self::Kl => {
                if z.as_slice().iter().any(|&v| v < 0.0) {
                    return Err(Error::InvalidParameter(
                        "kl kernel needs non-negative columns".into(),
                    ));
                }
                let normalized: Vec<Vec<f64>> = cols
                    .iter()
                    .map(|c| {
                        let total = c.iter().sum::<f64>().max(KL_FLOOR);
                        c.iter().map(|v| v / total).collect()
                    })
                    .collect();
                Ok(pairwise(&normalized, |p, q| {
                    p.iter()
                        .zip(q)
                        .filter(|(a, _)| **a > 0.0)
                        .map(|(a, b)| a * (a / b.max(KL_FLOOR)).ln())
                        .sum()
                }))
            }
            Self::Pearson => {
                let n = z.rows() as f64;
                let stats: Vec<(f64, f64)> = cols
                    .iter()
                    .map(|c| {
                        let mu = mean(c);
                        let var = c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
                        (mu, var.sqrt())
                    })
                    .collect();
                let m = cols.len();
                Ok(Matrix::from_fn(m, m, |i, j| {
                    if i == j {
                        return 1.0;
                    }
                    let ((mi, si), (mj, sj)) = (stats[i], stats[j]);
                    if si == 0.0 || sj == 0.0 {
                        return 0.0;
                    }
                    cols[i]
                        .iter()
                        .zip(&cols[j])
                        .map(|(a, b)| (a - mi) / si * (b - mj) / sj)
                        .sum::<f64>()
                        / n
                }))
            }
            Self::Rv => {
                let m = cols.len();
                Ok(Matrix::from_fn(m, m, |i, j| {
                    let x = Matrix::column_vector(cols[i].clone());
                    let y = Matrix::column_vector(cols[j].clone());
                    rv_coefficient(&x, &y).unwrap_or(0.0)
                }))
            }
            Self::MutualInfo => {
                let m = cols.len();
                let mut out = Matrix::zeros(m, m);
                for i in 0..m {
                    for j in 0..m {
                        let x = Matrix::column_vector(cols[i].clone());
                        let y = Matrix::column_vector(cols[j].clone());
                        out[(i, j)] = gaussian_mutual_information(&x, &y)?;
                    }
                }
                Ok(out)
            }
        }
    }
}

fn block_covariance(x: &Matrix, y: &Matrix) -> Matrix {
    let (xc, yc) = (columns(x), columns(y));
    Matrix::from_fn(xc.len(), yc.len(), |i, j| covariance(&xc[i], &yc[j]))
}

fn trace(a: &Matrix) -> f64 {
    (0..a.rows().min(a.cols())).map(|i| a[(i, i)]).sum()
}

/// `tr(Σxy Σyx) / √(tr(Σx²) tr(Σy²))` for row-aligned blocks; `None` when a
/// block has zero variance.
pub fn rv_coefficient(x: &Matrix, y: &Matrix) -> Option<f64> {
    let sxy = block_covariance(x, y);
    let sxx = block_covariance(x, x);
    let syy = block_covariance(y, y);
    let num = trace(&sxy.matmul(&sxy.transpose()).ok()?);
    let den = (trace(&sxx.matmul(&sxx).ok()?) * trace(&syy.matmul(&syy).ok()?)).sqrt();
    (den > 0.0).then(|| num / den)
}

/// `½ log(det Σx · det Σy / det Σ)` with `1e-8·I` added to each block.
pub fn gaussian_mutual_information(x: &Matrix, y: &Matrix) -> Result<f64> {
    let joint = Matrix::hcat(&[x, y])?;
    let ridge = |s: Matrix| {
        let n = s.rows();
        s.add(&Matrix::identity(n).scale(MI_RIDGE))
    };
    let sx = ridge(block_covariance(x, x))?;
    let sy = ridge(block_covariance(y, y))?;
    let s = ridge(block_covariance(&joint, &joint))?;
    Ok(0.5 * (log_abs_det(&sx)? + log_abs_det(&sy)? - log_abs_det(&s)?))
}

impl NumKernel {
    pub fn validate(&self, rows: usize) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.into()));
        match self {
            Self::Exponential { gamma } if !(*gamma > 0.0) => {
                bad("exponential kernel needs gamma > 0")
            }
            Self::GaussianRbf { sigma } | Self::Laplacian { sigma } if !(*sigma > 0.0) => {
                bad("kernel width sigma must be positive")
            }
            Self::Minkowski { p } if !(*p >= 1.0) => bad("minkowski order must be at least 1"),
            Self::AnisotropicRbf { metric } if metric.shape() != (rows, rows) => Err(shape_err(
                "anisotropic metric",
                format!("{rows}x{rows}"),
                format!("{}x{}", metric.rows(), metric.cols()),
            )),
            Self::Hybrid { first, second, .. } => {
                first.validate(rows)?;
                second.validate(rows)
            }
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let diff = || x.iter().zip(y).map(|(a, b)| a - b);
        match self {
            Self::Linear => dot(x, y),
            Self::Polynomial { c, degree } => (dot(x, y) + c).powi(*degree),
            Self::Tanh { alpha, c } => (alpha * dot(x, y) + c).tanh(),
            Self::Exponential { gamma } => (-gamma * diff().map(f64::abs).sum::<f64>()).exp(),
            Self::Cosine => {
                let den = dot(x, x).sqrt() * dot(y, y).sqrt();
                if den == 0.0 {
                    0.0
                } else {
                    dot(x, y) / den
                }
            }
            Self::Minkowski { p } => {
                let dist = if p.is_infinite() {
                    diff().fold(0.0f64, |a, d| a.max(d.abs()))
                } else {
                    diff().map(|d| d.abs().powf(*p)).sum::<f64>().powf(1.0 / p)
                };
                1.0 - dist
            }
            Self::GaussianRbf { sigma } => {
                (-diff().map(|d| d * d).sum::<f64>() / (2.0 * sigma * sigma)).exp()
            }
            Self::Laplacian { sigma } => (-diff().map(f64::abs).sum::<f64>() / sigma).exp(),
            Self::AnisotropicRbf { metric } => {
                let d: Vec<f64> = diff().collect();
                let mut q = 0.0;
                for (i, di) in d.iter().enumerate() {
                    for (j, dj) in d.iter().enumerate() {
                        q += di * metric[(i, j)] * dj;
                    }
                }
                (-q).exp()
            }
            Self::Hybrid {
                first,
                second,
                alpha,
                beta,
            } => alpha * first.eval(x, y) + beta * second.eval(x, y),
        }
    }

    pub fn matrix(&self, z: &Matrix) -> Result<Matrix> {
        self.validate(z.rows())?;
        Ok(pairwise(&columns(z), |x, y| self.eval(x, y)))
    }
}
