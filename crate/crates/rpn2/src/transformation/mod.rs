//! Data transformation functions `κ`: expansions (`D ≥ m`) and compressions
//! (`D ≤ m`).
//!
//! [`DataTransform`] lists the stateless transforms a model head can use.
//! Stateful selectors and streaming PCA live in [`selection`] and
//! [`reduction`] and are driven explicitly by their owner.

pub mod compression;
pub mod polynomial;
pub mod reduction;
pub mod selection;
pub mod wavelet;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::numeric_core::{Tape, Var};
use crate::Matrix;

pub use compression::{
    compress_linear, compress_reciprocal, Density, NormOrder, PatchCompression, PatchMapping,
    PatchOperator, PatchOutput, PatchStatistic, ProbabilisticCompression, ProbabilisticMode,
    SamplingWeights,
};
pub use polynomial::{expand_polynomial, expand_polynomial_on_tape, PolynomialFamily};
pub use reduction::{PcaState, ProjectionKind, RandomProjection};
pub use selection::{column_variances, SelectionMode, SelectorState};
pub use wavelet::{expand_wavelet, expand_wavelet_on_tape, WaveletKind, WaveletSpec};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataTransform {
    #[default]
    Identity,
    /// `[P_1(X) | … | P_d(X)]`.
    Polynomial {
        family: PolynomialFamily,
        d: usize,
    },
    Wavelet(WaveletSpec),
    Reciprocal,
    /// `X·C` for a fixed matrix `C`.
    Linear {
        matrix: Matrix,
    },
    /// One summary per patch; constant with respect to gradients.
    Patch(PatchCompression),
    /// `X·R` with `R` regenerated from `seed`; constant with respect to gradients.
    RandomProjection {
        kind: ProjectionKind,
        k: usize,
        seed: u64,
    },
    /// Sampling restarted from its seed on every call; constant with respect to gradients.
    Probabilistic(ProbabilisticCompression),
}

impl DataTransform {
    /// Output width for `m` input attributes.
    pub fn output_dim(&self, m: usize) -> Result<usize> {
        Ok(match self {
            Self::Identity | Self::Reciprocal => m,
            Self::Polynomial { d, .. } => m * d,
            Self::Wavelet(spec) => spec.output_dim(m),
            Self::Linear { matrix } => {
                if matrix.rows() != m {
                    return Err(shape_err("linear compression rows", m, matrix.rows()));
                }
                matrix.cols()
            }
            Self::Patch(spec) => {
                if spec.grid.size() != m {
                    return Err(shape_err("patch compression width", spec.grid.size(), m));
                }
                spec.output_dim()?
            }
            Self::RandomProjection { k, .. } => *k,
            Self::Probabilistic(spec) => {
                spec.validate(m)?;
                spec.d
            }
        })
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = self.apply_on_tape(&mut tape, xv)?;
        Ok(tape.value(out).clone())
    }

    pub fn apply_on_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Self::Identity => Ok(x),
            Self::Polynomial { family, d } => expand_polynomial_on_tape(tape, x, *family, *d),
            Self::Wavelet(spec) => expand_wavelet_on_tape(tape, x, spec),
            Self::Reciprocal => compression::reciprocal_on_tape(tape, x),
            Self::Linear { matrix } => {
                let m = tape.value(x).cols();
                if matrix.rows() != m {
                    return Err(shape_err("linear compression rows", m, matrix.rows()));
                }
                let c = tape.constant(matrix.clone());
                tape.matmul(x, c)
            }
            Self::Patch(spec) => {
                let out = spec.apply(tape.value(x))?;
                Ok(tape.constant(out.values))
            }
            Self::RandomProjection { kind, k, seed } => {
                let m = tape.value(x).cols();
                let r = RandomProjection::new(*kind, m, *k, *seed)?;
                let rv = tape.constant(r.matrix().clone());
                tape.matmul(x, rv)
            }
            Self::Probabilistic(spec) => {
                let out = spec.apply(tape.value(x))?;
                Ok(tape.constant(out))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric_core::Prng;

    #[test]
    fn output_dims_match_applied_widths() {
        let mut prng = Prng::new(1);
        let x = Matrix::from_fn(3, 4, |_, _| prng.uniform(0.5, 1.5));
        let transforms = [
            DataTransform::Identity,
            DataTransform::Polynomial {
                family: PolynomialFamily::Hermite,
                d: 3,
            },
            DataTransform::Wavelet(WaveletSpec {
                kind: WaveletKind::Ricker { sigma: 1.0 },
                s_max: 2,
                t_max: 1,
                a: 2.0,
                b: 1.0,
                order: 2,
            }),
            DataTransform::Reciprocal,
            DataTransform::Linear {
                matrix: Matrix::zeros(4, 2),
            },
            DataTransform::RandomProjection {
                kind: ProjectionKind::Gaussian,
                k: 2,
                seed: 3,
            },
        ];
        for t in transforms {
            let out = t.apply(&x).unwrap();
            assert_eq!(out.cols(), t.output_dim(4).unwrap(), "{t:?}");
        }
    }

    #[test]
    fn random_projection_preserves_distances() {
        for seed in 0..5 {
            let mut prng = Prng::new(100 + seed);
            let x = Matrix::from_fn(50, 200, |_, _| prng.normal());
            let t = DataTransform::RandomProjection {
                kind: ProjectionKind::Gaussian,
                k: 64,
                seed,
            };
            let z = t.apply(&x).unwrap();
            let dist = |m: &Matrix, a: usize, b: usize| {
                m.row(a)
                    .iter()
                    .zip(m.row(b))
                    .map(|(p, q)| (p - q).powi(2))
                    .sum::<f64>()
                    .sqrt()
            };
            let (mut good, mut total) = (0, 0);
            for a in 0..50 {
                for b in a + 1..50 {
                    let ratio = dist(&z, a, b) / dist(&x, a, b);
                    total += 1;
                    if (0.65..=1.35).contains(&ratio) {
                        good += 1;
                    }
                }
            }
            assert!(good as f64 >= 0.95 * total as f64);
        }
    }

    #[test]
    fn serde_round_trip() {
        let t = DataTransform::Polynomial {
            family: PolynomialFamily::Laguerre { alpha: 0.5 },
            d: 2,
        };
        let text = serde_json::to_string(&t).unwrap();
        assert_eq!(serde_json::from_str::<DataTransform>(&text).unwrap(), t);
        assert!(serde_json::from_str::<DataTransform>(
            r#"{"polynomial":{"family":"hermite","d":2,"x":1}}"#
        )
        .is_err());
    }
}
