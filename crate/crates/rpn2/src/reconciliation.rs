//! Parameter reconciliation `ψ(w) -> n×D` and remainder functions `π`.
//!
//! Every reconciliation is built on a [`Tape`] so the same code path serves
//! value-only evaluation and training. Frozen random factors are regenerated
//! from the configured seed, which makes the spec itself the only state.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numeric_core::{Prng, Tape, Var};
use crate::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ReconciliationMethod {
    /// `w` reshaped row-major into `n×D`.
    Identity,
    /// Rectangular identity, no parameters.
    ConstantEye,
    /// All-zero coefficients, no parameters.
    Zero,
    /// `I_{p_count} ⊗ w` with `w` a length-`p` row: row `c` holds `w` in column block `c`.
    DuplicatedPadding { p: usize, p_count: usize },
    /// `A·Bᵀ` with `A: n×r`, `B: D×r` read from `w` in that order.
    Lorr { rank: usize },
    /// `diag(λ₁)·A·diag(λ₂)·Bᵀ` with frozen Gaussian `A`, `B`.
    Vera { rank: usize, seed: u64 },
    /// `reshape((σ((wP)Qᵀ)S)Tᵀ)` with frozen `P, Q, S, T`.
    HypernetLowrank {
        rank: usize,
        mid: usize,
        input_len: usize,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconciliationSpec {
    pub method: ReconciliationMethod,
    /// Output rows.
    pub n: usize,
    /// Output columns, the transformed dimension.
    pub dim: usize,
}

/// Frozen random factors for the methods that use them.
#[derive(Clone, Debug, PartialEq)]
pub enum FrozenRandoms {
    None,
    Vera {
        a: Matrix,
        b: Matrix,
    },
    Hypernet {
        p: Matrix,
        q: Matrix,
        s: Matrix,
        t: Matrix,
    },
}

fn gaussian(prng: &mut Prng, rows: usize, cols: usize, std: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| std * prng.normal())
}

impl FrozenRandoms {
    pub fn draw(spec: &ReconciliationSpec) -> Self {
        let (n, dim) = (spec.n, spec.dim);
        match spec.method {
            ReconciliationMethod::Vera { rank, seed } => {
                let root = Prng::new(seed);
                Self::Vera {
                    a: gaussian(&mut root.fork("vera/a"), n, rank, 1.0),
                    b: gaussian(&mut root.fork("vera/b"), dim, rank, 1.0),
                }
            }
            ReconciliationMethod::HypernetLowrank {
                rank,
                mid,
                input_len,
                seed,
            } => {
                // Scaled so each contraction keeps unit variance per entry.
                let root = Prng::new(seed);
                let inv_sqrt = |k: usize| 1.0 / (k.max(1) as f64).sqrt();
                Self::Hypernet {
                    p: gaussian(
                        &mut root.fork("hypernet/p"),
                        input_len,
                        rank,
                        inv_sqrt(input_len),
                    ),
                    q: gaussian(&mut root.fork("hypernet/q"), mid, rank, inv_sqrt(rank)),
                    s: gaussian(&mut root.fork("hypernet/s"), mid, rank, inv_sqrt(mid)),
                    t: gaussian(&mut root.fork("hypernet/t"), n * dim, rank, inv_sqrt(rank)),
                }
            }
            _ => Self::None,
        }
    }
}

impl ReconciliationSpec {
    pub fn new(method: ReconciliationMethod, n: usize, dim: usize) -> Self {
        Self { method, n, dim }
    }

    pub fn param_length(&self) -> usize {
        let (n, dim) = (self.n, self.dim);
        match self.method {
            ReconciliationMethod::Identity => n * dim,
            ReconciliationMethod::ConstantEye | ReconciliationMethod::Zero => 0,
            ReconciliationMethod::DuplicatedPadding { p, .. } => p,
            ReconciliationMethod::Lorr { rank } => (n + dim) * rank,
            ReconciliationMethod::Vera { rank, .. } => n + rank,
            ReconciliationMethod::HypernetLowrank { input_len, .. } => input_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.method {
            ReconciliationMethod::DuplicatedPadding { p, p_count } => {
                if self.n != p_count || self.dim != p * p_count {
                    return Err(shape_err(
                        "duplicated padding target",
                        format!("{p_count}x{}", p * p_count),
                        format!("{}x{}", self.n, self.dim),
                    ));
                }
            }
            ReconciliationMethod::Lorr { rank } | ReconciliationMethod::Vera { rank, .. }
                if rank == 0 =>
            {
                return Err(Error::InvalidParameter(
                    "reconciliation rank must be positive".into(),
                ));
            }
            ReconciliationMethod::HypernetLowrank { rank, mid, .. } if rank == 0 || mid == 0 => {
                return Err(Error::InvalidParameter(
                    "hypernet rank and mid width must be positive".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }

    /// Value-only `ψ(w)`.
    pub fn reconcile(&self, w: &[f64]) -> Result<Matrix> {
        let mut tape = Tape::new();
        let wv = tape.constant(Matrix::row_vector(w.to_vec()));
        let out = self.reconcile_on_tape(&mut tape, wv)?;
        Ok(tape.value(out).clone())
    }

    /// `ψ(w)` recorded on `tape`; `w` is a `1×l` node.
    pub fn reconcile_on_tape(&self, tape: &mut Tape, w: Var) -> Result<Var> {
        self.validate()?;
        let l = self.param_length();
        let found = tape.value(w).len();
        if found != l {
            return Err(Error::ParamLength {
                context: "reconciliation".into(),
                expected: l,
                found,
            });
        }
        let (n, dim) = (self.n, self.dim);
        match &self.method {
            ReconciliationMethod::Identity => tape.reshape(w, n, dim),
            ReconciliationMethod::ConstantEye => Ok(tape.constant(Matrix::from_fn(
                n,
                dim,
                |i, j| {
                    if i == j {
                        1.0
                    } else {
                        0.0
                    }
                },
            ))),
            ReconciliationMethod::Zero => Ok(tape.constant(Matrix::zeros(n, dim))),
            ReconciliationMethod::DuplicatedPadding { p, p_count } => {
                let zeros = tape.constant(Matrix::zeros(1, *p));
                let mut rows = Vec::with_capacity(*p_count);
                for c in 0..*p_count {
                    let blocks: Vec<Var> = (0..*p_count)
                        .map(|k| if k == c { w } else { zeros })
                        .collect();
                    rows.push(tape.concat_cols(&blocks)?);
                }
                tape.concat_rows(&rows)
            }
            ReconciliationMethod::Lorr { rank } => {
                let row = tape.reshape(w, 1, l)?;
                let a = tape.slice_cols(row, 0, n * rank)?;
                let a = tape.reshape(a, n, *rank)?;
                let b = tape.slice_cols(row, n * rank, dim * rank)?;
                let b = tape.reshape(b, dim, *rank)?;
                let bt = tape.transpose(b);
                tape.matmul(a, bt)
            }
            ReconciliationMethod::Vera { rank, .. } => {
                let FrozenRandoms::Vera { a, b } = FrozenRandoms::draw(self) else {
                    unreachable!("vera spec draws vera factors")
                };
                let row = tape.reshape(w, 1, l)?;
                let lambda1 = tape.slice_cols(row, 0, n)?;
                let lambda1 = tape.reshape(lambda1, n, 1)?;
                let lambda2 = tape.slice_cols(row, n, *rank)?;
                let a = tape.constant(a);
                let bt = tape.constant(b.transpose());
                let scaled = tape.scale_rows(a, lambda1)?;
                let scaled = tape.scale_cols(scaled, lambda2)?;
                tape.matmul(scaled, bt)
            }
            ReconciliationMethod::HypernetLowrank { .. } => {
                let FrozenRandoms::Hypernet { p, q, s, t } = FrozenRandoms::draw(self) else {
                    unreachable!("hypernet spec draws hypernet factors")
                };
                let row = tape.reshape(w, 1, l)?;
                let p = tape.constant(p);
                let qt = tape.constant(q.transpose());
                let s = tape.constant(s);
                let tt = tape.constant(t.transpose());
                let h = tape.matmul(row, p)?;
                let h = tape.matmul(h, qt)?;
                let h = tape.sigmoid(h);
                let h = tape.matmul(h, s)?;
                let flat = tape.matmul(h, tt)?;
                tape.reshape(flat, n, dim)
            }
        }
    }
}

/// Remainder function `π: R^m -> R^n`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Remainder {
    #[default]
    Zero,
    Identity,
    /// `X·W` with a fixed `m×n` matrix.
    Linear {
        weights: Matrix,
    },
    /// A fixed `b×n` output independent of `X`.
    Constant {
        value: Matrix,
    },
}

impl Remainder {
    pub fn apply(&self, x: &Matrix, n: usize) -> Result<Matrix> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = self.apply_on_tape(&mut tape, xv, n)?;
        Ok(tape.value(out).clone())
    }

    pub fn apply_on_tape(&self, tape: &mut Tape, x: Var, n: usize) -> Result<Var> {
        let (b, m) = tape.value(x).shape();
        match self {
            Self::Zero => Ok(tape.constant(Matrix::zeros(b, n))),
            Self::Identity => {
                if m != n {
                    return Err(shape_err("identity remainder width", n, m));
                }
                Ok(x)
            }
            Self::Linear { weights } => {
                if weights.shape() != (m, n) {
                    return Err(shape_err(
                        "linear remainder weights",
                        format!("{m}x{n}"),
                        format!("{}x{}", weights.rows(), weights.cols()),
                    ));
                }
                let wv = tape.constant(weights.clone());
                tape.matmul(x, wv)
            }
            Self::Constant { value } => {
                if value.shape() != (b, n) {
                    return Err(shape_err(
                        "constant remainder",
                        format!("{b}x{n}"),
                        format!("{}x{}", value.rows(), value.cols()),
                    ));
                }
                Ok(tape.constant(value.clone()))
            }
        }
    }
}
