//! Matrix types and kernels shared by every component function.

mod dense;
mod linalg;
mod prng;
mod scalar;
mod sparse;
mod tape;

pub use dense::{Axis, Dense, NormKind};
pub use linalg::{
    log_abs_det, matrix_exp, numerical_rank, singular_values, solve, symmetric_eigen,
};
pub use prng::{derive_seed, Prng};
pub use scalar::Scalar;
pub use sparse::SparseCoo;
pub use tape::{finite_difference, max_relative_error, Gradients, Tape, Var};
