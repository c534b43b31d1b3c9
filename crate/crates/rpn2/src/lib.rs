//! Reconciled polynomial network layers with data interdependence.
//!
//! A head maps a batch `X` (rows are instances, columns are attributes) to
//! `⟨κ_ξ(X), ψ(w)⟩ + π(X)`, where `κ_ξ` wraps a data transformation between
//! attribute and instance interdependence matrices, `ψ` reconciles a short
//! parameter vector into the coefficient matrix, and `π` is a remainder.
//! Heads and channels are combined by fusion functions and layers stack.
//!
//! The matrix kernels are generic over [`numeric_core::Scalar`]; trainable
//! components run in `f64` through the aliases below.

// Validation uses `!(x > 0.0)` style checks on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backbone_equiv;
pub mod datasets;
pub mod error;
pub mod fusion;
pub mod grid_geometry;
pub mod interdependence;
pub mod model;
pub mod numeric_core;
pub mod reconciliation;
pub mod transformation;

pub use error::{Error, Result};

/// Dense `f64` matrix used throughout the model stack.
pub type Matrix = numeric_core::Dense<f64>;
/// Sparse `f64` matrix used for structural interdependence.
pub type SparseMatrix = numeric_core::SparseCoo<f64>;
