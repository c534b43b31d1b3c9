//! Three-term polynomial recurrences used as expansions.
//!
//! Every family is written as
//! `P_n = (a·x + c)·P_{n−1} + (e·x² + f)·P_{n−2}` for `n ≥ 2`,
//! with fixed `P_0` and `P_1 = u·x + v`. One coefficient table drives both the
//! generic scalar evaluator and the differentiable tape version.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric_core::{Dense, Scalar, Tape, Var};
use crate::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PolynomialFamily {
    /// Probabilists' Hermite.
    Hermite,
    Laguerre {
        alpha: f64,
    },
    Legendre,
    Gegenbauer {
        alpha: f64,
    },
    Bessel,
    ReverseBessel,
    Fibonacci,
    Lucas,
}

/// Coefficients `(a, c, e, f)` of the step for degree `n`.
#[derive(Clone, Copy, Debug)]
struct Step {
    a: f64,
    c: f64,
    e: f64,
    f: f64,
}

impl PolynomialFamily {
    pub fn validate(self) -> Result<()> {
        match self {
            Self::Gegenbauer { alpha } if alpha == 0.0 || !alpha.is_finite() => Err(
                Error::InvalidParameter("gegenbauer alpha must be finite and nonzero".into()),
            ),
            Self::Laguerre { alpha } if !alpha.is_finite() => Err(Error::InvalidParameter(
                "laguerre alpha must be finite".into(),
            )),
            _ => Ok(()),
        }
    }

    fn p0(self) -> f64 {
        match self {
            Self::Fibonacci => 0.0,
            Self::Lucas => 2.0,
            _ => 1.0,
        }
    }

    /// `P_1 = u·x + v` as `(u, v)`.
    fn p1(self) -> (f64, f64) {
        match self {
            Self::Hermite | Self::Legendre | Self::Lucas => (1.0, 0.0),
            Self::Laguerre { alpha } => (-1.0, 1.0 + alpha),
            Self::Gegenbauer { alpha } => (2.0 * alpha, 0.0),
            Self::Bessel | Self::ReverseBessel => (1.0, 1.0),
            Self::Fibonacci => (0.0, 1.0),
        }
    }

    fn step(self, n: usize) -> Step {
        let nf = n as f64;
        let zero = Step {
            a: 0.0,
            c: 0.0,
            e: 0.0,
            f: 0.0,
        };
        match self {
            Self::Hermite => Step {
                a: 1.0,
                f: -(nf - 1.0),
                ..zero
            },
            Self::Laguerre { alpha } => Step {
                a: -1.0 / nf,
                c: (2.0 * nf - 1.0 + alpha) / nf,
                f: -(nf - 1.0 + alpha) / nf,
                ..zero
            },
            Self::Legendre => Step {
                a: (2.0 * nf - 1.0) / nf,
                f: -(nf - 1.0) / nf,
                ..zero
            },
            Self::Gegenbauer { alpha } => Step {
                a: 2.0 * (nf - 1.0 + alpha) / nf,
                f: -(nf + 2.0 * alpha - 2.0) / nf,
                ..zero
            },
            Self::Bessel => Step {
                a: 2.0 * nf - 1.0,
                f: 1.0,
                ..zero
            },
            Self::ReverseBessel => Step {
                c: 2.0 * nf - 1.0,
                e: 1.0,
                ..zero
            },
            Self::Fibonacci | Self::Lucas => Step {
                a: 1.0,
                f: 1.0,
                ..zero
            },
        }
    }

    /// `[P_0(x), …, P_d(x)]`.
    pub fn sequence<T: Scalar>(self, x: T, d: usize) -> Vec<T> {
        let mut out = Vec::with_capacity(d + 1);
        out.push(T::lit(self.p0()));
        if d == 0 {
            return out;
        }
        let (u, v) = self.p1();
        out.push(T::lit(u) * x + T::lit(v));
        for n in 2..=d {
            let s = self.step(n);
            let next = (T::lit(s.a) * x + T::lit(s.c)) * out[n - 1]
                + (T::lit(s.e) * x * x + T::lit(s.f)) * out[n - 2];
            out.push(next);
        }
        out
    }
}

/// `[P_1(X) | … | P_d(X)]`, each block `m` columns wide.
pub fn expand_polynomial<T: Scalar>(
    x: &Dense<T>,
    family: PolynomialFamily,
    d: usize,
) -> Result<Dense<T>> {
    family.validate()?;
    if d == 0 {
        return Err(Error::InvalidParameter(
            "expansion order must be at least 1".into(),
        ));
    }
    let (b, m) = x.shape();
    let mut out = Dense::zeros(b, m * d);
    for i in 0..b {
        for j in 0..m {
            let seq = family.sequence(x[(i, j)], d);
            for (k, &v) in seq[1..].iter().enumerate() {
                out[(i, k * m + j)] = v;
            }
        }
    }
    Ok(out)
}

/// Differentiable counterpart of [`expand_polynomial`].
pub fn expand_polynomial_on_tape(
    tape: &mut Tape,
    x: Var,
    family: PolynomialFamily,
    d: usize,
) -> Result<Var> {
    family.validate()?;
    if d == 0 {
        return Err(Error::InvalidParameter(
            "expansion order must be at least 1".into(),
        ));
    }
    let (b, m) = tape.value(x).shape();
    let affine = |tape: &mut Tape, slope: f64, shift: f64| -> Var {
        if slope == 0.0 {
            tape.constant(Matrix::filled(b, m, shift))
        } else {
            let scaled = tape.scale(x, slope);
            tape.offset(scaled, shift)
        }
    };
    let mut prev2 = tape.constant(Matrix::filled(b, m, family.p0()));
    let (u, v) = family.p1();
    let mut prev = affine(tape, u, v);
    let mut blocks = vec![prev];
    let square = if d >= 2 { Some(tape.mul(x, x)?) } else { None };
    for n in 2..=d {
        let s = family.step(n);
        let lead = affine(tape, s.a, s.c);
        let first = tape.mul(lead, prev)?;
        let trail = if s.e == 0.0 {
            tape.scale(prev2, s.f)
        } else {
            let sq = square.expect("square computed for d >= 2");
            let coef = tape.scale(sq, s.e);
            let coef = tape.offset(coef, s.f);
            tape.mul(coef, prev2)?
        };
        let next = tape.add(first, trail)?;
        blocks.push(next);
        prev2 = prev;
        prev = next;
    }
    tape.concat_cols(&blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric_core::{finite_difference, max_relative_error, Prng};

    #[test]
    fn hermite_example() {
        let x = Matrix::filled(1, 1, 2.0);
        let out = expand_polynomial(&x, PolynomialFamily::Hermite, 4).unwrap();
        assert_eq!(out.as_slice(), &[2.0, 3.0, 2.0, -5.0]);
    }

    #[test]
    fn fibonacci_at_one_is_fibonacci_numbers() {
        let x = Matrix::filled(1, 1, 1.0);
        let out = expand_polynomial(&x, PolynomialFamily::Fibonacci, 5).unwrap();
        assert_eq!(out.as_slice(), &[1.0, 1.0, 2.0, 3.0, 5.0]);
    }

    fn horner(coeffs_high_to_low: &[f64], x: f64) -> f64 {
        coeffs_high_to_low.iter().fold(0.0, |acc, c| acc * x + c)
    }

    #[test]
    fn closed_forms_are_reproduced_exactly() {
        // Small integers keep every intermediate exact in binary floating point.
        for x in [-3.0, -1.0, 0.0, 0.5, 2.0, 5.0] {
            let he = PolynomialFamily::Hermite.sequence(x, 4);
            let he_ref = [
                horner(&[1.0], x),
                horner(&[1.0, 0.0], x),
                horner(&[1.0, 0.0, -1.0], x),
                horner(&[1.0, 0.0, -3.0, 0.0], x),
                horner(&[1.0, 0.0, -6.0, 0.0, 3.0], x),
            ];
            assert_eq!(he, he_ref);
            let fib = PolynomialFamily::Fibonacci.sequence(x, 5);
            let fib_ref = [
                0.0,
                1.0,
                x,
                horner(&[1.0, 0.0, 1.0], x),
                horner(&[1.0, 0.0, 2.0, 0.0], x),
                horner(&[1.0, 0.0, 3.0, 0.0, 1.0], x),
            ];
            assert_eq!(fib, fib_ref);
            let lucas = PolynomialFamily::Lucas.sequence(x, 5);
            let lucas_ref = [
                2.0,
                x,
                horner(&[1.0, 0.0, 2.0], x),
                horner(&[1.0, 0.0, 3.0, 0.0], x),
                horner(&[1.0, 0.0, 4.0, 0.0, 2.0], x),
                horner(&[1.0, 0.0, 5.0, 0.0, 5.0, 0.0], x),
            ];
            assert_eq!(lucas, lucas_ref);
        }
    }

    #[test]
    fn bessel_and_laguerre_low_orders() {
        let x: f64 = 1.5;
        let b = PolynomialFamily::Bessel.sequence(x, 3);
        assert!((b[2] - (3.0 * x * x + 3.0 * x + 1.0)).abs() < 1e-12);
        assert!((b[3] - (15.0 * x.powi(3) + 15.0 * x * x + 6.0 * x + 1.0)).abs() < 1e-12);
        let r = PolynomialFamily::ReverseBessel.sequence(x, 3);
        assert!((r[2] - (x * x + 3.0 * x + 3.0)).abs() < 1e-12);
        assert!((r[3] - (x.powi(3) + 6.0 * x * x + 15.0 * x + 15.0)).abs() < 1e-12);
        let l = PolynomialFamily::Laguerre { alpha: 0.0 }.sequence(x, 2);
        assert!((l[2] - (x * x - 4.0 * x + 2.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn gegenbauer_half_is_legendre() {
        for k in 0..=200 {
            let x = -1.5 + 3.0 * k as f64 / 200.0;
            let g = PolynomialFamily::Gegenbauer { alpha: 0.5 }.sequence(x, 6);
            let p = PolynomialFamily::Legendre.sequence(x, 6);
            for (a, b) in g.iter().zip(&p) {
                assert!((a - b).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn legendre_orthogonality_by_riemann_sum() {
        let n = 100_000;
        let h = 2.0 / n as f64;
        let mut acc = 0.0;
        for k in 0..n {
            let x = -1.0 + (k as f64 + 0.5) * h;
            let p = PolynomialFamily::Legendre.sequence(x, 3);
            acc += p[2] * p[3] * h;
        }
        assert!(acc.abs() < 1e-3);
    }

    #[test]
    fn layout_and_errors() {
        let x = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let out = expand_polynomial(&x, PolynomialFamily::Legendre, 3).unwrap();
        assert_eq!(out.shape(), (2, 6));
        assert_eq!(out.column_block(0, 2).unwrap(), x);
        assert!(expand_polynomial(&x, PolynomialFamily::Hermite, 0).is_err());
        assert!(expand_polynomial(&x, PolynomialFamily::Gegenbauer { alpha: 0.0 }, 2).is_err());
    }

    #[test]
    fn generic_over_f32() {
        let x: Dense<f32> = Dense::filled(1, 1, 2.0);
        let out = expand_polynomial(&x, PolynomialFamily::Hermite, 4).unwrap();
        assert_eq!(out.as_slice(), &[2.0f32, 3.0, 2.0, -5.0]);
    }

    #[test]
    fn tape_matches_values_and_gradients() {
        let families = [
            PolynomialFamily::Hermite,
            PolynomialFamily::Laguerre { alpha: 0.5 },
            PolynomialFamily::Legendre,
            PolynomialFamily::Gegenbauer { alpha: 1.5 },
            PolynomialFamily::Bessel,
            PolynomialFamily::ReverseBessel,
            PolynomialFamily::Fibonacci,
            PolynomialFamily::Lucas,
        ];
        let mut prng = Prng::new(3);
        let x0 = Matrix::from_fn(2, 3, |_, _| prng.uniform(-1.0, 1.0));
        for family in families {
            let d = 4;
            let probe = Matrix::from_fn(2, 3 * d, |i, j| ((i + 2 * j) % 5) as f64 - 2.0);
            let mut tape = Tape::new();
            let xv = tape.parameter(x0.clone());
            let out = expand_polynomial_on_tape(&mut tape, xv, family, d).unwrap();
            let expected = expand_polynomial(&x0, family, d).unwrap();
            assert!(tape.value(out).max_abs_diff(&expected).unwrap() < 1e-12);
            let pv = tape.constant(probe.clone());
            let prod = tape.mul(out, pv).unwrap();
            let loss = tape.sum(prod);
            let grads = tape.backward(loss).unwrap();
            let numeric = finite_difference(&x0, 1e-6, |x| {
                expand_polynomial(x, family, d)
                    .unwrap()
                    .hadamard(&probe)
                    .unwrap()
                    .sum()
            });
            assert!(
                max_relative_error(grads.get(xv).unwrap(), &numeric) < 1e-5,
                "{family:?}"
            );
        }
    }
}
