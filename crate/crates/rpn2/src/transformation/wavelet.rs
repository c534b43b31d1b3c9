//! Wavelet expansions built from a mother function `φ` and its child family
//! `φ_{s,t}(x) = a^{−s/2} φ((x − t·b·aˢ) / aˢ)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric_core::{Dense, Scalar, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum WaveletKind {
    Haar,
    /// Normalized beta density on `(0, 1)`, zero elsewhere.
    Beta {
        alpha: f64,
        beta: f64,
    },
    Ricker {
        sigma: f64,
    },
    Shannon,
    /// Difference of two centered Gaussian densities.
    Dog {
        sigma1: f64,
        sigma2: f64,
    },
    Meyer,
}

fn default_scale_base() -> f64 {
    2.0
}

fn default_shift_step() -> f64 {
    1.0
}

fn default_order() -> usize {
    1
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveletSpec {
    pub kind: WaveletKind,
    /// Scales `s = 0..s_max`.
    pub s_max: usize,
    /// Shifts `t = 0..t_max`.
    pub t_max: usize,
    #[serde(default = "default_scale_base")]
    pub a: f64,
    #[serde(default = "default_shift_step")]
    pub b: f64,
    /// 1 for the plain family, 2 for its per-instance Kronecker square.
    #[serde(default = "default_order")]
    pub order: usize,
}

const MEYER_ROOT: f64 = 0.75;
const STENCIL_STEP: f64 = 1e-3;

impl WaveletKind {
    pub fn validate(self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidParameter(msg.into()));
        match self {
            Self::Beta { alpha, beta }
                if !(alpha >= 1.0 && beta >= 1.0) || !alpha.is_finite() || !beta.is_finite() =>
            {
                bad("beta wavelet needs finite alpha, beta >= 1")
            }
            Self::Ricker { sigma } if !(sigma > 0.0) => bad("ricker sigma must be positive"),
            Self::Dog { sigma1, sigma2 } if !(sigma1 > 0.0 && sigma2 > 0.0) => {
                bad("difference-of-gaussians widths must be positive")
            }
            _ => Ok(()),
        }
    }

    /// Mother function `φ(τ)`.
    pub fn mother<T: Scalar>(self, tau: T) -> T {
        let lit = T::lit;
        match self {
            Self::Haar => {
                if tau >= T::zero() && tau < lit(0.5) {
                    T::one()
                } else if tau >= lit(0.5) && tau < T::one() {
                    -T::one()
                } else {
                    T::zero()
                }
            }
            Self::Beta { alpha, beta } => {
                if tau <= T::zero() || tau >= T::one() {
                    return T::zero();
                }
                let log_b = libm::lgamma(alpha) + libm::lgamma(beta) - libm::lgamma(alpha + beta);
                (lit(alpha - 1.0) * tau.ln() + lit(beta - 1.0) * (T::one() - tau).ln() - lit(log_b))
                    .exp()
            }
            Self::Ricker { sigma } => {
                let u = tau / lit(sigma);
                let norm = lit(2.0 / ((3.0 * sigma).sqrt() * PI.powf(0.25)));
                norm * (T::one() - u * u) * (-(u * u) / lit(2.0)).exp()
            }
            Self::Shannon => {
                if tau.abs() < lit(1e-12) {
                    return T::one();
                }
                let pt = lit(PI) * tau;
                ((pt + pt).sin() - pt.sin()) / pt
            }
            Self::Dog { sigma1, sigma2 } => gaussian_pdf(tau, sigma1) - gaussian_pdf(tau, sigma2),
            Self::Meyer => meyer(tau),
        }
    }

    /// `dφ/dτ`, analytic where the closed form is simple and a five-point
    /// stencil for Meyer. Haar is treated as flat.
    pub fn mother_derivative<T: Scalar>(self, tau: T) -> T {
        let lit = T::lit;
        match self {
            Self::Haar => T::zero(),
            Self::Beta { alpha, beta } => {
                if tau <= T::zero() || tau >= T::one() {
                    return T::zero();
                }
                let log_b = libm::lgamma(alpha) + libm::lgamma(beta) - libm::lgamma(alpha + beta);
                let rest = T::one() - tau;
                let term = |pa: f64, pb: f64| {
                    (lit(pa) * tau.ln() + lit(pb) * rest.ln() - lit(log_b)).exp()
                };
                let left = if alpha == 1.0 {
                    T::zero()
                } else {
                    lit(alpha - 1.0) * term(alpha - 2.0, beta - 1.0)
                };
                let right = if beta == 1.0 {
                    T::zero()
                } else {
                    lit(beta - 1.0) * term(alpha - 1.0, beta - 2.0)
                };
                left - right
            }
            Self::Ricker { sigma } => {
                let u = tau / lit(sigma);
                let norm = lit(2.0 / ((3.0 * sigma).sqrt() * PI.powf(0.25)));
                norm / lit(sigma) * u * (u * u - lit(3.0)) * (-(u * u) / lit(2.0)).exp()
            }
            Self::Shannon => {
                if tau.abs() < lit(1e-8) {
                    return T::zero();
                }
                let pi = lit(PI);
                let pt = pi * tau;
                let num = (pt + pt).sin() - pt.sin();
                let dnum = pi * (lit(2.0) * (pt + pt).cos() - pt.cos());
                (dnum * pt - num * pi) / (pt * pt)
            }
            Self::Dog { sigma1, sigma2 } => {
                let g = |s: f64| -tau / lit(s * s) * gaussian_pdf(tau, s);
                g(sigma1) - g(sigma2)
            }
            Self::Meyer => {
                let h = lit(STENCIL_STEP);
                let f = |d: f64| meyer(tau + h * lit(d));
                (f(-2.0) - lit(8.0) * f(-1.0) + lit(8.0) * f(1.0) - f(2.0)) / (lit(12.0) * h)
            }
        }
    }
}

fn gaussian_pdf<T: Scalar>(tau: T, sigma: f64) -> T {
    let s = T::lit(sigma);
    (-(tau * tau) / (T::lit(2.0) * s * s)).exp() / (s * T::lit((2.0 * PI).sqrt()))
}

fn meyer<T: Scalar>(tau: T) -> T {
    let lit = T::lit;
    if tau.abs() < lit(1e-12) {
        return lit(2.0 / 3.0 + 4.0 / (3.0 * PI));
    }
    // The denominator also vanishes at ±3/4 where the ratio tends to 2/(3π).
    if (tau.abs() - lit(MEYER_ROOT)).abs() < lit(1e-9) {
        return lit(2.0 / (3.0 * PI));
    }
    let pi = lit(PI);
    let num = (lit(2.0) * pi / lit(3.0) * tau).sin()
        + lit(4.0 / 3.0) * tau * (lit(4.0) * pi / lit(3.0) * tau).cos();
    let den = pi * tau - lit(16.0) * pi / lit(9.0) * tau * tau * tau;
    num / den
}

impl WaveletSpec {
    pub fn validate(&self) -> Result<()> {
        self.kind.validate()?;
        if !(self.a > 1.0) || !(self.b > 0.0) {
            return Err(Error::InvalidParameter(
                "wavelet needs a > 1 and b > 0".into(),
            ));
        }
        if self.s_max == 0 || self.t_max == 0 {
            return Err(Error::InvalidParameter(
                "wavelet needs s_max, t_max >= 1".into(),
            ));
        }
        if !(1..=2).contains(&self.order) {
            return Err(Error::InvalidParameter(
                "wavelet order must be 1 or 2".into(),
            ));
        }
        Ok(())
    }

    /// Output width for `m` input attributes.
    pub fn output_dim(&self, m: usize) -> usize {
        let first = self.s_max * self.t_max * m;
        if self.order == 2 {
            first * first
        } else {
            first
        }
    }

    /// Scale factor, shift and amplitude of child `(s, t)`.
    fn child(&self, s: usize, t: usize) -> (f64, f64, f64) {
        let scale = self.a.powi(s as i32);
        (scale, t as f64 * self.b * scale, scale.sqrt().recip())
    }

    fn order_one<T: Scalar>(&self, x: &Dense<T>) -> Dense<T> {
        let (b, m) = x.shape();
        let mut out = Dense::zeros(b, self.s_max * self.t_max * m);
        for s in 0..self.s_max {
            for t in 0..self.t_max {
                let (scale, shift, amp) = self.child(s, t);
                let block = (s * self.t_max + t) * m;
                for i in 0..b {
                    for j in 0..m {
                        let tau = (x[(i, j)] - T::lit(shift)) / T::lit(scale);
                        out[(i, block + j)] = T::lit(amp) * self.kind.mother(tau);
                    }
                }
            }
        }
        out
    }
}

/// Order-1 blocks are ordered by `(s, t)`, each `m` columns wide. Order 2
/// takes the per-row Kronecker square of the order-1 output.
pub fn expand_wavelet<T: Scalar>(x: &Dense<T>, spec: &WaveletSpec) -> Result<Dense<T>> {
    spec.validate()?;
    let first = spec.order_one(x);
    if spec.order == 1 {
        return Ok(first);
    }
    let k = first.cols();
    Ok(Dense::from_fn(first.rows(), k * k, |i, c| {
        first[(i, c / k)] * first[(i, c % k)]
    }))
}

pub fn expand_wavelet_on_tape(tape: &mut Tape, x: Var, spec: &WaveletSpec) -> Result<Var> {
    spec.validate()?;
    let xv = tape.value(x).clone();
    let mut blocks = Vec::with_capacity(spec.s_max * spec.t_max);
    for s in 0..spec.s_max {
        for t in 0..spec.t_max {
            let (scale, shift, amp) = spec.child(s, t);
            let tau = xv.map(|v| (v - shift) / scale);
            let value = tau.map(|v| amp * spec.kind.mother(v));
            let local = tau.map(|v| amp * spec.kind.mother_derivative(v) / scale);
            blocks.push(tape.linearized(&[x], value, vec![local])?);
        }
    }
    let first = tape.concat_cols(&blocks)?;
    if spec.order == 2 {
        tape.kron_rows(first, first)
    } else {
        Ok(first)
    }
}
