//! Fusion of several equally shaped matrices (or row-aligned ones for
//! `concat_linear`) into one.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numeric_core::{Tape, Var};
use crate::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Max,
    Min,
    Prod,
    Median,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FusionSpec {
    /// `Σ α_i A_i`. Learnable weights start from `weights` and live in the
    /// parameter store.
    WeightedSum {
        weights: Vec<f64>,
        #[serde(default)]
        learnable: bool,
    },
    Average,
    #[default]
    Sum,
    Metric {
        kind: MetricKind,
    },
    Hadamard,
    /// `(A_1 ⊔ … ⊔ A_k)·W` with `W` full or factored as `P·Qᵀ`.
    ConcatLinear {
        n: usize,
        #[serde(default)]
        low_rank: Option<usize>,
    },
}

impl FusionSpec {
    /// Learnable parameter count given the column widths of the inputs.
    pub fn param_length(&self, input_widths: &[usize]) -> usize {
        match self {
            Self::WeightedSum {
                weights,
                learnable: true,
            } => weights.len(),
            Self::ConcatLinear { n, low_rank } => {
                let total: usize = input_widths.iter().sum();
                match low_rank {
                    Some(r) => (total + n) * r,
                    None => total * n,
                }
            }
            _ => 0,
        }
    }

    /// Output width given the input widths.
    pub fn output_width(&self, input_widths: &[usize]) -> usize {
        match self {
            Self::ConcatLinear { n, .. } => *n,
            _ => input_widths.first().copied().unwrap_or(0),
        }
    }

    /// Value-only fusion.
    pub fn fuse(&self, inputs: &[Matrix], params: &[f64]) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.constant(m.clone())).collect();
        let pv = tape.constant(Matrix::row_vector(params.to_vec()));
        let out = self.fuse_on_tape(&mut tape, &vars, pv)?;
        Ok(tape.value(out).clone())
    }

    /// Fusion recorded on `tape`. `params` is a `1×l` node (`l` may be 0).
    pub fn fuse_on_tape(&self, tape: &mut Tape, inputs: &[Var], params: Var) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(Error::InvalidParameter(
                "fusion needs at least one input".into(),
            ));
        };
        let widths: Vec<usize> = inputs.iter().map(|&v| tape.value(v).cols()).collect();
        let expected = self.param_length(&widths);
        let found = tape.value(params).len();
        if found != expected {
            return Err(Error::ParamLength {
                context: "fusion".into(),
                expected,
                found,
            });
        }
        if !matches!(self, Self::ConcatLinear { .. }) {
            let shape = tape.value(first).shape();
            for &v in &inputs[1..] {
                let other = tape.value(v).shape();
                if other != shape {
                    return Err(shape_err(
                        "fusion inputs",
                        format!("{}x{}", shape.0, shape.1),
                        format!("{}x{}", other.0, other.1),
                    ));
                }
            }
        }
        match self {
            Self::Sum => sum_all(tape, inputs),
            Self::Average => {
                let total = sum_all(tape, inputs)?;
                Ok(tape.scale(total, 1.0 / inputs.len() as f64))
            }
            Self::WeightedSum { weights, learnable } => {
                if weights.len() != inputs.len() {
                    return Err(shape_err(
                        "fusion weight count",
                        inputs.len(),
                        weights.len(),
                    ));
                }
                let mut acc: Option<Var> = None;
                for (k, &v) in inputs.iter().enumerate() {
                    let term = if *learnable {
                        let alpha = tape.slice_cols(params, k, 1)?;
                        let (rows, _) = tape.value(v).shape();
                        let ones = tape.constant(Matrix::filled(rows, 1, 1.0));
                        let column = tape.matmul(ones, alpha)?;
                        tape.scale_rows(v, column)?
                    } else {
                        tape.scale(v, weights[k])
                    };
                    acc = Some(match acc {
                        Some(a) => tape.add(a, term)?,
                        None => term,
                    });
                }
                Ok(acc.expect("at least one input"))
            }
            Self::Hadamard => {
                let mut acc = first;
                for &v in &inputs[1..] {
                    acc = tape.mul(acc, v)?;
                }
                Ok(acc)
            }
            Self::Metric { kind } => metric(tape, inputs, *kind),
            Self::ConcatLinear { n, low_rank } => {
                let joined = tape.concat_cols(inputs)?;
                let total: usize = widths.iter().sum();
                let w = tape.reshape(params, 1, expected)?;
                let projection = match low_rank {
                    None => tape.reshape(w, total, *n)?,
                    Some(r) => {
                        let p = tape.slice_cols(w, 0, total * r)?;
                        let p = tape.reshape(p, total, *r)?;
                        let q = tape.slice_cols(w, total * r, n * r)?;
                        let q = tape.reshape(q, *n, *r)?;
                        let qt = tape.transpose(q);
                        tape.matmul(p, qt)?
                    }
                };
                tape.matmul(joined, projection)
            }
        }
    }
}

fn sum_all(tape: &mut Tape, inputs: &[Var]) -> Result<Var> {
    let mut acc = inputs[0];
    for &v in &inputs[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(acc)
}

/// Entrywise max/min/prod/median with exact per-input partials.
fn metric(tape: &mut Tape, inputs: &[Var], kind: MetricKind) -> Result<Var> {
    let k = inputs.len();
    let (rows, cols) = tape.value(inputs[0]).shape();
    let mut value = Matrix::zeros(rows, cols);
    let mut local = vec![Matrix::zeros(rows, cols); k];
    let mut column = vec![0.0; k];
    for i in 0..rows {
        for j in 0..cols {
            for (slot, &v) in column.iter_mut().zip(inputs) {
                *slot = tape.value(v)[(i, j)];
            }
            let (out, partials) = metric_entry(&column, kind);
            value[(i, j)] = out;
            for (d, g) in local.iter_mut().zip(partials) {
                d[(i, j)] = g;
            }
        }
    }
    tape.linearized(inputs, value, local)
}

fn metric_entry(values: &[f64], kind: MetricKind) -> (f64, Vec<f64>) {
    let k = values.len();
    let mut partials = vec![0.0; k];
    match kind {
        MetricKind::Max | MetricKind::Min => {
            let mut best = 0;
            for idx in 1..k {
                let better = match kind {
                    MetricKind::Max => values[idx] > values[best],
                    _ => values[idx] < values[best],
                };
                if better {
                    best = idx;
                }
            }
            partials[best] = 1.0;
            (values[best], partials)
        }
        MetricKind::Prod => {
            for (idx, p) in partials.iter_mut().enumerate() {
                *p = values
                    .iter()
                    .enumerate()
                    .filter(|&(o, _)| o != idx)
                    .map(|(_, v)| v)
                    .product();
            }
            (values.iter().product(), partials)
        }
        MetricKind::Median => {
            let mut order: Vec<usize> = (0..k).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
            if k % 2 == 1 {
                let mid = order[k / 2];
                partials[mid] = 1.0;
                (values[mid], partials)
            } else {
                let (lo, hi) = (order[k / 2 - 1], order[k / 2]);
                partials[lo] += 0.5;
                partials[hi] += 0.5;
                (0.5 * (values[lo] + values[hi]), partials)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric_core::{finite_difference, max_relative_error, Prng};
    use proptest::prelude::*;

    fn random(rows: usize, cols: usize, prng: &mut Prng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| prng.uniform(-2.0, 2.0))
    }

    #[test]
    fn average_of_identical_inputs() {
        let mut prng = Prng::new(1);
        let m = random(3, 4, &mut prng);
        let out = FusionSpec::Average
            .fuse(&[m.clone(), m.clone(), m.clone()], &[])
            .unwrap();
        assert!(out.max_abs_diff(&m).unwrap() < 1e-15);
    }

    #[test]
    fn hadamard_with_ones_mask() {
        let mut prng = Prng::new(2);
        let m = random(3, 3, &mut prng);
        let out = FusionSpec::Hadamard
            .fuse(&[Matrix::filled(3, 3, 1.0), m.clone()], &[])
            .unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn opposite_weights_cancel() {
        let mut prng = Prng::new(3);
        let m = random(2, 5, &mut prng);
        let spec = FusionSpec::WeightedSum {
            weights: vec![1.0, -1.0],
            learnable: false,
        };
        assert_eq!(spec.fuse(&[m.clone(), m], &[]).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn metric_max_matches_loop_oracle() {
        let mut prng = Prng::new(4);
        let inputs: Vec<Matrix> = (0..5).map(|_| random(4, 4, &mut prng)).collect();
        let out = FusionSpec::Metric {
            kind: MetricKind::Max,
        }
        .fuse(&inputs, &[])
        .unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let mut best = f64::NEG_INFINITY;
                for m in &inputs {
                    if m[(i, j)] > best {
                        best = m[(i, j)];
                    }
                }
                assert_eq!(out[(i, j)], best);
            }
        }
    }

    #[test]
    fn median_of_even_count_averages_middle_pair() {
        let inputs: Vec<Matrix> = [4.0, 1.0, 3.0, 10.0]
            .iter()
            .map(|&v| Matrix::filled(1, 1, v))
            .collect();
        let out = FusionSpec::Metric {
            kind: MetricKind::Median,
        }
        .fuse(&inputs, &[])
        .unwrap();
        assert_eq!(out[(0, 0)], 3.5);
        let odd = &inputs[..3];
        let out = FusionSpec::Metric {
            kind: MetricKind::Median,
        }
        .fuse(odd, &[])
        .unwrap();
        assert_eq!(out[(0, 0)], 3.0);
    }

    #[test]
    fn shape_and_count_errors() {
        let a = Matrix::zeros(2, 2);
        let b = Matrix::zeros(2, 3);
        assert!(FusionSpec::Sum.fuse(&[a.clone(), b.clone()], &[]).is_err());
        let spec = FusionSpec::WeightedSum {
            weights: vec![1.0],
            learnable: false,
        };
        assert!(spec.fuse(&[a.clone(), a.clone()], &[]).is_err());
        let concat = FusionSpec::ConcatLinear {
            n: 2,
            low_rank: None,
        };
        assert!(concat.fuse(&[a, b], &[0.0; 10]).is_ok());
    }

    #[test]
    fn concat_linear_single_identity_is_identity() {
        let mut prng = Prng::new(5);
        let m = random(3, 3, &mut prng);
        let spec = FusionSpec::ConcatLinear {
            n: 3,
            low_rank: None,
        };
        let eye = Matrix::identity(3);
        assert_eq!(
            spec.fuse(std::slice::from_ref(&m), eye.as_slice()).unwrap(),
            m
        );
    }

    #[test]
    fn concat_linear_parameter_counts() {
        let full = FusionSpec::ConcatLinear {
            n: 4,
            low_rank: None,
        };
        assert_eq!(full.param_length(&[3, 5]), 32);
        let low = FusionSpec::ConcatLinear {
            n: 4,
            low_rank: Some(2),
        };
        assert_eq!(low.param_length(&[3, 5]), 24);
    }

    fn fd_check(spec: &FusionSpec, inputs: &[Matrix], seed: u64) {
        let widths: Vec<usize> = inputs.iter().map(Matrix::cols).collect();
        let l = spec.param_length(&widths);
        let mut prng = Prng::new(seed);
        let w0 = random(1, l, &mut prng);
        let out_shape = spec.fuse(inputs, w0.as_slice()).unwrap().shape();
        let probe = random(out_shape.0, out_shape.1, &mut prng);
        let numeric = finite_difference(&w0, 1e-6, |w| {
            spec.fuse(inputs, w.as_slice())
                .unwrap()
                .hadamard(&probe)
                .unwrap()
                .sum()
        });
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.constant(m.clone())).collect();
        let wv = tape.parameter(w0);
        let out = spec.fuse_on_tape(&mut tape, &vars, wv).unwrap();
        let pv = tape.constant(probe);
        let prod = tape.mul(out, pv).unwrap();
        let loss = tape.sum(prod);
        let grads = tape.backward(loss).unwrap();
        assert!(max_relative_error(grads.get(wv).unwrap(), &numeric) < 1e-5);
    }

    #[test]
    fn learnable_gradients_match_finite_differences() {
        let mut prng = Prng::new(6);
        let inputs = vec![random(3, 4, &mut prng), random(3, 4, &mut prng)];
        let ws = FusionSpec::WeightedSum {
            weights: vec![0.5, 0.5],
            learnable: true,
        };
        fd_check(&ws, &inputs, 7);
        let mixed = vec![random(3, 2, &mut prng), random(3, 5, &mut prng)];
        fd_check(
            &FusionSpec::ConcatLinear {
                n: 3,
                low_rank: None,
            },
            &mixed,
            8,
        );
        fd_check(
            &FusionSpec::ConcatLinear {
                n: 3,
                low_rank: Some(2),
            },
            &mixed,
            9,
        );
    }

    #[test]
    fn metric_gradient_routes_to_selected_input() {
        let a = Matrix::from_rows(&[vec![1.0, 5.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![2.0, 3.0]]).unwrap();
        let mut tape = Tape::new();
        let (va, vb) = (tape.parameter(a), tape.parameter(b));
        let empty = tape.constant(Matrix::zeros(1, 0));
        let out = FusionSpec::Metric {
            kind: MetricKind::Max,
        }
        .fuse_on_tape(&mut tape, &[va, vb], empty)
        .unwrap();
        let loss = tape.sum(out);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(va).unwrap().as_slice(), &[0.0, 1.0]);
        assert_eq!(grads.get(vb).unwrap().as_slice(), &[1.0, 0.0]);
    }

    proptest! {
        #[test]
        fn sum_and_average_are_weighted_sums(seed in 0u64..500, k in 1usize..5) {
            let mut prng = Prng::new(seed);
            let inputs: Vec<Matrix> = (0..k).map(|_| random(3, 2, &mut prng)).collect();
            let ones = FusionSpec::WeightedSum { weights: vec![1.0; k], learnable: false };
            let mean = FusionSpec::WeightedSum { weights: vec![1.0 / k as f64; k], learnable: false };
            let s = FusionSpec::Sum.fuse(&inputs, &[]).unwrap();
            let a = FusionSpec::Average.fuse(&inputs, &[]).unwrap();
            prop_assert!(s.max_abs_diff(&ones.fuse(&inputs, &[]).unwrap()).unwrap() < 1e-14);
            prop_assert!(a.max_abs_diff(&mean.fuse(&inputs, &[]).unwrap()).unwrap() < 1e-14);
        }

        #[test]
        fn hadamard_commutes_and_associates(seed in 0u64..500) {
            let mut prng = Prng::new(seed);
            let (a, b, c) = (random(3, 3, &mut prng), random(3, 3, &mut prng), random(3, 3, &mut prng));
            let h = |x: &Matrix, y: &Matrix| FusionSpec::Hadamard.fuse(&[x.clone(), y.clone()], &[]).unwrap();
            prop_assert!(h(&a, &b).max_abs_diff(&h(&b, &a)).unwrap() < 1e-12);
            prop_assert!(h(&h(&a, &b), &c).max_abs_diff(&h(&a, &h(&b, &c))).unwrap() < 1e-12);
        }
    }
}
