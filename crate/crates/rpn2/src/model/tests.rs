use super::*;
use crate::datasets::two_moons;
use crate::error::Error;
use crate::interdependence::{ChainStructure, ChainVariant, GridMode, GridStructure, ParamForm};
use crate::numeric_core::{finite_difference, max_relative_error, NormKind, Prng, Tape};
use crate::transformation::PolynomialFamily;
use crate::Matrix;

fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut prng = Prng::new(seed);
    Matrix::from_fn(rows, cols, |_, _| prng.uniform(-1.0, 1.0))
}

fn slot(layer: usize, head: usize, channel: usize, component: Component) -> Slot {
    Slot {
        layer,
        head: Some(head),
        channel: Some(channel),
        component,
    }
}

fn perceptron_layer(n: usize, sigmoid: bool) -> LayerConfig {
    let mut head = HeadConfig::new(ReconciliationMethod::Identity, n);
    if sigmoid {
        head.processors.output.push(Processor::Sigmoid);
    }
    LayerConfig::single(head)
}

fn sigmoid(m: &Matrix) -> Matrix {
    m.map(|v| 1.0 / (1.0 + (-v).exp()))
}

#[test]
fn perceptron_stack_matches_matrix_chain() {
    let model = ModelConfig {
        layers: vec![
            perceptron_layer(5, true),
            perceptron_layer(4, true),
            perceptron_layer(2, false),
        ],
    };
    for seed in 0..5 {
        let x = random(7, 3, seed);
        let store = ParameterStore::init(&model, x.shape(), seed).unwrap();
        let weight = |k: usize, n: usize, d: usize| {
            let w = store
                .slot_values(slot(k, 0, 0, Component::Reconciliation))
                .unwrap();
            Matrix::new(n, d, w.to_vec()).unwrap()
        };
        let (w1, w2, w3) = (weight(0, 5, 3), weight(1, 4, 5), weight(2, 2, 4));
        let h1 = sigmoid(&x.matmul(&w1.transpose()).unwrap());
        let h2 = sigmoid(&h1.matmul(&w2.transpose()).unwrap());
        let oracle = h2.matmul(&w3.transpose()).unwrap();
        let got = model_forward(&model, &store, &x).unwrap();
        assert!(got.max_abs_diff(&oracle).unwrap() < 1e-12);
    }
}

#[test]
fn single_head_model_equals_head_forward() {
    let model = ModelConfig {
        layers: vec![perceptron_layer(3, true)],
    };
    let x = random(4, 2, 1);
    let store = ParameterStore::init(&model, x.shape(), 1).unwrap();
    assert_eq!(
        model_forward(&model, &store, &x).unwrap(),
        head_forward(&model, &store, (0, 0), &x).unwrap()
    );
    assert_eq!(
        model_forward(&model, &store, &x).unwrap(),
        layer_forward(&model, &store, 0, &x).unwrap()
    );
}

fn structured_head() -> HeadConfig {
    let mut head = HeadConfig::new(ReconciliationMethod::Identity, 3);
    head.transform = DataTransform::Polynomial {
        family: PolynomialFamily::Legendre,
        d: 2,
    };
    head.interdependence.inst_prior = Some(StationSpec::new(InterdependenceKind::Chain(
        ChainStructure {
            variant: ChainVariant::Accumulative { h: 2 },
            ..Default::default()
        },
    )));
    head
}

#[test]
fn head_is_linear_in_reconciliation_parameters() {
    let model = ModelConfig {
        layers: vec![LayerConfig::single(structured_head())],
    };
    let x = random(6, 4, 2);
    let mut store = ParameterStore::init(&model, x.shape(), 3).unwrap();
    let len = store.len();
    let w1: Vec<f64> = random(1, len, 4).into_vec();
    let w2: Vec<f64> = random(1, len, 5).into_vec();
    let mut eval = |w: Vec<f64>| {
        store.set_values(w).unwrap();
        model_forward(&model, &store, &x).unwrap()
    };
    let f1 = eval(w1.clone());
    let f2 = eval(w2.clone());
    let combo: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| 2.0 * a - 0.5 * b).collect();
    let f12 = eval(combo);
    let expected = f1.scale(2.0).sub(&f2.scale(0.5)).unwrap();
    assert!(f12.max_abs_diff(&expected).unwrap() < 1e-12);
}

#[test]
fn lorr_parameter_total() {
    let model = ModelConfig {
        layers: vec![LayerConfig::single(HeadConfig::new(
            ReconciliationMethod::Lorr { rank: 2 },
            4,
        ))],
    };
    let store = ParameterStore::init(&model, (5, 8), 0).unwrap();
    assert_eq!(store.len(), 24);
    let x = random(5, 8, 1);
    let report = diagnostics(&model, &store, &x).unwrap();
    assert_eq!(report.total_parameters, 24);
    assert_eq!(report.layers[0].parameters, 24);
}

#[test]
fn zero_channel_leaves_sum_fusion_unchanged() {
    let single = ModelConfig {
        layers: vec![LayerConfig::single(structured_head())],
    };
    let mut two = single.clone();
    two.layers[0].heads[0].channels = 2;
    let x = random(5, 3, 6);
    let s1 = ParameterStore::init(&single, x.shape(), 7).unwrap();
    let mut s2 = ParameterStore::init(&two, x.shape(), 7).unwrap();
    let first = s1
        .slot_values(slot(0, 0, 0, Component::Reconciliation))
        .unwrap()
        .to_vec();
    s2.set_slot(slot(0, 0, 0, Component::Reconciliation), &first)
        .unwrap();
    s2.set_slot(
        slot(0, 0, 1, Component::Reconciliation),
        &vec![0.0; first.len()],
    )
    .unwrap();
    let a = model_forward(&single, &s1, &x).unwrap();
    let b = model_forward(&two, &s2, &x).unwrap();
    assert!(a.max_abs_diff(&b).unwrap() < 1e-14);
}

#[test]
fn two_channels_equal_two_summed_heads() {
    let mut channels = ModelConfig {
        layers: vec![LayerConfig::single(structured_head())],
    };
    channels.layers[0].heads[0].channels = 2;
    let heads = ModelConfig {
        layers: vec![LayerConfig {
            heads: vec![structured_head(), structured_head()],
            head_fusion: FusionSpec::Sum,
            channel_fusion: FusionSpec::Sum,
        }],
    };
    let x = random(5, 3, 8);
    let sc = ParameterStore::init(&channels, x.shape(), 9).unwrap();
    let mut sh = ParameterStore::init(&heads, x.shape(), 10).unwrap();
    for c in 0..2 {
        let w = sc
            .slot_values(slot(0, 0, c, Component::Reconciliation))
            .unwrap()
            .to_vec();
        sh.set_slot(slot(0, c, 0, Component::Reconciliation), &w)
            .unwrap();
    }
    let a = model_forward(&channels, &sc, &x).unwrap();
    let b = model_forward(&heads, &sh, &x).unwrap();
    assert!(a.max_abs_diff(&b).unwrap() < 1e-13);
}

#[test]
fn averaging_identical_heads_is_idempotent() {
    let model = ModelConfig {
        layers: vec![LayerConfig {
            heads: vec![structured_head(), structured_head()],
            head_fusion: FusionSpec::Average,
            channel_fusion: FusionSpec::Sum,
        }],
    };
    let x = random(5, 3, 11);
    let mut store = ParameterStore::init(&model, x.shape(), 12).unwrap();
    let w = store
        .slot_values(slot(0, 0, 0, Component::Reconciliation))
        .unwrap()
        .to_vec();
    store
        .set_slot(slot(0, 1, 0, Component::Reconciliation), &w)
        .unwrap();
    let avg = model_forward(&model, &store, &x).unwrap();
    let one = head_forward(&model, &store, (0, 0), &x).unwrap();
    assert!(avg.max_abs_diff(&one).unwrap() < 1e-15);
}

#[test]
fn prior_identity_stations_change_nothing() {
    let plain = ModelConfig {
        layers: vec![LayerConfig::single(HeadConfig::new(
            ReconciliationMethod::Identity,
            2,
        ))],
    };
    let mut wrapped = plain.clone();
    let s = &mut wrapped.layers[0].heads[0].interdependence;
    s.attr_prior = Some(StationSpec::new(InterdependenceKind::Identity));
    s.inst_post = Some(StationSpec::new(InterdependenceKind::Identity));
    let x = random(4, 3, 13);
    let store = ParameterStore::init(&plain, x.shape(), 1).unwrap();
    let a = model_forward(&plain, &store, &x).unwrap();
    let b = model_forward(&wrapped, &store, &x).unwrap();
    assert_eq!(a, b);
}

/// Two layers with parametric interdependence, a polynomial expansion and
/// low-rank reconciliation.
pub(crate) fn two_layer_model() -> ModelConfig {
    let mut first = HeadConfig::new(ReconciliationMethod::Lorr { rank: 2 }, 4);
    first.transform = DataTransform::Polynomial {
        family: PolynomialFamily::Hermite,
        d: 2,
    };
    first.interdependence.inst_prior =
        Some(StationSpec::new(InterdependenceKind::LowRankBilinear {
            rank: 2,
        }));
    first.interdependence.attr_post = Some(StationSpec::new(InterdependenceKind::Parameterized {
        cols: 5,
        form: ParamForm::LowRank { rank: 2 },
    }));
    first.processors.output.push(Processor::Tanh);
    first.channels = 2;
    let mut second = HeadConfig::new(ReconciliationMethod::Identity, 2);
    second.interdependence.inst_post = Some(StationSpec::new(InterdependenceKind::Bilinear));
    ModelConfig {
        layers: vec![
            LayerConfig {
                heads: vec![first],
                head_fusion: FusionSpec::Sum,
                channel_fusion: FusionSpec::WeightedSum {
                    weights: vec![0.7, 0.3],
                    learnable: true,
                },
            },
            LayerConfig::single(second),
        ],
    }
}

/// Largest relative error between tape and central-difference gradients of
/// `sum(f(X) ⊙ G)` over `coords` random parameter coordinates.
pub(crate) fn model_gradient_error(
    model: &ModelConfig,
    x: &Matrix,
    seed: u64,
    coords: usize,
) -> f64 {
    let store = ParameterStore::init(model, x.shape(), seed).unwrap();
    let out_shape = model_forward(model, &store, x).unwrap().shape();
    let g = random(out_shape.0, out_shape.1, seed + 100);
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let pv = tape.parameter(Matrix::row_vector(store.values().to_vec()));
    let out = model_forward_on_tape(&mut tape, model, &store, xv, pv).unwrap();
    let gv = tape.constant(g.clone());
    let prod = tape.mul(out, gv).unwrap();
    let loss = tape.sum(prod);
    let grad = tape.backward(loss).unwrap().get(pv).unwrap().clone();
    let mut prng = Prng::new(seed + 200);
    let picks: Vec<usize> = (0..coords).map(|_| prng.below(store.len())).collect();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for &k in &picks {
        let base = store.values().to_vec();
        let fd = finite_difference(&Matrix::filled(1, 1, base[k]), 1e-6, |p| {
            let mut shifted = store.clone();
            let mut w = base.clone();
            w[k] = p[(0, 0)];
            shifted.set_values(w).unwrap();
            model_forward(model, &shifted, x)
                .unwrap()
                .hadamard(&g)
                .unwrap()
                .sum()
        });
        analytic.push(grad[(0, k)]);
        numeric.push(fd[(0, 0)]);
    }
    max_relative_error(&Matrix::row_vector(analytic), &Matrix::row_vector(numeric))
}

#[test]
fn two_layer_gradient_matches_finite_differences() {
    let x = random(5, 3, 21);
    for seed in 0..3 {
        let err = model_gradient_error(&two_layer_model(), &x, seed, 20);
        assert!(err < 1e-5, "seed {seed}: {err}");
    }
}

fn regression_task() -> (ModelConfig, Matrix, Matrix) {
    let model = ModelConfig {
        layers: vec![perceptron_layer(2, false)],
    };
    let x = random(20, 3, 30);
    let w = Matrix::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.3, 0.0, 1.5]]).unwrap();
    let y = x
        .matmul(&w.transpose())
        .unwrap()
        .add(&random(20, 2, 31).scale(0.1))
        .unwrap();
    (model, x, y)
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let (model, x, y) = regression_task();
    let mut store = ParameterStore::init(&model, x.shape(), 1).unwrap();
    let before = store.clone();
    let config = TrainConfig {
        loss: Loss::Mse,
        optimizer: Optimizer::Sgd {
            lr: 0.0,
            momentum: 0.9,
        },
        epochs: 5,
    };
    let history = train(&model, &mut store, &x, &Targets::Values(y), &config).unwrap();
    assert_eq!(store, before);
    let first = history.epochs[0].loss;
    assert!(history.epochs.iter().all(|r| r.loss == first));
}

#[test]
fn small_steps_never_increase_convex_loss() {
    let (model, x, y) = regression_task();
    let mut store = ParameterStore::init(&model, x.shape(), 2).unwrap();
    let config = TrainConfig {
        loss: Loss::Mse,
        optimizer: Optimizer::Sgd {
            lr: 1e-4,
            momentum: 0.0,
        },
        epochs: 10,
    };
    let history = train(&model, &mut store, &x, &Targets::Values(y), &config).unwrap();
    for pair in history.epochs.windows(2) {
        assert!(pair[1].loss <= pair[0].loss);
    }
}

#[test]
fn one_parameter_model_reaches_least_squares() {
    let model = ModelConfig {
        layers: vec![perceptron_layer(1, false)],
    };
    let x = random(15, 1, 40);
    let noise = random(15, 1, 41).scale(0.2);
    let y = x.scale(1.7).add(&noise).unwrap();
    let optimum = (0..15).map(|i| x[(i, 0)] * y[(i, 0)]).sum::<f64>()
        / (0..15).map(|i| x[(i, 0)].powi(2)).sum::<f64>();
    let mut store = ParameterStore::init(&model, x.shape(), 3).unwrap();
    let config = TrainConfig {
        loss: Loss::Mse,
        optimizer: Optimizer::Sgd {
            lr: 0.5,
            momentum: 0.5,
        },
        epochs: 300,
    };
    train(&model, &mut store, &x, &Targets::Values(y), &config).unwrap();
    assert!((store.values()[0] - optimum).abs() < 1e-6);
}

/// Polynomial features, low-rank reconciliation, two stacked layers.
pub(crate) fn two_moons_model() -> ModelConfig {
    let layer = |n: usize, hidden: bool| {
        let mut head = HeadConfig::new(ReconciliationMethod::Lorr { rank: 2 }, n);
        head.transform = DataTransform::Polynomial {
            family: PolynomialFamily::Hermite,
            d: 2,
        };
        if hidden {
            head.processors.output.push(Processor::Tanh);
        }
        LayerConfig::single(head)
    };
    ModelConfig {
        layers: vec![layer(4, true), layer(2, false)],
    }
}

#[test]
fn two_moons_reaches_high_accuracy() {
    let (x, labels) = two_moons(200, 0.1, 7);
    let model = two_moons_model();
    let mut store = ParameterStore::init(&model, x.shape(), 0).unwrap();
    let config = TrainConfig {
        loss: Loss::CrossEntropy,
        optimizer: Optimizer::AdaptiveMoments {
            lr: 0.05,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        },
        epochs: 500,
    };
    let targets = Targets::Classes(labels);
    let history = train(&model, &mut store, &x, &targets, &config).unwrap();
    let final_eval = evaluate(&model, &store, &x, &targets, Loss::CrossEntropy).unwrap();
    let best = history
        .epochs
        .iter()
        .map(|r| r.metric)
        .fold(final_eval.metric, f64::max);
    assert!(
        final_eval.metric >= 0.95,
        "final accuracy {} (best {best})",
        final_eval.metric
    );
}

#[test]
fn non_finite_loss_aborts() {
    let (model, x, y) = regression_task();
    let mut store = ParameterStore::init(&model, x.shape(), 1).unwrap();
    let config = TrainConfig {
        loss: Loss::Mse,
        optimizer: Optimizer::Sgd {
            lr: 1e6,
            momentum: 0.0,
        },
        epochs: 200,
    };
    let err = train(&model, &mut store, &x, &Targets::Values(y), &config).unwrap_err();
    assert!(matches!(err, Error::NonFinite(_)));
}

#[test]
fn identity_instance_rank_is_batch_size() {
    let model = ModelConfig {
        layers: vec![perceptron_layer(2, false)],
    };
    let mut with_station = model.clone();
    with_station.layers[0].heads[0].interdependence.inst_prior =
        Some(StationSpec::new(InterdependenceKind::Identity));
    let x = random(6, 3, 50);
    let store = ParameterStore::init(&model, x.shape(), 1).unwrap();
    for m in [&model, &with_station] {
        let report = diagnostics(m, &store, &x).unwrap();
        assert_eq!(report.layers[0].instance_rank, 6);
        assert_eq!(report.layers[0].capacity_rank, 3);
    }
    let report = diagnostics(&with_station, &store, &x).unwrap();
    let station = &report.layers[0].stations[0];
    assert_eq!(station.rank, 6);
    assert_eq!(station.transpose_inf_norm, 1.0);
    assert!((station.applied_two_to_inf_norm - x.norm(NormKind::TwoToInfinity)).abs() < 1e-15);
}

#[test]
fn normalized_station_norms_match_brute_force() {
    let mut model = ModelConfig {
        layers: vec![perceptron_layer(2, false)],
    };
    model.layers[0].heads[0].interdependence.inst_prior = Some(StationSpec {
        kind: InterdependenceKind::Numerical {
            kernel: crate::interdependence::NumKernel::GaussianRbf { sigma: 1.0 },
        },
        post_norm: crate::interdependence::PostNorm::ColL1,
    });
    let x = random(5, 3, 51);
    let store = ParameterStore::init(&model, x.shape(), 1).unwrap();
    let report = diagnostics(&model, &store, &x).unwrap();
    let station = &report.layers[0].stations[0];
    // Brute force: A(i, j) ∝ exp(−‖x_i − x_j‖²/2), columns normalized to unit sum.
    let raw = Matrix::from_fn(5, 5, |i, j| {
        let d: f64 = (0..3).map(|k| (x[(i, k)] - x[(j, k)]).powi(2)).sum();
        (-d / 2.0).exp()
    });
    let a = Matrix::from_fn(5, 5, |i, j| {
        raw[(i, j)] / (0..5).map(|r| raw[(r, j)]).sum::<f64>()
    });
    let mut inf = 0.0f64;
    for j in 0..5 {
        inf = inf.max((0..5).map(|i| a[(i, j)].abs()).sum());
    }
    assert!((station.transpose_inf_norm - inf).abs() < 1e-8);
    assert!((station.transpose_inf_norm - 1.0).abs() < 1e-12);
    let ax = a.transpose().matmul(&x).unwrap();
    let mut two_inf = 0.0f64;
    for i in 0..5 {
        two_inf = two_inf.max(ax.row(i).iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    assert!((station.applied_two_to_inf_norm - two_inf).abs() < 1e-8);
    assert_eq!(station.nnz, 25);
}

#[test]
fn mismatch_names_the_station() {
    let mut model = ModelConfig {
        layers: vec![perceptron_layer(2, false)],
    };
    let grid = GridStructure {
        grid: crate::grid_geometry::GridSpec::new(2, 2, 1).unwrap(),
        shape: crate::grid_geometry::PatchShape::cuboid((0, 0), (0, 0), (0, 0)),
        packing: crate::grid_geometry::PackingSpec::densest(),
        mode: GridMode::Padding,
    };
    model.layers[0].heads[0].interdependence.attr_prior =
        Some(StationSpec::new(InterdependenceKind::Grid(grid)));
    let err = ParameterStore::init(&model, (3, 5), 0).unwrap_err();
    let text = err.to_string();
    assert!(text.contains("attr_prior"), "{text}");
}

#[test]
fn config_round_trips_through_json() {
    let model = two_layer_model();
    let text = serde_json::to_string(&model).unwrap();
    let back: ModelConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(back, model);
    assert_eq!(serde_json::to_string(&back).unwrap(), text);
    let bad = r#"{"layers":[{"heads":[{"reconciliation":"identity","output_dim":2,"bogus":1}]}]}"#;
    assert!(serde_json::from_str::<ModelConfig>(bad).is_err());
}
