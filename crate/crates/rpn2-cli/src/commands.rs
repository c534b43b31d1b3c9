use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;

use rpn2::backbone_equiv::{build_equivalent, BackboneKind};
use rpn2::datasets::{Dataset, Labels};
use rpn2::interdependence::Graph;
use rpn2::model::{diagnostics, evaluate, train, Loss, ParameterStore, Targets};
use rpn2::numeric_core::Prng;
use rpn2::Matrix;

use crate::config::{
    BackboneChoice, BuildMatrixConfig, DatasetSpec, DiagnoseConfig, EquivConfig, GenDataConfig,
    RunConfig,
};

/// Rows kept for training and held out, in shuffled order.
struct Partition {
    train: Dataset,
    test: Option<Dataset>,
}

fn take_rows(data: &Dataset, rows: &[usize]) -> Dataset {
    let features = Matrix::from_fn(rows.len(), data.features.cols(), |i, j| {
        data.features[(rows[i], j)]
    });
    let labels = match &data.labels {
        Labels::None => Labels::None,
        Labels::Classes(c) => Labels::Classes(rows.iter().map(|&r| c[r]).collect()),
        Labels::Values(v) => Labels::Values(Matrix::from_fn(rows.len(), v.cols(), |i, j| {
            v[(rows[i], j)]
        })),
    };
    Dataset {
        features,
        labels,
        graph: data.graph.clone(),
    }
}

fn generate(spec: &DatasetSpec) -> Result<Partition> {
    let data = spec.kind.generate()?;
    let Some(split) = spec.split else {
        return Ok(Partition {
            train: data,
            test: None,
        });
    };
    if !(split.train > 0.0 && split.train <= 1.0) {
        bail!("split.train must be in (0, 1], got {}", split.train);
    }
    if data.graph.is_some() {
        bail!("graph datasets cannot be split: instance interdependence spans every node");
    }
    let n = data.features.rows();
    let mut order: Vec<usize> = (0..n).collect();
    Prng::new(split.seed).fork("split").shuffle(&mut order);
    let keep = ((split.train * n as f64).round() as usize).clamp(1, n);
    let test = (keep < n).then(|| take_rows(&data, &order[keep..]));
    Ok(Partition {
        train: take_rows(&data, &order[..keep]),
        test,
    })
}

fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let m = data.features.cols();
    let mut header: Vec<String> = (0..m).map(|j| format!("x{j}")).collect();
    match &data.labels {
        Labels::None => {}
        Labels::Classes(_) => header.push("label".into()),
        Labels::Values(v) => header.extend((0..v.cols()).map(|j| format!("y{j}"))),
    }
    writer.write_record(&header)?;
    for i in 0..data.features.rows() {
        let mut record: Vec<String> = data.features.row(i).iter().map(|v| v.to_string()).collect();
        match &data.labels {
            Labels::None => {}
            Labels::Classes(c) => record.push(c[i].to_string()),
            Labels::Values(v) => record.extend(v.row(i).iter().map(|x| x.to_string())),
        }
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}

fn write_edges(path: &Path, graph: &Graph) -> Result<()> {
    let mut writer =
        csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    writer.write_record(["source", "target"])?;
    for &(u, v) in &graph.edges {
        writer.write_record([u.to_string(), v.to_string()])?;
    }
    writer.flush()?;
    Ok(())
}

/// `data.csv` → `data.<tag>.<ext>`.
fn sibling(path: &Path, tag: &str, ext: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.{tag}.{ext}"))
}

fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => {
            std::fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

/// Writes the dataset CSV (train/test files when split) and, for graph data,
/// an edge list next to it.
pub fn gen_data(config: GenDataConfig, out: &Path, seed: Option<u64>) -> Result<()> {
    let spec = match seed {
        Some(s) => config.data.with_seed(s),
        None => config.data,
    };
    let parts = generate(&spec)?;
    match &parts.test {
        None if spec.split.is_none() => write_dataset(out, &parts.train)?,
        _ => {
            write_dataset(&sibling(out, "train", "csv"), &parts.train)?;
            if let Some(test) = &parts.test {
                write_dataset(&sibling(out, "test", "csv"), test)?;
            }
        }
    }
    if let Some(graph) = &parts.train.graph {
        write_edges(&sibling(out, "edges", "csv"), graph)?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct MatrixStats {
    pub rows: usize,
    pub cols: usize,
    pub nnz: usize,
    pub nnz_ratio: f64,
}

/// Writes the matrix in Matrix Market form and its stats as `<stem>.stats.json`.
pub fn build_matrix(
    config: BuildMatrixConfig,
    out: &Path,
    seed: Option<u64>,
) -> Result<MatrixStats> {
    let spec = &config.interdependence;
    let l = spec.param_length(config.input_shape)?;
    let params = config.params.clone().unwrap_or_else(|| vec![0.0; l]);
    let matrix = if spec.kind.needs_data() {
        let Some(data) = config.data else {
            bail!("interdependence kind reads the batch; add a \"data\" section");
        };
        let data = match seed {
            Some(s) => data.with_seed(s),
            None => data,
        };
        let x = generate(&data)?.train.features;
        if x.shape() != config.input_shape {
            bail!(
                "data batch is {:?}, input_shape says {:?}",
                x.shape(),
                config.input_shape
            );
        }
        spec.build(&x, &params)?
    } else {
        spec.build_structural(config.input_shape, &params)?
    };
    let sparse = matrix.to_sparse();
    std::fs::write(out, sparse.to_matrix_market())
        .with_context(|| format!("writing {}", out.display()))?;
    let stats = MatrixStats {
        rows: sparse.rows(),
        cols: sparse.cols(),
        nnz: sparse.nnz(),
        nnz_ratio: sparse.nnz_ratio(),
    };
    write_json(Some(&sibling(out, "stats", "json")), &stats)?;
    Ok(stats)
}

fn targets(labels: &Labels, loss: Loss) -> Result<Targets> {
    match (labels, loss) {
        (Labels::Classes(c), Loss::CrossEntropy) => Ok(Targets::Classes(c.clone())),
        (Labels::Values(v), Loss::Mse) => Ok(Targets::Values(v.clone())),
        (Labels::None, _) => bail!("dataset has no labels to train on"),
        (Labels::Classes(_), Loss::Mse) => bail!("class labels need the cross_entropy loss"),
        (Labels::Values(_), Loss::CrossEntropy) => bail!("regression targets need the mse loss"),
    }
}

#[derive(Serialize)]
struct Checkpoint<'a> {
    config: &'a RunConfig,
    seed: u64,
    parameters: &'a ParameterStore,
    train_metric: Option<f64>,
    test_metric: Option<f64>,
}

#[derive(serde::Deserialize)]
struct CheckpointParameters {
    parameters: ParameterStore,
}

/// Trains full-batch and writes the metrics CSV and checkpoint.
pub fn run_train(
    mut config: RunConfig,
    out_dir: Option<&Path>,
    seed: Option<u64>,
) -> Result<(PathBuf, PathBuf)> {
    if let Some(s) = seed {
        config.train.seed = s;
    }
    let resolve = |p: &Path| match out_dir {
        Some(dir) => dir.join(p),
        None => p.to_path_buf(),
    };
    let (metrics_path, checkpoint_path) = (
        resolve(&config.outputs.metrics),
        resolve(&config.outputs.checkpoint),
    );
    let parts = generate(&config.data)?;
    let x = &parts.train.features;
    let target = targets(&parts.train.labels, config.train.loss)?;
    let mut store = ParameterStore::init(&config.model, x.shape(), config.train.seed)?;
    let settings = rpn2::model::TrainConfig {
        loss: config.train.loss,
        optimizer: config.train.optimizer,
        epochs: config.train.epochs,
    };
    let history = train(&config.model, &mut store, x, &target, &settings)?;
    let final_train = evaluate(&config.model, &store, x, &target, config.train.loss)?;

    let mut writer = csv::Writer::from_path(&metrics_path)
        .with_context(|| format!("creating {}", metrics_path.display()))?;
    writer.write_record(["epoch", "loss", "metric"])?;
    for r in history.epochs.iter().chain(std::iter::once(&final_train)) {
        writer.write_record([
            r.epoch.to_string(),
            r.loss.to_string(),
            r.metric.to_string(),
        ])?;
    }
    writer.flush()?;

    // Held-out rows form their own batch; instance-side parameters depend on
    // the batch size, so they are only scored when the layout allows it.
    let test_metric = match &parts.test {
        Some(test) if test.features.shape() == store.input_shape() => {
            let t = targets(&test.labels, config.train.loss)?;
            Some(evaluate(&config.model, &store, &test.features, &t, config.train.loss)?.metric)
        }
        Some(test) => {
            let layout = ParameterStore::init(&config.model, test.features.shape(), 0)?;
            if layout.slots() == store.slots() {
                let mut scored = layout;
                scored.set_values(store.values().to_vec())?;
                let t = targets(&test.labels, config.train.loss)?;
                Some(
                    evaluate(
                        &config.model,
                        &scored,
                        &test.features,
                        &t,
                        config.train.loss,
                    )?
                    .metric,
                )
            } else {
                eprintln!(
                    "note: held-out batch size changes the parameter layout; skipping test metric"
                );
                None
            }
        }
        None => None,
    };
    let checkpoint = Checkpoint {
        config: &config,
        seed: config.train.seed,
        parameters: &store,
        train_metric: Some(final_train.metric),
        test_metric,
    };
    write_json(Some(&checkpoint_path), &checkpoint)?;
    Ok((metrics_path, checkpoint_path))
}

pub struct EquivReport {
    pub name: &'static str,
    pub max_diff: f64,
    pub tolerance: f64,
}

impl EquivReport {
    pub fn passed(&self) -> bool {
        if self.tolerance == 0.0 {
            self.max_diff == 0.0
        } else {
            self.max_diff < self.tolerance
        }
    }

    pub fn line(&self) -> String {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        if self.tolerance == 0.0 {
            format!(
                "{verdict} max_diff = {:e} (exact) [{}]",
                self.max_diff, self.name
            )
        } else {
            let relation = if self.passed() { "<" } else { ">=" };
            format!(
                "{verdict} max_diff < {:e} [{}: max_diff {:e} {relation} {:e}]",
                self.tolerance, self.name, self.max_diff, self.tolerance
            )
        }
    }
}

pub fn equiv(config: EquivConfig, seed: Option<u64>) -> Result<EquivReport> {
    let kind = match config.backbone {
        BackboneChoice::Preset(name) => BackboneKind::preset(&name)?,
        BackboneChoice::Custom(kind) => kind,
    };
    let mut prng = Prng::new(seed.unwrap_or(config.seed));
    let eq = build_equivalent(&kind, &mut prng)?;
    let x = eq.sample_input(&mut prng);
    Ok(EquivReport {
        name: kind.name(),
        max_diff: eq.max_diff(&x)?,
        tolerance: kind.tolerance(),
    })
}

pub fn diagnose(config: DiagnoseConfig, out: Option<&Path>, seed: Option<u64>) -> Result<()> {
    let x = generate(&config.data)?.train.features;
    let store = match &config.checkpoint {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let saved: CheckpointParameters = serde_json::from_str(&text)
                .with_context(|| format!("invalid checkpoint {}", path.display()))?;
            saved.parameters
        }
        None => ParameterStore::init(&config.model, x.shape(), seed.unwrap_or(config.seed))?,
    };
    let report = diagnostics(&config.model, &store, &x)?;
    write_json(out, &report)
}
