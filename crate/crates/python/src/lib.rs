//! Python bindings: data preparation, training, evaluation, scoring and the
//! solver oracles of the `gderec` crate.

use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use gderec::data::{load, DatasetFormat};
use gderec::eval::{self, Averaging, MaskSeen, PreparedData, RankedInteraction, Split};
use gderec::data::EdgeView;
use gderec::model::{self, Checkpoint, EpochLog, ForwardPlan, SignalPolicy, TrainConfig, Variant};
use gderec::numerics::{DenseMatrix, SparseAdjacency};
use gderec::ode::{self, OdeProblem};

fn to_py(e: gderec::Error) -> PyErr {
    match e {
        gderec::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = gderec::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DenseMatrix> {
    DenseMatrix::from_rows(&rows).map_err(to_py)
}

/// A chronologically split dataset with its interval graph.
#[pyclass(module = "gderec_py")]
struct Dataset {
    inner: PreparedData,
}

#[pymethods]
impl Dataset {
    /// Reads a raw interaction file (`movielens` or `amazon`), splits it 80/10/10
    /// by time and builds `k` intervals over the training part.
    #[staticmethod]
    fn prepare(path: &str, format: &str, k: usize) -> PyResult<Self> {
        let format: DatasetFormat = parse(format)?;
        let log = load(path, format).map_err(to_py)?;
        Ok(Self {
            inner: PreparedData::from_log(&log, k).map_err(to_py)?,
        })
    }

    /// Loads a directory written by `save` or the `prepare` CLI command.
    #[staticmethod]
    fn load(dir: &str) -> PyResult<Self> {
        Ok(Self {
            inner: PreparedData::load(dir).map_err(to_py)?,
        })
    }

    fn save(&self, dir: &str) -> PyResult<()> {
        self.inner.save(dir).map_err(to_py)
    }

    #[getter]
    fn num_users(&self) -> usize {
        self.inner.system.num_users
    }

    #[getter]
    fn num_items(&self) -> usize {
        self.inner.system.num_items
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.system.k
    }

    /// Normalized pivots `0, 1, …, k`.
    #[getter]
    fn pivots(&self) -> Vec<f64> {
        self.inner.system.pivots.clone()
    }

    /// `(user, item, timestamp)` triples of a split, in joint node ids.
    fn edges(&self, split: &str) -> PyResult<Vec<(usize, usize, i64)>> {
        let edges = match split {
            "train" => self.inner.system.train_edges(),
            other => self.inner.heldout(parse(other)?),
        };
        Ok(edges.iter().map(|e| (e.user, e.item, e.timestamp)).collect())
    }

    /// Edges of interval `layer` under `view` (`cur`, `prev` or `all`).
    fn interval_edges(&self, view: &str, layer: usize) -> PyResult<Vec<(usize, usize, i64)>> {
        if layer >= self.inner.system.k {
            return Err(PyValueError::new_err(format!("layer {layer} out of range")));
        }
        Ok(self
            .inner
            .system
            .edges(parse::<EdgeView>(view)?, layer)
            .iter()
            .map(|e| (e.user, e.item, e.timestamp))
            .collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset(users={}, items={}, k={}, train={}, valid={}, test={})",
            self.inner.system.num_users,
            self.inner.system.num_items,
            self.inner.system.k,
            self.inner.system.train_edges().len(),
            self.inner.valid.len(),
            self.inner.test.len()
        )
    }
}

fn epoch_dict<'py>(py: Python<'py>, e: &EpochLog) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("epoch", e.epoch)?;
    d.set_item("loss", e.loss)?;
    d.set_item("nfe", e.nfe)?;
    d.set_item("seconds", e.seconds)?;
    if let Some(v) = e.valid {
        d.set_item("valid_recall@5", v.recall_at_5)?;
        d.set_item("valid_recall@10", v.recall_at_10)?;
        d.set_item("valid_mrr", v.mrr)?;
    }
    Ok(d)
}

/// Trained parameters plus the configuration that produced them.
#[pyclass(module = "gderec_py")]
struct Model {
    checkpoint: Checkpoint,
    log: Vec<EpochLog>,
}

impl Model {
    fn plan(&self, data: &PreparedData) -> PyResult<ForwardPlan> {
        let c = &self.checkpoint.config;
        ForwardPlan::new(&data.system, c.policy, c.variant, c.step).map_err(to_py)
    }
}

#[pymethods]
impl Model {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            checkpoint: Checkpoint::load(path).map_err(to_py)?,
            log: Vec::new(),
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.checkpoint.save(path).map_err(to_py)
    }

    #[getter]
    fn best_epoch(&self) -> usize {
        self.checkpoint.best_epoch
    }

    #[getter]
    fn config_hash(&self) -> String {
        self.checkpoint.config_hash.clone()
    }

    /// Per-epoch training log (empty for a loaded checkpoint).
    fn log<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.log.iter().map(|e| epoch_dict(py, e)).collect()
    }

    /// Final node representations, one row per joint node id.
    fn representations(&self, dataset: &Dataset) -> PyResult<Vec<Vec<f64>>> {
        let h = self.plan(&dataset.inner)?.represent(&self.checkpoint.params).map_err(to_py)?;
        Ok(h.to_rows())
    }

    /// `h_u · h_i` for joint node ids `user` and `item`.
    fn score(&self, dataset: &Dataset, user: usize, item: usize) -> PyResult<f64> {
        let h = self.plan(&dataset.inner)?.represent(&self.checkpoint.params).map_err(to_py)?;
        model::score(user, item, &h).map_err(to_py)
    }

    /// Full-catalogue ranking of a held-out split. Returns a dict with
    /// `recall@5`, `recall@10`, `mrr` (absent when nothing was ranked),
    /// `evaluated`, `skipped_cold`, `skipped_masked` and `ranks`.
    #[pyo3(signature = (dataset, split="test", mask_seen="train+valid", per_user=false))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        dataset: &Dataset,
        split: &str,
        mask_seen: &str,
        per_user: bool,
    ) -> PyResult<Bound<'py, PyDict>> {
        let split: Split = parse(split)?;
        let mask: MaskSeen = parse(mask_seen)?;
        let averaging = if per_user { Averaging::User } else { Averaging::Interaction };
        let data = &dataset.inner;
        let h = self.plan(data)?.represent(&self.checkpoint.params).map_err(to_py)?;
        let report = data
            .evaluator()
            .and_then(|ev| ev.rank(&h, data.heldout(split), split, mask, averaging))
            .map_err(to_py)?;
        let d = PyDict::new(py);
        if let Some(s) = report.summary {
            d.set_item("recall@5", s.recall_at_5)?;
            d.set_item("recall@10", s.recall_at_10)?;
            d.set_item("mrr", s.mrr)?;
        }
        d.set_item("evaluated", report.results.len())?;
        d.set_item("skipped_cold", report.skipped_cold)?;
        d.set_item("skipped_masked", report.skipped_masked)?;
        d.set_item(
            "ranks",
            report.results.iter().map(|r| (r.user, r.item, r.rank)).collect::<Vec<_>>(),
        )?;
        Ok(d)
    }
}

/// Trains a model on `dataset`, selecting the epoch by validation MRR.
#[pyfunction]
#[pyo3(signature = (
    dataset, variant="full", policy="origin", dim=64, time_dim=16, step=0.2, lr=1e-3,
    weight_decay=1e-3, epochs=200, patience=20, batch_size=2048, init_std=0.1, seed=0, verbose=false
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    dataset: &Dataset,
    variant: &str,
    policy: &str,
    dim: usize,
    time_dim: usize,
    step: f64,
    lr: f64,
    weight_decay: f64,
    epochs: usize,
    patience: usize,
    batch_size: usize,
    init_std: f64,
    seed: u64,
    verbose: bool,
) -> PyResult<Model> {
    let config = TrainConfig {
        variant: parse::<Variant>(variant)?,
        policy: parse::<SignalPolicy>(policy)?,
        dim,
        time_dim,
        step,
        lr,
        weight_decay,
        epochs,
        patience,
        batch_size,
        init_std,
        seed,
        averaging: Averaging::Interaction,
    };
    let data = &dataset.inner;
    let fit = py
        .detach(|| {
            model::fit_with_progress(&data.system, &data.valid, &config, |e| {
                if verbose {
                    eprintln!("epoch {} loss {:.5}", e.epoch, e.loss);
                }
            })
        })
        .map_err(to_py)?;
    let checkpoint = Checkpoint::new(fit.params, config, "", fit.best_epoch).map_err(to_py)?;
    Ok(Model {
        checkpoint,
        log: fit.log,
    })
}

fn ranked(ranks: &[usize]) -> Vec<RankedInteraction> {
    ranks
        .iter()
        .enumerate()
        .map(|(i, &rank)| RankedInteraction {
            user: i,
            item: 0,
            rank,
            candidates: rank,
        })
        .collect()
}

/// Fraction of 1-based `ranks` that are at most `k`.
#[pyfunction]
fn recall_at_k(ranks: Vec<usize>, k: usize) -> PyResult<f64> {
    eval::recall_at_k(&ranked(&ranks), k).map_err(to_py)
}

/// Mean reciprocal rank of 1-based `ranks`.
#[pyfunction]
fn mrr(ranks: Vec<usize>) -> PyResult<f64> {
    eval::mrr(&ranked(&ranks)).map_err(to_py)
}

fn problem(
    n: usize,
    triplets: Vec<(usize, usize, f64)>,
    h0: Vec<Vec<f64>>,
    horizon: f64,
    step: f64,
    forcing: Option<Vec<Vec<f64>>>,
) -> PyResult<OdeProblem> {
    let adj = Arc::new(SparseAdjacency::from_triplets(n, &triplets).map_err(to_py)?);
    let h0 = matrix(h0)?;
    match forcing {
        Some(b) => OdeProblem::with_forcing(adj, h0, matrix(b)?, horizon, step),
        None => OdeProblem::new(adj, h0, horizon, step),
    }
    .map_err(to_py)
}

/// Fixed-step RK4 for `dH/dt = (A − I)H + b` with `A` given as
/// `(row, col, value)` triplets. `b` defaults to `A(H0 ⊙ H0)`. Returns the
/// final state and the number of derivative evaluations.
#[pyfunction]
#[pyo3(signature = (n, triplets, h0, horizon=1.0, step=0.2, forcing=None))]
fn rk4_solve(
    n: usize,
    triplets: Vec<(usize, usize, f64)>,
    h0: Vec<Vec<f64>>,
    horizon: f64,
    step: f64,
    forcing: Option<Vec<Vec<f64>>>,
) -> PyResult<(Vec<Vec<f64>>, usize)> {
    let p = problem(n, triplets, h0, horizon, step, forcing)?;
    let (h, stats) = ode::rk4_solve(&p).map_err(to_py)?;
    Ok((h.to_rows(), stats.nfe))
}

/// Exact solution of the same problem by eigendecomposition (small `n` only).
#[pyfunction]
#[pyo3(signature = (n, triplets, h0, horizon=1.0, forcing=None))]
fn analytical_solve(
    n: usize,
    triplets: Vec<(usize, usize, f64)>,
    h0: Vec<Vec<f64>>,
    horizon: f64,
    forcing: Option<Vec<Vec<f64>>>,
) -> PyResult<Vec<Vec<f64>>> {
    let p = problem(n, triplets, h0, horizon, 1.0, forcing)?;
    Ok(ode::analytical_solve(&p).map_err(to_py)?.to_rows())
}

/// `Φ(t)` with the default log-spaced frequencies of dimension `dim`.
#[pyfunction]
#[pyo3(signature = (t, dim=16))]
fn encode_time(t: f64, dim: usize) -> Vec<f64> {
    gderec::attention::encode_time(t, &gderec::attention::TimeEncoder::new(dim))
}

#[pymodule]
pub fn gderec_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(mrr, m)?)?;
    m.add_function(wrap_pyfunction!(rk4_solve, m)?)?;
    m.add_function(wrap_pyfunction!(analytical_solve, m)?)?;
    m.add_function(wrap_pyfunction!(encode_time, m)?)?;
    Ok(())
}
