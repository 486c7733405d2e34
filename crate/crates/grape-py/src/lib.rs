//! Python bindings: the dataset types and the main operations (scaling,
//! masking, baselines, training, evaluation) exposed as a `grape_py`
//! extension module. Values cross the boundary as plain lists so the module
//! has no Python-side dependencies.

use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use grape_core::baselines;
use grape_core::dataset;
use grape_core::experiments::{compute_metrics, MetricKind};
use grape_core::graph::build_graph;
use grape_core::model::{impute_full, GrapeConfig};
use grape_core::training::{self, Task, TrainConfig};
use grape_core::GrapeError;

fn to_py_err(err: GrapeError) -> PyErr {
    match err {
        GrapeError::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn rows_to_array(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let n = rows.len();
    if n == 0 {
        return Err(PyValueError::new_err("need at least one row"));
    }
    let m = rows[0].len();
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("rows must be rectangular"));
    }
    Ok(Array2::from_shape_fn((n, m), |(i, j)| rows[i][j]))
}

fn array_to_rows(values: &Array2<f64>) -> Vec<Vec<f64>> {
    values.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// An n x m table with per-column type metadata and scaling state.
#[pyclass(name = "DataMatrix")]
#[derive(Clone)]
struct PyDataMatrix {
    inner: dataset::DataMatrix,
}

#[pymethods]
impl PyDataMatrix {
    /// Builds an all-continuous matrix from nested lists.
    #[staticmethod]
    fn from_rows(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let values = rows_to_array(&rows)?;
        Ok(Self {
            inner: dataset::DataMatrix::from_continuous(values).map_err(to_py_err)?,
        })
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.inner.n_rows()
    }

    #[getter]
    fn n_cols(&self) -> usize {
        self.inner.n_cols()
    }

    fn values(&self) -> Vec<Vec<f64>> {
        array_to_rows(self.inner.values())
    }

    /// Per-column kind strings: "continuous" or "categorical(<k>)".
    fn column_kinds(&self) -> Vec<String> {
        self.inner
            .schema()
            .iter()
            .map(|c| match c.kind {
                dataset::ColumnKind::Continuous => "continuous".to_string(),
                dataset::ColumnKind::Categorical { cardinality } => {
                    format!("categorical({cardinality})")
                }
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "DataMatrix({} rows x {} cols)",
            self.inner.n_rows(),
            self.inner.n_cols()
        )
    }
}

/// Observability indicators for an n x m table.
#[pyclass(name = "MaskMatrix")]
#[derive(Clone)]
struct PyMaskMatrix {
    inner: dataset::MaskMatrix,
}

#[pymethods]
impl PyMaskMatrix {
    #[staticmethod]
    fn fully_observed(n: usize, m: usize) -> Self {
        Self {
            inner: dataset::MaskMatrix::fully_observed(n, m),
        }
    }

    fn observed(&self) -> Vec<Vec<bool>> {
        self.inner
            .observed()
            .rows()
            .into_iter()
            .map(|r| r.to_vec())
            .collect()
    }

    #[getter]
    fn observed_count(&self) -> usize {
        self.inner.observed_count()
    }

    fn unobserved_entries(&self) -> Vec<(usize, usize)> {
        self.inner.unobserved_entries()
    }

    fn __repr__(&self) -> String {
        format!(
            "MaskMatrix({} rows x {} cols, {} observed)",
            self.inner.n_rows(),
            self.inner.n_cols(),
            self.inner.observed_count()
        )
    }
}

/// The result of one imputation training run.
#[pyclass(name = "ImputationRun")]
struct PyImputationRun {
    imputed: Vec<Vec<f64>>,
    test_mae: Option<f64>,
    trace: Vec<(usize, f64, Option<f64>)>,
}

#[pymethods]
impl PyImputationRun {
    /// Imputed matrix: true values at observed cells, predictions elsewhere.
    fn imputed(&self) -> Vec<Vec<f64>> {
        self.imputed.clone()
    }

    /// Final MAE over unobserved cells, if the mask had any.
    #[getter]
    fn test_mae(&self) -> Option<f64> {
        self.test_mae
    }

    /// (epoch, train_loss, test_mae) evaluation points.
    fn trace(&self) -> Vec<(usize, f64, Option<f64>)> {
        self.trace.clone()
    }
}

/// Loads a comma-separated numeric table; schema inferred unless a JSON
/// sidecar is given.
#[pyfunction]
#[pyo3(signature = (path, has_header = true, schema_json = None))]
fn load_csv(path: &str, has_header: bool, schema_json: Option<&str>) -> PyResult<PyDataMatrix> {
    let schema = match schema_json {
        Some(p) => dataset::SchemaSpec::Explicit(dataset::load_schema_json(p).map_err(to_py_err)?),
        None => dataset::SchemaSpec::Infer,
    };
    Ok(PyDataMatrix {
        inner: dataset::load_csv(path, schema, has_header).map_err(to_py_err)?,
    })
}

/// Deterministic low-rank fixture; returns (data, labels).
#[pyfunction]
fn make_synthetic(
    n: usize,
    m: usize,
    rank: usize,
    noise: f64,
    seed: u64,
) -> PyResult<(PyDataMatrix, Vec<f64>)> {
    let (data, labels) = dataset::make_synthetic(n, m, rank, noise, seed).map_err(to_py_err)?;
    Ok((PyDataMatrix { inner: data }, labels))
}

/// MCAR mask: each cell unobserved independently with the given rate.
#[pyfunction]
fn sample_mask(n: usize, m: usize, missing_rate: f64, seed: u64) -> PyResult<PyMaskMatrix> {
    Ok(PyMaskMatrix {
        inner: dataset::sample_mask(n, m, missing_rate, seed).map_err(to_py_err)?,
    })
}

/// Rescales continuous columns to [0, 1] over observed entries.
#[pyfunction]
fn minmax_scale(data: &PyDataMatrix, mask: &PyMaskMatrix) -> PyResult<PyDataMatrix> {
    Ok(PyDataMatrix {
        inner: dataset::minmax_scale(&data.inner, &mask.inner).map_err(to_py_err)?,
    })
}

/// Column-mean imputation; returns the imputed matrix.
#[pyfunction]
fn mean_impute(data: &PyDataMatrix, mask: &PyMaskMatrix) -> PyResult<Vec<Vec<f64>>> {
    let result = baselines::mean_impute(&data.inner, &mask.inner).map_err(to_py_err)?;
    Ok(array_to_rows(&result.imputed))
}

/// K-nearest-neighbor imputation with inverse partial-distance weights.
#[pyfunction]
#[pyo3(signature = (data, mask, k = 50))]
fn knn_impute(data: &PyDataMatrix, mask: &PyMaskMatrix, k: usize) -> PyResult<Vec<Vec<f64>>> {
    let result = baselines::knn_impute(&data.inner, &mask.inner, k).map_err(to_py_err)?;
    Ok(array_to_rows(&result.imputed))
}

/// Trains the imputation network and returns the imputed matrix, the final
/// unobserved-cell MAE, and the training trace. `data` must be scaled.
#[pyfunction]
#[pyo3(signature = (data, mask, epochs = 4000, learning_rate = 0.001, edge_dropout = 0.3,
                    n_layers = 3, hidden_dim = 64, aggregator = "mean", seed = 0,
                    eval_every = 200))]
#[allow(clippy::too_many_arguments)]
fn train_imputation(
    data: &PyDataMatrix,
    mask: &PyMaskMatrix,
    epochs: usize,
    learning_rate: f64,
    edge_dropout: f64,
    n_layers: usize,
    hidden_dim: usize,
    aggregator: &str,
    seed: u64,
    eval_every: usize,
) -> PyResult<PyImputationRun> {
    let config = TrainConfig {
        epochs,
        learning_rate,
        edge_dropout,
        task: Task::Imputation,
        seed,
        eval_every,
        grape: GrapeConfig {
            n_layers,
            hidden_dim,
            aggregator: aggregator.parse().map_err(to_py_err)?,
            ..GrapeConfig::imputation_default()
        },
    };
    let (params, trace) =
        training::train_imputation(&data.inner, &mask.inner, &config, None).map_err(to_py_err)?;
    let graph = build_graph(&data.inner, &mask.inner).map_err(to_py_err)?;
    let imputed = impute_full(&params, &graph, &config.grape).map_err(to_py_err)?;
    let test_mae = trace.points.last().and_then(|p| p.test_metric);
    Ok(PyImputationRun {
        imputed: array_to_rows(&imputed),
        test_mae,
        trace: trace.rows(),
    })
}

/// MAE between two matrices over an explicit cell region.
#[pyfunction]
fn mae(
    pred: Vec<Vec<f64>>,
    truth: Vec<Vec<f64>>,
    region: Vec<(usize, usize)>,
) -> PyResult<f64> {
    let pred = rows_to_array(&pred)?;
    let truth = rows_to_array(&truth)?;
    compute_metrics(&pred, &truth, &region, MetricKind::Mae).map_err(to_py_err)
}

#[pymodule]
fn grape_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataMatrix>()?;
    m.add_class::<PyMaskMatrix>()?;
    m.add_class::<PyImputationRun>()?;
    m.add_function(wrap_pyfunction!(load_csv, m)?)?;
    m.add_function(wrap_pyfunction!(make_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(sample_mask, m)?)?;
    m.add_function(wrap_pyfunction!(minmax_scale, m)?)?;
    m.add_function(wrap_pyfunction!(mean_impute, m)?)?;
    m.add_function(wrap_pyfunction!(knn_impute, m)?)?;
    m.add_function(wrap_pyfunction!(train_imputation, m)?)?;
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    Ok(())
}
