//! Python bindings for the simulator. Tensors cross the boundary as nested
//! lists of floats; reports come back as dicts.

use hfz_core::config::FLConfig;
use hfz_core::data::{holdout_then_partition, synth_shifted, Dataset};
use hfz_core::embedding::{collapse_metric, Embedding, PenaltyConfig};
use hfz_core::federation::AggregationWeights;
use hfz_core::metrics::MetricsReport;
use hfz_core::model::ModelSpec;
use hfz_core::runner::prepare;
use hfz_core::tensor::Tensor;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(hyperfedzero, HfzError, PyException);

fn err(e: hfz_core::Error) -> PyErr {
    HfzError::new_err(format!("{e} (exit code {})", e.exit_code()))
}

fn tensor(rows: Vec<Vec<f64>>) -> PyResult<Tensor> {
    Tensor::from_rows(&rows).map_err(err)
}

fn rows(t: &Tensor) -> PyResult<Vec<Vec<f64>>> {
    let (r, _) = t.dims2().map_err(err)?;
    Ok((0..r).map(|i| t.row(i).to_vec()).collect())
}

/// Experiment configuration built from defaults plus `key=value` overrides.
#[pyclass(name = "FLConfig", module = "hyperfedzero")]
struct PyConfig {
    inner: FLConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (overrides = Vec::new()))]
    fn new(overrides: Vec<String>) -> PyResult<Self> {
        Ok(PyConfig {
            inner: FLConfig::from_overrides(&overrides).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: FLConfig::from_toml_str(text).map_err(err)?,
        })
    }

    /// Copy with one `key=value` override applied.
    fn with_override(&self, assignment: &str) -> PyResult<Self> {
        let (k, v) = hfz_core::config::parse_override(assignment).map_err(err)?;
        Ok(PyConfig {
            inner: self.inner.with_value(&k, v).map_err(err)?,
        })
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    #[getter]
    fn method(&self) -> &'static str {
        self.inner.method.as_str()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    fn __repr__(&self) -> String {
        format!(
            "FLConfig(method={}, fingerprint={})",
            self.inner.method.as_str(),
            self.inner.fingerprint()
        )
    }
}

/// Labelled feature matrix.
#[pyclass(name = "Dataset", module = "hyperfedzero")]
struct PyDataset {
    inner: Dataset,
}

#[pymethods]
impl PyDataset {
    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }

    fn features(&self) -> PyResult<Vec<Vec<f64>>> {
        rows(self.inner.features())
    }

    fn labels(&self) -> Vec<usize> {
        self.inner.labels().to_vec()
    }

    /// Holdout plus Dirichlet client shares as a dict.
    #[allow(clippy::too_many_arguments)]
    #[pyo3(signature = (n, m, alpha_d, seed, holdout_fraction = 0.1, min_per_client = 10))]
    fn partition<'py>(
        &self,
        py: Python<'py>,
        n: usize,
        m: usize,
        alpha_d: f64,
        seed: u64,
        holdout_fraction: f64,
        min_per_client: usize,
    ) -> PyResult<Bound<'py, PyDict>> {
        let p = holdout_then_partition(
            &self.inner,
            holdout_fraction,
            n,
            m,
            alpha_d,
            min_per_client,
            100,
            seed,
        )
        .map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("holdout", p.holdout.clone())?;
        d.set_item("participating", p.participating().to_vec())?;
        d.set_item("non_participating", p.non_participating().to_vec())?;
        Ok(d)
    }
}

#[pyfunction]
#[pyo3(signature = (num_classes, samples_per_class, feature_dim, spread, seed))]
fn synthetic(
    num_classes: usize,
    samples_per_class: usize,
    feature_dim: usize,
    spread: f64,
    seed: u64,
) -> PyResult<PyDataset> {
    Ok(PyDataset {
        inner: synth_shifted(num_classes, samples_per_class, feature_dim, spread, seed)
            .map_err(err)?,
    })
}

/// Row-wise softmax.
#[pyfunction]
fn softmax(x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    rows(&hfz_core::tape::softmax_rows(&tensor(x)?).map_err(err)?)
}

/// Dispersion + entropy penalty of a batch of simplex rows.
#[pyfunction]
#[pyo3(signature = (e, alpha = 1.0, beta = 1.0))]
fn balancing_penalty(e: Vec<Vec<f64>>, alpha: f64, beta: f64) -> PyResult<f64> {
    let cfg = PenaltyConfig::new(alpha, beta).map_err(err)?;
    hfz_core::embedding::balancing_penalty(&tensor(e)?, cfg).map_err(err)
}

/// Mean pairwise distance between clients' mean embeddings.
#[pyfunction]
fn collapse(per_client: Vec<Vec<Vec<f64>>>) -> PyResult<f64> {
    let embs = per_client
        .into_iter()
        .map(|r| Embedding::new(tensor(r)?).map_err(err))
        .collect::<PyResult<Vec<_>>>()?;
    collapse_metric(&embs).map_err(err)
}

/// `(chunks, padding)` for a target parameter count and chunk size.
#[pyfunction]
fn chunk_layout(total_params: usize, chunk_size: usize) -> PyResult<(usize, usize)> {
    hfz_core::hypernet::chunk_layout(total_params, chunk_size).map_err(err)
}

/// Size-weighted average of flat parameter vectors.
#[pyfunction]
fn aggregate(params: Vec<Vec<f64>>, sizes: Vec<usize>) -> PyResult<Vec<f64>> {
    if params.len() != sizes.len() {
        return Err(HfzError::new_err("one size per parameter vector required"));
    }
    let w = AggregationWeights::from_sizes(&sizes).map_err(err)?;
    let len = params.first().map_or(0, Vec::len);
    if params.iter().any(|p| p.len() != len) {
        return Err(HfzError::new_err("parameter vectors differ in length"));
    }
    Ok((0..len)
        .map(|j| params.iter().zip(w.as_slice()).map(|(p, w)| w * p[j]).sum())
        .collect())
}

/// Parameter counts for a hyperfedzero configuration.
#[pyfunction]
fn param_budget<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyDict>> {
    let cfg = &config.inner;
    let spec = ModelSpec::from_config(cfg, cfg.dataset.feature_dim, cfg.dataset.num_classes)
        .map_err(err)?;
    let b = spec.budget().map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("extractor", b.extractor)?;
    d.set_item("noisy", b.noisy)?;
    d.set_item("hypernet", b.hypernet)?;
    d.set_item("generated_side", b.generated_side)?;
    d.set_item("classifier", b.classifier)?;
    d.set_item("num_chunks", b.num_chunks)?;
    d.set_item("padding", b.padding)?;
    d.set_item("ratio", b.ratio)?;
    Ok(d)
}

fn report_dict<'py>(py: Python<'py>, r: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("method", r.method.as_str())?;
    d.set_item("fingerprint", &r.fingerprint)?;
    d.set_item("seed", r.seed)?;
    d.set_item("gacc", r.gacc)?;
    d.set_item("pacc", r.pacc)?;
    d.set_item("zacc", r.zacc)?;
    d.set_item("collapse", r.collapse)?;
    d.set_item("pacc_per_client", r.pacc_per_client.clone())?;
    d.set_item("zacc_per_client", r.zacc_per_client.clone())?;
    d.set_item("loss", r.rounds.iter().map(|x| x.loss).collect::<Vec<_>>())?;
    d.set_item("csv", r.to_csv())?;
    Ok(d)
}

/// Builds data, trains, evaluates; releases the interpreter while running.
#[pyfunction]
fn train<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.inner.clone();
    let report = py
        .detach(move || {
            let (dataset, partition) = prepare(&cfg)?;
            hfz_core::run_training(&cfg, &partition, &dataset).map(|(_, r)| r)
        })
        .map_err(err)?;
    report_dict(py, &report)
}

#[pymodule]
fn hyperfedzero(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("HfzError", m.py().get_type::<HfzError>())?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(balancing_penalty, m)?)?;
    m.add_function(wrap_pyfunction!(collapse, m)?)?;
    m.add_function(wrap_pyfunction!(chunk_layout, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_function(wrap_pyfunction!(param_budget, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}
