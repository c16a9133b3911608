//! Python bindings: click logs, model parameters, simulation, fitting,
//! evaluation and the taxonomy helpers.
//!
//! Logs and models cross the boundary as opaque objects; reports come back
//! as plain dicts.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use clickmodel::clicklog::{parse_log, write_log, InterfaceKind};
use clickmodel::estimation::{self, FitOptions, Init};
use clickmodel::evaluation;
use clickmodel::models::{ModelInstance, ModelKind, TableName};
use clickmodel::simulation::{self, item_names, topic_names, LayoutPolicy, SimConfig};
use clickmodel::taxonomy::{self, CatalogModel, GlobalDeps};

fn to_py(e: clickmodel::Error) -> PyErr {
    match e {
        clickmodel::Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = clickmodel::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(to_py)
}

/// A validated click log.
#[pyclass(name = "ClickLog", module = "pyclickmodel", frozen)]
struct PyClickLog {
    inner: clickmodel::clicklog::ClickLog,
}

#[pymethods]
impl PyClickLog {
    /// Parse JSON-lines text.
    #[staticmethod]
    fn from_jsonl(text: &str) -> PyResult<Self> {
        Ok(PyClickLog { inner: parse_log(text.as_bytes()).map_err(to_py)? })
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        let file = std::fs::File::open(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        Ok(PyClickLog { inner: parse_log(std::io::BufReader::new(file)).map_err(to_py)? })
    }

    fn to_jsonl(&self) -> PyResult<String> {
        let mut buf = Vec::new();
        write_log(&self.inner, &mut buf).map_err(to_py)?;
        Ok(String::from_utf8(buf).expect("logs are written as UTF-8"))
    }

    /// `(m, n)`, or `None` for an empty log.
    #[getter]
    fn shape(&self) -> Option<(usize, usize)> {
        self.inner.shape().map(|s| (s.m, s.n))
    }

    #[getter]
    fn kind(&self) -> Option<&'static str> {
        self.inner.kind().map(InterfaceKind::as_str)
    }

    /// Click matrix of one session, row by row.
    fn clicks(&self, index: usize) -> PyResult<Vec<Vec<bool>>> {
        let s = self
            .inner
            .sessions()
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("session {index} out of range")))?;
        Ok((0..s.shape.m).map(|i| s.row_clicks(i).to_vec()).collect())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        match self.inner.shape() {
            Some(s) => format!("ClickLog({} sessions, {s})", self.inner.len()),
            None => "ClickLog(empty)".into(),
        }
    }
}

/// Parameters of one of the fitted model kinds.
#[pyclass(name = "Model", module = "pyclickmodel", frozen)]
struct PyModel {
    inner: ModelInstance,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyModel { inner: ModelInstance::from_json(text).map_err(to_py)? })
    }

    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        Self::from_json(&text)
    }

    /// Random parameters, as used for simulation ground truth.
    #[staticmethod]
    #[pyo3(signature = (kind, shape, items, topics = 0, seed = 0))]
    fn random(kind: &str, shape: (usize, usize), items: usize, topics: usize, seed: u64) -> PyResult<Self> {
        let kind: ModelKind = parse(kind)?;
        let shape = clickmodel::clicklog::LayoutShape::new(shape.0, shape.1).map_err(to_py)?;
        let vocab = clickmodel::clicklog::Vocab::from_names(item_names(items), topic_names(topics));
        Ok(PyModel { inner: simulation::random_instance(kind, shape, &vocab, seed).map_err(to_py)? })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind().as_str()
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        (self.inner.shape().m, self.inner.shape().n)
    }

    /// Entry of a table; items and topics missing from the table get the unseen default.
    fn value(&self, table: &str, key: &str) -> PyResult<Option<f64>> {
        let name = TableName::from_name(table).ok_or_else(|| PyValueError::new_err(format!("unknown table `{table}`")))?;
        Ok(self.inner.value(name, key))
    }

    /// Teacher-forced click probabilities of one session, row-major.
    fn conditionals(&self, log: &PyClickLog, index: usize) -> PyResult<Vec<f64>> {
        let s = log
            .inner
            .sessions()
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("session {index} out of range")))?;
        let bound = self.inner.bind(log.inner.vocab());
        bound.check_session(s).map_err(to_py)?;
        bound.conditionals(s).map_err(to_py)
    }

    /// Natural-log likelihood of a whole log.
    fn log_likelihood(&self, log: &PyClickLog) -> PyResult<f64> {
        estimation::log_likelihood(&self.inner, &log.inner).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!("Model({}, {})", self.inner.kind(), self.inner.shape())
    }
}

/// Simulates `sessions` sessions from `model`. Item and topic universes
/// default to the model's own tables, else to generated names.
#[pyfunction]
#[pyo3(signature = (model, sessions, seed = 0, kind = None, items = None, topics = None, layout = "uniform_without_replacement"))]
fn simulate(
    model: &PyModel,
    sessions: usize,
    seed: u64,
    kind: Option<&str>,
    items: Option<Vec<String>>,
    topics: Option<Vec<String>>,
    layout: &str,
) -> PyResult<PyClickLog> {
    let m = &model.inner;
    let shape = m.shape();
    let kind = match kind {
        Some(k) => parse(k)?,
        None if m.kind().needs_topics() => InterfaceKind::Carousel,
        None if shape.m == 1 => InterfaceKind::SingleList,
        None => InterfaceKind::Grid,
    };
    let keys = |t: TableName| m.table(t).map(|t| t.keys().cloned().collect::<Vec<_>>());
    let topic_table = match m.kind() {
        ModelKind::Cacm => Some(TableName::Tau),
        ModelKind::TopicsItemsV1 | ModelKind::TopicsItemsV2 => Some(TableName::Rho),
        _ => None,
    };
    let items = items
        .or_else(|| keys(TableName::Item))
        .unwrap_or_else(|| item_names(2 * shape.cells()));
    let topics = topics
        .or_else(|| topic_table.and_then(keys))
        .unwrap_or_else(|| topic_names(2 * shape.m));
    let cfg = SimConfig {
        shape,
        kind,
        item_universe: items,
        topic_universe: if kind.has_topics() { topics } else { Vec::new() },
        sessions,
        seed,
        layout_policy: parse::<LayoutPolicy>(layout)?,
    };
    cfg.validate().map_err(to_py)?;
    Ok(PyClickLog { inner: simulation::simulate_log(m, &cfg).map_err(to_py)? })
}

/// Fits `kind` to `log`; returns the model and a report dict.
#[pyfunction]
#[pyo3(signature = (kind, log, max_iters = 500, tol = 1e-7, init = "uniform_half", epsilon = 0.0, seed = 0))]
fn fit<'py>(
    py: Python<'py>,
    kind: &str,
    log: &PyClickLog,
    max_iters: usize,
    tol: f64,
    init: &str,
    epsilon: f64,
    seed: u64,
) -> PyResult<(PyModel, Bound<'py, PyDict>)> {
    let opts = FitOptions {
        max_iters,
        rel_tol: tol,
        init: parse::<Init>(init)?,
        smoothing_epsilon: epsilon,
        seed,
    };
    let kind: ModelKind = parse(kind)?;
    let report = py.detach(|| estimation::fit(kind, &log.inner, &opts)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("ll_trajectory", &report.ll_trajectory)?;
    d.set_item("iterations", report.iterations)?;
    d.set_item("converged", report.converged)?;
    d.set_item("normalization", &report.normalization)?;
    d.set_item("undetermined", &report.undetermined)?;
    Ok((PyModel { inner: report.model }, d))
}

/// Log-likelihood and perplexity report; infinite perplexity is `float("inf")`.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, model: &PyModel, log: &PyClickLog) -> PyResult<Bound<'py, PyDict>> {
    let r = py.detach(|| evaluation::evaluate(&model.inner, &log.inner)).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("total_ll", r.total_ll)?;
    d.set_item("overall_perplexity", r.overall_perplexity.value())?;
    let per_rank = PyDict::new(py);
    for (p, v) in &r.per_rank_perplexity {
        per_rank.set_item(p.key(), v.value())?;
    }
    d.set_item("per_rank_perplexity", per_rank)?;
    d.set_item("n_sessions", r.n_sessions)?;
    d.set_item("unseen_items", &r.unseen_items)?;
    d.set_item("unseen_topics", &r.unseen_topics)?;
    Ok(d)
}

/// Category label for a set of global dependencies, e.g. `["items", "clicks"]`.
#[pyfunction]
fn classify(deps: Vec<String>) -> PyResult<&'static str> {
    Ok(taxonomy::classify(GlobalDeps::from_names(&deps).map_err(to_py)?).label())
}

/// Category label of a catalog model.
#[pyfunction]
fn category(model: &str) -> PyResult<&'static str> {
    Ok(taxonomy::descriptor_of(parse::<CatalogModel>(model)?).category().label())
}

/// Descriptor of a catalog model as JSON.
#[pyfunction]
fn descriptor(model: &str) -> PyResult<String> {
    taxonomy::descriptor_of(parse::<CatalogModel>(model)?).to_json().map_err(to_py)
}

/// Whether two catalog models share dependencies, sequentiality and factorization.
#[pyfunction]
fn equivalent(a: &str, b: &str) -> PyResult<bool> {
    Ok(taxonomy::equivalent(
        &taxonomy::descriptor_of(parse(a)?),
        &taxonomy::descriptor_of(parse(b)?),
    ))
}

#[pymodule]
fn pyclickmodel(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyClickLog>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(category, m)?)?;
    m.add_function(wrap_pyfunction!(descriptor, m)?)?;
    m.add_function(wrap_pyfunction!(equivalent, m)?)?;
    m.add("MODEL_KINDS", ModelKind::ALL.iter().map(|k| k.as_str()).collect::<Vec<_>>())?;
    Ok(())
}
