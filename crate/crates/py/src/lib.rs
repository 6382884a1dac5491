//! Python bindings for the mcqgen pipeline and evaluation harness.

use std::collections::BTreeSet;
use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use mcqgen::config::RunConfig;
use mcqgen::eval::{self, Moments};
use mcqgen::kg::{filtered_mrr, train_with_history, TrainConfig, TripleStore};
use mcqgen::taxonomy::QuestionWordLexicon;
use mcqgen::{ContentLabel, Error, ItemFlag, QType};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Config(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_label<T: std::str::FromStr>(what: &str, s: &str) -> PyResult<T> {
    s.parse()
        .map_err(|_| PyValueError::new_err(format!("unknown {what} {s:?}")))
}

/// A four-choice question.
#[pyclass(get_all, set_all, skip_from_py_object, name = "McqItem")]
#[derive(Clone)]
struct PyMcqItem {
    id: String,
    question: String,
    choices: Vec<String>,
    correct_index: usize,
    qtype: String,
    content: String,
    flags: Vec<String>,
}

impl From<mcqgen::McqItem> for PyMcqItem {
    fn from(item: mcqgen::McqItem) -> Self {
        PyMcqItem {
            id: item.id,
            question: item.question,
            choices: item.choices,
            correct_index: item.correct_index,
            qtype: item.qtype.to_string(),
            content: item.content.to_string(),
            flags: item.flags.iter().map(|f| f.to_string()).collect(),
        }
    }
}

impl PyMcqItem {
    fn to_core(&self) -> PyResult<mcqgen::McqItem> {
        let flags: BTreeSet<ItemFlag> = self
            .flags
            .iter()
            .map(|f| parse_label("flag", f))
            .collect::<PyResult<_>>()?;
        Ok(mcqgen::McqItem {
            id: self.id.clone(),
            question: self.question.clone(),
            choices: self.choices.clone(),
            correct_index: self.correct_index,
            qtype: parse_label::<QType>("qtype", &self.qtype)?,
            content: parse_label::<ContentLabel>("content label", &self.content)?,
            flags,
        })
    }
}

#[pymethods]
impl PyMcqItem {
    #[new]
    #[pyo3(signature = (id, question, choices, correct_index, qtype="WHAT", content="OTHERS", flags=Vec::new()))]
    fn new(
        id: String,
        question: String,
        choices: Vec<String>,
        correct_index: usize,
        qtype: &str,
        content: &str,
        flags: Vec<String>,
    ) -> PyResult<Self> {
        let item = PyMcqItem {
            id,
            question,
            choices,
            correct_index,
            qtype: qtype.to_string(),
            content: content.to_string(),
            flags,
        };
        item.to_core()?;
        Ok(item)
    }

    /// Raise ValueError unless the item satisfies the dataset invariants.
    fn validate(&self) -> PyResult<()> {
        self.to_core()?
            .validate()
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.to_core()?).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let item: mcqgen::McqItem = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(item.into())
    }

    fn __repr__(&self) -> String {
        format!(
            "McqItem(id={:?}, choices={:?}, correct_index={})",
            self.id, self.choices, self.correct_index
        )
    }
}

/// Per-choice probabilities a model assigned to one item.
#[pyclass(get_all, skip_from_py_object, name = "EvalRecord")]
#[derive(Clone)]
struct PyEvalRecord {
    item_id: String,
    model_id: String,
    probs: Vec<f64>,
    correct_index: usize,
    quantization: Option<String>,
}

impl PyEvalRecord {
    fn to_core(&self) -> eval::EvalRecord {
        eval::EvalRecord {
            item_id: self.item_id.clone(),
            model_id: self.model_id.clone(),
            quantization_tag: self.quantization.clone(),
            probs: self.probs.clone(),
            correct_index: self.correct_index,
        }
    }
}

#[pymethods]
impl PyEvalRecord {
    #[new]
    #[pyo3(signature = (item_id, model_id, probs, correct_index, quantization=None))]
    fn new(
        item_id: String,
        model_id: String,
        probs: Vec<f64>,
        correct_index: usize,
        quantization: Option<String>,
    ) -> PyResult<Self> {
        let rec = PyEvalRecord {
            item_id,
            model_id,
            probs,
            correct_index,
            quantization,
        };
        rec.to_core()
            .validate()
            .map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(rec)
    }

    /// Build from log-likelihoods via softmax.
    #[staticmethod]
    #[pyo3(signature = (item_id, model_id, loglikelihoods, correct_index, quantization=None))]
    fn from_loglikelihoods(
        item_id: String,
        model_id: String,
        loglikelihoods: Vec<f64>,
        correct_index: usize,
        quantization: Option<String>,
    ) -> PyResult<Self> {
        Self::new(
            item_id,
            model_id,
            eval::softmax(&loglikelihoods),
            correct_index,
            quantization,
        )
    }
}

#[pyfunction]
fn normalize_text(s: &str) -> String {
    mcqgen::text::normalize_text(s)
}

#[pyfunction]
fn normalize_written_form(s: &str) -> String {
    mcqgen::numwords::normalize_written_form(s)
}

#[pyfunction]
#[pyo3(signature = (question, lexicon=None))]
fn classify_type(question: &str, lexicon: Option<PathBuf>) -> PyResult<String> {
    let lex = match lexicon {
        Some(p) => QuestionWordLexicon::load(p).map_err(to_py)?,
        None => QuestionWordLexicon::default(),
    };
    Ok(mcqgen::taxonomy::classify_type(question, &lex).to_string())
}

#[pyfunction]
fn confidence(probs: Vec<f64>) -> f64 {
    eval::confidence(&probs)
}

#[pyfunction]
fn format_pct(x: f64) -> String {
    eval::format_pct(x)
}

/// Aggregate metrics as a dict; `correlation` is None when undefined.
#[pyfunction]
fn metrics(py: Python<'_>, records: Vec<PyRef<'_, PyEvalRecord>>) -> PyResult<Py<PyAny>> {
    let recs: Vec<eval::EvalRecord> = records.iter().map(|r| r.to_core()).collect();
    let m = Moments::from_records(&recs);
    let report = eval::MetricsReport::from_moments(&m).map_err(to_py)?;
    let dict = pyo3::types::PyDict::new(py);
    dict.set_item("n", report.n)?;
    dict.set_item("hard_accuracy", report.hard_accuracy)?;
    dict.set_item("soft_accuracy", report.soft_accuracy)?;
    dict.set_item("mean_confidence", report.mean_confidence)?;
    dict.set_item("correlation", report.correlation)?;
    Ok(dict.into_any().unbind())
}

#[pyfunction]
fn read_mcq_dataset(path: PathBuf) -> PyResult<Vec<PyMcqItem>> {
    Ok(mcqgen::dataset::read_mcq_dataset(path)
        .map_err(to_py)?
        .into_iter()
        .map(PyMcqItem::from)
        .collect())
}

#[pyfunction]
fn write_mcq_dataset(items: Vec<PyRef<'_, PyMcqItem>>, path: PathBuf) -> PyResult<usize> {
    let items: Vec<mcqgen::McqItem> = items.iter().map(|i| i.to_core()).collect::<PyResult<_>>()?;
    mcqgen::dataset::write_mcq_dataset(&items, path).map_err(to_py)
}

/// Run the generation pipeline; returns the run manifest as JSON.
#[pyfunction]
#[pyo3(signature = (input, output, config=None, seed=None))]
fn generate(
    py: Python<'_>,
    input: PathBuf,
    output: PathBuf,
    config: Option<PathBuf>,
    seed: Option<u64>,
) -> PyResult<String> {
    let mut cfg = match config {
        Some(p) => RunConfig::load(p).map_err(to_py)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.apply_seed(s);
    }
    let manifest = py
        .detach(|| mcqgen::pipeline::generate(&cfg, &input, &output))
        .map_err(to_py)?;
    serde_json::to_string(&manifest).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Train ComplEx embeddings, save them, and return the filtered MRR on
/// the training triples.
#[pyfunction]
#[pyo3(signature = (triples, output, epochs=100, dim=50, seed=7))]
fn train_kg(py: Python<'_>, triples: PathBuf, output: PathBuf, epochs: usize, dim: usize, seed: u64) -> PyResult<f64> {
    let cfg = TrainConfig {
        epochs,
        dim,
        seed,
        ..TrainConfig::default()
    };
    py.detach(|| {
        let store = TripleStore::load(&triples)?;
        let report = train_with_history(&store, &cfg)?;
        report.embedding.save(&output)?;
        Ok(filtered_mrr(&store, &report.embedding, store.triples()))
    })
    .map_err(to_py)
}

/// Evaluate logs against a dataset; returns `[(label, report_json)]`.
#[pyfunction]
fn evaluate(logs: PathBuf, dataset: PathBuf) -> PyResult<Vec<(String, String)>> {
    eval::evaluate_files(logs, dataset)
        .map_err(to_py)?
        .into_iter()
        .map(|(label, r)| {
            serde_json::to_string(&r)
                .map(|j| (label, j))
                .map_err(|e| PyRuntimeError::new_err(e.to_string()))
        })
        .collect()
}

#[pymodule]
fn pymcqgen(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMcqItem>()?;
    m.add_class::<PyEvalRecord>()?;
    m.add_function(wrap_pyfunction!(normalize_text, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_written_form, m)?)?;
    m.add_function(wrap_pyfunction!(classify_type, m)?)?;
    m.add_function(wrap_pyfunction!(confidence, m)?)?;
    m.add_function(wrap_pyfunction!(format_pct, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(read_mcq_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(write_mcq_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train_kg, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
