//! Python bindings: Simple-BN data, the classifier, counterfactual
//! generators, query sets and the metric suite.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use feasible_cf::classifier::{train_classifier, Classifier, ClassifierConfig};
use feasible_cf::feasibility::{train_model_approx, train_model_based};
use feasible_cf::metrics::evaluate as evaluate_metrics;
use feasible_cf::oracle::{build_query_set, discover_constraints, finetune, DiscoveryConfig, FinetuneConfig, QuerySet};
use feasible_cf::pipeline::{run_simple_bn as run_pipeline, SimpleBnConfig, SimpleBnData};
use feasible_cf::vae::{flip_targets as flip, train_base, CfVae, VaeTrainConfig};
use feasible_cf::{rng, Error};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Dimension { .. } | Error::Range { .. } | Error::Parse { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

trait OrPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> OrPy<T> for feasible_cf::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py_err)
    }
}

/// Converts a serializable value to plain Python objects through `json`.
fn to_python<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Simulated Simple-BN dataset with its train/validation/test split.
#[pyclass(name = "SimpleBn", frozen)]
struct PySimpleBn {
    inner: SimpleBnData,
}

#[pymethods]
impl PySimpleBn {
    #[new]
    #[pyo3(signature = (samples = 10_000, seed = 0))]
    fn new(samples: usize, seed: u64) -> PyResult<Self> {
        Ok(PySimpleBn {
            inner: SimpleBnData::generate(samples, seed).py()?,
        })
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.data.schema.names()
    }

    #[getter]
    fn train_x(&self) -> Vec<Vec<f64>> {
        self.inner.train.encoded.clone()
    }

    #[getter]
    fn train_y(&self) -> Vec<usize> {
        self.inner.train.labels.clone()
    }

    #[getter]
    fn validation_x(&self) -> Vec<Vec<f64>> {
        self.inner.validation.encoded.clone()
    }

    #[getter]
    fn validation_y(&self) -> Vec<usize> {
        self.inner.validation.labels.clone()
    }

    #[getter]
    fn test_x(&self) -> Vec<Vec<f64>> {
        self.inner.test.encoded.clone()
    }

    #[getter]
    fn test_y(&self) -> Vec<usize> {
        self.inner.test.labels.clone()
    }

    /// Raw feature values of an encoded row.
    fn decode<'py>(&self, py: Python<'py>, row: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        to_python(py, &self.inner.data.schema.decode(&row).py()?)
    }

    /// Label from the monotonic structural oracle: 1 if feasible.
    fn oracle_label(&self, x: Vec<f64>, cf: Vec<f64>) -> PyResult<u8> {
        let oracle = self.inner.oracle().py()?;
        oracle.label_encoded(&self.inner.data.schema, &x, &cf).py()
    }
}

#[pyclass(name = "Classifier", frozen)]
struct PyClassifier {
    inner: Classifier,
}

#[pymethods]
impl PyClassifier {
    #[staticmethod]
    #[pyo3(signature = (x, y, classes = 2, epochs = 100, batch_size = 32, learning_rate = 1e-3, hidden = 10, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        x: Vec<Vec<f64>>,
        y: Vec<usize>,
        classes: usize,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        hidden: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let config = ClassifierConfig {
            epochs,
            batch_size,
            learning_rate,
            hidden,
            seed,
        };
        let inner = py.detach(|| train_classifier(&x, &y, classes, None, &config)).py()?;
        Ok(PyClassifier { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyClassifier {
            inner: Classifier::load(path.as_ref()).py()?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path.as_ref()).py()
    }

    fn scores(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        x.iter().map(|r| self.inner.class_scores(r)).collect::<feasible_cf::Result<_>>().py()
    }

    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        x.iter().map(|r| self.inner.predict_class(r)).collect::<feasible_cf::Result<_>>().py()
    }

    fn accuracy(&self, x: Vec<Vec<f64>>, y: Vec<usize>) -> PyResult<f64> {
        self.inner.accuracy(&x, &y).py()
    }

    /// Flipped prediction for every row.
    fn flip_targets(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        flip(&self.inner, &x).py()
    }

    #[getter]
    fn param_hash(&self) -> String {
        self.inner.param_hash()
    }
}

/// Conditional variational counterfactual generator.
#[pyclass(name = "CfGenerator")]
struct PyGenerator {
    inner: CfVae,
}

#[pymethods]
impl PyGenerator {
    /// Trains a generator. `method` is `base`, `model-based` or `model-approx`.
    #[staticmethod]
    #[pyo3(signature = (classifier, data, method = "base", epochs = 50, margin = None, validity_weight = None, causal_weight = 55.0, constraint_weight = 0.1, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        py: Python<'_>,
        classifier: &PyClassifier,
        data: &PySimpleBn,
        method: &str,
        epochs: usize,
        margin: Option<f64>,
        validity_weight: Option<f64>,
        causal_weight: f64,
        constraint_weight: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let (m, v) = match method {
            "base" => (0.15, 150.0),
            "model-based" => (0.015, 85.0),
            "model-approx" => (0.087, 96.0),
            other => return Err(PyValueError::new_err(format!("unknown method '{other}'"))),
        };
        let config = VaeTrainConfig {
            margin: margin.unwrap_or(m),
            validity_weight: validity_weight.unwrap_or(v),
            epochs,
            seed,
            ..VaeTrainConfig::default()
        };
        let d = &data.inner;
        let clf = &classifier.inner;
        let inner = py
            .detach(|| -> feasible_cf::Result<CfVae> {
                let mut vae = CfVae::init(d.data.schema.encoded_width(), d.data.classes.len(), seed)?;
                let rows = &d.train.encoded;
                match method {
                    "base" => train_base(&mut vae, clf, rows, &config)?,
                    "model-based" => train_model_based(&mut vae, clf, rows, &config, &d.causal_proximity(causal_weight)?)?,
                    _ => train_model_approx(&mut vae, clf, rows, &config, &d.constraint_penalties(constraint_weight)?)?,
                };
                Ok(vae)
            })
            .py()?;
        Ok(PyGenerator { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyGenerator {
            inner: CfVae::load(path.as_ref()).py()?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path.as_ref()).py()
    }

    /// `k` counterfactuals per row; row `i * k + j` belongs to input `i`.
    #[pyo3(signature = (x, targets, k = 1, seed = 0))]
    fn generate(&self, x: Vec<Vec<f64>>, targets: Vec<usize>, k: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        self.inner.generate_batch(&x, &targets, k, &mut rng::derive(seed, 60)).py()
    }

    /// Fine-tunes in place on the labeled queries; returns the final epoch loss.
    #[pyo3(signature = (classifier, queries, budget = None, seed = 0))]
    fn finetune(
        &mut self,
        py: Python<'_>,
        classifier: &PyClassifier,
        queries: &PyQuerySet,
        budget: Option<usize>,
        seed: u64,
    ) -> PyResult<f64> {
        let qs = match budget {
            Some(n) => queries.inner.budget(n),
            None => queries.inner.clone(),
        };
        let config = FinetuneConfig::simple_bn(seed);
        let vae = &mut self.inner;
        let trace = py.detach(|| finetune(vae, &classifier.inner, &qs, &config)).py()?;
        Ok(trace.epoch_losses.last().copied().unwrap_or(f64::NAN))
    }
}

#[pyclass(name = "QuerySet", frozen)]
struct PyQuerySet {
    inner: QuerySet,
}

#[pymethods]
impl PyQuerySet {
    /// Queries over a fraction of the training rows, labeled by the structural oracle.
    #[staticmethod]
    #[pyo3(signature = (generator, classifier, data, fraction = 0.1, per_input = 10, seed = 0))]
    fn build(
        generator: &PyGenerator,
        classifier: &PyClassifier,
        data: &PySimpleBn,
        fraction: f64,
        per_input: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let d = &data.inner;
        let oracle = d.oracle().py()?;
        let inner = build_query_set(
            &generator.inner,
            &classifier.inner,
            &d.data.schema,
            &d.train.encoded,
            fraction,
            per_input,
            Some(&oracle),
            seed,
        )
        .py()?;
        Ok(PyQuerySet { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyQuerySet {
            inner: QuerySet::from_json(text).py()?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn feasible(&self) -> usize {
        self.inner.queries.iter().filter(|q| q.label == Some(1)).count()
    }

    /// `n` labeled queries taken round-robin over inputs.
    fn budget(&self, n: usize) -> Self {
        PyQuerySet {
            inner: self.inner.budget(n),
        }
    }
}

/// Metric report for `k` counterfactuals per input, as a dict.
#[pyfunction]
fn evaluate<'py>(
    py: Python<'py>,
    data: &PySimpleBn,
    classifier: &PyClassifier,
    inputs: Vec<Vec<f64>>,
    cfs: Vec<Vec<f64>>,
    targets: Vec<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let ctx = data.inner.eval_context(None);
    let report = evaluate_metrics(&ctx, &classifier.inner, &inputs, &cfs, &targets).py()?;
    to_python(py, &report)
}

/// Runs the full Simple-BN comparison and returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (seed = 0, samples = 10_000, autoencoders = true))]
fn run_simple_bn(py: Python<'_>, seed: u64, samples: usize, autoencoders: bool) -> PyResult<Bound<'_, PyAny>> {
    let mut config = SimpleBnConfig::new(seed);
    config.samples = samples;
    if !autoencoders {
        config.autoencoder = None;
    }
    let (report, _) = py.detach(|| run_pipeline(&config)).py()?;
    to_python(py, &report)
}

/// Permutation tests for constraints between the given feature pairs.
#[pyfunction]
#[pyo3(signature = (data, queries, pairs, permutations = 1000, significance = 0.01, seed = 0))]
fn discover<'py>(
    py: Python<'py>,
    data: &PySimpleBn,
    queries: &PyQuerySet,
    pairs: Vec<(String, String)>,
    permutations: usize,
    significance: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let config = DiscoveryConfig {
        permutations,
        significance,
        seed,
        ..DiscoveryConfig::default()
    };
    let found = discover_constraints(&data.inner.data.schema, &queries.inner, &pairs, &config).py()?;
    to_python(py, &found)
}

#[pyfunction]
fn ks_statistic(a: Vec<f64>, b: Vec<f64>) -> f64 {
    feasible_cf::oracle::ks_statistic(&a, &b)
}

#[pyfunction]
fn similarity(a: Vec<f64>, b: Vec<f64>) -> f64 {
    feasible_cf::oracle::similarity(&a, &b)
}

#[pymodule]
#[pyo3(name = "feasible_cf")]
fn feasible_cf_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySimpleBn>()?;
    m.add_class::<PyClassifier>()?;
    m.add_class::<PyGenerator>()?;
    m.add_class::<PyQuerySet>()?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_simple_bn, m)?)?;
    m.add_function(wrap_pyfunction!(discover, m)?)?;
    m.add_function(wrap_pyfunction!(ks_statistic, m)?)?;
    m.add_function(wrap_pyfunction!(similarity, m)?)?;
    Ok(())
}
