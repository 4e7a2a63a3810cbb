//! Python bindings: schema, backends, the description parser, interactive
//! sessions and the evaluation harness.
//!
//! Evidence crosses the boundary as a list of `(type, value)` tuples; events
//! and results come back as plain dicts.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Duration;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use clarify_core::backend::{
    cooccur_train, Backend as CoreBackend, CoOccurModel, Endpoint, EvidenceSet, ExternalBackend, ObjectInstance,
    Pooling,
};
use clarify_core::clarify;
use clarify_core::controller::{Answer, ControllerConfig, Event, Policy, Session as CoreSession};
use clarify_core::corpus::{load_expressions, load_instances, ObjectFeaturesDB};
use clarify_core::eval::{self, EvalCondition};
use clarify_core::parsing::Lexicon as CoreLexicon;
use clarify_core::schema::{FeatureAssignment, FeatureSchema};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<'py, T: serde::Serialize + ?Sized>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    py.import("json")?.call_method1("loads", (text,))
}

fn evidence(schema: &FeatureSchema, pairs: Vec<(String, String)>) -> PyResult<EvidenceSet> {
    let assignments = pairs.iter().map(|(t, v)| FeatureAssignment::normalized(t, v));
    EvidenceSet::from_assignments(schema, assignments).map_err(value_err)
}

fn pairs(e: &EvidenceSet) -> Vec<(String, String)> {
    e.iter().map(|a| (a.feature.clone(), a.value.clone())).collect()
}

/// Feature types and their values.
#[pyclass(name = "Schema", module = "clarify_engine", frozen, from_py_object)]
#[derive(Clone)]
pub struct PySchema {
    inner: Arc<FeatureSchema>,
}

#[pymethods]
impl PySchema {
    #[staticmethod]
    fn reference() -> Self {
        Self {
            inner: Arc::new(FeatureSchema::reference()),
        }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = FeatureSchema::load(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(Self { inner: Arc::new(inner) })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = FeatureSchema::from_json_str(text).map_err(value_err)?;
        Ok(Self { inner: Arc::new(inner) })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    fn types(&self) -> Vec<String> {
        self.inner.types().iter().map(|t| t.name.clone()).collect()
    }

    fn queryable_types(&self) -> Vec<String> {
        self.inner.queryable_types().map(|t| t.name.clone()).collect()
    }

    fn values(&self, feature_type: &str) -> PyResult<Vec<String>> {
        self.inner
            .values(feature_type)
            .map(<[String]>::to_vec)
            .ok_or_else(|| value_err(format!("unknown feature type `{feature_type}`")))
    }

    fn validate(&self, feature_type: &str, value: &str) -> bool {
        self.inner
            .validate(&FeatureAssignment::normalized(feature_type, value))
            .is_ok()
    }

    fn pair_count(&self) -> usize {
        self.inner.pair_count()
    }
}

/// A knowledge backend: a trained co-occurrence model or an external client.
#[pyclass(name = "Backend", module = "clarify_engine", frozen, from_py_object)]
#[derive(Clone)]
pub struct PyBackend {
    inner: Arc<dyn CoreBackend>,
    model: Option<Arc<CoOccurModel>>,
}

fn parse_pooling(p: &str) -> PyResult<Pooling> {
    p.parse().map_err(value_err)
}

#[pymethods]
impl PyBackend {
    /// Trains a co-occurrence model from `{"id": ..., "features": {type: [values]}}` dicts.
    #[staticmethod]
    #[pyo3(signature = (instances, alpha = 0.1, pooling = "additive", schema = None))]
    fn train(
        py: Python<'_>,
        instances: Vec<Bound<'_, PyAny>>,
        alpha: f64,
        pooling: &str,
        schema: Option<PySchema>,
    ) -> PyResult<Self> {
        let schema = schema.map_or_else(|| Arc::new(FeatureSchema::reference()), |s| s.inner);
        let dumps = py.import("json")?.getattr("dumps")?;
        let parsed = instances
            .iter()
            .map(|obj| {
                let text: String = dumps.call1((obj,))?.extract()?;
                serde_json::from_str::<ObjectInstance>(&text).map_err(value_err)
            })
            .collect::<PyResult<Vec<_>>>()?;
        let model = cooccur_train(schema, &parsed, alpha)
            .map_err(value_err)?
            .with_pooling(parse_pooling(pooling)?);
        Ok(Self::from_model(model))
    }

    #[staticmethod]
    #[pyo3(signature = (path, alpha = 0.1, pooling = "additive", schema = None))]
    fn train_file(path: &str, alpha: f64, pooling: &str, schema: Option<PySchema>) -> PyResult<Self> {
        let schema = schema.map_or_else(|| Arc::new(FeatureSchema::reference()), |s| s.inner);
        let instances = load_instances(path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        let model = cooccur_train(schema, &instances, alpha)
            .map_err(value_err)?
            .with_pooling(parse_pooling(pooling)?);
        Ok(Self::from_model(model))
    }

    #[staticmethod]
    #[pyo3(signature = (path, schema = None))]
    fn load(path: &str, schema: Option<PySchema>) -> PyResult<Self> {
        let schema = schema.map_or_else(|| Arc::new(FeatureSchema::reference()), |s| s.inner);
        let model = CoOccurModel::load(schema, path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(Self::from_model(model))
    }

    /// Client for a wire-protocol backend at `tcp://host:port` or `http://host:port`.
    #[staticmethod]
    #[pyo3(signature = (endpoint, timeout = 30.0, schema = None))]
    fn external(endpoint: &str, timeout: f64, schema: Option<PySchema>) -> PyResult<Self> {
        let schema = schema.map_or_else(|| Arc::new(FeatureSchema::reference()), |s| s.inner);
        let endpoint: Endpoint = endpoint.parse().map_err(value_err)?;
        let client = ExternalBackend::with_timeout(schema, endpoint, Duration::from_secs_f64(timeout));
        Ok(Self {
            inner: Arc::new(client),
            model: None,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let model = self
            .model
            .as_ref()
            .ok_or_else(|| PyRuntimeError::new_err("only co-occurrence models can be saved"))?;
        model.save(path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    fn schema(&self) -> PySchema {
        PySchema {
            inner: Arc::new(self.inner.schema().clone()),
        }
    }

    fn is_external(&self) -> bool {
        self.model.is_none()
    }

    /// `[(value, probability)]` in schema order.
    fn predict(
        &self,
        py: Python<'_>,
        evidence_pairs: Vec<(String, String)>,
        target: &str,
    ) -> PyResult<Vec<(String, f64)>> {
        let e = evidence(self.inner.schema(), evidence_pairs)?;
        let backend = self.inner.clone();
        let target = target.to_string();
        let d = py
            .detach(move || backend.predict(&e, &target))
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok(d.candidates()
            .iter()
            .cloned()
            .zip(d.probabilities().iter().copied())
            .collect())
    }

    /// Expected entropy reduction (nats) of asking `feature_type`.
    fn expected_gain(&self, evidence_pairs: Vec<(String, String)>, target: &str, feature_type: &str) -> PyResult<f64> {
        let e = evidence(self.inner.schema(), evidence_pairs)?;
        clarify::expected_gain(self.inner.as_ref(), &e, target, feature_type)
            .map(|g| g.gain)
            .map_err(value_err)
    }

    /// Highest-gain question, or None when nothing would help.
    #[pyo3(signature = (evidence_pairs, target, excluded = Vec::new()))]
    fn select_question(
        &self,
        evidence_pairs: Vec<(String, String)>,
        target: &str,
        excluded: Vec<String>,
    ) -> PyResult<Option<(String, f64)>> {
        let e = evidence(self.inner.schema(), evidence_pairs)?;
        let excluded: BTreeSet<String> = excluded.into_iter().collect();
        clarify::select_question(self.inner.as_ref(), &e, target, &excluded)
            .map(|q| q.map(|g| (g.feature_type, g.gain)))
            .map_err(value_err)
    }
}

impl PyBackend {
    fn from_model(model: CoOccurModel) -> Self {
        let model = Arc::new(model);
        Self {
            inner: model.clone(),
            model: Some(model),
        }
    }
}

/// Rule-based extraction of features from a description.
#[pyclass(name = "Lexicon", module = "clarify_engine", frozen)]
pub struct PyLexicon {
    inner: Arc<CoreLexicon>,
}

#[pymethods]
impl PyLexicon {
    #[new]
    #[pyo3(signature = (schema = None, aliases = None))]
    fn new(schema: Option<PySchema>, aliases: Option<&str>) -> PyResult<Self> {
        let schema = schema.map_or_else(|| Arc::new(FeatureSchema::reference()), |s| s.inner);
        let inner = match aliases {
            Some(p) => CoreLexicon::from_alias_file(schema, p),
            None => CoreLexicon::reference(schema),
        }
        .map_err(value_err)?;
        Ok(Self { inner: Arc::new(inner) })
    }

    fn extract_features(&self, text: &str) -> Vec<(String, String)> {
        pairs(&self.inner.extract_features(text))
    }

    fn mentions_target(&self, text: &str) -> bool {
        self.inner.mentions_target(text)
    }
}

fn build_config(
    backend: &PyBackend,
    theta: Option<f64>,
    budget: u32,
    policy: &str,
    iterative: bool,
    per_stage: bool,
) -> PyResult<ControllerConfig> {
    let mut cfg = ControllerConfig::for_family(backend.inner.family());
    if let Some(t) = theta {
        cfg.theta = t;
    }
    cfg.question_budget = budget;
    cfg.policy = policy.parse::<Policy>().map_err(value_err)?;
    cfg.iterative = iterative;
    if per_stage {
        cfg.budget_scope = clarify_core::controller::BudgetScope::PerStage;
    }
    cfg.validate().map_err(value_err)?;
    Ok(cfg)
}

/// One clarification dialogue. `event` is the latest event dict; answer
/// questions with `answer(value)` or `skip()` until its kind is `done`.
#[pyclass(name = "Session", module = "clarify_engine")]
pub struct PySession {
    backend: PyBackend,
    inner: CoreSession,
    last: Event,
}

#[pymethods]
#[allow(clippy::too_many_arguments)]
impl PySession {
    #[new]
    #[pyo3(signature = (backend, evidence_pairs, theta = None, budget = 2, policy = "informative", iterative = true, per_stage = false))]
    fn new(
        py: Python<'_>,
        backend: PyBackend,
        evidence_pairs: Vec<(String, String)>,
        theta: Option<f64>,
        budget: u32,
        policy: &str,
        iterative: bool,
        per_stage: bool,
    ) -> PyResult<Self> {
        let cfg = build_config(&backend, theta, budget, policy, iterative, per_stage)?;
        let e = evidence(backend.inner.schema(), evidence_pairs)?;
        let b = backend.inner.clone();
        let (inner, last) = py
            .detach(move || CoreSession::start(b.as_ref(), e, cfg))
            .map_err(value_err)?;
        Ok(Self { backend, inner, last })
    }

    #[getter]
    fn event<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.last)
    }

    fn events<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, self.inner.events())
    }

    #[getter]
    fn pending_question(&self) -> Option<String> {
        self.inner.pending_question().map(str::to_string)
    }

    #[getter]
    fn done(&self) -> bool {
        self.inner.result().is_some()
    }

    #[getter]
    fn evidence(&self) -> Vec<(String, String)> {
        pairs(self.inner.evidence())
    }

    fn result<'py>(&self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyAny>>> {
        self.inner.result().map(|r| to_py(py, r)).transpose()
    }

    fn answer<'py>(&mut self, py: Python<'py>, value: &str) -> PyResult<Bound<'py, PyAny>> {
        self.step(py, Answer::Value(value.to_string()))
    }

    fn skip<'py>(&mut self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        self.step(py, Answer::Skip)
    }

    fn state<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner)
    }
}

impl PySession {
    fn step<'py>(&mut self, py: Python<'py>, answer: Answer) -> PyResult<Bound<'py, PyAny>> {
        let backend = self.backend.inner.clone();
        let inner = &mut self.inner;
        self.last = py.detach(|| inner.step(backend.as_ref(), answer)).map_err(value_err)?;
        to_py(py, &self.last)
    }
}

#[pyfunction]
fn entropy(probabilities: Vec<f64>) -> f64 {
    clarify::entropy_of(&probabilities)
}

#[pyfunction]
fn confidence(probabilities: Vec<f64>) -> f64 {
    probabilities.iter().copied().fold(0.0, f64::max)
}

#[pyfunction]
fn hit_at_k(ranked: Vec<String>, truth: &str, k: usize) -> PyResult<bool> {
    eval::hit_at_k(&ranked, truth, k).map_err(value_err)
}

/// Runs ablation conditions over an expression file, answering questions
/// from instance documents. Returns one dict per condition.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (backend, expressions, objects, conditions = "all", seed = 0, theta = None, budget = 2))]
fn evaluate<'py>(
    py: Python<'py>,
    backend: PyBackend,
    expressions: &str,
    objects: &str,
    conditions: &str,
    seed: u64,
    theta: Option<f64>,
    budget: u32,
) -> PyResult<Bound<'py, PyAny>> {
    let schema = Arc::new(backend.inner.schema().clone());
    let lexicon = CoreLexicon::reference(schema.clone()).map_err(value_err)?;
    let instances = load_instances(objects).map_err(|e| PyIOError::new_err(e.to_string()))?;
    let db = ObjectFeaturesDB::from_instances(schema, &instances).map_err(value_err)?;
    let set = load_expressions(expressions, &lexicon).map_err(|e| PyIOError::new_err(e.to_string()))?;
    let conditions = EvalCondition::parse_list(conditions, seed).map_err(value_err)?;
    let cfg = build_config(&backend, theta, budget, "informative", true, false)?;
    let b = backend.inner.clone();
    let report = py
        .detach(|| eval::run_conditions(&set.kept, &lexicon, &db, b.as_ref(), &cfg, &conditions))
        .map_err(value_err)?;
    to_py(py, &report.rows)
}

#[pymodule]
pub fn clarify_engine(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySchema>()?;
    m.add_class::<PyBackend>()?;
    m.add_class::<PyLexicon>()?;
    m.add_class::<PySession>()?;
    m.add_function(wrap_pyfunction!(entropy, m)?)?;
    m.add_function(wrap_pyfunction!(confidence, m)?)?;
    m.add_function(wrap_pyfunction!(hit_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
