//! Knowledge-embedding backends: anything that maps `(evidence, target type)`
//! to a probability distribution over the target's schema values.

mod cooccur;
mod external;
mod table;
pub mod wire;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{FeatureAssignment, FeatureSchema, Violation};

pub use cooccur::{cooccur_train, CoOccurModel, ModelFileError, ObjectInstance, Pooling, TrainError};
pub use external::{Endpoint, ExternalBackend};
pub use table::TableBackend;

/// Tolerance on the probability sum of a [`Distribution`].
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("invalid evidence: {0}")]
    InvalidEvidence(String),
    #[error("invalid target `{0}`: targets must be non-queryable schema types")]
    InvalidTarget(String),
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend timed out: {0}")]
    Timeout(String),
    #[error("malformed backend response: {0}")]
    MalformedResponse(String),
    #[error("backend probabilities sum to {sum}, outside tolerance")]
    ProbabilitySum { sum: f64 },
    #[error("candidate order mismatch: {0}")]
    CandidateMismatch(String),
    #[error("no fixture entry for {0}")]
    MissingEntry(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
}

/// Whether a backend is one of the in-process count models or an external
/// encoder/LLM adapter. Selects the default confidence threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendFamily {
    Native,
    External,
}

impl BackendFamily {
    pub fn default_theta(self) -> f64 {
        match self {
            BackendFamily::Native => 0.65,
            BackendFamily::External => 0.99,
        }
    }
}

pub trait Backend: Send + Sync {
    fn schema(&self) -> &FeatureSchema;

    fn predict(&self, evidence: &EvidenceSet, target: &str) -> Result<Distribution, BackendError>;

    fn family(&self) -> BackendFamily {
        BackendFamily::Native
    }
}

impl<B: Backend + ?Sized> Backend for std::sync::Arc<B> {
    fn schema(&self) -> &FeatureSchema {
        (**self).schema()
    }

    fn predict(&self, evidence: &EvidenceSet, target: &str) -> Result<Distribution, BackendError> {
        (**self).predict(evidence, target)
    }

    fn family(&self) -> BackendFamily {
        (**self).family()
    }
}

/// Shared precondition check for every backend.
pub fn check_request(schema: &FeatureSchema, evidence: &EvidenceSet, target: &str) -> Result<(), BackendError> {
    match schema.feature_type(target) {
        Some(t) if !t.queryable => {}
        _ => return Err(BackendError::InvalidTarget(target.to_string())),
    }
    evidence
        .validate(schema)
        .map_err(|e| BackendError::InvalidEvidence(e.to_string()))?;
    if evidence.contains_type(target) {
        return Err(BackendError::InvalidEvidence(format!(
            "evidence already assigns the prediction target `{target}`"
        )));
    }
    Ok(())
}

/// Normalized probabilities over one target type's candidates, in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    target: String,
    candidates: Vec<String>,
    probabilities: Vec<f64>,
}

impl Distribution {
    pub fn new(
        target: impl Into<String>,
        candidates: Vec<String>,
        probabilities: Vec<f64>,
    ) -> Result<Self, BackendError> {
        if candidates.len() != probabilities.len() || candidates.is_empty() {
            return Err(BackendError::InvalidDistribution(format!(
                "{} candidates but {} probabilities",
                candidates.len(),
                probabilities.len()
            )));
        }
        if let Some(p) = probabilities.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(BackendError::InvalidDistribution(format!(
                "probability {p} is not a finite nonnegative number"
            )));
        }
        let sum: f64 = probabilities.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(BackendError::ProbabilitySum { sum });
        }
        Ok(Self {
            target: target.into(),
            candidates,
            probabilities,
        })
    }

    /// Normalizes nonnegative weights. An all-zero weight vector becomes uniform.
    pub fn from_weights(
        target: impl Into<String>,
        candidates: Vec<String>,
        weights: &[f64],
    ) -> Result<Self, BackendError> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(BackendError::InvalidDistribution(
                "weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        let probabilities = if total > 0.0 {
            weights.iter().map(|w| w / total).collect()
        } else {
            vec![1.0 / weights.len() as f64; weights.len()]
        };
        Self::new(target, candidates, probabilities)
    }

    /// Distribution over `target`'s schema values.
    pub fn for_target(schema: &FeatureSchema, target: &str, weights: &[f64]) -> Result<Self, BackendError> {
        let candidates = schema
            .values(target)
            .ok_or_else(|| BackendError::InvalidTarget(target.to_string()))?
            .to_vec();
        Self::from_weights(target, candidates, weights)
    }

    pub fn uniform(target: impl Into<String>, candidates: Vec<String>) -> Self {
        let n = candidates.len();
        Self::from_weights(target, candidates, &vec![1.0; n]).expect("uniform is valid")
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn candidates(&self) -> &[String] {
        &self.candidates
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn probability_of(&self, value: &str) -> Option<f64> {
        self.candidates
            .iter()
            .position(|c| c == value)
            .map(|i| self.probabilities[i])
    }

    /// Highest-probability candidate; ties go to the earlier schema value.
    pub fn argmax(&self) -> (&str, f64) {
        let mut best = 0;
        for (i, p) in self.probabilities.iter().enumerate() {
            if *p > self.probabilities[best] {
                best = i;
            }
        }
        (&self.candidates[best], self.probabilities[best])
    }

    /// Candidates sorted by probability descending, ties in schema order.
    pub fn ranked(&self) -> Vec<(String, f64)> {
        let mut order: Vec<usize> = (0..self.candidates.len()).collect();
        order.sort_by(|&a, &b| self.probabilities[b].total_cmp(&self.probabilities[a]));
        order
            .into_iter()
            .map(|i| (self.candidates[i].clone(), self.probabilities[i]))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvidenceError {
    #[error(transparent)]
    Violation(#[from] Violation),
    #[error("single-valued feature type `{0}` assigned more than once")]
    Repeated(String),
}

/// Ordered set of known feature assignments about the object being searched.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EvidenceSet(Vec<FeatureAssignment>);

impl EvidenceSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a validated set from assignments.
    pub fn from_assignments(
        schema: &FeatureSchema,
        assignments: impl IntoIterator<Item = FeatureAssignment>,
    ) -> Result<Self, EvidenceError> {
        let set = Self(assignments.into_iter().collect());
        set.validate(schema)?;
        Ok(set)
    }

    /// Unchecked construction, for fixtures and wire decoding; call
    /// [`EvidenceSet::validate`] before trusting the result.
    pub fn from_vec(assignments: Vec<FeatureAssignment>) -> Self {
        Self(assignments)
    }

    pub fn validate(&self, schema: &FeatureSchema) -> Result<(), EvidenceError> {
        for (i, a) in self.0.iter().enumerate() {
            schema.validate(a)?;
            let earlier = &self.0[..i];
            if schema.is_multi_valued(&a.feature) {
                if earlier.contains(a) {
                    return Err(EvidenceError::Repeated(a.feature.clone()));
                }
            } else if earlier.iter().any(|b| b.feature == a.feature) {
                return Err(EvidenceError::Repeated(a.feature.clone()));
            }
        }
        Ok(())
    }

    /// Adds an assignment. For single-valued types an existing assignment is
    /// replaced and returned; repeating an identical multi-valued pair is a no-op.
    pub fn insert(
        &mut self,
        schema: &FeatureSchema,
        a: FeatureAssignment,
    ) -> Result<Option<FeatureAssignment>, Violation> {
        schema.validate(&a)?;
        if schema.is_multi_valued(&a.feature) {
            if !self.0.contains(&a) {
                self.0.push(a);
            }
            return Ok(None);
        }
        match self.0.iter().position(|b| b.feature == a.feature) {
            Some(i) => {
                let old = std::mem::replace(&mut self.0[i], a);
                Ok(Some(old))
            }
            None => {
                self.0.push(a);
                Ok(None)
            }
        }
    }

    /// Copy with one more assignment appended (no validation).
    pub fn with(&self, a: FeatureAssignment) -> Self {
        let mut next = self.clone();
        next.0.push(a);
        next
    }

    /// Copy with every assignment of `feature` removed.
    pub fn without_type(&self, feature: &str) -> Self {
        Self(self.0.iter().filter(|a| a.feature != feature).cloned().collect())
    }

    pub fn contains_type(&self, feature: &str) -> bool {
        self.0.iter().any(|a| a.feature == feature)
    }

    pub fn value_of(&self, feature: &str) -> Option<&str> {
        self.0.iter().find(|a| a.feature == feature).map(|a| a.value.as_str())
    }

    pub fn iter(&self) -> std::slice::Iter<'_, FeatureAssignment> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[FeatureAssignment] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<'a> IntoIterator for &'a EvidenceSet {
    type Item = &'a FeatureAssignment;
    type IntoIter = std::slice::Iter<'a, FeatureAssignment>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

impl fmt::Display for EvidenceSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, a) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, "}}")
    }
}
