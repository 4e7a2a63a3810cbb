use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{check_request, Backend, BackendError, Distribution, EvidenceSet};
use crate::schema::{is_sentinel, normalize_token, FeatureAssignment, FeatureSchema};

pub const MODEL_FORMAT: &str = "cooccur/1";

/// How per-assignment counts are combined into one score per candidate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// `score(w) = alpha + sum_a count(a, w)`.
    #[default]
    Additive,
    /// Naive-Bayes style product of smoothed per-feature conditionals.
    Product,
}

impl std::str::FromStr for Pooling {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "additive" => Ok(Pooling::Additive),
            "product" => Ok(Pooling::Product),
            other => Err(format!("unknown pooling mode `{other}`")),
        }
    }
}

/// One training record: an object with its (possibly multi-valued) features.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub id: String,
    pub features: BTreeMap<String, Vec<String>>,
}

impl ObjectInstance {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            features: BTreeMap::new(),
        }
    }

    pub fn with(mut self, feature: &str, value: &str) -> Self {
        self.features
            .entry(feature.to_string())
            .or_default()
            .push(value.to_string());
        self
    }

    /// Normalizes tokens in place and checks every non-sentinel pair against
    /// the schema. Target types must carry at most one value.
    pub fn normalize_and_validate(&mut self, schema: &FeatureSchema) -> Result<(), String> {
        let mut normalized = BTreeMap::new();
        for (feature, values) in std::mem::take(&mut self.features) {
            let feature = normalize_token(&feature);
            let values: Vec<String> = values.iter().map(|v| normalize_token(v)).collect();
            normalized.insert(feature, values);
        }
        self.features = normalized;
        for (feature, values) in &self.features {
            let ft = schema
                .feature_type(feature)
                .ok_or_else(|| format!("unknown feature type `{feature}`"))?;
            let real: Vec<&String> = values.iter().filter(|v| !is_sentinel(v)).collect();
            for v in &real {
                schema
                    .validate(&FeatureAssignment::new(feature.as_str(), v.as_str()))
                    .map_err(|e| e.to_string())?;
            }
            if !ft.queryable && real.len() > 1 {
                return Err(format!("target type `{feature}` has {} values", real.len()));
            }
        }
        Ok(())
    }

    /// Schema-valid assignments in a stable order (sentinels skipped).
    pub fn assignments(&self) -> impl Iterator<Item = FeatureAssignment> + '_ {
        self.features.iter().flat_map(|(feature, values)| {
            values
                .iter()
                .filter(|v| !is_sentinel(v))
                .map(move |v| FeatureAssignment::new(feature.as_str(), v.as_str()))
        })
    }

    pub fn single_value(&self, feature: &str) -> Option<&str> {
        self.features
            .get(feature)?
            .iter()
            .find(|v| !is_sentinel(v))
            .map(String::as_str)
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training instances")]
    Empty,
    #[error("smoothing alpha must be finite and nonnegative, got {0}")]
    BadAlpha(f64),
    #[error("instance `{id}`: {message}")]
    Instance { id: String, message: String },
}

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model document is malformed: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported model format `{0}`")]
    Format(String),
    #[error("model does not match schema: {0}")]
    Schema(String),
}

/// Co-occurrence frequency table between object features and target values.
#[derive(Debug, Clone)]
pub struct CoOccurModel {
    schema: Arc<FeatureSchema>,
    alpha: f64,
    pooling: Pooling,
    instances: usize,
    /// assignment -> target type -> counts aligned with the target's values.
    counts: BTreeMap<FeatureAssignment, BTreeMap<String, Vec<u64>>>,
    /// target type -> instances per target value.
    totals: BTreeMap<String, Vec<u64>>,
}

/// Counts, for every instance carrying a target value `w`, one co-occurrence
/// of each of its other feature assignments with `w`.
pub fn cooccur_train(
    schema: Arc<FeatureSchema>,
    instances: &[ObjectInstance],
    alpha: f64,
) -> Result<CoOccurModel, TrainError> {
    if instances.is_empty() {
        return Err(TrainError::Empty);
    }
    if !alpha.is_finite() || alpha < 0.0 {
        return Err(TrainError::BadAlpha(alpha));
    }
    let targets: Vec<String> = schema.target_types().map(|t| t.name.clone()).collect();
    let mut model = CoOccurModel {
        totals: targets
            .iter()
            .map(|t| (t.clone(), vec![0; schema.values(t).unwrap().len()]))
            .collect(),
        schema,
        alpha,
        pooling: Pooling::Additive,
        instances: instances.len(),
        counts: BTreeMap::new(),
    };
    for inst in instances {
        let mut inst = inst.clone();
        inst.normalize_and_validate(&model.schema)
            .map_err(|message| TrainError::Instance {
                id: inst.id.clone(),
                message,
            })?;
        let assignments: Vec<FeatureAssignment> = inst.assignments().collect();
        for target in &targets {
            let Some(w) = inst.single_value(target) else {
                continue;
            };
            let wi = model.schema.value_position(target, w).expect("validated");
            let width = model.schema.values(target).unwrap().len();
            model.totals.get_mut(target).unwrap()[wi] += 1;
            for a in assignments.iter().filter(|a| &a.feature != target) {
                let row = model
                    .counts
                    .entry(a.clone())
                    .or_default()
                    .entry(target.clone())
                    .or_insert_with(|| vec![0; width]);
                row[wi] += 1;
            }
        }
    }
    Ok(model)
}

impl CoOccurModel {
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn pooling(&self) -> Pooling {
        self.pooling
    }

    pub fn with_pooling(mut self, pooling: Pooling) -> Self {
        self.pooling = pooling;
        self
    }

    pub fn instance_count(&self) -> usize {
        self.instances
    }

    /// Number of stored (assignment, target) count rows.
    pub fn row_count(&self) -> usize {
        self.counts.values().map(BTreeMap::len).sum()
    }

    pub fn schema_arc(&self) -> Arc<FeatureSchema> {
        Arc::clone(&self.schema)
    }

    pub fn count(&self, a: &FeatureAssignment, target: &str, value: &str) -> u64 {
        let Some(i) = self.schema.value_position(target, value) else {
            return 0;
        };
        self.counts
            .get(a)
            .and_then(|rows| rows.get(target))
            .map_or(0, |row| row[i])
    }

    fn row(&self, a: &FeatureAssignment, target: &str) -> Option<&[u64]> {
        self.counts.get(a)?.get(target).map(Vec::as_slice)
    }

    /// Sum of every assignment's counts for `target`.
    fn marginal(&self, target: &str, width: usize) -> Vec<f64> {
        let mut out = vec![0.0; width];
        for rows in self.counts.values() {
            if let Some(row) = rows.get(target) {
                for (o, c) in out.iter_mut().zip(row) {
                    *o += *c as f64;
                }
            }
        }
        out
    }

    /// Scores each candidate of `target` from the stored counts.
    pub fn cooccur_predict(&self, evidence: &EvidenceSet, target: &str) -> Result<Distribution, BackendError> {
        check_request(&self.schema, evidence, target)?;
        let width = self.schema.values(target).unwrap().len();
        // canonical order keeps floating-point sums independent of evidence order
        let mut sorted = evidence.as_slice().to_vec();
        sorted.sort();
        let weights = match self.pooling {
            Pooling::Additive => self.additive_scores(&sorted, target, width),
            Pooling::Product => self.product_scores(&sorted, target, width),
        };
        Distribution::for_target(&self.schema, target, &weights)
    }

    fn additive_scores(&self, evidence: &[FeatureAssignment], target: &str, width: usize) -> Vec<f64> {
        let mut scores = if evidence.is_empty() {
            self.marginal(target, width)
        } else {
            let mut acc = vec![0.0; width];
            for a in evidence {
                if let Some(row) = self.row(a, target) {
                    for (s, c) in acc.iter_mut().zip(row) {
                        *s += *c as f64;
                    }
                }
            }
            acc
        };
        for s in &mut scores {
            *s += self.alpha;
        }
        scores
    }

    fn product_scores(&self, evidence: &[FeatureAssignment], target: &str, width: usize) -> Vec<f64> {
        let totals = &self.totals[target];
        let grand: f64 = totals.iter().map(|&t| t as f64).sum();
        let mut logs: Vec<f64> = totals
            .iter()
            .map(|&t| ln_ratio(t as f64 + self.alpha, grand + self.alpha * width as f64))
            .collect();
        for a in evidence {
            let card = self.schema.values(&a.feature).map_or(1, <[String]>::len) as f64;
            let row = self.row(a, target);
            for (w, l) in logs.iter_mut().enumerate() {
                let c = row.map_or(0, |r| r[w]) as f64;
                *l += ln_ratio(c + self.alpha, totals[w] as f64 + self.alpha * card);
            }
        }
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return vec![0.0; width];
        }
        logs.iter().map(|l| (l - max).exp()).collect()
    }

    pub fn to_document(&self) -> ModelDocument {
        let targets = self
            .totals
            .iter()
            .map(|(t, totals)| {
                (
                    t.clone(),
                    TargetTable {
                        candidates: self.schema.values(t).unwrap().to_vec(),
                        totals: totals.clone(),
                    },
                )
            })
            .collect();
        let rows = self
            .counts
            .iter()
            .flat_map(|(a, per_target)| {
                per_target.iter().map(move |(t, counts)| CountRow {
                    feature: a.feature.clone(),
                    value: a.value.clone(),
                    target: t.clone(),
                    counts: counts.clone(),
                })
            })
            .collect();
        ModelDocument {
            format: MODEL_FORMAT.to_string(),
            alpha: self.alpha,
            pooling: self.pooling,
            instances: self.instances,
            targets,
            rows,
        }
    }

    pub fn from_document(schema: Arc<FeatureSchema>, doc: ModelDocument) -> Result<Self, ModelFileError> {
        if doc.format != MODEL_FORMAT {
            return Err(ModelFileError::Format(doc.format));
        }
        if !doc.alpha.is_finite() || doc.alpha < 0.0 {
            return Err(ModelFileError::Schema(format!("bad alpha {}", doc.alpha)));
        }
        let mut totals = BTreeMap::new();
        for t in schema.target_types() {
            let table = doc
                .targets
                .get(&t.name)
                .ok_or_else(|| ModelFileError::Schema(format!("missing target table `{}`", t.name)))?;
            if table.candidates != schema.values(&t.name).unwrap() || table.totals.len() != table.candidates.len() {
                return Err(ModelFileError::Schema(format!(
                    "candidate list for `{}` differs from schema",
                    t.name
                )));
            }
            totals.insert(t.name.clone(), table.totals.clone());
        }
        let mut counts: BTreeMap<FeatureAssignment, BTreeMap<String, Vec<u64>>> = BTreeMap::new();
        for row in doc.rows {
            let a = FeatureAssignment::new(row.feature, row.value);
            schema.validate(&a).map_err(|e| ModelFileError::Schema(e.to_string()))?;
            let width = totals
                .get(&row.target)
                .map(Vec::len)
                .ok_or_else(|| ModelFileError::Schema(format!("unknown target `{}`", row.target)))?;
            if row.counts.len() != width {
                return Err(ModelFileError::Schema(format!(
                    "row {a} -> {} has {} counts, expected {width}",
                    row.target,
                    row.counts.len()
                )));
            }
            counts.entry(a).or_default().insert(row.target, row.counts);
        }
        Ok(Self {
            schema,
            alpha: doc.alpha,
            pooling: doc.pooling,
            instances: doc.instances,
            counts,
            totals,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelFileError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(&self.to_document())?;
        std::fs::write(path, text).map_err(|source| ModelFileError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(schema: Arc<FeatureSchema>, path: impl AsRef<Path>) -> Result<Self, ModelFileError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ModelFileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_document(schema, serde_json::from_str(&text)?)
    }
}

fn ln_ratio(num: f64, den: f64) -> f64 {
    if num <= 0.0 || den <= 0.0 {
        f64::NEG_INFINITY
    } else {
        (num / den).ln()
    }
}

impl Backend for CoOccurModel {
    fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    fn predict(&self, evidence: &EvidenceSet, target: &str) -> Result<Distribution, BackendError> {
        self.cooccur_predict(evidence, target)
    }
}

/// Persisted form of a [`CoOccurModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format: String,
    pub alpha: f64,
    #[serde(default)]
    pub pooling: Pooling,
    pub instances: usize,
    pub targets: BTreeMap<String, TargetTable>,
    pub rows: Vec<CountRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetTable {
    pub candidates: Vec<String>,
    pub totals: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountRow {
    pub feature: String,
    pub value: String,
    pub target: String,
    pub counts: Vec<u64>,
}
