//! Feature vocabulary: which feature types exist, which values each admits,
//! and which types may be asked about in a clarification question.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The reference vocabulary shipped with the crate.
pub const REFERENCE_SCHEMA: &str = include_str!("../data/schema.json");

pub const ROOM: &str = "room";
pub const LOCATION: &str = "location";

/// Annotation sentinels: the feature was judged absent or unresolved.
pub const SENTINEL_NONE: &str = "none";
pub const SENTINEL_NA: &str = "n_a";

/// True for `none`, `n_a` and the `n/a` spelling (after normalization).
pub fn is_sentinel(token: &str) -> bool {
    matches!(token, SENTINEL_NONE | SENTINEL_NA | "n/a")
}

/// Lowercases, trims and joins internal whitespace runs with `_`.
pub fn normalize_token(raw: &str) -> String {
    raw.split_whitespace()
        .map(|part| part.to_lowercase())
        .collect::<Vec<_>>()
        .join("_")
}

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("cannot read schema file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema entry {index}: field `{field}` {message}")]
    Field {
        index: usize,
        field: &'static str,
        message: String,
    },
    #[error("duplicate feature type `{0}`")]
    DuplicateType(String),
    #[error("duplicate value `{value}` under feature type `{feature}`")]
    DuplicateValue { feature: String, value: String },
}

/// A rejected (type, value) pair.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("unknown feature type `{0}`")]
    UnknownType(String),
    #[error("`{value}` is not a value of feature type `{feature}`")]
    UnknownValue { feature: String, value: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureType {
    pub name: String,
    pub queryable: bool,
    pub multi_valued: bool,
}

/// A single `(type, value)` pair. Serialized as a two-element array.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(from = "(String, String)", into = "(String, String)")]
pub struct FeatureAssignment {
    pub feature: String,
    pub value: String,
}

impl FeatureAssignment {
    pub fn new(feature: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            feature: feature.into(),
            value: value.into(),
        }
    }

    /// Same pair with both tokens normalized.
    pub fn normalized(feature: &str, value: &str) -> Self {
        Self::new(normalize_token(feature), normalize_token(value))
    }
}

impl From<(String, String)> for FeatureAssignment {
    fn from((feature, value): (String, String)) -> Self {
        Self { feature, value }
    }
}

impl From<FeatureAssignment> for (String, String) {
    fn from(a: FeatureAssignment) -> Self {
        (a.feature, a.value)
    }
}

impl fmt::Display for FeatureAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.feature, self.value)
    }
}

#[derive(Debug, Deserialize)]
struct RawSchema {
    feature_types: Vec<RawFeatureType>,
}

#[derive(Debug, Deserialize, Serialize)]
struct RawFeatureType {
    name: String,
    queryable: bool,
    multi_valued: bool,
    values: Vec<String>,
}

#[derive(Debug, Serialize)]
struct RawSchemaOut<'a> {
    feature_types: Vec<RawFeatureTypeOut<'a>>,
}

#[derive(Debug, Serialize)]
struct RawFeatureTypeOut<'a> {
    name: &'a str,
    queryable: bool,
    multi_valued: bool,
    values: &'a [String],
}

/// Ordered feature types with their ordered value lists. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    types: Vec<FeatureType>,
    values: Vec<Vec<String>>,
    type_index: HashMap<String, usize>,
    value_index: Vec<HashMap<String, usize>>,
}

impl FeatureSchema {
    /// Builds a schema from `(type, values)` entries, normalizing every token.
    pub fn new(entries: Vec<(FeatureType, Vec<String>)>) -> Result<Self, SchemaError> {
        let mut types = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        let mut type_index = HashMap::new();
        let mut value_index = Vec::with_capacity(entries.len());
        for (index, (mut ft, vals)) in entries.into_iter().enumerate() {
            ft.name = normalize_token(&ft.name);
            if ft.name.is_empty() {
                return Err(SchemaError::Field {
                    index,
                    field: "name",
                    message: "is empty".into(),
                });
            }
            if type_index.insert(ft.name.clone(), index).is_some() {
                return Err(SchemaError::DuplicateType(ft.name));
            }
            let mut seen = HashMap::new();
            let mut normalized = Vec::with_capacity(vals.len());
            for raw in vals {
                let v = normalize_token(&raw);
                if v.is_empty() {
                    return Err(SchemaError::Field {
                        index,
                        field: "values",
                        message: "contains an empty token".into(),
                    });
                }
                if seen.insert(v.clone(), normalized.len()).is_some() {
                    return Err(SchemaError::DuplicateValue {
                        feature: ft.name.clone(),
                        value: v,
                    });
                }
                normalized.push(v);
            }
            if normalized.is_empty() {
                return Err(SchemaError::Field {
                    index,
                    field: "values",
                    message: "is empty".into(),
                });
            }
            types.push(ft);
            values.push(normalized);
            value_index.push(seen);
        }
        Ok(Self {
            types,
            values,
            type_index,
            value_index,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self, SchemaError> {
        let raw: RawSchema = serde_json::from_str(text).map_err(|e| SchemaError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::new(
            raw.feature_types
                .into_iter()
                .map(|t| {
                    (
                        FeatureType {
                            name: t.name,
                            queryable: t.queryable,
                            multi_valued: t.multi_valued,
                        },
                        t.values,
                    )
                })
                .collect(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SchemaError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| SchemaError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    /// The bundled household vocabulary.
    pub fn reference() -> Self {
        Self::from_json_str(REFERENCE_SCHEMA).expect("bundled schema is valid")
    }

    /// Canonical JSON form; `from_json_str(to_json())` reproduces `self`.
    pub fn to_json(&self) -> String {
        let doc = RawSchemaOut {
            feature_types: self
                .types
                .iter()
                .zip(&self.values)
                .map(|(t, v)| RawFeatureTypeOut {
                    name: &t.name,
                    queryable: t.queryable,
                    multi_valued: t.multi_valued,
                    values: v,
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("schema serializes")
    }

    pub fn types(&self) -> &[FeatureType] {
        &self.types
    }

    pub fn feature_type(&self, name: &str) -> Option<&FeatureType> {
        self.type_index.get(name).map(|&i| &self.types[i])
    }

    /// Position of a type in schema order.
    pub fn type_position(&self, name: &str) -> Option<usize> {
        self.type_index.get(name).copied()
    }

    pub fn values(&self, name: &str) -> Option<&[String]> {
        self.type_index.get(name).map(|&i| self.values[i].as_slice())
    }

    pub fn value_position(&self, feature: &str, value: &str) -> Option<usize> {
        let &i = self.type_index.get(feature)?;
        self.value_index[i].get(value).copied()
    }

    pub fn is_queryable(&self, name: &str) -> bool {
        self.feature_type(name).is_some_and(|t| t.queryable)
    }

    pub fn is_multi_valued(&self, name: &str) -> bool {
        self.feature_type(name).is_some_and(|t| t.multi_valued)
    }

    /// Queryable types in schema order.
    pub fn queryable_types(&self) -> impl Iterator<Item = &FeatureType> {
        self.types.iter().filter(|t| t.queryable)
    }

    /// Non-queryable types in schema order (the prediction targets).
    pub fn target_types(&self) -> impl Iterator<Item = &FeatureType> {
        self.types.iter().filter(|t| !t.queryable)
    }

    pub fn validate(&self, a: &FeatureAssignment) -> Result<(), Violation> {
        let &i = self
            .type_index
            .get(&a.feature)
            .ok_or_else(|| Violation::UnknownType(a.feature.clone()))?;
        if self.value_index[i].contains_key(&a.value) {
            Ok(())
        } else {
            Err(Violation::UnknownValue {
                feature: a.feature.clone(),
                value: a.value.clone(),
            })
        }
    }

    /// Total number of admissible `(type, value)` pairs.
    pub fn pair_count(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }
}

/// Validates one assignment against the schema.
pub fn validate_assignment(schema: &FeatureSchema, a: &FeatureAssignment) -> Result<(), Violation> {
    schema.validate(a)
}
