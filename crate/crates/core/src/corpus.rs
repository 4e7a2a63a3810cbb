//! Dataset ingestion: training instances, annotator labels, and object
//! descriptions. Annotator labels are merged by strict majority into an
//! [`ObjectFeaturesDB`], which answers clarification questions on behalf of a
//! simulated user and supplies ground truth for scoring.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::ObjectInstance;
use crate::controller::Answer;
use crate::parsing::{ExpressionRecord, Lexicon};
use crate::schema::{normalize_token, FeatureAssignment, FeatureSchema, LOCATION, ROOM, SENTINEL_NA, SENTINEL_NONE};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot open {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Line { path: String, line: usize, message: String },
    #[error("object `{object}`, annotator `{annotator}`: {message}")]
    Annotation {
        object: String,
        annotator: String,
        message: String,
    },
    #[error("object `{object}` has no majority {feature} (ground truth required)")]
    MissingGroundTruth { object: String, feature: String },
    #[error("object `{object}` resolves to several {feature} values: {values:?}")]
    MultiValuedTarget {
        object: String,
        feature: String,
        values: Vec<String>,
    },
    #[error("unknown object `{0}`")]
    UnknownObject(String),
    #[error("unknown feature type `{0}`")]
    UnknownFeature(String),
}

/// One annotator's labels for one object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub object_id: String,
    pub annotator_id: String,
    pub features: BTreeMap<String, Vec<String>>,
}

/// Majority outcome for one feature type of one object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    /// Values chosen by a strict majority, in schema order.
    Values(Vec<String>),
    None,
    NotApplicable,
}

/// What the simulated user says when asked about a feature.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleAnswer {
    Value(String),
    NoneNa,
}

impl From<OracleAnswer> for Answer {
    fn from(a: OracleAnswer) -> Self {
        match a {
            OracleAnswer::Value(v) => Answer::Value(v),
            OracleAnswer::NoneNa => Answer::Skip,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub features: BTreeMap<String, Resolution>,
    pub room: String,
    pub location: String,
    pub annotators: usize,
}

#[derive(Debug, Clone)]
pub struct ObjectFeaturesDB {
    schema: Arc<FeatureSchema>,
    objects: BTreeMap<String, ObjectRecord>,
}

fn sentinel_token(token: &str) -> Option<&'static str> {
    match token {
        "none" => Some(SENTINEL_NONE),
        "n_a" | "n/a" | "na" => Some(SENTINEL_NA),
        _ => None,
    }
}

/// Merges annotations per object: a value survives when more than half of
/// that object's annotators chose it. A type with no survivor resolves to a
/// sentinel (`n_a` if that sentinel itself won a majority, otherwise `none`).
pub fn build_feature_db(
    schema: Arc<FeatureSchema>,
    annotations: &[AnnotationRecord],
) -> Result<ObjectFeaturesDB, CorpusError> {
    let mut by_object: BTreeMap<&str, Vec<&AnnotationRecord>> = BTreeMap::new();
    for a in annotations {
        by_object.entry(a.object_id.as_str()).or_default().push(a);
    }
    let mut objects = BTreeMap::new();
    for (object, records) in by_object {
        let n = records.len();
        let mut seen_annotators = BTreeSet::new();
        // feature -> token -> votes
        let mut votes: HashMap<String, HashMap<String, usize>> = HashMap::new();
        for r in &records {
            let err = |message: String| CorpusError::Annotation {
                object: object.to_string(),
                annotator: r.annotator_id.clone(),
                message,
            };
            if !seen_annotators.insert(r.annotator_id.as_str()) {
                return Err(err("annotator appears twice for this object".into()));
            }
            for (raw_feature, raw_values) in &r.features {
                let feature = normalize_token(raw_feature);
                if schema.feature_type(&feature).is_none() {
                    return Err(err(format!("unknown feature type `{feature}`")));
                }
                let mut mine = BTreeSet::new();
                for raw in raw_values {
                    let token = normalize_token(raw);
                    let token = match sentinel_token(&token) {
                        Some(s) => s.to_string(),
                        None => {
                            schema
                                .validate(&FeatureAssignment::new(feature.as_str(), token.as_str()))
                                .map_err(|e| err(e.to_string()))?;
                            token
                        }
                    };
                    mine.insert(token);
                }
                let tally = votes.entry(feature).or_default();
                for token in mine {
                    *tally.entry(token).or_default() += 1;
                }
            }
        }
        let mut features = BTreeMap::new();
        for t in schema.types() {
            let tally = votes.remove(&t.name).unwrap_or_default();
            let majority = |token: &str| tally.get(token).is_some_and(|&c| 2 * c > n);
            let survivors: Vec<String> = schema
                .values(&t.name)
                .unwrap()
                .iter()
                .filter(|v| majority(v))
                .cloned()
                .collect();
            let res = if !survivors.is_empty() {
                Resolution::Values(survivors)
            } else if majority(SENTINEL_NA) {
                Resolution::NotApplicable
            } else {
                Resolution::None
            };
            features.insert(t.name.clone(), res);
        }
        let target = |feature: &str| -> Result<String, CorpusError> {
            match &features[feature] {
                Resolution::Values(v) if v.len() == 1 => Ok(v[0].clone()),
                Resolution::Values(v) => Err(CorpusError::MultiValuedTarget {
                    object: object.to_string(),
                    feature: feature.to_string(),
                    values: v.clone(),
                }),
                _ => Err(CorpusError::MissingGroundTruth {
                    object: object.to_string(),
                    feature: feature.to_string(),
                }),
            }
        };
        let room = target(ROOM)?;
        let location = target(LOCATION)?;
        objects.insert(
            object.to_string(),
            ObjectRecord {
                features,
                room,
                location,
                annotators: n,
            },
        );
    }
    Ok(ObjectFeaturesDB { schema, objects })
}

impl ObjectFeaturesDB {
    /// Treats each instance as an object labelled by a single annotator.
    pub fn from_instances(schema: Arc<FeatureSchema>, instances: &[ObjectInstance]) -> Result<Self, CorpusError> {
        let annotations: Vec<AnnotationRecord> = instances
            .iter()
            .map(|i| AnnotationRecord {
                object_id: i.id.clone(),
                annotator_id: "instance".into(),
                features: i.features.clone(),
            })
            .collect();
        build_feature_db(schema, &annotations)
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn contains(&self, object_id: &str) -> bool {
        self.objects.contains_key(object_id)
    }

    pub fn object(&self, object_id: &str) -> Result<&ObjectRecord, CorpusError> {
        self.objects
            .get(object_id)
            .ok_or_else(|| CorpusError::UnknownObject(object_id.to_string()))
    }

    pub fn object_ids(&self) -> impl Iterator<Item = &str> {
        self.objects.keys().map(String::as_str)
    }

    /// The simulated user's reply: the first majority value in schema order,
    /// or the sentinel.
    pub fn oracle_answer(&self, object_id: &str, feature: &str) -> Result<OracleAnswer, CorpusError> {
        let record = self.object(object_id)?;
        match record.features.get(feature) {
            Some(Resolution::Values(v)) => Ok(OracleAnswer::Value(v[0].clone())),
            Some(_) => Ok(OracleAnswer::NoneNa),
            None => Err(CorpusError::UnknownFeature(feature.to_string())),
        }
    }

    pub fn ground_truth(&self, object_id: &str) -> Result<(&str, &str), CorpusError> {
        let r = self.object(object_id)?;
        Ok((&r.room, &r.location))
    }
}

/// Reads one JSON document per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, CorpusError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: display.clone(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CorpusError::Line {
            path: display.clone(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<(), CorpusError> {
    let path = path.as_ref();
    let io = |source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for item in items {
        serde_json::to_writer(&mut f, item).expect("serializable");
        f.write_all(b"\n").map_err(io)?;
    }
    f.flush().map_err(io)
}

pub fn load_instances(path: impl AsRef<Path>) -> Result<Vec<ObjectInstance>, CorpusError> {
    read_jsonl(path)
}

pub fn load_annotations(path: impl AsRef<Path>) -> Result<Vec<AnnotationRecord>, CorpusError> {
    read_jsonl(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiscardReason {
    /// The description already names the room or location.
    MentionsTarget,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExpressionSet {
    pub kept: Vec<ExpressionRecord>,
    pub discarded: Vec<(ExpressionRecord, DiscardReason)>,
    /// Records dropped for blank text.
    pub blank: usize,
}

/// Filters raw records: blank text is dropped, descriptions that mention a
/// room or location are set aside.
pub fn filter_expressions(records: Vec<ExpressionRecord>, lexicon: &Lexicon) -> ExpressionSet {
    let mut set = ExpressionSet::default();
    for r in records {
        if r.text.trim().is_empty() {
            set.blank += 1;
        } else if lexicon.mentions_target(&r.text) {
            set.discarded.push((r, DiscardReason::MentionsTarget));
        } else {
            set.kept.push(r);
        }
    }
    set
}

pub fn load_expressions(path: impl AsRef<Path>, lexicon: &Lexicon) -> Result<ExpressionSet, CorpusError> {
    Ok(filter_expressions(read_jsonl(path)?, lexicon))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ann(object: &str, annotator: &str, f: &[(&str, &[&str])]) -> AnnotationRecord {
        AnnotationRecord {
            object_id: object.into(),
            annotator_id: annotator.into(),
            features: f
                .iter()
                .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
                .collect(),
        }
    }

    /// Three annotators on a fork; colour, fullness and material vote
    /// patterns from the examples.
    fn fixture() -> Vec<AnnotationRecord> {
        vec![
            ann(
                "fork",
                "a1",
                &[
                    ("room", &["kitchen"]),
                    ("location", &["sink"]),
                    ("material", &["metal"]),
                    ("colour", &["red"]),
                    ("fullness", &["full"]),
                    ("cleanliness", &["dirty"]),
                ],
            ),
            ann(
                "fork",
                "a2",
                &[
                    ("room", &["kitchen"]),
                    ("location", &["sink"]),
                    ("material", &["metal"]),
                    ("colour", &["red"]),
                    ("fullness", &["empty"]),
                    ("cleanliness", &["n/a"]),
                ],
            ),
            ann(
                "fork",
                "a3",
                &[
                    ("room", &["dining_room"]),
                    ("location", &["sink"]),
                    ("material", &["metal"]),
                    ("colour", &["blue"]),
                    ("fullness", &["none"]),
                    ("cleanliness", &["N/A"]),
                ],
            ),
        ]
    }

    fn db() -> ObjectFeaturesDB {
        build_feature_db(Arc::new(FeatureSchema::reference()), &fixture()).unwrap()
    }

    #[test]
    fn majority_rules() {
        let db = db();
        let r = db.object("fork").unwrap();
        assert_eq!(r.features["colour"], Resolution::Values(vec!["red".into()]));
        assert_eq!(r.features["fullness"], Resolution::None);
        assert_eq!(r.features["material"], Resolution::Values(vec!["metal".into()]));
        assert_eq!(r.features["cleanliness"], Resolution::NotApplicable);
        assert_eq!(r.features["reference_object"], Resolution::None);
        assert_eq!(db.ground_truth("fork").unwrap(), ("kitchen", "sink"));
    }

    #[test]
    fn oracle_answers() {
        let db = db();
        assert_eq!(
            db.oracle_answer("fork", "material").unwrap(),
            OracleAnswer::Value("metal".into())
        );
        assert_eq!(db.oracle_answer("fork", "fullness").unwrap(), OracleAnswer::NoneNa);
        assert_eq!(Answer::from(OracleAnswer::NoneNa), Answer::Skip);
        assert!(matches!(
            db.oracle_answer("spoon", "material"),
            Err(CorpusError::UnknownObject(_))
        ));
        assert!(matches!(db.ground_truth("spoon"), Err(CorpusError::UnknownObject(_))));
    }

    #[test]
    fn multi_valued_oracle_uses_schema_order() {
        let recs = vec![ann(
            "vase",
            "a1",
            &[
                ("room", &["office"]),
                ("location", &["shelf"]),
                ("colour", &["white", "yellow"]),
            ],
        )];
        let db = build_feature_db(Arc::new(FeatureSchema::reference()), &recs).unwrap();
        assert_eq!(
            db.object("vase").unwrap().features["colour"],
            Resolution::Values(vec!["yellow".into(), "white".into()])
        );
        assert_eq!(
            db.oracle_answer("vase", "colour").unwrap(),
            OracleAnswer::Value("yellow".into())
        );
    }

    #[test]
    fn missing_or_multiple_ground_truth_is_fatal() {
        let schema = Arc::new(FeatureSchema::reference());
        let no_loc = vec![ann("x", "a1", &[("room", &["kitchen"])])];
        assert!(matches!(
            build_feature_db(schema.clone(), &no_loc),
            Err(CorpusError::MissingGroundTruth { feature, .. }) if feature == "location"
        ));
        let two_rooms = vec![ann(
            "x",
            "a1",
            &[("room", &["kitchen", "garage"]), ("location", &["sink"])],
        )];
        assert!(matches!(
            build_feature_db(schema.clone(), &two_rooms),
            Err(CorpusError::MultiValuedTarget { .. })
        ));
        let split = vec![
            ann("x", "a1", &[("room", &["kitchen"]), ("location", &["sink"])]),
            ann("x", "a2", &[("room", &["garage"]), ("location", &["sink"])]),
        ];
        assert!(matches!(
            build_feature_db(schema, &split),
            Err(CorpusError::MissingGroundTruth { feature, .. }) if feature == "room"
        ));
    }

    #[test]
    fn invalid_labels_rejected() {
        let schema = Arc::new(FeatureSchema::reference());
        let bad = vec![ann(
            "x",
            "a1",
            &[("room", &["kitchen"]), ("location", &["sink"]), ("colour", &["plaid"])],
        )];
        assert!(matches!(
            build_feature_db(schema.clone(), &bad),
            Err(CorpusError::Annotation { .. })
        ));
        let dup = vec![
            ann("x", "a1", &[("room", &["kitchen"]), ("location", &["sink"])]),
            ann("x", "a1", &[("room", &["kitchen"]), ("location", &["sink"])]),
        ];
        assert!(matches!(
            build_feature_db(schema, &dup),
            Err(CorpusError::Annotation { .. })
        ));
    }

    #[test]
    fn single_annotator_is_verbatim() {
        let recs = vec![ann(
            "cup",
            "solo",
            &[
                ("room", &["kitchen"]),
                ("location", &["counter"]),
                ("cleanliness", &["clean"]),
                ("fullness", &["none"]),
            ],
        )];
        let db = build_feature_db(Arc::new(FeatureSchema::reference()), &recs).unwrap();
        let r = db.object("cup").unwrap();
        assert_eq!(r.features["cleanliness"], Resolution::Values(vec!["clean".into()]));
        assert_eq!(r.features["fullness"], Resolution::None);
    }

    #[test]
    fn annotator_order_is_irrelevant() {
        let mut recs = fixture();
        let a = build_feature_db(Arc::new(FeatureSchema::reference()), &recs).unwrap();
        recs.reverse();
        let b = build_feature_db(Arc::new(FeatureSchema::reference()), &recs).unwrap();
        assert_eq!(a.objects, b.objects);
    }

    #[test]
    fn expression_filtering() {
        let lex = Lexicon::reference(Arc::new(FeatureSchema::reference())).unwrap();
        let rec = |t: &str| ExpressionRecord {
            object_id: "fork".into(),
            text: t.into(),
        };
        let set = filter_expressions(
            vec![
                rec("metal fork next to the spoon"),
                rec("it is in the kitchen"),
                rec("   "),
            ],
            &lex,
        );
        assert_eq!(set.kept, vec![rec("metal fork next to the spoon")]);
        assert_eq!(
            set.discarded,
            vec![(rec("it is in the kitchen"), DiscardReason::MentionsTarget)]
        );
        assert_eq!(set.blank, 1);
    }

    #[test]
    fn jsonl_errors_have_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        std::fs::write(&p, "{\"object_id\":\"a\",\"text\":\"cup\"}\n\n{\"object_id\": 3}\n").unwrap();
        match read_jsonl::<ExpressionRecord>(&p) {
            Err(CorpusError::Line { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
