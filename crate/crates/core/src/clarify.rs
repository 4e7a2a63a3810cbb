//! Confidence gating and information-gain question selection.
//!
//! All entropies are in nats. The expected entropy after asking about a
//! feature weights every schema value of that feature equally.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendError, Distribution, EvidenceSet};
use crate::schema::FeatureAssignment;

/// Gains at or below this are treated as zero.
pub const GAIN_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClarifyError {
    #[error("feature type `{0}` is not queryable")]
    NotQueryable(String),
    #[error("feature type `{0}` is already known")]
    AlreadyKnown(String),
    #[error("backend failed{}: {source}", .value.as_ref().map(|v| format!(" for candidate answer `{v}`")).unwrap_or_default())]
    Backend {
        value: Option<String>,
        #[source]
        source: BackendError,
    },
}

impl From<BackendError> for ClarifyError {
    fn from(source: BackendError) -> Self {
        ClarifyError::Backend { value: None, source }
    }
}

/// Highest probability in the distribution.
pub fn confidence(d: &Distribution) -> f64 {
    d.probabilities().iter().copied().fold(0.0, f64::max)
}

/// Shannon entropy in nats, with `0 ln 0 = 0`.
pub fn entropy(d: &Distribution) -> f64 {
    entropy_of(d.probabilities())
}

pub fn entropy_of(probabilities: &[f64]) -> f64 {
    -probabilities
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Entropy in an arbitrary logarithm base.
pub fn entropy_in_base(d: &Distribution, base: f64) -> f64 {
    entropy(d) / base.ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainEstimate {
    pub feature_type: String,
    /// Expected entropy reduction in nats.
    pub gain: f64,
    pub base_entropy: f64,
    pub per_value_entropies: Vec<(String, f64)>,
}

impl GainEstimate {
    /// Gain expressed in another logarithm base.
    pub fn gain_in_base(&self, base: f64) -> f64 {
        self.gain / base.ln()
    }
}

fn check_candidate(backend: &dyn Backend, evidence: &EvidenceSet, feature: &str) -> Result<(), ClarifyError> {
    if !backend.schema().is_queryable(feature) {
        return Err(ClarifyError::NotQueryable(feature.to_string()));
    }
    if evidence.contains_type(feature) {
        return Err(ClarifyError::AlreadyKnown(feature.to_string()));
    }
    Ok(())
}

fn gain_against(
    backend: &dyn Backend,
    evidence: &EvidenceSet,
    target: &str,
    feature: &str,
    base_entropy: f64,
) -> Result<GainEstimate, ClarifyError> {
    let values = backend
        .schema()
        .values(feature)
        .ok_or_else(|| ClarifyError::NotQueryable(feature.to_string()))?;
    let mut per_value_entropies = Vec::with_capacity(values.len());
    for v in values {
        let probe = evidence.with(FeatureAssignment::new(feature, v.as_str()));
        let d = backend
            .predict(&probe, target)
            .map_err(|source| ClarifyError::Backend {
                value: Some(v.clone()),
                source,
            })?;
        per_value_entropies.push((v.clone(), entropy(&d)));
    }
    let mean = per_value_entropies.iter().map(|(_, h)| h).sum::<f64>() / values.len() as f64;
    Ok(GainEstimate {
        feature_type: feature.to_string(),
        gain: base_entropy - mean,
        base_entropy,
        per_value_entropies,
    })
}

/// Expected reduction in target entropy from learning `feature`'s value.
pub fn expected_gain(
    backend: &dyn Backend,
    evidence: &EvidenceSet,
    target: &str,
    feature: &str,
) -> Result<GainEstimate, ClarifyError> {
    check_candidate(backend, evidence, feature)?;
    let base = backend.predict(evidence, target)?;
    gain_against(backend, evidence, target, feature, entropy(&base))
}

/// Feature types eligible for a question: queryable, not in the evidence and
/// not excluded. Schema order.
pub fn candidate_features(backend: &dyn Backend, evidence: &EvidenceSet, excluded: &BTreeSet<String>) -> Vec<String> {
    backend
        .schema()
        .queryable_types()
        .filter(|t| !excluded.contains(&t.name) && !evidence.contains_type(&t.name))
        .map(|t| t.name.clone())
        .collect()
}

/// Gain estimates for every eligible feature, in schema order.
pub fn rank_questions(
    backend: &dyn Backend,
    evidence: &EvidenceSet,
    target: &str,
    excluded: &BTreeSet<String>,
) -> Result<Vec<GainEstimate>, ClarifyError> {
    let base = entropy(&backend.predict(evidence, target)?);
    candidate_features(backend, evidence, excluded)
        .iter()
        .map(|f| gain_against(backend, evidence, target, f, base))
        .collect()
}

/// The eligible feature with the largest positive gain, or `None` when no
/// feature would reduce the entropy. Ties go to the earlier schema type.
pub fn select_question(
    backend: &dyn Backend,
    evidence: &EvidenceSet,
    target: &str,
    excluded: &BTreeSet<String>,
) -> Result<Option<GainEstimate>, ClarifyError> {
    let mut best: Option<GainEstimate> = None;
    for est in rank_questions(backend, evidence, target, excluded)? {
        if est.gain <= GAIN_EPSILON {
            continue;
        }
        if best.as_ref().is_none_or(|b| est.gain > b.gain) {
            best = Some(est);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::TableBackend;
    use crate::schema::FeatureSchema;
    use std::f64::consts::LN_2;
    use std::sync::Arc;

    fn dist(p: Vec<f64>) -> Distribution {
        let c = (0..p.len()).map(|i| format!("v{i}")).collect();
        Distribution::new("room", c, p).unwrap()
    }

    #[test]
    fn confidence_examples() {
        assert_eq!(confidence(&dist(vec![0.7, 0.2, 0.1])), 0.7);
        assert_eq!(confidence(&dist(vec![0.0, 1.0, 0.0])), 1.0);
        assert_eq!(confidence(&dist(vec![0.125; 8])), 0.125);
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy(&dist(vec![1.0 / 7.0; 7])) - 7f64.ln()).abs() < 1e-12);
        assert!((entropy(&dist(vec![1.0 / 7.0; 7])) - 1.945910).abs() < 1e-6);
        assert_eq!(entropy(&dist(vec![0.0, 1.0, 0.0])), 0.0);
        let mut half = vec![0.0; 7];
        half[0] = 0.5;
        half[1] = 0.5;
        assert!((entropy(&dist(half)) - LN_2).abs() < 1e-15);
        assert!((entropy_in_base(&dist(vec![0.5, 0.5]), 2.0) - 1.0).abs() < 1e-15);
    }

    /// Two-room world over {kitchen, bathroom}: prior 50/50, cleanliness
    /// decides it, fullness is uninformative.
    fn two_room_table() -> TableBackend {
        let schema = Arc::new(FeatureSchema::reference());
        let rooms = schema.values("room").unwrap().to_vec();
        let at = |pairs: &[(&str, f64)]| {
            let mut p = vec![0.0; rooms.len()];
            for (name, v) in pairs {
                p[rooms.iter().position(|r| r == name).unwrap()] = *v;
            }
            p
        };
        let even = at(&[("kitchen", 0.5), ("bathroom", 0.5)]);
        let mut t = TableBackend::new(schema);
        t.insert(&[], "room", even.clone()).unwrap();
        t.insert(
            &[FeatureAssignment::new("cleanliness", "clean")],
            "room",
            at(&[("kitchen", 1.0)]),
        )
        .unwrap();
        t.insert(
            &[FeatureAssignment::new("cleanliness", "dirty")],
            "room",
            at(&[("bathroom", 1.0)]),
        )
        .unwrap();
        for v in ["full", "empty", "half"] {
            t.insert(&[FeatureAssignment::new("fullness", v)], "room", even.clone())
                .unwrap();
        }
        t
    }

    #[test]
    fn deciding_feature_gains_ln2() {
        let t = two_room_table();
        let est = expected_gain(&t, &EvidenceSet::new(), "room", "cleanliness").unwrap();
        assert!((est.gain - LN_2).abs() < 1e-12);
        assert_eq!(
            est.per_value_entropies,
            vec![("clean".into(), 0.0), ("dirty".into(), 0.0)]
        );
        let flat = expected_gain(&t, &EvidenceSet::new(), "room", "fullness").unwrap();
        assert!(flat.gain.abs() < 1e-15);
        // bits vs nats rescale by the same constant
        assert!((est.gain_in_base(2.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gain_preconditions() {
        let t = two_room_table();
        assert_eq!(
            expected_gain(&t, &EvidenceSet::new(), "room", "location"),
            Err(ClarifyError::NotQueryable("location".into()))
        );
        let e = EvidenceSet::from_vec(vec![FeatureAssignment::new("fullness", "full")]);
        assert_eq!(
            expected_gain(&t, &e, "room", "fullness"),
            Err(ClarifyError::AlreadyKnown("fullness".into()))
        );
    }

    #[test]
    fn backend_errors_name_the_candidate() {
        let t = two_room_table();
        match expected_gain(&t, &EvidenceSet::new(), "room", "material") {
            Err(ClarifyError::Backend { value: Some(v), .. }) => assert_eq!(v, "wood"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn selects_informative_feature() {
        let t = two_room_table();
        let excluded: BTreeSet<String> = ["class", "colour", "material", "reference_object"]
            .into_iter()
            .map(String::from)
            .collect();
        let pick = select_question(&t, &EvidenceSet::new(), "room", &excluded).unwrap();
        assert_eq!(pick.unwrap().feature_type, "cleanliness");
    }

    #[test]
    fn no_positive_gain_means_no_question() {
        let t = two_room_table();
        let excluded: BTreeSet<String> = ["class", "colour", "material", "reference_object", "cleanliness"]
            .into_iter()
            .map(String::from)
            .collect();
        assert_eq!(
            select_question(&t, &EvidenceSet::new(), "room", &excluded).unwrap(),
            None
        );
    }

    #[test]
    fn ties_go_to_schema_order() {
        let schema = Arc::new(FeatureSchema::reference());
        let mut t = TableBackend::new(schema);
        let mut even = vec![0.0; 7];
        even[0] = 0.5;
        even[1] = 0.5;
        let mut first = vec![0.0; 7];
        first[0] = 1.0;
        t.set_fallback("room", first).unwrap();
        t.insert(&[], "room", even).unwrap();
        // every single probe hits the point-mass fallback: equal gains everywhere
        let pick = select_question(&t, &EvidenceSet::new(), "room", &BTreeSet::new()).unwrap();
        assert_eq!(pick.unwrap().feature_type, "class");
    }
}
