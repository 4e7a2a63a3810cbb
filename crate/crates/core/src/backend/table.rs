use std::collections::HashMap;
use std::sync::Arc;

use super::{check_request, Backend, BackendError, BackendFamily, Distribution, EvidenceSet};
use crate::schema::{FeatureAssignment, FeatureSchema};

/// Fixture backend: returns stored distributions keyed by the evidence set
/// (order-insensitive) and target. Unmatched lookups fall back to a per-target
/// default when one is set.
#[derive(Debug, Clone)]
pub struct TableBackend {
    schema: Arc<FeatureSchema>,
    entries: HashMap<(Vec<FeatureAssignment>, String), Distribution>,
    fallback: HashMap<String, Distribution>,
    family: BackendFamily,
}

fn key(evidence: &[FeatureAssignment]) -> Vec<FeatureAssignment> {
    let mut k = evidence.to_vec();
    k.sort();
    k
}

impl TableBackend {
    pub fn new(schema: Arc<FeatureSchema>) -> Self {
        Self {
            schema,
            entries: HashMap::new(),
            fallback: HashMap::new(),
            family: BackendFamily::Native,
        }
    }

    pub fn with_family(mut self, family: BackendFamily) -> Self {
        self.family = family;
        self
    }

    /// Stores `probabilities` (aligned with the target's schema values) for
    /// this exact evidence set.
    pub fn insert(
        &mut self,
        evidence: &[FeatureAssignment],
        target: &str,
        probabilities: Vec<f64>,
    ) -> Result<(), BackendError> {
        let candidates = self
            .schema
            .values(target)
            .ok_or_else(|| BackendError::InvalidTarget(target.to_string()))?
            .to_vec();
        let d = Distribution::new(target, candidates, probabilities)?;
        self.entries.insert((key(evidence), target.to_string()), d);
        Ok(())
    }

    pub fn set_fallback(&mut self, target: &str, probabilities: Vec<f64>) -> Result<(), BackendError> {
        let candidates = self
            .schema
            .values(target)
            .ok_or_else(|| BackendError::InvalidTarget(target.to_string()))?
            .to_vec();
        let d = Distribution::new(target, candidates, probabilities)?;
        self.fallback.insert(target.to_string(), d);
        Ok(())
    }

    /// Stored entry, if any, without consulting the fallback.
    pub fn lookup(&self, evidence: &[FeatureAssignment], target: &str) -> Option<&Distribution> {
        self.entries.get(&(key(evidence), target.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl Backend for TableBackend {
    fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    fn predict(&self, evidence: &EvidenceSet, target: &str) -> Result<Distribution, BackendError> {
        check_request(&self.schema, evidence, target)?;
        self.lookup(evidence.as_slice(), target)
            .or_else(|| self.fallback.get(target))
            .cloned()
            .ok_or_else(|| BackendError::MissingEntry(format!("{evidence} -> {target}")))
    }

    fn family(&self) -> BackendFamily {
        self.family
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echoes_stored_distribution_regardless_of_order() {
        let schema = Arc::new(FeatureSchema::reference());
        let mut t = TableBackend::new(schema.clone());
        let probs = vec![0.1, 0.0, 0.0, 0.7, 0.0, 0.0, 0.2];
        t.insert(
            &[
                FeatureAssignment::new("class", "cup"),
                FeatureAssignment::new("colour", "red"),
            ],
            "room",
            probs.clone(),
        )
        .unwrap();
        let e = EvidenceSet::from_vec(vec![
            FeatureAssignment::new("colour", "red"),
            FeatureAssignment::new("class", "cup"),
        ]);
        assert_eq!(t.predict(&e, "room").unwrap().probabilities(), probs.as_slice());
        assert!(matches!(
            t.predict(&EvidenceSet::new(), "room"),
            Err(BackendError::MissingEntry(_))
        ));
        t.set_fallback("room", vec![1.0 / 7.0; 7]).unwrap();
        assert!(t.predict(&EvidenceSet::new(), "room").is_ok());
    }

    #[test]
    fn rejects_misaligned_fixture() {
        let mut t = TableBackend::new(Arc::new(FeatureSchema::reference()));
        assert!(t.insert(&[], "room", vec![0.5, 0.5]).is_err());
    }
}
