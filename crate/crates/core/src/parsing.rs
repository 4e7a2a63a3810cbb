//! Rule-based extraction of feature assignments from an object description.
//!
//! Text is lowercased and split into words; the scanner then takes the
//! longest lexicon phrase or spatial preposition at each position.
//! Resolution rules:
//!
//! * after a spatial preposition, the next noun is the reference object;
//!   attributes in that phrase describe the reference object and are dropped;
//! * outside a prepositional phrase the first class noun is the class, and
//!   words that are both a colour and a reference object read as colour;
//! * room and location words are never evidence;
//! * multi-valued types accumulate, single-valued types keep the first match.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::EvidenceSet;
use crate::schema::{normalize_token, FeatureAssignment, FeatureSchema};

pub const CLASS: &str = "class";
pub const REFERENCE_OBJECT: &str = "reference_object";

/// Alias table bundled with the reference schema (plural forms).
pub const REFERENCE_ALIASES: &str = include_str!("../data/aliases.tsv");

pub const SPATIAL_PREPOSITIONS: &[&str] = &[
    "next to",
    "on",
    "near",
    "by",
    "under",
    "behind",
    "beside",
    "in front of",
];

/// A user's description of the object to find.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpressionRecord {
    pub object_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AliasEntry {
    pub surface: String,
    pub assignment: FeatureAssignment,
}

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("cannot read alias file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("alias line {line}: {message}")]
    Line { line: usize, message: String },
}

/// Splits text into lowercase alphanumeric words.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Phrase table mapping word sequences to their possible `(type, value)` readings.
#[derive(Debug, Clone)]
pub struct Lexicon {
    schema: Arc<FeatureSchema>,
    phrases: HashMap<Vec<String>, Vec<FeatureAssignment>>,
    prepositions: Vec<Vec<String>>,
    max_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Kind {
    Class,
    Reference,
    Target,
    Attribute,
}

impl Lexicon {
    /// Lexicon holding every schema value plus the given aliases.
    pub fn new(schema: Arc<FeatureSchema>, aliases: &[AliasEntry]) -> Result<Self, LexiconError> {
        let mut lex = Self {
            phrases: HashMap::new(),
            prepositions: SPATIAL_PREPOSITIONS
                .iter()
                .map(|p| p.split(' ').map(str::to_string).collect())
                .collect(),
            max_len: 1,
            schema,
        };
        let schema = Arc::clone(&lex.schema);
        for t in schema.types() {
            for v in schema.values(&t.name).unwrap() {
                lex.add(
                    &v.replace('_', " "),
                    FeatureAssignment::new(t.name.as_str(), v.as_str()),
                );
            }
        }
        for (i, alias) in aliases.iter().enumerate() {
            schema.validate(&alias.assignment).map_err(|e| LexiconError::Line {
                line: i + 1,
                message: e.to_string(),
            })?;
            lex.add(&alias.surface, alias.assignment.clone());
        }
        Ok(lex)
    }

    /// Schema values plus the bundled plural aliases.
    pub fn reference(schema: Arc<FeatureSchema>) -> Result<Self, LexiconError> {
        let aliases = parse_aliases(REFERENCE_ALIASES)?;
        let known: Vec<AliasEntry> = aliases
            .into_iter()
            .filter(|a| schema.validate(&a.assignment).is_ok())
            .collect();
        Self::new(schema, &known)
    }

    pub fn from_alias_file(schema: Arc<FeatureSchema>, path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::new(schema, &parse_aliases(&text)?)
    }

    fn add(&mut self, surface: &str, a: FeatureAssignment) {
        let words = tokenize(surface);
        if words.is_empty() {
            return;
        }
        self.max_len = self.max_len.max(words.len());
        let readings = self.phrases.entry(words).or_default();
        if !readings.contains(&a) {
            readings.push(a);
        }
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    /// Readings of an exact phrase.
    pub fn readings(&self, phrase: &str) -> &[FeatureAssignment] {
        self.phrases.get(&tokenize(phrase)).map_or(&[], Vec::as_slice)
    }

    fn kind(&self, a: &FeatureAssignment) -> Kind {
        if a.feature == CLASS {
            Kind::Class
        } else if a.feature == REFERENCE_OBJECT {
            Kind::Reference
        } else if !self.schema.is_queryable(&a.feature) {
            Kind::Target
        } else {
            Kind::Attribute
        }
    }

    fn longest_preposition(&self, words: &[String]) -> usize {
        self.prepositions
            .iter()
            .filter(|p| words.starts_with(p))
            .map(Vec::len)
            .max()
            .unwrap_or(0)
    }

    fn longest_phrase<'a>(&'a self, words: &[String]) -> Option<(usize, &'a [FeatureAssignment])> {
        (1..=self.max_len.min(words.len()))
            .rev()
            .find_map(|n| self.phrases.get(&words[..n]).map(|r| (n, r.as_slice())))
    }

    /// Scans the text into `(phrase readings, inside prepositional phrase)` items.
    fn scan(&self, text: &str) -> Vec<(&[FeatureAssignment], bool)> {
        let words = tokenize(text);
        let mut out = Vec::new();
        let mut in_pp = false;
        let mut i = 0;
        while i < words.len() {
            let rest = &words[i..];
            let prep = self.longest_preposition(rest);
            let phrase = self.longest_phrase(rest);
            match phrase {
                Some((n, readings)) if n > prep => {
                    out.push((readings, in_pp));
                    if in_pp && readings.iter().any(|a| self.kind(a) != Kind::Attribute) {
                        in_pp = false;
                    }
                    i += n;
                }
                _ if prep > 0 => {
                    in_pp = true;
                    i += prep;
                }
                _ => i += 1,
            }
        }
        out
    }

    /// Extracts the evidence set described by `text`.
    pub fn extract_features(&self, text: &str) -> EvidenceSet {
        let mut evidence = EvidenceSet::new();
        let add = |evidence: &mut EvidenceSet, a: &FeatureAssignment| {
            if self.schema.is_multi_valued(&a.feature) || !evidence.contains_type(&a.feature) {
                evidence
                    .insert(&self.schema, a.clone())
                    .expect("lexicon entries are schema-valid");
            }
        };
        for (readings, in_pp) in self.scan(text) {
            let find = |k: Kind| readings.iter().find(|a| self.kind(a) == k);
            if in_pp {
                if let Some(r) = find(Kind::Reference) {
                    add(&mut evidence, r);
                }
                continue;
            }
            if find(Kind::Target).is_some() {
                continue;
            }
            if let Some(c) = find(Kind::Class) {
                if !evidence.contains_type(CLASS) {
                    add(&mut evidence, c);
                }
            } else if let Some(attr) = find(Kind::Attribute) {
                add(&mut evidence, attr);
            } else if let Some(r) = find(Kind::Reference) {
                add(&mut evidence, r);
            }
        }
        evidence
    }

    /// True when the text names any room or location value.
    pub fn mentions_target(&self, text: &str) -> bool {
        self.scan(text)
            .iter()
            .any(|(readings, _)| readings.iter().any(|a| self.kind(a) == Kind::Target))
    }
}

/// Parses `surface<TAB>type<TAB>value` lines; blank lines and `#` comments are ignored.
pub fn parse_aliases(text: &str) -> Result<Vec<AliasEntry>, LexiconError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(LexiconError::Line {
                line: i + 1,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        out.push(AliasEntry {
            surface: fields[0].trim().to_lowercase(),
            assignment: FeatureAssignment::new(normalize_token(fields[1]), normalize_token(fields[2])),
        });
    }
    Ok(out)
}

/// Extracts features from an utterance.
pub fn extract_features(text: &str, lexicon: &Lexicon) -> EvidenceSet {
    lexicon.extract_features(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> Lexicon {
        Lexicon::reference(Arc::new(FeatureSchema::reference())).unwrap()
    }

    fn sorted(e: &EvidenceSet) -> Vec<(String, String)> {
        let mut v: Vec<_> = e.iter().map(|a| (a.feature.clone(), a.value.clone())).collect();
        v.sort();
        v
    }

    fn pairs(p: &[(&str, &str)]) -> Vec<(String, String)> {
        let mut v: Vec<_> = p.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect();
        v.sort();
        v
    }

    #[test]
    fn red_apple_next_to_knife() {
        let e = lex().extract_features("the red apple next to the knife");
        assert_eq!(
            sorted(&e),
            pairs(&[("class", "apple"), ("colour", "red"), ("reference_object", "knife")])
        );
    }

    #[test]
    fn nothing_recognized() {
        assert!(lex().extract_features("a thing").is_empty());
        assert!(lex().extract_features("").is_empty());
    }

    #[test]
    fn location_words_dropped() {
        let e = lex().extract_features("the empty glass bottle on the counter near the oven");
        assert_eq!(
            sorted(&e),
            pairs(&[
                ("class", "bottle"),
                ("fullness", "empty"),
                ("material", "glass"),
                ("reference_object", "oven"),
            ])
        );
    }

    #[test]
    fn orange_by_position() {
        let l = lex();
        assert_eq!(
            sorted(&l.extract_features("the orange cup")),
            pairs(&[("class", "cup"), ("colour", "orange")])
        );
        assert_eq!(
            sorted(&l.extract_features("the cup next to the orange")),
            pairs(&[("class", "cup"), ("reference_object", "orange")])
        );
        assert_eq!(sorted(&l.extract_features("orange")), pairs(&[("colour", "orange")]));
    }

    #[test]
    fn multiword_and_plural_phrases() {
        let l = lex();
        assert_eq!(
            sorted(&l.extract_features("two Wine Glasses")),
            pairs(&[("class", "wine_glass")])
        );
        assert_eq!(
            sorted(&l.extract_features("the metal fork next to the spoons")),
            pairs(&[("class", "fork"), ("material", "metal"), ("reference_object", "spoon")])
        );
        assert_eq!(
            sorted(&l.extract_features("the mug in front of the tv")),
            pairs(&[("class", "mug"), ("reference_object", "tv")])
        );
    }

    #[test]
    fn reference_phrase_modifiers_are_dropped() {
        let e = lex().extract_features("a blue cup next to the red knife");
        assert_eq!(
            sorted(&e),
            pairs(&[("class", "cup"), ("colour", "blue"), ("reference_object", "knife")])
        );
    }

    #[test]
    fn single_valued_keeps_first_multi_accumulates() {
        let e = lex().extract_features("red and blue plastic glass bowl");
        assert_eq!(
            sorted(&e),
            pairs(&[
                ("class", "bowl"),
                ("colour", "blue"),
                ("colour", "red"),
                ("material", "plastic")
            ])
        );
    }

    #[test]
    fn target_mentions() {
        let l = lex();
        assert!(l.mentions_target("it is in the kitchen"));
        assert!(l.mentions_target("on the kitchen table"));
        assert!(!l.mentions_target("metal fork next to the spoon"));
        assert!(l.extract_features("it is in the living room").is_empty());
    }

    #[test]
    fn alias_parse_errors_carry_line_numbers() {
        let err = parse_aliases("# header\ncups\tclass\tcup\nbroken line\n").unwrap_err();
        assert!(matches!(err, LexiconError::Line { line: 3, .. }), "{err}");
        let bad = parse_aliases("mugz\tclass\tmugzz\n").unwrap();
        assert!(matches!(
            Lexicon::new(Arc::new(FeatureSchema::reference()), &bad),
            Err(LexiconError::Line { line: 1, .. })
        ));
    }

    #[test]
    fn every_value_alone_is_extracted() {
        let l = lex();
        let schema = FeatureSchema::reference();
        for t in schema.queryable_types() {
            for v in schema.values(&t.name).unwrap() {
                let surface = v.replace('_', " ");
                let got = l.extract_features(&surface);
                let readings = l.readings(&surface);
                assert_eq!(got.len(), 1, "{surface}");
                let a = &got.as_slice()[0];
                assert!(readings.contains(a), "{surface} -> {a}");
                if readings.len() == 1 {
                    assert_eq!(a, &FeatureAssignment::new(t.name.as_str(), v.as_str()));
                }
            }
        }
    }
}
