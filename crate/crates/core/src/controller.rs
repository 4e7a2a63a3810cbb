//! Dialogue controller: predicts the room, then the location, asking
//! clarification questions while the prediction is not confident enough and
//! question budget remains.
//!
//! A [`Session`] is driven by [`Session::start`] and repeated
//! [`Session::step`] calls. Each call returns the latest [`Event`]; every
//! event and every decision is also recorded in the session transcript.

use std::collections::BTreeSet;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{Backend, BackendFamily, Distribution, EvidenceError, EvidenceSet};
use crate::clarify::{candidate_features, confidence, entropy, select_question, ClarifyError};
use crate::schema::{is_sentinel, normalize_token, FeatureAssignment, Violation, LOCATION, ROOM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Policy {
    /// Ask the highest-gain feature type.
    Informative,
    /// Ask a uniformly drawn eligible feature type.
    Random { seed: u64 },
    /// Never ask.
    None,
}

impl FromStr for Policy {
    type Err = String;

    /// `informative`, `none`, or `random:<seed>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "informative" => Ok(Policy::Informative),
            "none" => Ok(Policy::None),
            _ => match s.strip_prefix("random:") {
                Some(seed) => seed
                    .parse()
                    .map(|seed| Policy::Random { seed })
                    .map_err(|e| format!("bad random seed `{seed}`: {e}")),
                None => Err(format!("unknown policy `{s}` (informative, none, random:<seed>)")),
            },
        }
    }
}

/// Whether the question budget covers the whole episode or resets per stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetScope {
    #[default]
    Episode,
    PerStage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub theta: f64,
    pub question_budget: u32,
    #[serde(default)]
    pub budget_scope: BudgetScope,
    pub top_k: usize,
    pub policy: Policy,
    pub iterative: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            theta: 0.65,
            question_budget: 2,
            budget_scope: BudgetScope::Episode,
            top_k: 3,
            policy: Policy::Informative,
            iterative: true,
        }
    }
}

impl ControllerConfig {
    /// Defaults with the threshold chosen for the backend family.
    pub fn for_family(family: BackendFamily) -> Self {
        Self {
            theta: family.default_theta(),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ControllerError> {
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(ControllerError::Config(format!(
                "theta must be in (0, 1], got {}",
                self.theta
            )));
        }
        if self.top_k == 0 {
            return Err(ControllerError::Config("top_k must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Room,
    Location,
    Done,
}

impl Stage {
    pub fn target(self) -> Option<&'static str> {
        match self {
            Stage::Room => Some(ROOM),
            Stage::Location => Some(LOCATION),
            Stage::Done => None,
        }
    }
}

/// A user's reply to an outstanding question.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Value(String),
    Skip,
}

impl Answer {
    /// Normalizes a raw token; the `none`/`n_a` sentinels become [`Answer::Skip`].
    pub fn from_token(raw: &str) -> Self {
        let token = normalize_token(raw);
        if is_sentinel(&token) {
            Answer::Skip
        } else {
            Answer::Value(token)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Conclusion {
    Confident,
    BudgetExhausted,
    NoInformativeQuestion,
    ClarificationDisabled,
}

pub type Ranked = Vec<(String, f64)>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TranscriptEntry {
    Assessed {
        stage: Stage,
        confidence: f64,
        entropy: f64,
    },
    Asked {
        stage: Stage,
        feature_type: String,
        gain: Option<f64>,
    },
    Answered {
        feature_type: String,
        value: String,
        replaced: Option<String>,
    },
    Skipped {
        feature_type: String,
    },
    Concluded {
        stage: Stage,
        value: String,
        confidence: f64,
        reason: Conclusion,
        ranked: Ranked,
    },
    Fault {
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionResult {
    pub room_ranked: Ranked,
    pub location_ranked: Ranked,
    /// Answered (non-skipped) questions.
    pub questions_asked: u32,
    pub questions_skipped: u32,
    pub transcript: Vec<TranscriptEntry>,
}

impl PredictionResult {
    pub fn room(&self) -> &str {
        &self.room_ranked[0].0
    }

    pub fn location(&self) -> &str {
        &self.location_ranked[0].0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Event {
    Question { feature_type: String, prompt: String },
    StagePrediction { stage: Stage, ranked: Ranked },
    Done { result: PredictionResult },
    Fault { message: String },
}

/// Open-ended question text for a feature type.
pub fn question_prompt(feature_type: &str) -> String {
    format!("What is the object's {}?", feature_type.replace('_', " "))
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("invalid controller config: {0}")]
    Config(String),
    #[error("invalid evidence: {0}")]
    Evidence(#[from] EvidenceError),
    #[error("evidence may not assign prediction target `{0}`")]
    TargetInEvidence(String),
    #[error("no question is outstanding")]
    NoPendingQuestion,
    #[error("session is finished")]
    Finished,
    #[error("session faulted: {0}")]
    Faulted(String),
    #[error("invalid answer: {0}")]
    InvalidAnswer(#[from] Violation),
}

/// One inference episode.
#[derive(Debug, Clone, Serialize)]
pub struct Session {
    config: ControllerConfig,
    initial_evidence: EvidenceSet,
    evidence: EvidenceSet,
    stage: Stage,
    /// (feature type, answer) in ask order; `None` marks a skip.
    asked: Vec<(String, Option<String>)>,
    excluded: BTreeSet<String>,
    budget_remaining: u32,
    answered: u32,
    skipped: u32,
    pending: Option<String>,
    predicted_room: Option<String>,
    room_ranked: Option<Ranked>,
    transcript: Vec<TranscriptEntry>,
    result: Option<PredictionResult>,
    fault: Option<String>,
    #[serde(skip)]
    events: Vec<Event>,
    #[serde(skip)]
    rng: ChaCha8Rng,
}

impl Session {
    /// Validates the evidence and runs the first prediction.
    pub fn start(
        backend: &dyn Backend,
        evidence: EvidenceSet,
        config: ControllerConfig,
    ) -> Result<(Session, Event), ControllerError> {
        config.validate()?;
        let schema = backend.schema();
        evidence.validate(schema)?;
        if let Some(t) = schema.target_types().find(|t| evidence.contains_type(&t.name)) {
            return Err(ControllerError::TargetInEvidence(t.name.clone()));
        }
        let seed = match config.policy {
            Policy::Random { seed } => seed,
            _ => 0,
        };
        let mut session = Session {
            budget_remaining: config.question_budget,
            config,
            initial_evidence: evidence.clone(),
            evidence,
            stage: Stage::Room,
            asked: Vec::new(),
            excluded: BTreeSet::new(),
            answered: 0,
            skipped: 0,
            pending: None,
            predicted_room: None,
            room_ranked: None,
            transcript: Vec::new(),
            result: None,
            fault: None,
            events: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let event = session.advance(backend);
        Ok((session, event))
    }

    /// Applies the answer to the outstanding question and advances.
    pub fn step(&mut self, backend: &dyn Backend, answer: Answer) -> Result<Event, ControllerError> {
        if let Some(f) = &self.fault {
            return Err(ControllerError::Faulted(f.clone()));
        }
        if self.stage == Stage::Done {
            return Err(ControllerError::Finished);
        }
        let feature = self.pending.clone().ok_or(ControllerError::NoPendingQuestion)?;
        let answer = match answer {
            Answer::Value(v) => Answer::from_token(&v),
            Answer::Skip => Answer::Skip,
        };
        match answer {
            Answer::Value(value) => {
                let a = FeatureAssignment::new(feature.as_str(), value.as_str());
                let replaced = self.evidence.insert(backend.schema(), a)?;
                self.budget_remaining = self.budget_remaining.saturating_sub(1);
                self.answered += 1;
                self.asked.push((feature.clone(), Some(value.clone())));
                self.transcript.push(TranscriptEntry::Answered {
                    feature_type: feature.clone(),
                    value,
                    replaced: replaced.map(|r| r.value),
                });
            }
            Answer::Skip => {
                self.skipped += 1;
                self.asked.push((feature.clone(), None));
                self.transcript.push(TranscriptEntry::Skipped {
                    feature_type: feature.clone(),
                });
            }
        }
        self.excluded.insert(feature);
        self.pending = None;
        Ok(self.advance(backend))
    }

    /// Re-runs a session from its initial evidence with a fixed answer sequence.
    pub fn replay(
        backend: &dyn Backend,
        evidence: EvidenceSet,
        config: ControllerConfig,
        answers: &[Answer],
    ) -> Result<Session, ControllerError> {
        let (mut session, _) = Session::start(backend, evidence, config)?;
        for a in answers {
            session.step(backend, a.clone())?;
        }
        Ok(session)
    }

    fn advance(&mut self, backend: &dyn Backend) -> Event {
        let first_new = self.events.len();
        if let Err(e) = self.run_until_blocked(backend) {
            let message = e.to_string();
            self.fault = Some(message.clone());
            self.transcript.push(TranscriptEntry::Fault {
                message: message.clone(),
            });
            self.events.push(Event::Fault { message });
        }
        debug_assert!(self.events.len() > first_new);
        self.events.last().cloned().expect("advance emits an event")
    }

    fn run_until_blocked(&mut self, backend: &dyn Backend) -> Result<(), ClarifyError> {
        while let Some(target) = self.stage.target() {
            let d = backend.predict(&self.evidence, target)?;
            let c = confidence(&d);
            self.transcript.push(TranscriptEntry::Assessed {
                stage: self.stage,
                confidence: c,
                entropy: entropy(&d),
            });
            let reason = if c > self.config.theta {
                Conclusion::Confident
            } else if self.config.policy == Policy::None {
                Conclusion::ClarificationDisabled
            } else if self.budget_remaining == 0 {
                Conclusion::BudgetExhausted
            } else {
                match self.choose_question(backend, target)? {
                    Some((feature, gain)) => {
                        self.transcript.push(TranscriptEntry::Asked {
                            stage: self.stage,
                            feature_type: feature.clone(),
                            gain,
                        });
                        self.events.push(Event::Question {
                            prompt: question_prompt(&feature),
                            feature_type: feature.clone(),
                        });
                        self.pending = Some(feature);
                        return Ok(());
                    }
                    None => Conclusion::NoInformativeQuestion,
                }
            };
            self.conclude(backend, &d, reason);
        }
        Ok(())
    }

    fn choose_question(
        &mut self,
        backend: &dyn Backend,
        target: &str,
    ) -> Result<Option<(String, Option<f64>)>, ClarifyError> {
        match self.config.policy {
            Policy::None => Ok(None),
            Policy::Informative => Ok(select_question(backend, &self.evidence, target, &self.excluded)?
                .map(|g| (g.feature_type, Some(g.gain)))),
            Policy::Random { .. } => {
                let pool = candidate_features(backend, &self.evidence, &self.excluded);
                if pool.is_empty() {
                    return Ok(None);
                }
                let i = self.rng.random_range(0..pool.len());
                Ok(Some((pool[i].clone(), None)))
            }
        }
    }

    fn conclude(&mut self, backend: &dyn Backend, d: &Distribution, reason: Conclusion) {
        let ranked = d.ranked();
        let (value, c) = d.argmax();
        let value = value.to_string();
        self.transcript.push(TranscriptEntry::Concluded {
            stage: self.stage,
            value: value.clone(),
            confidence: c,
            reason,
            ranked: ranked.clone(),
        });
        self.events.push(Event::StagePrediction {
            stage: self.stage,
            ranked: ranked.clone(),
        });
        match self.stage {
            Stage::Room => {
                if self.config.iterative {
                    self.evidence
                        .insert(backend.schema(), FeatureAssignment::new(ROOM, value.as_str()))
                        .expect("argmax is a schema value");
                }
                self.predicted_room = Some(value);
                self.room_ranked = Some(ranked);
                self.stage = Stage::Location;
                if self.config.budget_scope == BudgetScope::PerStage {
                    self.budget_remaining = self.config.question_budget;
                }
            }
            Stage::Location => {
                self.stage = Stage::Done;
                let result = PredictionResult {
                    room_ranked: self.room_ranked.clone().expect("room stage concluded first"),
                    location_ranked: ranked,
                    questions_asked: self.answered,
                    questions_skipped: self.skipped,
                    transcript: self.transcript.clone(),
                };
                self.result = Some(result.clone());
                self.events.push(Event::Done { result });
            }
            Stage::Done => unreachable!("no prediction after Done"),
        }
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn evidence(&self) -> &EvidenceSet {
        &self.evidence
    }

    pub fn initial_evidence(&self) -> &EvidenceSet {
        &self.initial_evidence
    }

    pub fn pending_question(&self) -> Option<&str> {
        self.pending.as_deref()
    }

    pub fn asked(&self) -> &[(String, Option<String>)] {
        &self.asked
    }

    pub fn budget_remaining(&self) -> u32 {
        self.budget_remaining
    }

    pub fn predicted_room(&self) -> Option<&str> {
        self.predicted_room.as_deref()
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    /// Every event emitted so far, in order.
    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn result(&self) -> Option<&PredictionResult> {
        self.result.as_ref()
    }

    pub fn fault(&self) -> Option<&str> {
        self.fault.as_deref()
    }

    /// Answers given so far, in order, suitable for [`Session::replay`].
    pub fn answers(&self) -> Vec<Answer> {
        self.asked
            .iter()
            .map(|(_, a)| a.clone().map_or(Answer::Skip, Answer::Value))
            .collect()
    }
}

/// Drives a session to completion, answering each question with `oracle`.
pub fn run_with_oracle(
    backend: &dyn Backend,
    evidence: EvidenceSet,
    config: ControllerConfig,
    mut oracle: impl FnMut(&str) -> Answer,
) -> Result<PredictionResult, ControllerError> {
    let (mut session, mut event) = Session::start(backend, evidence, config)?;
    loop {
        match event {
            Event::Done { result } => return Ok(result),
            Event::Fault { message } => return Err(ControllerError::Faulted(message)),
            Event::Question { feature_type, .. } => {
                let answer = oracle(&feature_type);
                event = session.step(backend, answer)?;
            }
            Event::StagePrediction { .. } => unreachable!("stage predictions are never the last event"),
        }
    }
}
