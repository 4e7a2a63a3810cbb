//! HIT@k scoring of whole episodes under the ablation conditions.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::Backend;
use crate::controller::{run_with_oracle, Answer, ControllerConfig, ControllerError, Policy, PredictionResult, Ranked};
use crate::corpus::{CorpusError, ObjectFeaturesDB};
use crate::parsing::{ExpressionRecord, Lexicon};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Config(#[from] ControllerError),
    #[error("k must be at least 1")]
    ZeroK,
}

/// One row of the ablation: whether the location stage sees the predicted
/// room, and how questions are chosen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCondition {
    pub name: String,
    pub iterative: bool,
    pub policy: Policy,
}

impl EvalCondition {
    pub fn new(name: impl Into<String>, iterative: bool, policy: Policy) -> Self {
        Self {
            name: name.into(),
            iterative,
            policy,
        }
    }

    pub fn baseline() -> Self {
        Self::new("none", false, Policy::None)
    }

    pub fn iterative_only() -> Self {
        Self::new("iterative", true, Policy::None)
    }

    pub fn random(seed: u64) -> Self {
        Self::new("iterative+random", true, Policy::Random { seed })
    }

    pub fn informative() -> Self {
        Self::new("iterative+informative", true, Policy::Informative)
    }

    /// The four standard rows, in table order.
    pub fn presets(seed: u64) -> Vec<Self> {
        vec![
            Self::baseline(),
            Self::iterative_only(),
            Self::random(seed),
            Self::informative(),
        ]
    }

    /// `all` or a comma-separated subset of `none`, `iterative`, `random`,
    /// `informative`.
    pub fn parse_list(spec: &str, seed: u64) -> Result<Vec<Self>, String> {
        if spec.trim() == "all" {
            return Ok(Self::presets(seed));
        }
        spec.split(',')
            .map(|s| match s.trim() {
                "none" | "baseline" => Ok(Self::baseline()),
                "iterative" => Ok(Self::iterative_only()),
                "random" => Ok(Self::random(seed)),
                "informative" => Ok(Self::informative()),
                other => Err(format!(
                    "unknown condition `{other}` (none, iterative, random, informative, all)"
                )),
            })
            .collect()
    }

    fn config_for(&self, base: &ControllerConfig, episode: usize) -> ControllerConfig {
        let policy = match self.policy {
            Policy::Random { seed } => Policy::Random {
                seed: episode_seed(seed, episode),
            },
            p => p,
        };
        ControllerConfig {
            iterative: self.iterative,
            policy,
            ..base.clone()
        }
    }
}

/// Independent per-episode stream derived from the condition seed.
pub fn episode_seed(seed: u64, episode: usize) -> u64 {
    let mut z = seed ^ (episode as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// True iff `truth` is among the first `k` ranked values.
pub fn hit_at_k(ranked: &[impl AsRef<str>], truth: &str, k: usize) -> Result<bool, EvalError> {
    if k == 0 {
        return Err(EvalError::ZeroK);
    }
    Ok(ranked.iter().take(k).any(|v| v.as_ref() == truth))
}

fn hit(ranked: &Ranked, truth: &str, k: usize) -> bool {
    ranked.iter().take(k).any(|(v, _)| v == truth)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeOutcome {
    pub object_id: String,
    pub text: String,
    pub room_truth: String,
    pub location_truth: String,
    /// `Err` holds the fault message.
    pub result: Result<PredictionResult, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    pub r_h1: f64,
    pub r_h3: f64,
    pub l_h1: f64,
    pub l_h3: f64,
    /// Mean answered questions per scored episode.
    pub mean_questions: f64,
    /// Mean questions per scored episode, skipped ones included.
    pub mean_asked: f64,
    pub episodes: usize,
    pub faults: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ConditionReport>,
}

/// Runs one episode per expression, answering questions from `db`.
pub fn run_episodes(
    expressions: &[ExpressionRecord],
    lexicon: &Lexicon,
    db: &ObjectFeaturesDB,
    backend: &dyn Backend,
    base: &ControllerConfig,
    condition: &EvalCondition,
) -> Result<Vec<EpisodeOutcome>, EvalError> {
    condition.config_for(base, 0).validate()?;
    for e in expressions {
        db.object(&e.object_id)?;
    }
    let mut out = Vec::with_capacity(expressions.len());
    for (i, e) in expressions.iter().enumerate() {
        let (room, location) = db.ground_truth(&e.object_id)?;
        let evidence = lexicon.extract_features(&e.text);
        let oracle = |feature: &str| -> Answer {
            db.oracle_answer(&e.object_id, feature)
                .map(Answer::from)
                .unwrap_or(Answer::Skip)
        };
        let result =
            run_with_oracle(backend, evidence, condition.config_for(base, i), oracle).map_err(|err| err.to_string());
        out.push(EpisodeOutcome {
            object_id: e.object_id.clone(),
            text: e.text.clone(),
            room_truth: room.to_string(),
            location_truth: location.to_string(),
            result,
        });
    }
    Ok(out)
}

/// Aggregates episodes; faulted ones are counted but not scored.
pub fn summarize(condition: &str, episodes: &[EpisodeOutcome]) -> ConditionReport {
    let mut n = 0usize;
    let mut faults = 0usize;
    let mut hits = [0usize; 4];
    let mut answered = 0u64;
    let mut asked = 0u64;
    for ep in episodes {
        let Ok(r) = &ep.result else {
            faults += 1;
            continue;
        };
        n += 1;
        hits[0] += hit(&r.room_ranked, &ep.room_truth, 1) as usize;
        hits[1] += hit(&r.room_ranked, &ep.room_truth, 3) as usize;
        hits[2] += hit(&r.location_ranked, &ep.location_truth, 1) as usize;
        hits[3] += hit(&r.location_ranked, &ep.location_truth, 3) as usize;
        answered += u64::from(r.questions_asked);
        asked += u64::from(r.questions_asked + r.questions_skipped);
    }
    let frac = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    let mean = |c: u64| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    ConditionReport {
        condition: condition.to_string(),
        r_h1: frac(hits[0]),
        r_h3: frac(hits[1]),
        l_h1: frac(hits[2]),
        l_h3: frac(hits[3]),
        mean_questions: mean(answered),
        mean_asked: mean(asked),
        episodes: n,
        faults,
    }
}

pub fn run_condition(
    expressions: &[ExpressionRecord],
    lexicon: &Lexicon,
    db: &ObjectFeaturesDB,
    backend: &dyn Backend,
    base: &ControllerConfig,
    condition: &EvalCondition,
) -> Result<ConditionReport, EvalError> {
    let episodes = run_episodes(expressions, lexicon, db, backend, base, condition)?;
    Ok(summarize(&condition.name, &episodes))
}

pub fn run_conditions(
    expressions: &[ExpressionRecord],
    lexicon: &Lexicon,
    db: &ObjectFeaturesDB,
    backend: &dyn Backend,
    base: &ControllerConfig,
    conditions: &[EvalCondition],
) -> Result<EvalReport, EvalError> {
    let rows = conditions
        .iter()
        .map(|c| run_condition(expressions, lexicon, db, backend, base, c))
        .collect::<Result<_, _>>()?;
    Ok(EvalReport { rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Markdown,
    Csv,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "markdown" | "md" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            _ => Err(format!("unknown report format `{s}` (markdown, csv)")),
        }
    }
}

pub const CSV_HEADER: &str = "condition,r_h1,r_h3,l_h1,l_h3,mean_questions,episodes,faults";

pub fn render_report(report: &EvalReport, format: ReportFormat) -> String {
    let mut out = String::new();
    match format {
        ReportFormat::Csv => {
            out.push_str(CSV_HEADER);
            out.push('\n');
            for r in &report.rows {
                let _ = writeln!(
                    out,
                    "{},{:.4},{:.4},{:.4},{:.4},{:.4},{},{}",
                    r.condition, r.r_h1, r.r_h3, r.l_h1, r.l_h3, r.mean_questions, r.episodes, r.faults
                );
            }
        }
        ReportFormat::Markdown => {
            out.push_str("| Condition | R_H@1 | R_H@3 | L_H@1 | L_H@3 | Questions (answered) | Questions (asked) | Episodes | Faults |\n");
            out.push_str("|---|---|---|---|---|---|---|---|---|\n");
            for r in &report.rows {
                let _ = writeln!(
                    out,
                    "| {} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} | {:.2} | {} | {} |",
                    r.condition, r.r_h1, r.r_h3, r.l_h1, r.l_h3, r.mean_questions, r.mean_asked, r.episodes, r.faults
                );
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hit_examples() {
        let ranked = ["kitchen", "dining_room", "office"];
        assert!(!hit_at_k(&ranked, "dining_room", 1).unwrap());
        assert!(hit_at_k(&ranked, "dining_room", 3).unwrap());
        assert!(hit_at_k(&ranked, "dining_room", 30).unwrap());
        for k in 1..5 {
            assert!(!hit_at_k(&ranked, "garage", k).unwrap());
        }
        assert!(matches!(hit_at_k(&ranked, "kitchen", 0), Err(EvalError::ZeroK)));
    }

    fn row(name: &str) -> ConditionReport {
        ConditionReport {
            condition: name.into(),
            r_h1: 0.5,
            r_h3: 1.0,
            l_h1: 0.25,
            l_h3: 0.75,
            mean_questions: 1.5,
            mean_asked: 1.75,
            episodes: 4,
            faults: 0,
        }
    }

    #[test]
    fn rendering() {
        let report = EvalReport {
            rows: EvalCondition::presets(1).iter().map(|c| row(&c.name)).collect(),
        };
        let md = render_report(&report, ReportFormat::Markdown);
        assert_eq!(md.lines().count(), 6);
        let csv = render_report(&report, ReportFormat::Csv);
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1], "none,0.5000,1.0000,0.2500,0.7500,1.5000,4,0");
        let empty = EvalReport::default();
        assert_eq!(render_report(&empty, ReportFormat::Csv).lines().count(), 1);
        assert_eq!(render_report(&empty, ReportFormat::Markdown).lines().count(), 2);
    }

    #[test]
    fn condition_lists() {
        assert_eq!(EvalCondition::parse_list("all", 3).unwrap(), EvalCondition::presets(3));
        let two = EvalCondition::parse_list("none, informative", 3).unwrap();
        assert_eq!(two, vec![EvalCondition::baseline(), EvalCondition::informative()]);
        assert!(EvalCondition::parse_list("bogus", 3).is_err());
    }

    #[test]
    fn episode_seeds_differ() {
        assert_ne!(episode_seed(42, 0), episode_seed(42, 1));
        assert_eq!(episode_seed(42, 7), episode_seed(42, 7));
    }
}
