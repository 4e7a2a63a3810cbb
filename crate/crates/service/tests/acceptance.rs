//! Transport transparency: episodes driven through the HTTP API against an
//! external backend give the same results as running the controller
//! in-process against that backend. Prints one PASS/FAIL line.

mod common;

use std::collections::BTreeSet;
use std::net::TcpListener;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clarify_core::backend::wire::NdjsonServer;
use clarify_core::backend::{Backend, ExternalBackend};
use clarify_core::controller::{run_with_oracle, Answer, ControllerConfig, Policy, PredictionResult};
use clarify_core::corpus::OracleAnswer;
use clarify_core::parsing::Lexicon;
use clarify_core::synth::ambiguous_world;
use common::{agent, post, TestService};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

fn transport_transparency() -> Result<String, String> {
    let corpus = ambiguous_world(31, 600, 120, 0.75);
    let model = corpus.model(0.1).map_err(|e| e.to_string())?;
    let db = corpus.feature_db().map_err(|e| e.to_string())?;
    let lexicon = Lexicon::reference(corpus.schema.clone()).map_err(|e| e.to_string())?;
    let listener = TcpListener::bind("127.0.0.1:0").map_err(|e| e.to_string())?;
    let server = NdjsonServer::start(listener, Arc::new(model)).map_err(|e| e.to_string())?;
    let endpoint = server.endpoint().parse().map_err(|e: String| e)?;
    let backend: Arc<dyn Backend> = Arc::new(ExternalBackend::new(corpus.schema.clone(), endpoint));

    let configs = [
        ControllerConfig {
            theta: 0.99,
            ..ControllerConfig::default()
        },
        ControllerConfig {
            theta: 0.65,
            policy: Policy::Random { seed: 5 },
            ..ControllerConfig::default()
        },
        ControllerConfig {
            theta: 0.8,
            iterative: false,
            question_budget: 1,
            ..ControllerConfig::default()
        },
        ControllerConfig {
            policy: Policy::None,
            ..ControllerConfig::default()
        },
    ];
    let services: Vec<_> = configs
        .iter()
        .map(|c| TestService::start(backend.clone(), c.clone()))
        .collect();
    let http = agent();
    let mut rng = ChaCha8Rng::seed_from_u64(0x7a5);
    let mut questions = 0u32;
    let episodes = 50;
    for episode in 0..episodes {
        let expr = corpus.expressions.choose(&mut rng).unwrap();
        let which = rng.random_range(0..configs.len());
        let forced_skips: BTreeSet<String> = ["material", "cleanliness", "colour", "fullness"]
            .into_iter()
            .filter(|_| rng.random_bool(0.2))
            .map(String::from)
            .collect();
        let reply = |feature: &str| -> Answer {
            if forced_skips.contains(feature) {
                return Answer::Skip;
            }
            match db.oracle_answer(&expr.object_id, feature) {
                Ok(OracleAnswer::Value(v)) => Answer::Value(v),
                _ => Answer::Skip,
            }
        };
        let ctx = |m: String| format!("episode {episode} ({}): {m}", expr.text);

        let local = run_with_oracle(
            backend.as_ref(),
            lexicon.extract_features(&expr.text),
            configs[which].clone(),
            reply,
        )
        .map_err(|e| ctx(e.to_string()))?;

        let base = &services[which].base;
        let (status, body) = post(&http, &format!("{base}/sessions"), json!({"text": expr.text}));
        if status != 201 {
            return Err(ctx(format!("create returned {status}: {body}")));
        }
        let url = format!("{base}/sessions/{}/answers", body["session_id"].as_str().unwrap());
        let mut event = body["event"].clone();
        while event["kind"] == "question" {
            let body = match reply(event["feature_type"].as_str().unwrap()) {
                Answer::Value(v) => json!({"value": v}),
                Answer::Skip => json!({"skip": true}),
            };
            let (status, resp) = post(&http, &url, body);
            if status != 200 {
                return Err(ctx(format!("answer returned {status}: {resp}")));
            }
            event = resp["event"].clone();
        }
        if event["kind"] != "done" {
            return Err(ctx(format!("ended with {event}")));
        }
        let remote: PredictionResult =
            serde_json::from_value(event["result"].clone()).map_err(|e| ctx(e.to_string()))?;
        if remote != local {
            return Err(ctx(format!(
                "HTTP result differs\n  http: {remote:?}\n  local: {local:?}"
            )));
        }
        questions += local.questions_asked + local.questions_skipped;
    }
    Ok(format!(
        "{episodes} episodes over 4 configurations, {questions} questions, identical results"
    ))
}

fn main() {
    let limit = Duration::from_secs(30);
    let start = Instant::now();
    let outcome = transport_transparency();
    let elapsed = start.elapsed();
    let budget = if cfg!(debug_assertions) { limit * 10 } else { limit };
    let outcome = match outcome {
        Ok(detail) if elapsed > budget => Err(format!("{detail}; took {elapsed:.2?} (limit {limit:?})")),
        other => other,
    };
    match outcome {
        Ok(detail) => println!("PASS transport transparency: {detail} [{elapsed:.2?}]"),
        Err(why) => {
            println!("FAIL transport transparency: {why} [{elapsed:.2?}]");
            std::process::exit(1);
        }
    }
}
