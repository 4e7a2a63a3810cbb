//! Backend wire protocol.
//!
//! A request is one JSON document:
//!
//! ```json
//! {"known": [["class","bowl"],["cleanliness","dirty"]], "target": "room",
//!  "candidates": ["bedroom","bathroom","office","kitchen","garage","living_room","dining_room"]}
//! ```
//!
//! and the reply is `{"probabilities": [...]}`, aligned index-for-index with
//! `candidates`. Over a byte stream each document occupies one line; over
//! HTTP each request is the body of a `POST /predict`.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use super::{Backend, BackendError, EvidenceSet};
use crate::schema::FeatureAssignment;

/// Largest tolerated deviation of a response's probability sum from 1.
pub const RESPONSE_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictRequest {
    pub known: Vec<FeatureAssignment>,
    pub target: String,
    pub candidates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictResponse {
    pub probabilities: Vec<f64>,
    /// Optional echo of the candidate list; checked against the request when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
}

/// Checks a response against the request's candidates; renormalizes when the
/// sum is off by at most [`RESPONSE_SUM_TOLERANCE`].
pub fn validate_response(candidates: &[String], response: &PredictResponse) -> Result<Vec<f64>, BackendError> {
    if let Some(echo) = &response.candidates {
        if echo.as_slice() != candidates {
            return Err(BackendError::CandidateMismatch(format!(
                "expected {candidates:?}, backend answered for {echo:?}"
            )));
        }
    }
    if response.probabilities.len() != candidates.len() {
        return Err(BackendError::CandidateMismatch(format!(
            "{} probabilities for {} candidates",
            response.probabilities.len(),
            candidates.len()
        )));
    }
    if let Some(p) = response.probabilities.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(BackendError::MalformedResponse(format!(
            "probability {p} is not a finite nonnegative number"
        )));
    }
    let sum: f64 = response.probabilities.iter().sum();
    if (sum - 1.0).abs() > RESPONSE_SUM_TOLERANCE {
        return Err(BackendError::ProbabilitySum { sum });
    }
    Ok(response.probabilities.iter().map(|p| p / sum).collect())
}

/// Answers one request with a local backend.
pub fn answer(backend: &dyn Backend, request: &PredictRequest) -> Result<PredictResponse, BackendError> {
    let schema = backend.schema();
    let expected = schema
        .values(&request.target)
        .ok_or_else(|| BackendError::InvalidTarget(request.target.clone()))?;
    if expected != request.candidates.as_slice() {
        return Err(BackendError::CandidateMismatch(format!(
            "request candidates {:?} differ from schema order",
            request.candidates
        )));
    }
    let evidence = EvidenceSet::from_vec(request.known.clone());
    let d = backend.predict(&evidence, &request.target)?;
    Ok(PredictResponse {
        probabilities: d.probabilities().to_vec(),
        candidates: None,
    })
}

/// Handles one line of the stream protocol, producing one line of reply.
pub fn answer_line(backend: &dyn Backend, line: &str) -> String {
    let reply = serde_json::from_str::<PredictRequest>(line)
        .map_err(|e| e.to_string())
        .and_then(|req| answer(backend, &req).map_err(|e| e.to_string()));
    match reply {
        Ok(resp) => serde_json::to_string(&resp),
        Err(error) => serde_json::to_string(&ErrorResponse { error }),
    }
    .expect("reply serializes")
}

/// Serves a backend over newline-delimited JSON on a TCP listener, one thread
/// per connection. Stops accepting when dropped.
pub struct NdjsonServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl NdjsonServer {
    pub fn start(listener: TcpListener, backend: Arc<dyn Backend>) -> std::io::Result<Self> {
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let accept = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let backend = Arc::clone(&backend);
                std::thread::spawn(move || {
                    let _ = serve_connection(stream, backend.as_ref());
                });
            }
        });
        Ok(Self {
            addr,
            stop,
            accept: Some(accept),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// `tcp://host:port` form accepted by [`super::Endpoint`].
    pub fn endpoint(&self) -> String {
        format!("tcp://{}", self.addr)
    }
}

impl Drop for NdjsonServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn serve_connection(stream: TcpStream, backend: &dyn Backend) -> std::io::Result<()> {
    let mut writer = stream.try_clone()?;
    for line in BufReader::new(stream).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut reply = answer_line(backend, &line);
        reply.push('\n');
        writer.write_all(reply.as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}
