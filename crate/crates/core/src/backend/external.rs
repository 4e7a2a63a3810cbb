use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::TcpStream;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::wire::{validate_response, PredictRequest, PredictResponse};
use super::{check_request, Backend, BackendError, BackendFamily, Distribution, EvidenceSet};
use crate::schema::FeatureSchema;

/// Where an external backend listens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// Newline-delimited documents over a TCP stream (`tcp://host:port` or `host:port`).
    Tcp(String),
    /// One document per `POST` (`http://host:port[/predict]`).
    Http(String),
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(addr) = s.strip_prefix("tcp://") {
            return Ok(Endpoint::Tcp(addr.to_string()));
        }
        if s.starts_with("http://") {
            let base = s.trim_end_matches('/');
            let url = if base.ends_with("/predict") {
                base.to_string()
            } else {
                format!("{base}/predict")
            };
            return Ok(Endpoint::Http(url));
        }
        if s.starts_with("https://") {
            return Err("https endpoints are not supported; use http or tcp".into());
        }
        if s.contains(':') && !s.contains('/') {
            return Ok(Endpoint::Tcp(s.to_string()));
        }
        Err(format!("cannot parse backend endpoint `{s}`"))
    }
}

/// Client for a backend speaking the wire protocol. Safe to share; each
/// in-flight request uses its own connection.
pub struct ExternalBackend {
    schema: Arc<FeatureSchema>,
    endpoint: Endpoint,
    timeout: Duration,
    idle: Mutex<Vec<BufReader<TcpStream>>>,
    agent: ureq::Agent,
}

impl std::fmt::Debug for ExternalBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalBackend")
            .field("endpoint", &self.endpoint)
            .field("timeout", &self.timeout)
            .finish()
    }
}

impl ExternalBackend {
    pub fn new(schema: Arc<FeatureSchema>, endpoint: Endpoint) -> Self {
        Self::with_timeout(schema, endpoint, Duration::from_secs(30))
    }

    pub fn with_timeout(schema: Arc<FeatureSchema>, endpoint: Endpoint, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            schema,
            endpoint,
            timeout,
            idle: Mutex::new(Vec::new()),
            agent,
        }
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    /// Sends one request and returns the validated, renormalized probabilities.
    pub fn external_predict(&self, evidence: &EvidenceSet, target: &str) -> Result<Distribution, BackendError> {
        check_request(&self.schema, evidence, target)?;
        let candidates = self.schema.values(target).unwrap().to_vec();
        let request = PredictRequest {
            known: evidence.as_slice().to_vec(),
            target: target.to_string(),
            candidates,
        };
        let response = match &self.endpoint {
            Endpoint::Tcp(addr) => self.send_tcp(addr, &request)?,
            Endpoint::Http(url) => self.send_http(url, &request)?,
        };
        let probabilities = validate_response(&request.candidates, &response)?;
        Distribution::new(target, request.candidates, probabilities)
    }

    fn connect(&self, addr: &str) -> Result<BufReader<TcpStream>, BackendError> {
        if let Some(conn) = self.idle.lock().expect("pool lock").pop() {
            return Ok(conn);
        }
        let stream = TcpStream::connect(addr).map_err(|e| BackendError::Unavailable(format!("{addr}: {e}")))?;
        stream
            .set_read_timeout(Some(self.timeout))
            .and_then(|_| stream.set_write_timeout(Some(self.timeout)))
            .map_err(|e| BackendError::Unavailable(e.to_string()))?;
        let _ = stream.set_nodelay(true);
        Ok(BufReader::new(stream))
    }

    fn send_tcp(&self, addr: &str, request: &PredictRequest) -> Result<PredictResponse, BackendError> {
        let mut line = serde_json::to_string(request).expect("request serializes");
        line.push('\n');
        // A pooled connection may have been closed by the server; retry once on a fresh one.
        for attempt in 0..2 {
            let mut conn = self.connect(addr)?;
            match exchange(&mut conn, &line) {
                Ok(reply) => {
                    self.idle.lock().expect("pool lock").push(conn);
                    return parse_reply(&reply);
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock || e.kind() == ErrorKind::TimedOut => {
                    return Err(BackendError::Timeout(format!("{addr}: {e}")));
                }
                Err(e) if attempt == 1 => return Err(BackendError::Unavailable(format!("{addr}: {e}"))),
                Err(_) => continue,
            }
        }
        unreachable!("loop returns on the second attempt")
    }

    fn send_http(&self, url: &str, request: &PredictRequest) -> Result<PredictResponse, BackendError> {
        let mut resp = self.agent.post(url).send_json(request).map_err(|e| match e {
            ureq::Error::Timeout(_) => BackendError::Timeout(format!("{url}: {e}")),
            other => BackendError::Unavailable(format!("{url}: {other}")),
        })?;
        let status = resp.status();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Unavailable(format!("{url}: HTTP {status}: {body}")));
        }
        parse_reply(&body)
    }
}

fn exchange(conn: &mut BufReader<TcpStream>, line: &str) -> std::io::Result<String> {
    conn.get_mut().write_all(line.as_bytes())?;
    conn.get_mut().flush()?;
    let mut reply = String::new();
    if conn.read_line(&mut reply)? == 0 {
        return Err(std::io::Error::new(ErrorKind::UnexpectedEof, "connection closed"));
    }
    Ok(reply)
}

fn parse_reply(text: &str) -> Result<PredictResponse, BackendError> {
    let value: serde_json::Value =
        serde_json::from_str(text.trim()).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
    if let Some(err) = value.get("error").and_then(|e| e.as_str()) {
        return Err(BackendError::Unavailable(format!("backend reported: {err}")));
    }
    serde_json::from_value(value).map_err(|e| BackendError::MalformedResponse(e.to_string()))
}

impl Backend for ExternalBackend {
    fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    fn predict(&self, evidence: &EvidenceSet, target: &str) -> Result<Distribution, BackendError> {
        self.external_predict(evidence, target)
    }

    fn family(&self) -> BackendFamily {
        BackendFamily::External
    }
}
