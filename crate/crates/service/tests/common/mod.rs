#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use clarify_core::backend::Backend;
use clarify_core::controller::ControllerConfig;
use clarify_core::parsing::Lexicon;
use clarify_service::app::{router, AppState};

/// A service bound to an ephemeral port on its own runtime thread.
pub struct TestService {
    pub base: String,
    pub state: Arc<AppState>,
    _runtime: tokio::runtime::Runtime,
}

impl TestService {
    pub fn start(backend: Arc<dyn Backend>, config: ControllerConfig) -> Self {
        Self::start_with_idle(backend, config, clarify_service::app::DEFAULT_IDLE)
    }

    pub fn start_with_idle(backend: Arc<dyn Backend>, config: ControllerConfig, idle: Duration) -> Self {
        let schema = Arc::new(backend.schema().clone());
        let lexicon = Arc::new(Lexicon::reference(schema).unwrap());
        let state = Arc::new(AppState::new(backend, lexicon, config).with_idle_timeout(idle));
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        let listener = runtime.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let app = router(state.clone(), None);
        runtime.spawn(async move {
            axum::serve(listener, app).await.unwrap();
        });
        Self {
            base,
            state,
            _runtime: runtime,
        }
    }
}

pub fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(30)))
        .build()
        .into()
}

/// Status and JSON body of a request.
pub fn post(agent: &ureq::Agent, url: &str, body: serde_json::Value) -> (u16, serde_json::Value) {
    let mut resp = agent.post(url).send_json(&body).unwrap();
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().unwrap();
    (
        status,
        serde_json::from_str(&text).unwrap_or(serde_json::Value::String(text)),
    )
}

pub fn get(agent: &ureq::Agent, url: &str) -> (u16, serde_json::Value) {
    let mut resp = agent.get(url).call().unwrap();
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().unwrap();
    (
        status,
        serde_json::from_str(&text).unwrap_or(serde_json::Value::String(text)),
    )
}
