#![allow(dead_code)]

use std::collections::VecDeque;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::{Json, Router};
use serde_json::{json, Value};

use figqa_core::backend::{BackendClient, BackendConfig, ResponseCache};
use figqa_core::dataset::QARecord;

pub struct Reply {
    pub status: u16,
    pub text: String,
    pub delay: Duration,
}

impl Reply {
    pub fn ok(text: impl Into<String>) -> Self {
        Reply {
            status: 200,
            text: text.into(),
            delay: Duration::ZERO,
        }
    }

    pub fn status(status: u16) -> Self {
        Reply {
            status,
            text: format!("scripted {status}"),
            delay: Duration::ZERO,
        }
    }

    pub fn after(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

pub type Handler = Arc<dyn Fn(&str) -> Reply + Send + Sync>;

struct MockState {
    hits: AtomicUsize,
    inflight: AtomicUsize,
    max_inflight: AtomicUsize,
    script: Mutex<VecDeque<u16>>,
    prompts: Mutex<Vec<String>>,
    images: AtomicUsize,
    handler: Handler,
}

/// OpenAI-style chat endpoint driven by a per-request handler that sees the
/// text of the last user message.
pub struct MockServer {
    pub url: String,
    state: Arc<MockState>,
}

fn last_text(body: &Value) -> (String, bool) {
    let Some(content) = body["messages"]
        .as_array()
        .and_then(|m| m.last())
        .map(|m| &m["content"])
    else {
        return (String::new(), false);
    };
    if let Some(s) = content.as_str() {
        return (s.to_string(), false);
    }
    let parts = content.as_array().cloned().unwrap_or_default();
    let text = parts
        .iter()
        .filter(|p| p["type"] == "text")
        .filter_map(|p| p["text"].as_str())
        .collect::<Vec<_>>()
        .join("");
    let image = parts.iter().any(|p| p["type"] == "image_url");
    (text, image)
}

async fn complete(
    State(state): State<Arc<MockState>>,
    Json(body): Json<Value>,
) -> (StatusCode, Json<Value>) {
    state.hits.fetch_add(1, Ordering::SeqCst);
    let now = state.inflight.fetch_add(1, Ordering::SeqCst) + 1;
    state.max_inflight.fetch_max(now, Ordering::SeqCst);
    let (text, image) = last_text(&body);
    if image {
        state.images.fetch_add(1, Ordering::SeqCst);
    }
    state.prompts.lock().unwrap().push(text.clone());
    let scripted = state.script.lock().unwrap().pop_front();
    let reply = match scripted {
        Some(status) => Reply::status(status),
        None => (state.handler)(&text),
    };
    tokio::time::sleep(reply.delay).await;
    state.inflight.fetch_sub(1, Ordering::SeqCst);
    let status = StatusCode::from_u16(reply.status).unwrap();
    if status.is_success() {
        (
            status,
            Json(
                json!({"choices": [{"index": 0, "message": {"role": "assistant", "content": reply.text}}]}),
            ),
        )
    } else {
        (status, Json(json!({"error": reply.text})))
    }
}

impl MockServer {
    pub async fn start(handler: impl Fn(&str) -> Reply + Send + Sync + 'static) -> Self {
        let state = Arc::new(MockState {
            hits: AtomicUsize::new(0),
            inflight: AtomicUsize::new(0),
            max_inflight: AtomicUsize::new(0),
            script: Mutex::new(VecDeque::new()),
            prompts: Mutex::new(Vec::new()),
            images: AtomicUsize::new(0),
            handler: Arc::new(handler),
        });
        let app = Router::new()
            .route("/v1/chat/completions", post(complete))
            .with_state(state.clone());
        let listener = tokio::net::TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], 0)))
            .await
            .unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        tokio::spawn(async move {
            axum::serve(listener, app).await.unwrap();
        });
        MockServer { url, state }
    }

    /// Always answers `text`.
    pub async fn fixed(text: &'static str) -> Self {
        Self::start(move |_| Reply::ok(text)).await
    }

    /// Statuses returned, in order, before the handler is consulted.
    pub fn script(&self, statuses: &[u16]) {
        self.state
            .script
            .lock()
            .unwrap()
            .extend(statuses.iter().copied());
    }

    pub fn hits(&self) -> usize {
        self.state.hits.load(Ordering::SeqCst)
    }

    pub fn max_inflight(&self) -> usize {
        self.state.max_inflight.load(Ordering::SeqCst)
    }

    pub fn images(&self) -> usize {
        self.state.images.load(Ordering::SeqCst)
    }

    pub fn prompts(&self) -> Vec<String> {
        self.state.prompts.lock().unwrap().clone()
    }

    pub fn config(&self, name: &str) -> BackendConfig {
        let mut c = BackendConfig::new(name, &self.url, "mock-model");
        c.timeout = 10.0;
        c.retry_base_ms = 5;
        c
    }

    pub fn client(&self, name: &str, cache: ResponseCache) -> BackendClient {
        BackendClient::new(self.config(name), cache).unwrap()
    }
}

/// Config pointing at a port nothing listens on.
pub fn dead_config(name: &str) -> BackendConfig {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    drop(listener);
    let mut c = BackendConfig::new(name, &format!("http://127.0.0.1:{port}"), "none");
    c.timeout = 2.0;
    c.max_retries = 0;
    c
}

/// Writes a small distinct image file for every record under `root`.
pub fn write_images(root: &Path, records: &[QARecord]) {
    for r in records {
        let path = root.join(&r.figure_path);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, format!("\u{89}PNG fake {}", r.instance_id)).unwrap();
    }
}

/// Extracts the id from the "What does figure {id} show?" fixture question.
pub fn fixture_id(prompt: &str) -> Option<&str> {
    let start = prompt.find("What does figure ")? + "What does figure ".len();
    let end = prompt[start..].find(" show?")? + start;
    Some(&prompt[start..end])
}
