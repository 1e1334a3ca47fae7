use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use base64::Engine;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::cache::ResponseCache;
use super::config::BackendConfig;

const BODY_EXCERPT: usize = 512;

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("{backend}: request failed after {attempts} attempt(s){}: {body}", status.map(|s| format!(" with HTTP {s}")).unwrap_or_default())]
    Transport {
        backend: String,
        status: Option<u16>,
        body: String,
        attempts: u32,
    },
    #[error("{backend}: timed out after {attempts} attempt(s)")]
    Timeout { backend: String, attempts: u32 },
    #[error("cannot read image {path}: {source}")]
    Input {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{backend}: malformed response: {message}")]
    Protocol { backend: String, message: String },
    #[error("{backend}: no cached response for {fingerprint} (offline)")]
    CacheMiss {
        backend: String,
        fingerprint: String,
    },
    #[error("response cache: {0}")]
    Cache(#[source] std::io::Error),
    #[error("http client: {0}")]
    Setup(String),
}

impl ClientError {
    /// True when the endpoint itself could not be reached or kept failing.
    pub fn is_transport(&self) -> bool {
        matches!(
            self,
            ClientError::Transport { .. } | ClientError::Timeout { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub role: Role,
    pub text: String,
    pub image: Option<PathBuf>,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Turn {
            role: Role::User,
            text: text.into(),
            image: None,
        }
    }

    pub fn user_with_image(text: impl Into<String>, image: impl Into<PathBuf>) -> Self {
        Turn {
            role: Role::User,
            text: text.into(),
            image: Some(image.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelResponse {
    pub text: String,
    pub backend_name: String,
    pub latency_ms: f64,
    pub from_cache: bool,
    pub request_fingerprint: String,
}

struct LoadedTurn<'a> {
    turn: &'a Turn,
    image: Option<(Vec<u8>, &'static str)>,
}

fn mime_for(path: &Path) -> &'static str {
    match path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .as_deref()
    {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("gif") => "image/gif",
        Some("webp") => "image/webp",
        _ => "image/png",
    }
}

fn load_turns(turns: &[Turn]) -> Result<Vec<LoadedTurn<'_>>, ClientError> {
    turns
        .iter()
        .map(|turn| {
            let image = match &turn.image {
                Some(path) => {
                    let bytes = std::fs::read(path).map_err(|source| ClientError::Input {
                        path: path.clone(),
                        source,
                    })?;
                    Some((bytes, mime_for(path)))
                }
                None => None,
            };
            Ok(LoadedTurn { turn, image })
        })
        .collect()
}

fn hash_field(hasher: &mut Sha256, tag: &[u8], bytes: &[u8]) {
    hasher.update(tag);
    hasher.update((bytes.len() as u64).to_le_bytes());
    hasher.update(bytes);
}

/// Digest over everything that determines a completion: backend name, model
/// id, temperature, max_tokens, and each turn's role, text and image bytes.
/// Timeouts and retry settings are deliberately excluded.
fn fingerprint(config: &BackendConfig, turns: &[LoadedTurn<'_>]) -> String {
    let mut h = Sha256::new();
    hash_field(&mut h, b"backend", config.name.as_bytes());
    hash_field(&mut h, b"model", config.model_id.as_bytes());
    hash_field(
        &mut h,
        b"temperature",
        &config.temperature.to_bits().to_le_bytes(),
    );
    hash_field(&mut h, b"max_tokens", &config.max_tokens.to_le_bytes());
    for t in turns {
        hash_field(&mut h, b"role", t.turn.role.as_str().as_bytes());
        hash_field(&mut h, b"text", t.turn.text.as_bytes());
        match &t.image {
            Some((bytes, _)) => hash_field(&mut h, b"image", bytes),
            None => hash_field(&mut h, b"noimage", &[]),
        }
    }
    hex::encode(h.finalize())
}

/// Fingerprint of a request without sending it. Reads image files.
pub fn request_fingerprint(config: &BackendConfig, turns: &[Turn]) -> Result<String, ClientError> {
    Ok(fingerprint(config, &load_turns(turns)?))
}

fn request_body(config: &BackendConfig, turns: &[LoadedTurn<'_>]) -> Value {
    let messages: Vec<Value> = turns
        .iter()
        .map(|t| match &t.image {
            Some((bytes, mime)) => {
                let data = base64::engine::general_purpose::STANDARD.encode(bytes);
                json!({
                    "role": t.turn.role.as_str(),
                    "content": [
                        {"type": "image_url", "image_url": {"url": format!("data:{mime};base64,{data}")}},
                        {"type": "text", "text": t.turn.text},
                    ],
                })
            }
            None => json!({"role": t.turn.role.as_str(), "content": t.turn.text}),
        })
        .collect();
    json!({
        "model": config.model_id,
        "temperature": config.temperature,
        "max_tokens": config.max_tokens,
        "messages": messages,
    })
}

/// First choice's message content. Content given as a list of parts is
/// concatenated over its text parts.
fn completion_text(body: &Value) -> Option<String> {
    let content = body
        .get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect(),
        ),
        _ => None,
    }
}

fn excerpt(body: &str) -> String {
    match body.char_indices().nth(BODY_EXCERPT) {
        Some((idx, _)) => format!("{}...", &body[..idx]),
        None => body.to_string(),
    }
}

enum Attempt {
    Done(String),
    Retry(ClientError),
    Fail(ClientError),
}

/// Chat client for one backend. Shareable across tasks; identical in-flight
/// requests are coalesced so only one reaches the endpoint.
pub struct BackendClient {
    config: BackendConfig,
    http: reqwest::Client,
    cache: ResponseCache,
    offline: bool,
    inflight: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
    network_requests: AtomicUsize,
    cache_hits: AtomicUsize,
}

impl BackendClient {
    pub fn new(config: BackendConfig, cache: ResponseCache) -> Result<Self, ClientError> {
        let http = reqwest::Client::builder()
            .timeout(config.timeout())
            .build()
            .map_err(|e| ClientError::Setup(e.to_string()))?;
        Ok(BackendClient {
            config,
            http,
            cache,
            offline: false,
            inflight: Mutex::new(HashMap::new()),
            network_requests: AtomicUsize::new(0),
            cache_hits: AtomicUsize::new(0),
        })
    }

    /// In offline mode a cache miss is an error and nothing is sent.
    pub fn offline(mut self, offline: bool) -> Self {
        self.offline = offline;
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    pub fn cache(&self) -> &ResponseCache {
        &self.cache
    }

    /// Completion requests sent over the network, retries included.
    pub fn network_requests(&self) -> usize {
        self.network_requests.load(Ordering::SeqCst)
    }

    pub fn cache_hits(&self) -> usize {
        self.cache_hits.load(Ordering::SeqCst)
    }

    fn inflight_guard(&self, fingerprint: &str) -> Arc<tokio::sync::Mutex<()>> {
        let mut map = self.inflight.lock().expect("inflight map poisoned");
        map.entry(fingerprint.to_string()).or_default().clone()
    }

    fn release_guard(&self, fingerprint: &str, guard: Arc<tokio::sync::Mutex<()>>) {
        let mut map = self.inflight.lock().expect("inflight map poisoned");
        // Only this caller and the map still hold it.
        if Arc::strong_count(&guard) <= 2 {
            map.remove(fingerprint);
        }
    }

    pub async fn chat(&self, turns: &[Turn]) -> Result<ModelResponse, ClientError> {
        let loaded = load_turns(turns)?;
        let fp = fingerprint(&self.config, &loaded);
        let guard = self.inflight_guard(&fp);
        let result = {
            let _lock = guard.lock().await;
            self.chat_locked(&loaded, &fp).await
        };
        self.release_guard(&fp, guard);
        result
    }

    async fn chat_locked(
        &self,
        turns: &[LoadedTurn<'_>],
        fp: &str,
    ) -> Result<ModelResponse, ClientError> {
        if let Some(text) = self.cache.get(fp).map_err(ClientError::Cache)? {
            self.cache_hits.fetch_add(1, Ordering::SeqCst);
            return Ok(ModelResponse {
                text,
                backend_name: self.config.name.clone(),
                latency_ms: 0.0,
                from_cache: true,
                request_fingerprint: fp.to_string(),
            });
        }
        if self.offline {
            return Err(ClientError::CacheMiss {
                backend: self.config.name.clone(),
                fingerprint: fp.to_string(),
            });
        }
        let body = request_body(&self.config, turns);
        let started = Instant::now();
        let text = self.send_with_retries(&body).await?;
        let latency_ms = started.elapsed().as_secs_f64() * 1000.0;
        self.cache.put(fp, &text).map_err(ClientError::Cache)?;
        Ok(ModelResponse {
            text,
            backend_name: self.config.name.clone(),
            latency_ms,
            from_cache: false,
            request_fingerprint: fp.to_string(),
        })
    }

    fn backoff(&self, retry: u32) -> Duration {
        let base = self.config.retry_base_ms as f64;
        let exp = base * 2f64.powi(retry.min(16) as i32);
        let jitter = rand::rng().random_range(0.0..=base.max(1.0));
        let ms = (exp + jitter).min(self.config.timeout * 1000.0);
        Duration::from_secs_f64(ms / 1000.0)
    }

    async fn send_with_retries(&self, body: &Value) -> Result<String, ClientError> {
        let total = self.config.max_retries + 1;
        let mut last = None;
        for attempt in 1..=total {
            if attempt > 1 {
                tokio::time::sleep(self.backoff(attempt - 2)).await;
            }
            match self.attempt(body, attempt).await {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fail(err) => return Err(err),
                Attempt::Retry(err) => {
                    log::warn!("{err}");
                    last = Some(err);
                }
            }
        }
        Err(last.expect("at least one attempt"))
    }

    async fn attempt(&self, body: &Value, attempt: u32) -> Attempt {
        let backend = self.config.name.clone();
        self.network_requests.fetch_add(1, Ordering::SeqCst);
        let mut req = self.http.post(self.config.completions_url()).json(body);
        if let Some(key) = self.config.api_key() {
            req = req.bearer_auth(key);
        }
        let resp = match req.send().await {
            Ok(r) => r,
            Err(e) if e.is_timeout() => {
                return Attempt::Retry(ClientError::Timeout {
                    backend,
                    attempts: attempt,
                })
            }
            Err(e) => {
                return Attempt::Retry(ClientError::Transport {
                    backend,
                    status: None,
                    body: e.to_string(),
                    attempts: attempt,
                })
            }
        };
        let status = resp.status();
        let text = match resp.text().await {
            Ok(t) => t,
            Err(e) if e.is_timeout() => {
                return Attempt::Retry(ClientError::Timeout {
                    backend,
                    attempts: attempt,
                })
            }
            Err(e) => e.to_string(),
        };
        if !status.is_success() {
            let err = ClientError::Transport {
                backend,
                status: Some(status.as_u16()),
                body: excerpt(&text),
                attempts: attempt,
            };
            return if status.is_server_error() || status.as_u16() == 429 {
                Attempt::Retry(err)
            } else {
                Attempt::Fail(err)
            };
        }
        let parsed = serde_json::from_str::<Value>(&text)
            .ok()
            .and_then(|v| completion_text(&v));
        match parsed {
            Some(t) => Attempt::Done(t),
            None => Attempt::Fail(ClientError::Protocol {
                backend,
                message: format!("no choices[0].message.content in {}", excerpt(&text)),
            }),
        }
    }

    /// Sends a one-token text-only request; true iff it completes within the
    /// configured timeout. Bypasses the cache and does not retry.
    pub async fn probe(&self) -> bool {
        let body = json!({
            "model": self.config.model_id,
            "temperature": self.config.temperature,
            "max_tokens": 1,
            "messages": [{"role": "user", "content": "ping"}],
        });
        let mut req = self.http.post(self.config.completions_url()).json(&body);
        if let Some(key) = self.config.api_key() {
            req = req.bearer_auth(key);
        }
        let call = async {
            let resp = req.send().await.ok()?;
            if !resp.status().is_success() {
                return None;
            }
            let v: Value = resp.json().await.ok()?;
            completion_text(&v)
        };
        matches!(
            tokio::time::timeout(self.config.timeout(), call).await,
            Ok(Some(_))
        )
    }
}
