//! OpenAI-compatible vision-chat client with a content-addressed response
//! cache.

mod cache;
mod client;
mod config;

pub use cache::ResponseCache;
pub use client::{request_fingerprint, BackendClient, ClientError, ModelResponse, Role, Turn};
pub use config::{BackendConfig, ConfigError, Registry};
