//! Chat-completion backends: a live HTTP client and a scripted stand-in.

mod http;
mod scripted;

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prompt::{ChatMessage, ChatRole};

pub use http::{backoff_delays, BackendConfig, HttpBackend};
pub use scripted::{ScriptEntry, ScriptedBackend};

pub const CONVERSATION_TEMPERATURE: f32 = 0.7;
pub const DECISION_TEMPERATURE: f32 = 0.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompletionResult {
    pub text: String,
    /// Request start to last byte.
    pub latency_ms: u64,
    /// The backend stopped at its length limit.
    pub truncated: bool,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, messages: &[ChatMessage], temperature: f32) -> Result<CompletionResult>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<T> {
    fn complete(&self, messages: &[ChatMessage], temperature: f32) -> Result<CompletionResult> {
        (**self).complete(messages, temperature)
    }
}

impl<T: ChatBackend + ?Sized> ChatBackend for Box<T> {
    fn complete(&self, messages: &[ChatMessage], temperature: f32) -> Result<CompletionResult> {
        (**self).complete(messages, temperature)
    }
}

/// Checked entry point: the request must be non-empty and open with a system message.
pub fn complete(backend: &dyn ChatBackend, messages: &[ChatMessage], temperature: f32) -> Result<CompletionResult> {
    match messages.first() {
        None => return Err(Error::Precondition("no messages to complete".into())),
        Some(m) if m.role != ChatRole::System => {
            return Err(Error::Precondition("first message must have the system role".into()))
        }
        _ => {}
    }
    if let Some(i) = messages.iter().position(|m| m.content.is_empty()) {
        return Err(Error::Precondition(format!("message {i} has empty content")));
    }
    backend.complete(messages, temperature)
}

fn decision_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(yes|no)\b").expect("static regex"))
}

/// Last word-bounded YES/NO token, case-insensitive.
pub fn parse_decision(text: &str) -> Option<bool> {
    decision_regex()
        .find_iter(text)
        .last()
        .map(|m| m.as_str().eq_ignore_ascii_case("yes"))
}
