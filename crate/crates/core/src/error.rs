use std::path::PathBuf;

use crate::session::TaskPhase;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("illegal transition {from} -> {to}")]
    Protocol { from: TaskPhase, to: TaskPhase },

    #[error("phase {phase} already holds {max} learner turns")]
    PhaseCap { phase: TaskPhase, max: u32 },

    #[error("session has ended")]
    SessionEnded,

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("template {template}: unbound slot `{slot}`")]
    UnboundSlot { template: String, slot: String },

    #[error("template error: {0}")]
    Template(String),

    #[error("backend unavailable after {attempts} attempt(s): {reason}")]
    BackendUnavailable { attempts: u32, reason: String },

    #[error("malformed backend response: {reason}")]
    MalformedResponse { reason: String, raw: String },

    #[error("scripted backend has no reply left for this request")]
    ScriptExhausted,

    #[error("assessment failed: {0}")]
    Assessment(String),

    #[error("transcription failed: {0}")]
    Transcription(String),

    #[error("synthesis failed: {0}")]
    Synthesis(String),

    #[error("audio stream error: {0}")]
    Stream(String),

    #[error("OSC encoding error: {0}")]
    OscEncode(String),

    #[error("OSC decoding error: {0}")]
    OscDecode(String),

    #[error("invalid data in {path}: {reason}")]
    Data { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Errors a caller may recover from by retrying the same turn later.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            Error::BackendUnavailable { .. } | Error::MalformedResponse { .. } | Error::ScriptExhausted
        )
    }
}
