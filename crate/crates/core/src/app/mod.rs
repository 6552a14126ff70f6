//! Executable surface: configuration, session loops, CSV transcripts and the
//! operator gateway.

mod config;
mod gateway;
mod runner;
mod text;
mod transcript;
mod voice;

pub use config::{
    AppConfig, GatewaySettings, MemorySettings, SpeechAdapter, SpeechKind, SpeechSettings, CONFIG_ENV,
    DEFAULT_GATEWAY_PORT,
};
pub use gateway::{serve_gateway, ClientFrame, GatewayHandle, OperatorCommand, RuntimeFactory};
pub use runner::{Runtime, SessionEventEnvelope, SessionRunner, SCRIPTED_EPOCH_MS, SCRIPTED_STEP_MS};
pub use text::{replay, run_text_session, ReplayReport, SessionOutcome};
pub use transcript::{iso_ms, parse_iso_ms, read_csv, read_csv_from, write_csv, write_csv_to, CSV_HEADER};
pub use voice::{audio_source, run_voice_session, segment_clip, VoiceIo};
