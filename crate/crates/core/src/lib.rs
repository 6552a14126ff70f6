//! Conversation engine for phase-structured spoken-language tutoring.
//!
//! A session walks Introduction, Assessment, ScenarioSelection, RolePlay and
//! Feedback under engine control, talking to a chat-completion backend through
//! per-task prompt templates. Speech, avatar control (OSC over UDP), long-term
//! memory and the operator gateway are layered around the [`workflow`] core.

pub mod app;
pub mod embodiment;
pub mod error;
pub mod llm;
pub mod memory;
pub mod pedagogy;
pub mod prompt;
pub mod session;
pub mod speech;
pub mod workflow;

pub use error::{Error, Result};
pub use session::{
    AssessmentResult, CefrLevel, EmotionLabel, FeedbackReport, LearnerProfile, PromptMode, Role, Scenario,
    SessionConfig, TaskPhase, TurnRecord,
};
