//! Domain types shared by every other module. No I/O lives here.

mod cefr;
mod phase;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub use cefr::{parse_cefr_label, CefrLevel};
pub use phase::{validate_transition, TaskPhase};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnerProfile {
    pub learner_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub native_language: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cultural_background: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motivation: Option<String>,
    /// Set only once an assessment with sufficient input has completed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assessed_level: Option<CefrLevel>,
}

impl LearnerProfile {
    pub fn new(learner_id: impl Into<String>) -> Self {
        LearnerProfile {
            learner_id: learner_id.into(),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.learner_id.trim().is_empty() {
            return Err(Error::Config("learner_id must not be empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Agent,
    Learner,
    System,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Agent => "agent",
            Role::Learner => "learner",
            Role::System => "system",
        }
    }
}

impl FromStr for Role {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "agent" => Ok(Role::Agent),
            "learner" => Ok(Role::Learner),
            "system" => Ok(Role::System),
            _ => Err(format!("unknown role {s:?}")),
        }
    }
}

/// Closed set of emotions the avatar can mirror.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Joy,
    Sadness,
    Surprise,
    Confusion,
    Frustration,
    #[default]
    Neutral,
}

impl EmotionLabel {
    pub const ALL: [EmotionLabel; 6] = [
        EmotionLabel::Joy,
        EmotionLabel::Sadness,
        EmotionLabel::Surprise,
        EmotionLabel::Confusion,
        EmotionLabel::Frustration,
        EmotionLabel::Neutral,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EmotionLabel::Joy => "joy",
            EmotionLabel::Sadness => "sadness",
            EmotionLabel::Surprise => "surprise",
            EmotionLabel::Confusion => "confusion",
            EmotionLabel::Frustration => "frustration",
            EmotionLabel::Neutral => "neutral",
        }
    }
}

impl fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EmotionLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EmotionLabel::ALL
            .into_iter()
            .find(|e| e.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown emotion label {s:?}"))
    }
}

/// One utterance in a session transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub seq: u64,
    pub role: Role,
    pub text: String,
    pub phase: TaskPhase,
    /// Wall-clock milliseconds since the Unix epoch.
    pub started_at: i64,
    pub ended_at: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response_latency_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion: Option<EmotionLabel>,
}

impl TurnRecord {
    pub fn validate(&self) -> Result<()> {
        if self.ended_at < self.started_at {
            return Err(Error::Precondition(format!("turn {} ends before it starts", self.seq)));
        }
        if self.role != Role::System && self.text.trim().is_empty() {
            return Err(Error::Precondition(format!(
                "{} turn {} has empty text",
                self.role.as_str(),
                self.seq
            )));
        }
        Ok(())
    }

    /// Whitespace-delimited word count.
    pub fn word_count(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

/// Physical setting a role-play takes place in.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum EnvironmentTag {
    Cafe,
    Supermarket,
    Restaurant,
    Street,
    Gallery,
    Office,
    Custom(String),
}

impl EnvironmentTag {
    pub fn key(&self) -> &str {
        match self {
            EnvironmentTag::Cafe => "cafe",
            EnvironmentTag::Supermarket => "supermarket",
            EnvironmentTag::Restaurant => "restaurant",
            EnvironmentTag::Street => "street",
            EnvironmentTag::Gallery => "gallery",
            EnvironmentTag::Office => "office",
            EnvironmentTag::Custom(_) => "custom",
        }
    }
}

impl fmt::Display for EnvironmentTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvironmentTag::Custom(t) => write!(f, "custom:{t}"),
            other => f.write_str(other.key()),
        }
    }
}

impl FromStr for EnvironmentTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "cafe" => EnvironmentTag::Cafe,
            "supermarket" => EnvironmentTag::Supermarket,
            "restaurant" => EnvironmentTag::Restaurant,
            "street" => EnvironmentTag::Street,
            "gallery" => EnvironmentTag::Gallery,
            "office" => EnvironmentTag::Office,
            other => match other.strip_prefix("custom:") {
                Some(t) => EnvironmentTag::Custom(t.to_string()),
                None if other == "custom" => EnvironmentTag::Custom(String::new()),
                None => return Err(format!("unknown environment tag {s:?}")),
            },
        })
    }
}

impl Serialize for EnvironmentTag {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EnvironmentTag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub scenario_id: String,
    pub title: String,
    pub scene_description: String,
    pub agent_role: String,
    pub learner_role: String,
    pub environment_tag: EnvironmentTag,
    pub difficulty: CefrLevel,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.scene_description.trim().is_empty() {
            return Err(Error::Precondition(format!(
                "scenario {} has no scene description",
                self.scenario_id
            )));
        }
        if self.agent_role.trim().eq_ignore_ascii_case(self.learner_role.trim()) {
            return Err(Error::Precondition(format!(
                "scenario {}: agent and learner share the role {:?}",
                self.scenario_id, self.agent_role
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssessmentResult {
    pub level: CefrLevel,
    pub rationale: String,
    pub input_word_count: usize,
    /// `false` marks a provisional level that must not reach the learner profile.
    pub sufficient: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneralFeedback {
    pub strength: String,
    pub improvement: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SummaryKind {
    Vocabulary,
    Grammar,
    Sentence,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryItem {
    pub item: String,
    pub kind: SummaryKind,
}

/// Three-part feedback given after a role-play.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackReport {
    pub general_feedback: GeneralFeedback,
    pub advice_moving_forward: String,
    pub language_summary: Vec<SummaryItem>,
    /// Some section could not be recovered from the model reply.
    #[serde(default)]
    pub incomplete: bool,
}

impl FeedbackReport {
    pub fn is_complete(&self) -> bool {
        !self.general_feedback.strength.trim().is_empty()
            && !self.general_feedback.improvement.trim().is_empty()
            && !self.advice_moving_forward.trim().is_empty()
            && !self.language_summary.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Single,
    #[default]
    Multi,
}

impl FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "single" => Ok(PromptMode::Single),
            "multi" => Ok(PromptMode::Multi),
            _ => Err(format!("prompt mode must be `single` or `multi`, got {s:?}")),
        }
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptMode::Single => "single",
            PromptMode::Multi => "multi",
        })
    }
}

/// Per-session knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub silence_threshold_s: f64,
    pub max_turns_per_phase: u32,
    pub prompt_mode: PromptMode,
    pub voice_id: String,
    /// History budget in approximate tokens (chars / 4).
    pub token_window_budget: usize,
    /// `host:port` of the avatar client, or `None` to disable OSC output.
    pub osc_target: Option<String>,
    pub log_dir: PathBuf,
    /// Optional wall-clock limit; the session ends once it is exceeded.
    pub session_time_limit_s: Option<f64>,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            silence_threshold_s: 2.0,
            max_turns_per_phase: 8,
            prompt_mode: PromptMode::Multi,
            voice_id: "alloy".into(),
            token_window_budget: 3000,
            osc_target: Some("127.0.0.1:9000".into()),
            log_dir: PathBuf::from("logs"),
            session_time_limit_s: None,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.silence_threshold_s.is_finite() && self.silence_threshold_s > 0.0) {
            return Err(Error::Config(format!(
                "silence_threshold_s must be positive, got {}",
                self.silence_threshold_s
            )));
        }
        if self.max_turns_per_phase == 0 {
            return Err(Error::Config("max_turns_per_phase must be at least 1".into()));
        }
        if self.token_window_budget == 0 {
            return Err(Error::Config("token_window_budget must be positive".into()));
        }
        if let Some(limit) = self.session_time_limit_s {
            if !(limit.is_finite() && limit > 0.0) {
                return Err(Error::Config("session_time_limit_s must be positive".into()));
            }
        }
        Ok(())
    }
}
