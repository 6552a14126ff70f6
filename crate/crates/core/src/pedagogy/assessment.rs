use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::{self, ChatBackend, CONVERSATION_TEMPERATURE, DECISION_TEMPERATURE};
use crate::prompt::{format_transcript, ChatMessage, PromptLibrary, TemplateId};
use crate::session::{parse_cefr_label, AssessmentResult, CefrLevel, Role, TaskPhase, TurnRecord};

/// Local length gates that must pass before the model is asked to assess.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SufficiencyGates {
    pub min_words: usize,
    /// Cumulative learner speech, used only when audio timing exists.
    pub min_speech_s: f64,
}

impl Default for SufficiencyGates {
    fn default() -> Self {
        SufficiencyGates {
            min_words: 40,
            min_speech_s: 30.0,
        }
    }
}

pub fn learner_word_count(history: &[TurnRecord]) -> usize {
    history
        .iter()
        .filter(|t| t.role == Role::Learner)
        .map(TurnRecord::word_count)
        .sum()
}

/// Has the learner said enough to be assessed?
///
/// A length gate (words, or speech time when `speech_ms` is known) and a
/// YES from the decision prompt are both required. The backend is not
/// consulted when the length gate fails; backend errors count as "no".
pub fn judge_sufficiency(
    history: &[TurnRecord],
    gates: &SufficiencyGates,
    speech_ms: Option<u64>,
    backend: &dyn ChatBackend,
    prompts: &PromptLibrary,
) -> bool {
    let words_ok = learner_word_count(history) >= gates.min_words;
    let speech_ok = speech_ms.is_some_and(|ms| ms as f64 >= gates.min_speech_s * 1000.0);
    if !(words_ok || speech_ok) {
        return false;
    }
    let messages = match prompts.render_decision(TaskPhase::Assessment, history) {
        Ok(m) => m,
        Err(e) => {
            log::warn!("assessment decision prompt: {e}");
            return false;
        }
    };
    match llm::complete(backend, &messages, DECISION_TEMPERATURE) {
        Ok(r) => llm::parse_decision(&r.text).unwrap_or(false),
        Err(e) => {
            log::warn!("assessment decision failed, asking a follow-up instead: {e}");
            false
        }
    }
}

const ASSESS_NOW: &str = "I have finished my answer. Based on our conversation, tell me my assessment result now and name exactly one CEFR level (A1, A2, B1, B2, C1 or C2).";
const ASSESS_STRICT: &str = "Your previous reply did not name a CEFR level. Reply again, starting with exactly one level label (A1, A2, B1, B2, C1 or C2), followed by one or two sentences explaining why.";

/// Ask the model for a CEFR level over `history`.
///
/// One retry with a stricter instruction if the reply names no level.
pub fn assess_level(
    history: &[TurnRecord],
    persona: &ChatMessage,
    backend: &dyn ChatBackend,
    prompts: &PromptLibrary,
) -> Result<AssessmentResult> {
    let slots = HashMap::from([("user_info_conversation", format_transcript(history))]);
    let mut messages = vec![persona.clone()];
    messages.extend(prompts.render(TemplateId::Assessment, &slots)?);
    messages.push(ChatMessage::user(ASSESS_NOW));
    let input_word_count = learner_word_count(history);

    let first = llm::complete(backend, &messages, CONVERSATION_TEMPERATURE)?;
    if let Some(level) = parse_cefr_label(&first.text) {
        return Ok(result(level, &first.text, input_word_count));
    }
    log::warn!("assessment reply named no level; retrying once");
    if !first.text.trim().is_empty() {
        messages.push(ChatMessage::assistant(first.text.clone()));
    }
    messages.push(ChatMessage::system(ASSESS_STRICT));
    let second = llm::complete(backend, &messages, CONVERSATION_TEMPERATURE)?;
    match parse_cefr_label(&second.text) {
        Some(level) => Ok(result(level, &second.text, input_word_count)),
        None => Err(Error::Assessment(format!(
            "no CEFR level in reply after retry: {:?}",
            second.text
        ))),
    }
}

fn result(level: CefrLevel, text: &str, input_word_count: usize) -> AssessmentResult {
    AssessmentResult {
        level,
        rationale: text.trim().to_string(),
        input_word_count,
        sufficient: true,
    }
}

/// Placeholder level when the phase cap closes assessment without enough input.
pub fn provisional_assessment(input_word_count: usize) -> AssessmentResult {
    AssessmentResult {
        level: CefrLevel::A1,
        rationale: "provisional: the assessment phase ended before the learner gave enough input".into(),
        input_word_count,
        sufficient: false,
    }
}
