//! Short-term history windowing and long-term session summaries.

mod store;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::ChatBackend;
use crate::prompt::{format_transcript, ChatMessage};
use crate::session::{CefrLevel, LearnerProfile, Role, TurnRecord};

pub use store::{JsonlStore, MemoryStore, SUMMARY_SCHEMA_VERSION};

/// Approximate token cost of a turn (chars / 4, rounded up).
pub fn token_cost(turn: &TurnRecord) -> usize {
    turn.text.chars().count().div_ceil(4)
}

/// Longest suffix of `turns` that fits `budget`, extended if needed so the
/// final learner turn is always included.
pub fn window(turns: &[TurnRecord], budget: usize) -> &[TurnRecord] {
    let mut start = turns.len();
    let mut used = 0usize;
    while start > 0 {
        let cost = token_cost(&turns[start - 1]);
        if used + cost > budget {
            break;
        }
        used += cost;
        start -= 1;
    }
    if let Some(last_learner) = turns.iter().rposition(|t| t.role == Role::Learner) {
        start = start.min(last_learner);
    }
    &turns[start..]
}

/// Append-only in-session history.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShortTermMemory {
    turns: Vec<TurnRecord>,
}

impl ShortTermMemory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, turn: TurnRecord) -> Result<()> {
        if let Some(last) = self.turns.last() {
            if turn.seq <= last.seq {
                return Err(Error::Precondition(format!(
                    "turn seq {} does not follow {}",
                    turn.seq, last.seq
                )));
            }
        }
        turn.validate()?;
        self.turns.push(turn);
        Ok(())
    }

    pub fn turns(&self) -> &[TurnRecord] {
        &self.turns
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn window(&self, budget: usize) -> &[TurnRecord] {
        window(&self.turns, budget)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub learner_id: String,
    pub session_id: String,
    /// Milliseconds since the Unix epoch.
    pub created_at: i64,
    pub key_facts: Vec<String>,
    pub assessed_level: Option<CefrLevel>,
    pub scenarios_practiced: Vec<String>,
    pub summary_text: String,
}

const SUMMARY_INSTRUCTION: &str = "You keep notes for an English tutor. Summarize the key information from this tutoring session in two or three sentences, then list key facts about the learner as separate lines starting with \"- \".";

/// Facts the engine knows independently of the model's summary.
#[derive(Debug, Clone)]
pub struct SummaryContext<'a> {
    pub session_id: &'a str,
    pub profile: &'a LearnerProfile,
    pub scenarios_practiced: &'a [String],
    pub created_at: i64,
}

/// One completion turning a finished session into a stored summary.
///
/// Level and scenarios come from `ctx`, never from the model text.
pub fn summarize_session(
    turns: &[TurnRecord],
    ctx: &SummaryContext<'_>,
    backend: &dyn ChatBackend,
) -> Result<SessionSummary> {
    if !turns.iter().any(|t| t.role != Role::System) {
        return Err(Error::Precondition("cannot summarize an empty session".into()));
    }
    let messages = vec![
        ChatMessage::system(SUMMARY_INSTRUCTION),
        ChatMessage::user(format!("Summarize this session:\n{}", format_transcript(turns))),
    ];
    let reply = crate::llm::complete(backend, &messages, crate::llm::CONVERSATION_TEMPERATURE)?;
    let summary_text = reply.text.trim().to_string();
    if summary_text.is_empty() {
        return Err(Error::MalformedResponse {
            reason: "empty summary".into(),
            raw: reply.text,
        });
    }
    let key_facts = summary_text
        .lines()
        .filter_map(|l| {
            let l = l.trim();
            l.strip_prefix("- ").or_else(|| l.strip_prefix("* "))
        })
        .map(|f| f.trim().to_string())
        .filter(|f| !f.is_empty())
        .collect();
    Ok(SessionSummary {
        learner_id: ctx.profile.learner_id.clone(),
        session_id: ctx.session_id.to_string(),
        created_at: ctx.created_at,
        key_facts,
        assessed_level: ctx.profile.assessed_level,
        scenarios_practiced: ctx.scenarios_practiced.to_vec(),
        summary_text,
    })
}

/// The `k` newest summary texts for a learner, newest first, joined by blank lines.
pub fn recall(store: &dyn MemoryStore, learner_id: &str, k: usize) -> Result<Option<String>> {
    if k == 0 {
        return Err(Error::Precondition("recall needs k >= 1".into()));
    }
    let summaries = store.list_by_learner(learner_id)?;
    if summaries.is_empty() {
        return Ok(None);
    }
    Ok(Some(
        summaries
            .iter()
            .take(k)
            .map(|s| s.summary_text.as_str())
            .collect::<Vec<_>>()
            .join("\n\n"),
    ))
}
