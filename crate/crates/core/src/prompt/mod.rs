//! Per-task prompt templates and request composition.
//!
//! Templates live as plain-text files, one file per chat message:
//!
//! ```text
//! templates/<template_id>/<NN>-<role>.txt
//! ```
//!
//! `NN` orders the messages and `role` is `system`, `user` or `assistant`.
//! Slots are written `{name}`; the only legal names are listed in
//! [`SLOT_NAMES`]. The built-in set is compiled into the binary, and a
//! directory with the same layout can replace it at runtime.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory;
use crate::session::{Role, TaskPhase, TurnRecord};

pub const SLOT_NAMES: [&str; 4] = [
    "user_info_conversation",
    "assessment",
    "scenario",
    "role_play_conversations",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

impl ChatRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ChatRole::System => "system",
            ChatRole::User => "user",
            ChatRole::Assistant => "assistant",
        }
    }
}

impl FromStr for ChatRole {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "system" => Ok(ChatRole::System),
            "user" => Ok(ChatRole::User),
            "assistant" => Ok(ChatRole::Assistant),
            _ => Err(format!("unknown chat role {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: ChatRole, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(ChatRole::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(ChatRole::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(ChatRole::Assistant, content)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Persona,
    Introduction,
    Assessment,
    ScenarioMenu,
    RolePlay,
    Feedback,
    Decision,
    SinglePrompt,
}

impl TemplateId {
    pub const ALL: [TemplateId; 8] = [
        TemplateId::Persona,
        TemplateId::Introduction,
        TemplateId::Assessment,
        TemplateId::ScenarioMenu,
        TemplateId::RolePlay,
        TemplateId::Feedback,
        TemplateId::Decision,
        TemplateId::SinglePrompt,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Persona => "persona",
            TemplateId::Introduction => "introduction",
            TemplateId::Assessment => "assessment",
            TemplateId::ScenarioMenu => "scenario_menu",
            TemplateId::RolePlay => "role_play",
            TemplateId::Feedback => "feedback",
            TemplateId::Decision => "decision",
            TemplateId::SinglePrompt => "single_prompt",
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TemplateId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        TemplateId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| format!("unknown template {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub messages: Vec<(ChatRole, String)>,
}

impl PromptTemplate {
    /// Slot names referenced by the template, in first-use order.
    pub fn slots(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for (_, text) in &self.messages {
            for c in slot_regex().captures_iter(text) {
                let name = c.get(1).unwrap().as_str();
                if !out.contains(&name) {
                    out.push(name);
                }
            }
        }
        out
    }

    fn check_slots(&self) -> Result<()> {
        for name in self.slots() {
            if !SLOT_NAMES.contains(&name) {
                return Err(Error::Template(format!("{}: unknown slot `{{{name}}}`", self.id)));
            }
        }
        Ok(())
    }
}

fn slot_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{([A-Za-z_][A-Za-z0-9_]*)\}").expect("static regex"))
}

macro_rules! builtin {
    ($dir:literal, $file:literal) => {
        ($file, include_str!(concat!("../../templates/", $dir, "/", $file)))
    };
}

fn builtin_files(id: TemplateId) -> Vec<(&'static str, &'static str)> {
    match id {
        TemplateId::Persona => vec![builtin!("persona", "01-system.txt")],
        TemplateId::Introduction => vec![builtin!("introduction", "01-user.txt")],
        TemplateId::Assessment => vec![
            builtin!("assessment", "01-system.txt"),
            builtin!("assessment", "02-user.txt"),
        ],
        TemplateId::ScenarioMenu => vec![
            builtin!("scenario_menu", "01-system.txt"),
            builtin!("scenario_menu", "02-assistant.txt"),
        ],
        TemplateId::RolePlay => vec![
            builtin!("role_play", "01-system.txt"),
            builtin!("role_play", "02-assistant.txt"),
        ],
        TemplateId::Feedback => vec![
            builtin!("feedback", "01-system.txt"),
            builtin!("feedback", "02-assistant.txt"),
        ],
        TemplateId::Decision => vec![builtin!("decision", "01-system.txt")],
        TemplateId::SinglePrompt => vec![builtin!("single_prompt", "01-system.txt")],
    }
}

fn parse_file_name(id: TemplateId, name: &str) -> Result<(String, ChatRole)> {
    let stem = name
        .strip_suffix(".txt")
        .ok_or_else(|| Error::Template(format!("{id}: {name} is not a .txt file")))?;
    let (order, role) = stem
        .split_once('-')
        .ok_or_else(|| Error::Template(format!("{id}: {name} is not named NN-role.txt")))?;
    let role = role
        .parse::<ChatRole>()
        .map_err(|e| Error::Template(format!("{id}: {name}: {e}")))?;
    Ok((order.to_string(), role))
}

/// The full set of templates, keyed by id.
#[derive(Debug, Clone)]
pub struct PromptLibrary {
    templates: BTreeMap<TemplateId, PromptTemplate>,
}

impl PromptLibrary {
    pub fn builtin() -> &'static PromptLibrary {
        static LIB: OnceLock<PromptLibrary> = OnceLock::new();
        LIB.get_or_init(|| {
            let mut templates = BTreeMap::new();
            for id in TemplateId::ALL {
                let messages = builtin_files(id)
                    .into_iter()
                    .map(|(file, text)| {
                        let (_, role) = parse_file_name(id, file).expect("builtin template name");
                        (role, text.to_string())
                    })
                    .collect();
                let t = PromptTemplate { id, messages };
                t.check_slots().expect("builtin template slots");
                templates.insert(id, t);
            }
            PromptLibrary { templates }
        })
    }

    /// Load a template directory laid out as `<id>/<NN>-<role>.txt`.
    pub fn from_dir(dir: &Path) -> Result<PromptLibrary> {
        let mut templates = BTreeMap::new();
        for id in TemplateId::ALL {
            let sub = dir.join(id.as_str());
            let mut files: Vec<(String, ChatRole, String)> = Vec::new();
            for entry in std::fs::read_dir(&sub).map_err(|e| Error::Data {
                path: sub.clone(),
                reason: e.to_string(),
            })? {
                let entry = entry?;
                let name = entry.file_name().to_string_lossy().into_owned();
                let (order, role) = parse_file_name(id, &name)?;
                files.push((order, role, std::fs::read_to_string(entry.path())?));
            }
            if files.is_empty() {
                return Err(Error::Template(format!("{id}: no message files in {}", sub.display())));
            }
            files.sort_by(|a, b| a.0.cmp(&b.0));
            let t = PromptTemplate {
                id,
                messages: files.into_iter().map(|(_, r, t)| (r, t)).collect(),
            };
            t.check_slots()?;
            templates.insert(id, t);
        }
        Ok(PromptLibrary { templates })
    }

    pub fn template(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    /// Render a template with slot values substituted.
    ///
    /// Empty values are accepted with a warning; a first session has no prior
    /// assessment to bind.
    pub fn render(&self, id: TemplateId, slots: &HashMap<&str, String>) -> Result<Vec<ChatMessage>> {
        let t = self.template(id);
        for name in t.slots() {
            match slots.get(name) {
                None => {
                    return Err(Error::UnboundSlot {
                        template: id.to_string(),
                        slot: name.to_string(),
                    })
                }
                Some(v) if v.trim().is_empty() => {
                    log::warn!("template {id}: slot `{name}` bound to an empty value");
                }
                Some(_) => {}
            }
        }
        Ok(t.messages
            .iter()
            .map(|(role, text)| {
                let content = slot_regex().replace_all(text, |c: &regex::Captures<'_>| {
                    slots[c.get(1).unwrap().as_str()].clone()
                });
                ChatMessage::new(*role, content.into_owned())
            })
            .collect())
    }

    pub fn persona(&self) -> ChatMessage {
        let (role, text) = &self.template(TemplateId::Persona).messages[0];
        ChatMessage::new(*role, text.clone())
    }

    /// Yes/no completion check for a phase, embedding that phase's history.
    pub fn render_decision(&self, phase: TaskPhase, history: &[TurnRecord]) -> Result<Vec<ChatMessage>> {
        let task =
            decision_task(phase).ok_or_else(|| Error::Template(format!("phase {phase} has no decision rule")))?;
        let system = self.template(TemplateId::Decision).messages[0].1.clone();
        let transcript = format_transcript(history);
        let user = format!("Current task: {task}\n\nConversation:\n{transcript}\n\nAnswer with exactly YES or NO.");
        Ok(vec![ChatMessage::system(system), ChatMessage::user(user)])
    }

    /// The monolithic baseline prompt as one system message.
    pub fn render_single_prompt(&self) -> Vec<ChatMessage> {
        let text: String = self
            .template(TemplateId::SinglePrompt)
            .messages
            .iter()
            .map(|(_, t)| t.as_str())
            .collect::<Vec<_>>()
            .join("\n\n");
        vec![ChatMessage::system(text)]
    }
}

fn decision_task(phase: TaskPhase) -> Option<&'static str> {
    match phase {
        TaskPhase::Introduction => Some(
            "getting to know the learner: their name, cultural background, and why they are learning English.",
        ),
        TaskPhase::Assessment => Some(
            "collecting a free-speech sample from the learner that is long enough to assess their spoken English level.",
        ),
        TaskPhase::RolePlay => Some(
            "completing the role-play scenario: the task in the scene has been carried out or the conversation has reached a natural end.",
        ),
        _ => None,
    }
}

fn speaker(role: Role) -> &'static str {
    match role {
        Role::Agent => "Tutor",
        Role::Learner => "Learner",
        Role::System => "System",
    }
}

/// Plain-text transcript used when a history is pasted into a prompt.
pub fn format_transcript(turns: &[TurnRecord]) -> String {
    turns
        .iter()
        .filter(|t| t.role != Role::System)
        .map(|t| format!("{}: {}", speaker(t.role), t.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Map a transcript turn onto a chat message; system turns are not sent.
pub fn turn_message(turn: &TurnRecord) -> Option<ChatMessage> {
    match turn.role {
        Role::Learner => Some(ChatMessage::user(turn.text.clone())),
        Role::Agent => Some(ChatMessage::assistant(turn.text.clone())),
        Role::System => None,
    }
}

/// Assemble a backend request.
///
/// Order: persona, memory summary (if any), task messages, then the windowed
/// history. `budget` applies to the history only, in approximate tokens.
pub fn compose_request(
    persona: &ChatMessage,
    task: &[ChatMessage],
    history: &[TurnRecord],
    memory_summary: Option<&str>,
    budget: usize,
) -> Vec<ChatMessage> {
    let mut out = Vec::with_capacity(2 + task.len() + history.len());
    out.push(persona.clone());
    if let Some(summary) = memory_summary.filter(|s| !s.trim().is_empty()) {
        out.push(ChatMessage::system(format!(
            "Notes from earlier sessions with this learner:\n{summary}"
        )));
    }
    out.extend(task.iter().cloned());
    let windowed = memory::window(history, budget.max(1));
    out.extend(
        windowed
            .iter()
            .filter(|t| !t.text.trim().is_empty())
            .filter_map(turn_message),
    );
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn turn(seq: u64, role: Role, text: &str) -> TurnRecord {
        TurnRecord {
            seq,
            role,
            text: text.into(),
            phase: TaskPhase::RolePlay,
            started_at: 0,
            ended_at: 0,
            response_latency_ms: None,
            emotion: None,
        }
    }

    fn lib() -> &'static PromptLibrary {
        PromptLibrary::builtin()
    }

    #[test]
    fn introduction_and_menu_text() {
        let intro = lib().render(TemplateId::Introduction, &HashMap::new()).unwrap();
        assert!(intro[0]
            .content
            .contains("Greet me and chat with me to get to know me better"));
        assert_eq!(intro[0].role, ChatRole::User);
        let menu = lib().render(TemplateId::ScenarioMenu, &HashMap::new()).unwrap();
        assert!(menu[1].content.contains("Suggest me three real-life scenarios"));
        assert_eq!(menu[1].role, ChatRole::Assistant);
    }

    #[test]
    fn unbound_slot_names_the_slot() {
        let err = lib().render(TemplateId::Assessment, &HashMap::new()).unwrap_err();
        match err {
            Error::UnboundSlot { slot, .. } => assert_eq!(slot, "user_info_conversation"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_slots_are_accepted() {
        let slots = HashMap::from([("scenario", String::new()), ("assessment", String::new())]);
        let msgs = lib().render(TemplateId::RolePlay, &slots).unwrap();
        assert!(msgs.iter().all(|m| !m.content.contains('{')));
    }

    #[test]
    fn every_slot_is_known_and_rendering_leaves_no_markers() {
        for id in TemplateId::ALL {
            let t = lib().template(id);
            let slots: HashMap<&str, String> = t.slots().into_iter().map(|s| (s, format!("<{s}>"))).collect();
            for m in lib().render(id, &slots).unwrap() {
                assert!(!slot_regex().is_match(&m.content), "{id}: {}", m.content);
            }
        }
    }

    #[test]
    fn decision_prompt_structure() {
        let long = "word ".repeat(120);
        let h = vec![turn(1, Role::Learner, long.trim())];
        let msgs = lib().render_decision(TaskPhase::Assessment, &h).unwrap();
        assert_eq!(msgs.len(), 2);
        assert_eq!(msgs[0].role, ChatRole::System);
        assert!(msgs[1].content.ends_with("Answer with exactly YES or NO."));
        assert!(lib().render_decision(TaskPhase::ScenarioSelection, &h).is_err());
    }

    #[test]
    fn decision_embeds_history_in_order() {
        let h: Vec<_> = (1..=8)
            .map(|i| {
                let role = if i % 2 == 1 { Role::Learner } else { Role::Agent };
                turn(i, role, &format!("utterance number {i}, with \"quotes\""))
            })
            .collect();
        let text = &lib().render_decision(TaskPhase::RolePlay, &h).unwrap()[1].content;
        let mut cursor = 0;
        for t in &h {
            let pos = text[cursor..].find(&t.text).expect("turn embedded");
            cursor += pos + t.text.len();
        }
    }

    #[test]
    fn single_prompt_is_pure() {
        let a = lib().render_single_prompt();
        let b = lib().render_single_prompt();
        assert_eq!(a, b);
        assert_eq!(a.len(), 1);
        assert!(a[0].content.contains("**Initial Assessment**"));
        assert!(a[0].content.contains("**Scenario Selection**"));
    }

    #[test]
    fn compose_orders_parts() {
        let persona = lib().persona();
        let task = lib().render(TemplateId::Introduction, &HashMap::new()).unwrap();
        let empty = compose_request(&persona, &task, &[], None, 100);
        assert_eq!(empty.len(), 2);
        assert_eq!(empty[0], persona);

        let h = vec![
            turn(1, Role::Agent, "Hi there"),
            turn(2, Role::Learner, "Hello"),
            turn(3, Role::Agent, "How are you?"),
        ];
        let msgs = compose_request(&persona, &task, &h, Some("Met before."), 10_000);
        assert_eq!(msgs.len(), 6);
        assert!(msgs[1].content.contains("Met before."));
        assert_eq!(msgs[3], ChatMessage::assistant("Hi there"));
        assert_eq!(msgs[4], ChatMessage::user("Hello"));
        assert_eq!(msgs[5], ChatMessage::assistant("How are you?"));
    }

    #[test]
    fn template_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        for id in TemplateId::ALL {
            let sub = dir.path().join(id.as_str());
            std::fs::create_dir_all(&sub).unwrap();
            for (i, (role, text)) in lib().template(id).messages.iter().enumerate() {
                std::fs::write(sub.join(format!("{:02}-{}.txt", i + 1, role.as_str())), text).unwrap();
            }
        }
        let loaded = PromptLibrary::from_dir(dir.path()).unwrap();
        for id in TemplateId::ALL {
            assert_eq!(loaded.template(id), lib().template(id));
        }
        std::fs::write(dir.path().join("persona/02-user.txt"), "{bogus}").unwrap();
        assert!(PromptLibrary::from_dir(dir.path()).is_err());
    }
}
