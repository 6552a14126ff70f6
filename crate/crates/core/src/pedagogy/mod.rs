//! Teaching logic: assessment gates, difficulty, scenario menus, scaffolding
//! and structured feedback.

mod assessment;
mod feedback;
mod scenario;

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::session::{CefrLevel, EnvironmentTag, LearnerProfile, Role, Scenario, TaskPhase};
use crate::workflow::SessionState;

pub use assessment::{assess_level, judge_sufficiency, learner_word_count, provisional_assessment, SufficiencyGates};
pub use feedback::{generate_feedback, parse_feedback, to_markdown, ParsedFeedback, Section};
pub use scenario::{
    custom_scenario, infer_environment, menu_request, pad_menu, parse_scenarios, resolve_choice, scenario_menu,
    scenario_slot, MENU_FORMAT_INSTRUCTION,
};

pub const DEFAULT_TOPIC: &str = "describe a memorable experience";

const TOPICS_TOML: &str = include_str!("../../data/topics.toml");
const SCENARIOS_TOML: &str = include_str!("../../data/scenarios.toml");
const DIFFICULTY_TOML: &str = include_str!("../../data/difficulty.toml");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub text: String,
    #[serde(default)]
    pub tags: Vec<String>,
}

/// A ready-made role-play used to pad or replace a generated menu.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryScenario {
    pub scenario_id: String,
    pub title: String,
    pub scene_description: String,
    pub agent_role: String,
    pub learner_role: String,
    pub environment: EnvironmentTag,
    #[serde(default)]
    pub starter_phrase: Option<String>,
}

impl LibraryScenario {
    pub fn to_scenario(&self, level: CefrLevel) -> Scenario {
        Scenario {
            scenario_id: self.scenario_id.clone(),
            title: self.title.clone(),
            scene_description: self.scene_description.clone(),
            agent_role: self.agent_role.clone(),
            learner_role: self.learner_role.clone(),
            environment_tag: self.environment.clone(),
            difficulty: level,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyDirectives {
    pub level: CefrLevel,
    pub vocab_guidance: String,
    pub sentence_length_hint: String,
}

impl DifficultyDirectives {
    /// Value bound to the role-play `{assessment}` slot.
    pub fn slot_text(&self) -> String {
        format!("{}. {} {}", self.level, self.vocab_guidance, self.sentence_length_hint)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaffoldAction {
    Encourage,
    SuggestPhrase(String),
    /// Quotes a fragment of the learner's turn.
    ClarifyIntent(String),
    None,
}

impl ScaffoldAction {
    /// Extra system instruction for the next completion, if any.
    pub fn hint(&self) -> Option<String> {
        match self {
            ScaffoldAction::Encourage => Some(
                "The learner is struggling to express themselves. Encourage them warmly, for example \"Come on, don't give up!\", and offer support before continuing the role-play.".into(),
            ),
            ScaffoldAction::SuggestPhrase(p) => Some(format!(
                "The learner's replies are very short. Suggest an example reply, for example \"Maybe you can say: {p}\", and ask them to practice it with you."
            )),
            ScaffoldAction::ClarifyIntent(f) => Some(format!(
                "The learner's words may not have been heard correctly. Check their meaning first, for example \"You just said '{f}', do you mean...?\""
            )),
            ScaffoldAction::None => None,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TopicsFile {
    version: u32,
    #[serde(default)]
    topic: Vec<Topic>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenariosFile {
    version: u32,
    #[serde(default)]
    scenario: Vec<LibraryScenario>,
    #[serde(default)]
    starter_phrases: HashMap<String, String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DifficultyRow {
    vocab_guidance: String,
    sentence_length_hint: String,
}

/// Data tables plus the assessment gates.
#[derive(Debug, Clone)]
pub struct Pedagogy {
    topics: Vec<Topic>,
    library: Vec<LibraryScenario>,
    starter_phrases: HashMap<String, String>,
    difficulty: BTreeMap<CefrLevel, DifficultyDirectives>,
    pub gates: SufficiencyGates,
}

fn check_version(v: u32, path: &Path) -> Result<()> {
    if v != 1 {
        return Err(Error::Data {
            path: path.to_path_buf(),
            reason: format!("unsupported version {v}"),
        });
    }
    Ok(())
}

fn parse_toml<T: serde::de::DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Data {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

impl Pedagogy {
    pub fn builtin() -> &'static Pedagogy {
        static P: OnceLock<Pedagogy> = OnceLock::new();
        P.get_or_init(|| {
            Pedagogy::from_strs(TOPICS_TOML, SCENARIOS_TOML, DIFFICULTY_TOML, Path::new("<builtin>"))
                .expect("builtin pedagogy tables")
        })
    }

    /// Load `topics.toml`, `scenarios.toml` and `difficulty.toml` from `dir`.
    pub fn from_dir(dir: &Path) -> Result<Pedagogy> {
        let read = |name: &str| -> Result<String> {
            std::fs::read_to_string(dir.join(name)).map_err(|e| Error::Data {
                path: dir.join(name),
                reason: e.to_string(),
            })
        };
        Self::from_strs(
            &read("topics.toml")?,
            &read("scenarios.toml")?,
            &read("difficulty.toml")?,
            dir,
        )
    }

    fn from_strs(topics: &str, scenarios: &str, difficulty: &str, dir: &Path) -> Result<Pedagogy> {
        let tp = dir.join("topics.toml");
        let t: TopicsFile = parse_toml(topics, &tp)?;
        check_version(t.version, &tp)?;

        let sp = dir.join("scenarios.toml");
        let s: ScenariosFile = parse_toml(scenarios, &sp)?;
        check_version(s.version, &sp)?;
        for lib in &s.scenario {
            lib.to_scenario(CefrLevel::B1).validate().map_err(|e| Error::Data {
                path: sp.clone(),
                reason: e.to_string(),
            })?;
        }
        if s.scenario.is_empty() {
            return Err(Error::Data {
                path: sp,
                reason: "scenario library is empty".into(),
            });
        }

        let dp = dir.join("difficulty.toml");
        let mut raw: BTreeMap<String, toml::Value> = parse_toml(difficulty, &dp)?;
        let version = raw
            .remove("version")
            .and_then(|v| v.as_integer())
            .ok_or_else(|| Error::Data {
                path: dp.clone(),
                reason: "missing version".into(),
            })?;
        check_version(version as u32, &dp)?;
        let mut table = BTreeMap::new();
        for (key, value) in raw {
            let level: CefrLevel = key.parse().map_err(|e: String| Error::Data {
                path: dp.clone(),
                reason: e,
            })?;
            let row: DifficultyRow = value.try_into().map_err(|e: toml::de::Error| Error::Data {
                path: dp.clone(),
                reason: format!("[{key}]: {e}"),
            })?;
            table.insert(
                level,
                DifficultyDirectives {
                    level,
                    vocab_guidance: row.vocab_guidance,
                    sentence_length_hint: row.sentence_length_hint,
                },
            );
        }
        let missing: Vec<&str> = CefrLevel::ALL
            .iter()
            .filter(|l| !table.contains_key(l))
            .map(|l| l.as_str())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Data {
                path: dp,
                reason: format!("no directives for {}", missing.join(", ")),
            });
        }

        Ok(Pedagogy {
            topics: t.topic,
            library: s.scenario,
            starter_phrases: s.starter_phrases,
            difficulty: table,
            gates: SufficiencyGates::default(),
        })
    }

    pub fn with_topics(mut self, topics: Vec<Topic>) -> Self {
        self.topics = topics;
        self
    }

    pub fn with_gates(mut self, gates: SufficiencyGates) -> Self {
        self.gates = gates;
        self
    }

    pub fn topics(&self) -> &[Topic] {
        &self.topics
    }

    pub fn library(&self) -> &[LibraryScenario] {
        &self.library
    }

    pub fn difficulty_directives(&self, level: CefrLevel) -> &DifficultyDirectives {
        &self.difficulty[&level]
    }

    /// Free-speech topic for the assessment, adapted to the learner's stated motivation.
    pub fn assessment_topic(&self, profile: &LearnerProfile) -> String {
        let words: Vec<String> = profile
            .motivation
            .iter()
            .chain(profile.cultural_background.iter())
            .flat_map(|s| {
                s.split(|c: char| !c.is_alphanumeric())
                    .filter(|w| !w.is_empty())
                    .map(str::to_lowercase)
                    .collect::<Vec<_>>()
            })
            .collect();
        let tagged = self.topics.iter().find(|t| {
            t.tags
                .iter()
                .any(|tag| tag != "default" && words.iter().any(|w| w == &tag.to_lowercase()))
        });
        if let Some(t) = tagged {
            return t.text.clone();
        }
        self.topics
            .iter()
            .find(|t| t.tags.iter().any(|tag| tag == "default"))
            .map(|t| t.text.clone())
            .unwrap_or_else(|| DEFAULT_TOPIC.to_string())
    }

    /// Example reply offered when the learner's turns stay very short.
    pub fn starter_phrase(&self, scenario: &Scenario) -> String {
        if let Some(p) = self
            .library
            .iter()
            .find(|l| l.scenario_id == scenario.scenario_id)
            .and_then(|l| l.starter_phrase.clone())
        {
            return p;
        }
        if let Some(p) = self
            .library
            .iter()
            .find(|l| l.environment == scenario.environment_tag)
            .and_then(|l| l.starter_phrase.clone())
        {
            return p;
        }
        self.starter_phrases
            .get(scenario.environment_tag.key())
            .or_else(|| self.starter_phrases.get("custom"))
            .cloned()
            .unwrap_or_else(|| "Could you tell me more about that?".into())
    }

    /// Local scaffolding trigger for a role-play turn that is about to be sent.
    ///
    /// Distress markers win over a low-confidence transcript, which wins over
    /// repeated short turns.
    pub fn scaffold(&self, learner_turn: &str, state: &SessionState, low_confidence: bool) -> ScaffoldAction {
        if state.phase != TaskPhase::RolePlay {
            return ScaffoldAction::None;
        }
        if has_distress_marker(learner_turn) {
            return ScaffoldAction::Encourage;
        }
        if low_confidence {
            if let Some(f) = quote_fragment(learner_turn, 8) {
                return ScaffoldAction::ClarifyIntent(f.to_string());
            }
        }
        let short = |t: &str| t.split_whitespace().count() < SHORT_TURN_WORDS;
        let previous = state
            .short_term
            .iter()
            .rev()
            .take_while(|t| t.phase == TaskPhase::RolePlay)
            .find(|t| t.role == Role::Learner);
        match (previous, &state.active_scenario) {
            (Some(prev), Some(scenario)) if short(learner_turn) && short(&prev.text) => {
                ScaffoldAction::SuggestPhrase(self.starter_phrase(scenario))
            }
            _ => ScaffoldAction::None,
        }
    }
}

/// Turns with fewer words than this count as "too short".
pub const SHORT_TURN_WORDS: usize = 4;

const DISTRESS_MARKERS: [&str; 9] = [
    "i don't know",
    "i do not know",
    "i dont know",
    "can't say",
    "cannot say",
    "no idea",
    "too hard",
    "too difficult",
    "give up",
];

fn has_distress_marker(text: &str) -> bool {
    let t = text.replace('\u{2019}', "'").to_lowercase();
    DISTRESS_MARKERS.iter().any(|m| t.contains(m))
}

/// The first `max_words` words of `text`, as a slice of it.
fn quote_fragment(text: &str, max_words: usize) -> Option<&str> {
    let t = text.trim();
    if t.is_empty() {
        return None;
    }
    let mut end = t.len();
    let mut count = 0;
    let mut in_word = false;
    for (i, c) in t.char_indices() {
        if c.is_whitespace() {
            if in_word {
                count += 1;
                if count == max_words {
                    end = i;
                    break;
                }
            }
            in_word = false;
        } else {
            in_word = true;
        }
    }
    Some(&t[..end])
}
