use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;

use super::Pedagogy;
use crate::error::Result;
use crate::llm::{self, ChatBackend, CONVERSATION_TEMPERATURE};
use crate::prompt::{ChatMessage, PromptLibrary, TemplateId};
use crate::session::{CefrLevel, EnvironmentTag, Scenario};

/// Appended to the menu template so replies can be parsed.
pub const MENU_FORMAT_INSTRUCTION: &str = "Write each scenario as a block of four lines:\nTitle: <a short title>\nYou are: <the role you will play>\nI am: <the role I will play>\nScene: <one or two sentences describing the scene>\nSeparate the blocks with a blank line.";

/// Task messages for a scenario menu request.
pub fn menu_request(prompts: &PromptLibrary) -> Result<Vec<ChatMessage>> {
    let mut msgs = prompts.render(TemplateId::ScenarioMenu, &HashMap::new())?;
    msgs.push(ChatMessage::system(MENU_FORMAT_INSTRUCTION));
    Ok(msgs)
}

const TAG_KEYWORDS: [(&str, &[&str]); 6] = [
    (
        "restaurant",
        &["restaurant", "food", "dinner", "lunch", "meal", "waiter", "diner"],
    ),
    ("cafe", &["cafe", "café", "coffee", "barista", "bakery"]),
    (
        "supermarket",
        &["supermarket", "grocery", "groceries", "shopping", "store", "market"],
    ),
    (
        "street",
        &[
            "street",
            "travel",
            "traveling",
            "travelling",
            "trip",
            "city",
            "directions",
            "tourist",
            "station",
        ],
    ),
    ("gallery", &["gallery", "museum", "art", "exhibition", "painting"]),
    (
        "office",
        &["office", "interview", "job", "work", "meeting", "colleague", "business"],
    ),
];

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Environment tag from title keywords; anything else is `custom`.
pub fn infer_environment(title: &str) -> EnvironmentTag {
    let ws = words(title);
    for (tag, keys) in TAG_KEYWORDS {
        if ws.iter().any(|w| keys.contains(&w.as_str())) {
            return tag.parse().expect("known tag");
        }
    }
    EnvironmentTag::Custom(title.trim().to_string())
}

fn slug(text: &str) -> String {
    let s = words(text).join("-");
    if s.is_empty() {
        "scenario".into()
    } else {
        s
    }
}

fn field_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^[\s>*\-•#\d.)]*(title|scenario|you are|you're|i am|i'm|scene|setting)\s*\**\s*:\s*\**\s*(.*?)\s*\**\s*$",
        )
        .expect("static regex")
    })
}

#[derive(Default)]
struct Block {
    title: Option<String>,
    agent: Option<String>,
    learner: Option<String>,
    scene: Option<String>,
}

/// Scenarios written in the Title / You are / I am / Scene block format.
///
/// Incomplete or invalid blocks are skipped.
pub fn parse_scenarios(text: &str, level: CefrLevel) -> Vec<Scenario> {
    let mut blocks: Vec<Block> = Vec::new();
    for line in text.lines() {
        let Some(c) = field_regex().captures(line) else {
            continue;
        };
        let key = c[1].to_lowercase();
        let value = c[2].trim().to_string();
        if value.is_empty() {
            continue;
        }
        if key == "title" || key == "scenario" {
            blocks.push(Block {
                title: Some(value),
                ..Default::default()
            });
            continue;
        }
        let Some(b) = blocks.last_mut() else { continue };
        let slot = match key.as_str() {
            "you are" | "you're" => &mut b.agent,
            "i am" | "i'm" => &mut b.learner,
            _ => &mut b.scene,
        };
        slot.get_or_insert(value);
    }
    let mut out: Vec<Scenario> = Vec::new();
    for b in blocks {
        let (Some(title), Some(agent), Some(learner), Some(scene)) = (b.title, b.agent, b.learner, b.scene) else {
            continue;
        };
        let mut id = format!("gen-{}", slug(&title));
        if out.iter().any(|s| s.scenario_id == id) {
            id = format!("{id}-{}", out.len() + 1);
        }
        let s = Scenario {
            scenario_id: id,
            environment_tag: infer_environment(&title),
            title,
            scene_description: scene,
            agent_role: agent,
            learner_role: learner,
            difficulty: level,
        };
        if s.validate().is_ok() {
            out.push(s);
        }
    }
    out
}

/// Exactly three scenarios: parsed ones first, then library entries.
pub fn pad_menu(mut parsed: Vec<Scenario>, level: CefrLevel, pedagogy: &Pedagogy) -> Vec<Scenario> {
    parsed.truncate(3);
    let mut round = 0;
    while parsed.len() < 3 {
        for lib in pedagogy.library() {
            if parsed.len() == 3 {
                break;
            }
            let mut s = lib.to_scenario(level);
            if round > 0 {
                s.scenario_id = format!("{}-{}", s.scenario_id, round + 1);
            }
            if !parsed.iter().any(|p| p.scenario_id == s.scenario_id) {
                parsed.push(s);
            }
        }
        round += 1;
    }
    parsed
}

/// Request a menu and parse it; unparsable replies fall back to the library.
///
/// Returns the reply text (shown to the learner) with the three scenarios.
pub fn scenario_menu(
    request: &[ChatMessage],
    level: CefrLevel,
    backend: &dyn ChatBackend,
    pedagogy: &Pedagogy,
) -> Result<(String, Vec<Scenario>)> {
    let reply = llm::complete(backend, request, CONVERSATION_TEMPERATURE)?;
    let parsed = parse_scenarios(&reply.text, level);
    if parsed.len() < 3 {
        log::info!("menu reply gave {} scenario(s); padding from the library", parsed.len());
    }
    Ok((reply.text, pad_menu(parsed, level, pedagogy)))
}

/// A learner-specified scenario, bypassing the menu.
pub fn custom_scenario(text: &str, level: CefrLevel) -> Scenario {
    let title = text.trim().trim_end_matches(['.', '!']).to_string();
    Scenario {
        scenario_id: format!("custom-{}", slug(&title)),
        environment_tag: infer_environment(&title),
        scene_description: format!("A real-life situation chosen by the learner: {title}."),
        agent_role: "conversation partner".into(),
        learner_role: "learner".into(),
        title,
        difficulty: level,
    }
}

/// Value bound to the role-play `{scenario}` slot.
pub fn scenario_slot(s: &Scenario) -> String {
    format!(
        "{} (you are the {}, I am the {}; scene: {})",
        s.title,
        s.agent_role
            .trim_start_matches("a ")
            .trim_start_matches("an ")
            .trim_start_matches("the "),
        s.learner_role
            .trim_start_matches("a ")
            .trim_start_matches("an ")
            .trim_start_matches("the "),
        s.scene_description
    )
}

fn choice_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b([1-9]|first|second|third|1st|2nd|3rd|last)\b").expect("static regex"))
}

const STOP_WORDS: [&str; 12] = [
    "with", "from", "your", "that", "this", "into", "about", "there", "their", "where", "have", "some",
];

/// Which menu entry the learner picked: a number, an ordinal, or title words.
pub fn resolve_choice(input: &str, menu: &[Scenario]) -> Option<usize> {
    if menu.is_empty() {
        return None;
    }
    if let Some(c) = choice_regex().captures(input) {
        let idx = match c[1].to_lowercase().as_str() {
            "first" | "1st" => 0,
            "second" | "2nd" => 1,
            "third" | "3rd" => 2,
            "last" => menu.len() - 1,
            d => d.parse::<usize>().ok()? - 1,
        };
        if idx < menu.len() {
            return Some(idx);
        }
    }
    let said = words(input);
    let scores: Vec<usize> = menu
        .iter()
        .map(|s| {
            let mut keys = words(&s.title);
            keys.retain(|w| w.chars().count() >= 4 && !STOP_WORDS.contains(&w.as_str()));
            keys.sort();
            keys.dedup();
            keys.iter().filter(|k| said.contains(k)).count()
        })
        .collect();
    let best = *scores.iter().max()?;
    if best == 0 || scores.iter().filter(|&&s| s == best).count() > 1 {
        return None;
    }
    scores.iter().position(|&s| s == best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ScriptEntry, ScriptedBackend};

    const MENU: &str = "Here are three ideas for you!\n\n\
        **Title:** Ordering food at a restaurant\n\
        **You are:** a server\n\
        **I am:** a hungry customer\n\
        **Scene:** A busy Italian restaurant at lunchtime.\n\n\
        Title: A job interview\nYou are: the hiring manager\nI am: a candidate\nScene: A quiet office meeting room.\n\n\
        Title: Traveling in an English-speaking country\nYou are: a ticket agent\nI am: a tourist\nScene: A train station in London.";

    #[test]
    fn parses_three_tagged_scenarios() {
        let s = parse_scenarios(MENU, CefrLevel::B1);
        assert_eq!(s.len(), 3);
        let tags: Vec<&str> = s.iter().map(|s| s.environment_tag.key()).collect();
        assert_eq!(tags, ["restaurant", "office", "street"]);
        assert_eq!(s[0].agent_role, "a server");
        assert!(s.iter().all(|x| x.difficulty == CefrLevel::B1));
    }

    #[test]
    fn unparsable_reply_falls_back_to_library() {
        let ped = Pedagogy::builtin();
        let b = ScriptedBackend::new(vec![ScriptEntry::reply("How about a cafe, a supermarket, or a walk?")]);
        let req = menu_request(PromptLibrary::builtin()).unwrap();
        let mut full = vec![PromptLibrary::builtin().persona()];
        full.extend(req);
        let (_, menu) = scenario_menu(&full, CefrLevel::A2, &b, ped).unwrap();
        let ids: Vec<&str> = menu.iter().map(|s| s.scenario_id.as_str()).collect();
        assert_eq!(ids, ["lib-cafe", "lib-supermarket", "lib-street"]);
    }

    #[test]
    fn partial_menu_is_padded() {
        let one = MENU.split("\n\n").take(2).collect::<Vec<_>>().join("\n\n");
        let parsed = parse_scenarios(&one, CefrLevel::B1);
        assert_eq!(parsed.len(), 1);
        let menu = pad_menu(parsed, CefrLevel::B1, Pedagogy::builtin());
        assert_eq!(menu.len(), 3);
        assert_eq!(menu[1].scenario_id, "lib-cafe");
    }

    #[test]
    fn blocks_with_same_roles_are_skipped() {
        let text = "Title: Mirror\nYou are: a friend\nI am: A friend\nScene: Anywhere.";
        assert!(parse_scenarios(text, CefrLevel::B1).is_empty());
    }

    #[test]
    fn custom() {
        let s = custom_scenario("renting an apartment", CefrLevel::B2);
        s.validate().unwrap();
        assert_eq!(s.title, "renting an apartment");
        assert_eq!(s.environment_tag, EnvironmentTag::Custom("renting an apartment".into()));
    }

    #[test]
    fn choices() {
        let menu = parse_scenarios(MENU, CefrLevel::B1);
        assert_eq!(resolve_choice("2", &menu), Some(1));
        assert_eq!(resolve_choice("I'll take the second one", &menu), Some(1));
        assert_eq!(resolve_choice("the restaurant please", &menu), Some(0));
        assert_eq!(resolve_choice("let's do the job interview", &menu), Some(1));
        assert_eq!(resolve_choice("7", &menu), None);
        assert_eq!(resolve_choice("can you suggest something else?", &menu), None);
    }
}
