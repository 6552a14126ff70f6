use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;

use crate::error::{Error, Result};
use crate::llm::{self, ChatBackend, CONVERSATION_TEMPERATURE};
use crate::prompt::{format_transcript, ChatMessage, PromptLibrary, TemplateId};
use crate::session::{FeedbackReport, GeneralFeedback, Role, SummaryItem, SummaryKind, TurnRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Section {
    General,
    Advice,
    Summary,
}

impl Section {
    pub fn header(self) -> &'static str {
        match self {
            Section::General => "GENERAL FEEDBACK",
            Section::Advice => "ADVICE MOVING FORWARD",
            Section::Summary => "LANGUAGE SUMMARY",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedFeedback {
    /// Complete only when `missing` is empty.
    pub report: FeedbackReport,
    pub missing: Vec<Section>,
}

fn header_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^\s*(?:#{1,6}\s*)?(?:\*\*|__)?\s*(general feedback|advice moving forward|language summary|key vocabulary(?: and grammar)?|summary)\s*(?:\*\*|__)?\s*(?:[:\-–]|$)\s*(?:\*\*|__)?\s*(.*)$",
        )
        .expect("static regex")
    })
}

fn kind_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^(vocabulary|vocab|words?|phrases?|grammar|sentences?|expressions?)\s*:\s*(.*)$")
            .expect("static regex")
    })
}

fn label_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)^(strengths?|what you did well|did well|well done|improvements?|area to improve|to improve|could improve|work on)\s*\**\s*:\s*\**\s*(.+)$",
        )
        .expect("static regex")
    })
}

const IMPROVEMENT_CUES: [&str; 9] = [
    "improve",
    "could ",
    "work on",
    "try to",
    "next time",
    "however",
    "should ",
    "practice ",
    "instead",
];

fn strip_bullet(line: &str) -> &str {
    let t = line.trim();
    let t = t.trim_start_matches(['-', '*', '•']).trim_start();
    // "1." / "2)" list markers
    let digits = t.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            return r.trim_start();
        }
    }
    t
}

fn is_bullet(line: &str) -> bool {
    strip_bullet(line).len() != line.trim().len()
}

fn section_of(name: &str) -> Section {
    match name.to_lowercase().as_str() {
        "general feedback" => Section::General,
        "advice moving forward" => Section::Advice,
        _ => Section::Summary,
    }
}

fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        cur.push(c);
        if matches!(c, '.' | '!' | '?') {
            let s = cur.trim().to_string();
            if !s.is_empty() {
                out.push(s);
            }
            cur.clear();
        }
    }
    let s = cur.trim().to_string();
    if !s.is_empty() {
        out.push(s);
    }
    out
}

fn general_feedback(lines: &[String]) -> Option<GeneralFeedback> {
    let mut strength = None;
    let mut improvement = None;
    let mut prose = Vec::new();
    for line in lines {
        let l = strip_bullet(line);
        match label_regex().captures(l) {
            Some(c) => {
                let key = c[1].to_lowercase();
                let value = c[2].trim().to_string();
                let is_improvement = ["improve", "work on"].iter().any(|k| key.contains(k));
                let slot = if is_improvement {
                    &mut improvement
                } else {
                    &mut strength
                };
                slot.get_or_insert(value);
            }
            None => prose.push(l.to_string()),
        }
    }
    let joined = prose.join(" ");
    let all = sentences(&joined);
    let cued = |s: &str| {
        let l = s.to_lowercase();
        IMPROVEMENT_CUES.iter().any(|c| l.contains(c))
    };
    if improvement.is_none() {
        improvement = all.iter().find(|s| cued(s)).cloned();
    }
    if strength.is_none() {
        strength = all
            .iter()
            .find(|s| !cued(s) && Some(*s) != improvement.as_ref())
            .cloned();
    }
    Some(GeneralFeedback {
        strength: strength?,
        improvement: improvement?,
    })
}

fn summary_items(lines: &[String]) -> Vec<SummaryItem> {
    let mut items = Vec::new();
    let mut current = SummaryKind::Vocabulary;
    for line in lines {
        let l = strip_bullet(line);
        if l.is_empty() {
            continue;
        }
        let (kind, text) = match kind_regex().captures(l) {
            Some(c) => {
                let kind = match c[1].to_lowercase().chars().next() {
                    Some('g') => SummaryKind::Grammar,
                    Some('s') | Some('e') => SummaryKind::Sentence,
                    _ => SummaryKind::Vocabulary,
                };
                let rest = c[2].trim();
                if rest.is_empty() {
                    // sub-heading for the lines that follow
                    current = kind;
                    continue;
                }
                (kind, rest.to_string())
            }
            None if l.ends_with(':') => continue,
            None => (current, l.to_string()),
        };
        items.push(SummaryItem { item: text, kind });
    }
    items
}

/// Split a feedback reply into its three sections.
///
/// Headers are matched case-insensitively, with or without markdown bold.
/// Bullet lines before the first header count as summary items when no
/// summary header is present.
pub fn parse_feedback(text: &str) -> ParsedFeedback {
    let mut preamble: Vec<String> = Vec::new();
    let mut sections: HashMap<Section, Vec<String>> = HashMap::new();
    let mut current: Option<Section> = None;
    for line in text.lines() {
        if let Some(c) = header_regex().captures(line) {
            let s = section_of(&c[1]);
            current = Some(s);
            let entry = sections.entry(s).or_default();
            let rest = c[2].trim();
            if !rest.is_empty() {
                entry.push(rest.to_string());
            }
            continue;
        }
        let l = line.trim();
        if l.is_empty() {
            continue;
        }
        match current {
            Some(s) => sections.entry(s).or_default().push(l.to_string()),
            None => preamble.push(l.to_string()),
        }
    }

    let general = sections.get(&Section::General).and_then(|l| general_feedback(l));
    let advice = sections
        .get(&Section::Advice)
        .map(|l| {
            l.iter()
                .map(|x| strip_bullet(x).to_string())
                .collect::<Vec<_>>()
                .join("\n")
        })
        .filter(|a| !a.trim().is_empty());
    let summary = match sections.get(&Section::Summary) {
        Some(l) => summary_items(l),
        None => {
            let bullets: Vec<String> = preamble.iter().filter(|l| is_bullet(l)).cloned().collect();
            summary_items(&bullets)
        }
    };

    let mut missing = Vec::new();
    if general.is_none() {
        missing.push(Section::General);
    }
    if advice.is_none() {
        missing.push(Section::Advice);
    }
    if summary.is_empty() {
        missing.push(Section::Summary);
    }
    ParsedFeedback {
        report: FeedbackReport {
            general_feedback: general.unwrap_or(GeneralFeedback {
                strength: String::new(),
                improvement: String::new(),
            }),
            advice_moving_forward: advice.unwrap_or_default(),
            language_summary: summary,
            incomplete: !missing.is_empty(),
        },
        missing,
    }
}

/// Render a report in the header format the parser reads back.
pub fn to_markdown(report: &FeedbackReport) -> String {
    let kind = |k: SummaryKind| match k {
        SummaryKind::Vocabulary => "Vocabulary",
        SummaryKind::Grammar => "Grammar",
        SummaryKind::Sentence => "Sentence",
    };
    let mut out = format!(
        "**{}**:\nStrength: {}\nImprovement: {}\n\n**{}**: {}\n\n**{}**:\n",
        Section::General.header(),
        report.general_feedback.strength,
        report.general_feedback.improvement,
        Section::Advice.header(),
        report.advice_moving_forward,
        Section::Summary.header(),
    );
    for item in &report.language_summary {
        out.push_str(&format!("- {}: {}\n", kind(item.kind), item.item));
    }
    out.trim_end().to_string()
}

const FEEDBACK_RETRY: &str = "Please rewrite your feedback with all three sections, each starting with its header on a new line: **GENERAL FEEDBACK** (one strength and one thing to improve), **ADVICE MOVING FORWARD**, and **LANGUAGE SUMMARY** (a list of vocabulary, grammar points or sentences, one per line).";

/// Feedback over a role-play transcript; one retry when a section is missing.
pub fn generate_feedback(
    role_play_history: &[TurnRecord],
    persona: &ChatMessage,
    backend: &dyn ChatBackend,
    prompts: &PromptLibrary,
) -> Result<FeedbackReport> {
    if !role_play_history.iter().any(|t| t.role != Role::System) {
        return Err(Error::Precondition(
            "no role-play conversation to give feedback on".into(),
        ));
    }
    let slots = HashMap::from([("role_play_conversations", format_transcript(role_play_history))]);
    let mut messages = vec![persona.clone()];
    messages.extend(prompts.render(TemplateId::Feedback, &slots)?);

    let first = llm::complete(backend, &messages, CONVERSATION_TEMPERATURE)?;
    let parsed = parse_feedback(&first.text);
    if parsed.missing.is_empty() {
        return Ok(parsed.report);
    }
    log::warn!("feedback reply missing {:?}; retrying once", parsed.missing);
    if !first.text.trim().is_empty() {
        messages.push(ChatMessage::assistant(first.text));
    }
    messages.push(ChatMessage::user(FEEDBACK_RETRY));
    let second = parse_feedback(&llm::complete(backend, &messages, CONVERSATION_TEMPERATURE)?.text);
    if !second.missing.is_empty() {
        log::warn!("feedback still missing {:?}; keeping a partial report", second.missing);
    }
    Ok(second.report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ScriptEntry, ScriptedBackend};
    use crate::session::TaskPhase;

    const FULL: &str = "**GENERAL FEEDBACK**: You did a great job ordering your coffee politely. Next time, try to use full sentences when you answer questions.\n\n\
        **ADVICE MOVING FORWARD**: Visit a local cafe and order in English.\n\n\
        **LANGUAGE SUMMARY**:\n- Vocabulary: latte\n- Vocabulary: to go\n- Grammar: Could I have ...?\n- Sentence: I'd like a small latte, please.";

    #[test]
    fn happy_path() {
        let p = parse_feedback(FULL);
        assert!(p.missing.is_empty(), "{:?}", p.missing);
        let r = p.report;
        assert!(r.is_complete());
        assert_eq!(
            r.general_feedback.strength,
            "You did a great job ordering your coffee politely."
        );
        assert!(r.general_feedback.improvement.starts_with("Next time"));
        assert_eq!(r.advice_moving_forward, "Visit a local cafe and order in English.");
        assert_eq!(r.language_summary.len(), 4);
        assert_eq!(r.language_summary[2].kind, SummaryKind::Grammar);
        assert_eq!(r.language_summary[3].kind, SummaryKind::Sentence);
    }

    #[test]
    fn case_variant_headers() {
        let text = FULL
            .replace("**GENERAL FEEDBACK**:", "**General Feedback:**")
            .replace("**ADVICE MOVING FORWARD**", "## advice moving forward")
            .replace("**LANGUAGE SUMMARY**", "Language Summary");
        let p = parse_feedback(&text);
        assert!(p.missing.is_empty(), "{:?}", p.missing);
        assert_eq!(p.report, parse_feedback(FULL).report);
    }

    #[test]
    fn missing_advice() {
        let text = FULL.replace(
            "**ADVICE MOVING FORWARD**: Visit a local cafe and order in English.",
            "",
        );
        let p = parse_feedback(&text);
        assert_eq!(p.missing, vec![Section::Advice]);
        assert!(p.report.incomplete);
    }

    #[test]
    fn markdown_round_trip() {
        let r = parse_feedback(FULL).report;
        assert_eq!(parse_feedback(&to_markdown(&r)).report, r);
    }

    fn rp_turn(role: Role, text: &str) -> TurnRecord {
        TurnRecord {
            seq: 1,
            role,
            text: text.into(),
            phase: TaskPhase::RolePlay,
            started_at: 0,
            ended_at: 0,
            response_latency_ms: None,
            emotion: None,
        }
    }

    #[test]
    fn generate_with_retry_exhaustion() {
        let lib = PromptLibrary::builtin();
        let persona = lib.persona();
        let no_advice = FULL.replace(
            "**ADVICE MOVING FORWARD**: Visit a local cafe and order in English.",
            "",
        );
        let b = ScriptedBackend::new(vec![ScriptEntry::reply(&no_advice), ScriptEntry::reply(&no_advice)]);
        let r = generate_feedback(&[rp_turn(Role::Learner, "a latte please")], &persona, &b, lib).unwrap();
        assert!(r.incomplete);
        assert_eq!(b.remaining(), 0);

        let b = ScriptedBackend::new(vec![ScriptEntry::reply(FULL)]);
        let r = generate_feedback(&[rp_turn(Role::Learner, "a latte please")], &persona, &b, lib).unwrap();
        assert!(!r.incomplete);
        assert!(b.requests()[0]
            .iter()
            .any(|m| m.content.contains("Learner: a latte please")));

        assert!(matches!(
            generate_feedback(&[], &persona, &b, lib),
            Err(Error::Precondition(_))
        ));
    }
}
