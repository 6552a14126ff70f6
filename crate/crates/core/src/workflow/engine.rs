use std::collections::HashMap;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::OnceLock;

use super::{Change, SessionEvent, SessionState, UserCommand, Utterance};
use crate::embodiment::{detect_emotion, Lexicon};
use crate::error::{Error, Result};
use crate::llm::{self, ChatBackend, CONVERSATION_TEMPERATURE, DECISION_TEMPERATURE};
use crate::pedagogy::{
    assess_level, custom_scenario, generate_feedback, judge_sufficiency, menu_request, pad_menu, resolve_choice,
    scenario_menu, scenario_slot, to_markdown, Pedagogy, ScaffoldAction, DEFAULT_TOPIC,
};
use crate::prompt::{compose_request, format_transcript, turn_message, ChatMessage, PromptLibrary, TemplateId};
use crate::session::{validate_transition, CefrLevel, EmotionLabel, PromptMode, Role, Scenario, TaskPhase, TurnRecord};

pub trait Clock: Send + Sync {
    /// Milliseconds since the Unix epoch.
    fn now_ms(&self) -> i64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> i64 {
        chrono::Utc::now().timestamp_millis()
    }
}

/// Advances by a fixed step on every reading. Used for reproducible transcripts.
pub struct StepClock {
    next: AtomicI64,
    step: i64,
}

impl StepClock {
    pub fn new(start_ms: i64, step_ms: i64) -> Self {
        StepClock {
            next: AtomicI64::new(start_ms),
            step: step_ms,
        }
    }
}

impl Clock for StepClock {
    fn now_ms(&self) -> i64 {
        self.next.fetch_add(self.step, Ordering::SeqCst)
    }
}

/// Everything the engine consults besides the state itself.
pub struct Deps<'a> {
    pub backend: &'a dyn ChatBackend,
    pub prompts: &'a PromptLibrary,
    pub pedagogy: &'a Pedagogy,
    pub lexicon: &'a Lexicon,
    pub clock: &'a dyn Clock,
    /// Recalled summaries of earlier sessions.
    pub memory_summary: Option<String>,
}

impl<'a> Deps<'a> {
    /// Built-in prompts, pedagogy tables and lexicon.
    pub fn new(backend: &'a dyn ChatBackend, clock: &'a dyn Clock) -> Self {
        static LEXICON: OnceLock<Lexicon> = OnceLock::new();
        Deps {
            backend,
            prompts: PromptLibrary::builtin(),
            pedagogy: Pedagogy::builtin(),
            lexicon: LEXICON.get_or_init(Lexicon::builtin),
            clock,
            memory_summary: None,
        }
    }

    pub fn with_memory(mut self, summary: Option<String>) -> Self {
        self.memory_summary = summary;
        self
    }
}

/// What one step did.
#[derive(Debug, Clone, PartialEq)]
pub struct TurnOutput {
    /// Agent turns added during the step, in order.
    pub replies: Vec<TurnRecord>,
    /// System notes added during the step.
    pub notes: Vec<String>,
    pub phase_before: TaskPhase,
    pub phase_after: TaskPhase,
    pub scaffold: ScaffoldAction,
    pub learner_emotion: Option<EmotionLabel>,
}

impl TurnOutput {
    pub fn reply_text(&self) -> Option<String> {
        if self.replies.is_empty() {
            return None;
        }
        Some(
            self.replies
                .iter()
                .map(|t| t.text.as_str())
                .collect::<Vec<_>>()
                .join("\n\n"),
        )
    }
}

/// A parsed line of learner input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LearnerInput {
    Text(String),
    Command(UserCommand),
    /// `/scenario <description>`: role-play a learner-chosen situation.
    CustomScenario(String),
}

pub fn parse_input(line: &str) -> Result<LearnerInput> {
    let line = line.trim();
    if line.is_empty() {
        return Err(Error::Precondition("empty input".into()));
    }
    if !line.starts_with('/') {
        return Ok(LearnerInput::Text(line.to_string()));
    }
    let (cmd, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
    let rest = rest.trim();
    match cmd.to_lowercase().as_str() {
        "/end" | "/quit" => Ok(LearnerInput::Command(UserCommand::EndSession)),
        "/switch" => Ok(LearnerInput::Command(UserCommand::SwitchRolePlay)),
        "/scenarios" => Ok(LearnerInput::Command(UserCommand::RequestScenarios)),
        "/scenario" if !rest.is_empty() => Ok(LearnerInput::CustomScenario(rest.to_string())),
        "/scenario" => Err(Error::Precondition("usage: /scenario <description>".into())),
        other => Err(Error::Precondition(format!(
            "unknown command {other}; try /end, /switch, /scenarios or /scenario <description>"
        ))),
    }
}

/// Handle one line of learner input: plain text or a command.
pub fn step(state: &mut SessionState, line: &str, deps: &Deps<'_>) -> Result<TurnOutput> {
    if time_limit_reached(state, deps) {
        let mut out = command(state, UserCommand::EndSession, deps)?;
        out.notes.insert(0, "time limit reached".into());
        return Ok(out);
    }
    match parse_input(line)? {
        LearnerInput::Text(text) => run_turn(state, &text, deps),
        LearnerInput::Command(c) => command(state, c, deps),
        LearnerInput::CustomScenario(text) if state.prompt_mode == PromptMode::Single => {
            run_turn(state, &format!("/scenario {text}"), deps)
        }
        LearnerInput::CustomScenario(text) => choose_custom(state, &text, deps),
    }
}

fn time_limit_reached(state: &SessionState, deps: &Deps<'_>) -> bool {
    let (Some(limit), Some(first)) = (state.config.session_time_limit_s, state.short_term.first()) else {
        return false;
    };
    state.phase != TaskPhase::Ended && (deps.clock.now_ms() - first.started_at) as f64 > limit * 1000.0
}

pub fn run_turn(state: &mut SessionState, text: &str, deps: &Deps<'_>) -> Result<TurnOutput> {
    run_utterance(state, Utterance::new(text), deps)
}

/// One learner turn and the engine's response to it.
///
/// The learner turn is kept even when the backend then fails.
pub fn run_utterance(state: &mut SessionState, mut u: Utterance, deps: &Deps<'_>) -> Result<TurnOutput> {
    let mark = Mark::take(state);
    if u.started_at == 0 && u.ended_at == 0 {
        let now = deps.clock.now_ms();
        u.started_at = now;
        u.ended_at = now;
    }
    let emotion = *u.emotion.get_or_insert_with(|| detect_emotion(&u.text, deps.lexicon));
    let scaffold = if state.prompt_mode == PromptMode::Multi {
        deps.pedagogy.scaffold(&u.text, state, false)
    } else {
        ScaffoldAction::None
    };
    state.apply(SessionEvent::LearnerUtterance(u))?;

    if state.prompt_mode == PromptMode::Single {
        single_reply(state, deps)?;
        return Ok(mark.finish(state, scaffold, Some(emotion)));
    }

    match state.phase {
        TaskPhase::Introduction => {
            if capped(state) || check_saturation(state, deps) {
                state.apply(SessionEvent::SaturationReached)?;
            } else {
                let task = intro_task(state, deps)?;
                converse(state, &task, None, deps)?;
            }
        }
        TaskPhase::Assessment => assessment_turn(state, deps)?,
        TaskPhase::ScenarioSelection => {
            if let Some(i) = resolve_choice(&state.short_term.last().expect("just added").text, &state.menu) {
                let chosen = state.menu[i].clone();
                state.apply(SessionEvent::ScenarioChosen(chosen))?;
            } else if capped(state) {
                state.apply(SessionEvent::SaturationReached)?;
            } else {
                menu_reply(state, None, deps)?;
            }
        }
        TaskPhase::RolePlay => {
            if capped(state) || check_saturation(state, deps) {
                state.apply(SessionEvent::SaturationReached)?;
            } else {
                let task = role_play_task(state, deps)?;
                converse(state, &task, scaffold.hint(), deps)?;
            }
        }
        TaskPhase::Feedback => match state.pending_feedback.clone() {
            Some(report) => state.apply(SessionEvent::FeedbackDelivered(report))?,
            None => feedback_reply(state, deps)?,
        },
        TaskPhase::Ended => unreachable!("apply rejects utterances after the session ended"),
    }
    if state.phase != mark.phase && !state.phase_opened {
        open_phase(state, deps)?;
    }
    Ok(mark.finish(state, scaffold, Some(emotion)))
}

/// Apply a learner command, then open whatever phase it leads to.
pub fn command(state: &mut SessionState, cmd: UserCommand, deps: &Deps<'_>) -> Result<TurnOutput> {
    let mark = Mark::take(state);
    if state.phase == TaskPhase::Ended {
        state.apply(SessionEvent::UserCommand(cmd))?;
        return Ok(mark.finish(state, ScaffoldAction::None, None));
    }
    if state.prompt_mode == PromptMode::Single && cmd != UserCommand::EndSession {
        return Err(Error::Protocol {
            from: state.phase,
            to: TaskPhase::ScenarioSelection,
        });
    }
    state.apply(SessionEvent::UserCommand(cmd))?;
    let note = match cmd {
        UserCommand::EndSession => "session ended by the learner",
        UserCommand::SwitchRolePlay => "learner asked to switch role-play",
        UserCommand::RequestScenarios => "learner asked for new scenarios",
    };
    state.push_system(note, deps.clock.now_ms());
    if !state.phase_opened && state.phase != TaskPhase::Ended {
        open_phase(state, deps)?;
    }
    Ok(mark.finish(state, ScaffoldAction::None, None))
}

fn choose_custom(state: &mut SessionState, text: &str, deps: &Deps<'_>) -> Result<TurnOutput> {
    let mark = Mark::take(state);
    match state.phase {
        TaskPhase::ScenarioSelection => {}
        TaskPhase::RolePlay | TaskPhase::Feedback => {
            state.apply(SessionEvent::UserCommand(UserCommand::SwitchRolePlay))?;
        }
        TaskPhase::Ended => return Err(Error::SessionEnded),
        from => {
            return Err(Error::Protocol {
                from,
                to: TaskPhase::RolePlay,
            })
        }
    }
    let now = deps.clock.now_ms();
    state.apply(SessionEvent::LearnerUtterance(Utterance::at(
        format!("I'd like to practice this: {text}"),
        now,
        now,
    )))?;
    let level = state.working_level().unwrap_or(CefrLevel::B1);
    state.apply(SessionEvent::ScenarioChosen(custom_scenario(text, level)))?;
    open_phase(state, deps)?;
    Ok(mark.finish(state, ScaffoldAction::None, None))
}

/// Operator override. Only edges of the phase graph are accepted.
pub fn force_transition(state: &mut SessionState, to: TaskPhase, deps: &Deps<'_>) -> Result<TurnOutput> {
    if to == TaskPhase::Ended {
        return command(state, UserCommand::EndSession, deps);
    }
    let from = state.phase;
    if !validate_transition(from, to) {
        return Err(Error::Protocol { from, to });
    }
    let mark = Mark::take(state);
    match (from, to) {
        (TaskPhase::RolePlay | TaskPhase::Feedback, TaskPhase::ScenarioSelection) => {
            state.apply(SessionEvent::UserCommand(UserCommand::SwitchRolePlay))?;
        }
        (TaskPhase::ScenarioSelection, TaskPhase::RolePlay) => {
            if state.menu.is_empty() {
                let level = state.working_level().unwrap_or(CefrLevel::B1);
                state.offer_menu(pad_menu(Vec::new(), level, deps.pedagogy));
            }
            state.apply(SessionEvent::SaturationReached)?;
        }
        _ => state.apply(SessionEvent::SaturationReached)?,
    }
    state.push_system(&format!("operator moved the session to {to}"), deps.clock.now_ms());
    open_phase(state, deps)?;
    Ok(mark.finish(state, ScaffoldAction::None, None))
}

/// Operator override: start role-play on `scenario` from scenario selection.
pub fn inject_scenario(state: &mut SessionState, scenario: Scenario, deps: &Deps<'_>) -> Result<TurnOutput> {
    let mark = Mark::take(state);
    state.apply(SessionEvent::ScenarioChosen(scenario))?;
    state.push_system("operator chose the scenario", deps.clock.now_ms());
    open_phase(state, deps)?;
    Ok(mark.finish(state, ScaffoldAction::None, None))
}

/// Open the current phase (the greeting, for a new session).
pub fn begin(state: &mut SessionState, deps: &Deps<'_>) -> Result<TurnOutput> {
    let mark = Mark::take(state);
    open_phase(state, deps)?;
    Ok(mark.finish(state, ScaffoldAction::None, None))
}

/// End the session for a reason other than a learner command.
pub fn end_session(state: &mut SessionState, note: &str, deps: &Deps<'_>) -> Result<TurnOutput> {
    let mark = Mark::take(state);
    if state.phase != TaskPhase::Ended {
        state.apply(SessionEvent::UserCommand(UserCommand::EndSession))?;
        state.push_system(note, deps.clock.now_ms());
    }
    Ok(mark.finish(state, ScaffoldAction::None, None))
}

const UNHEARD: &str = "Sorry, I didn't catch that. Could you say it again?";

/// Local clarification when speech could not be transcribed. No backend call.
pub fn clarify_unheard(state: &mut SessionState, deps: &Deps<'_>) -> Result<TurnOutput> {
    if state.phase == TaskPhase::Ended {
        return Err(Error::SessionEnded);
    }
    let mark = Mark::take(state);
    add_agent_turn(state, UNHEARD.to_string(), deps)?;
    Ok(mark.finish(state, ScaffoldAction::None, None))
}

/// The engine's opening turn for the current phase, if it has not spoken yet.
pub fn open_phase(state: &mut SessionState, deps: &Deps<'_>) -> Result<Option<String>> {
    if state.phase_opened || state.phase == TaskPhase::Ended {
        return Ok(None);
    }
    if state.prompt_mode == PromptMode::Single {
        return single_reply(state, deps).map(Some);
    }
    let text = match state.phase {
        TaskPhase::Introduction => {
            let task = intro_task(state, deps)?;
            converse(state, &task, None, deps)?
        }
        TaskPhase::Assessment => {
            let task = assessment_opener(state, deps)?;
            converse(state, &task, None, deps)?
        }
        TaskPhase::ScenarioSelection => menu_reply(state, None, deps)?,
        TaskPhase::RolePlay => {
            let task = role_play_task(state, deps)?;
            converse(state, &task, None, deps)?
        }
        TaskPhase::Feedback => {
            feedback_reply(state, deps)?;
            state.short_term.last().map(|t| t.text.clone()).unwrap_or_default()
        }
        TaskPhase::Ended => unreachable!(),
    };
    Ok(Some(text))
}

/// Saturation check for Introduction and RolePlay. Failures count as "not yet".
pub fn check_saturation(state: &SessionState, deps: &Deps<'_>) -> bool {
    let messages = match deps.prompts.render_decision(state.phase, state.phase_history()) {
        Ok(m) => m,
        Err(e) => {
            log::warn!("decision prompt for {}: {e}", state.phase);
            return false;
        }
    };
    match llm::complete(deps.backend, &messages, DECISION_TEMPERATURE) {
        Ok(r) => llm::parse_decision(&r.text).unwrap_or_else(|| {
            log::warn!("decision reply has no YES/NO: {:?}", r.text);
            false
        }),
        Err(e) => {
            log::warn!("decision call failed, staying in {}: {e}", state.phase);
            false
        }
    }
}

fn capped(state: &SessionState) -> bool {
    state.phase_turn_count >= state.config.max_turns_per_phase
}

struct Mark {
    phase: TaskPhase,
    journal_len: usize,
}

impl Mark {
    fn take(state: &SessionState) -> Self {
        Mark {
            phase: state.phase,
            journal_len: state.journal().len(),
        }
    }

    fn finish(
        self,
        state: &SessionState,
        scaffold: ScaffoldAction,
        learner_emotion: Option<EmotionLabel>,
    ) -> TurnOutput {
        let mut replies = Vec::new();
        let mut notes = Vec::new();
        for change in &state.journal()[self.journal_len.min(state.journal().len())..] {
            if let Change::TurnAdded(t) = change {
                match t.role {
                    Role::Agent => replies.push(t.clone()),
                    Role::System => notes.push(t.text.clone()),
                    Role::Learner => {}
                }
            }
        }
        TurnOutput {
            replies,
            notes,
            phase_before: self.phase,
            phase_after: state.phase,
            scaffold,
            learner_emotion,
        }
    }
}

/// Send a request and record the reply as an agent turn.
fn respond(state: &mut SessionState, request: &[ChatMessage], deps: &Deps<'_>) -> Result<String> {
    let reply = llm::complete(deps.backend, request, CONVERSATION_TEMPERATURE)?;
    add_agent_turn(state, reply.text, deps)
}

fn add_agent_turn(state: &mut SessionState, text: String, deps: &Deps<'_>) -> Result<String> {
    if text.trim().is_empty() {
        return Err(Error::MalformedResponse {
            reason: "empty reply".into(),
            raw: text,
        });
    }
    let now = deps.clock.now_ms();
    let prev_end = state.short_term.last().map(|t| t.ended_at);
    let started_at = prev_end.map_or(now, |p| now.max(p));
    let u = Utterance {
        emotion: Some(detect_emotion(&text, deps.lexicon)),
        response_latency_ms: prev_end.map(|p| (started_at - p).max(0) as u64),
        text: text.clone(),
        started_at,
        ended_at: started_at,
        speech_ms: None,
    };
    state.apply(SessionEvent::AgentUtterance(u))?;
    state.phase_opened = true;
    Ok(text)
}

fn converse(state: &mut SessionState, task: &[ChatMessage], hint: Option<String>, deps: &Deps<'_>) -> Result<String> {
    let mut request = compose_request(
        &deps.prompts.persona(),
        task,
        state.phase_history(),
        deps.memory_summary.as_deref(),
        state.config.token_window_budget,
    );
    if let Some(h) = hint {
        request.push(ChatMessage::system(h));
    }
    respond(state, &request, deps)
}

fn single_reply(state: &mut SessionState, deps: &Deps<'_>) -> Result<String> {
    let mut request = deps.prompts.render_single_prompt();
    let history = crate::memory::window(&state.short_term, state.config.token_window_budget);
    request.extend(history.iter().filter_map(turn_message));
    respond(state, &request, deps)
}

fn intro_task(state: &SessionState, deps: &Deps<'_>) -> Result<Vec<ChatMessage>> {
    let p = &state.profile;
    let facts: Vec<String> = [
        ("name", &p.name),
        ("native language", &p.native_language),
        ("cultural background", &p.cultural_background),
        ("reason for learning English", &p.motivation),
    ]
    .into_iter()
    .filter_map(|(k, v)| v.as_ref().map(|v| format!("{k}: {v}")))
    .collect();
    let mut task = Vec::new();
    if !facts.is_empty() {
        task.push(ChatMessage::system(format!(
            "What you already know about the learner. {}.",
            facts.join("; ")
        )));
    }
    task.extend(deps.prompts.render(TemplateId::Introduction, &HashMap::new())?);
    Ok(task)
}

fn assessment_opener(state: &SessionState, deps: &Deps<'_>) -> Result<Vec<ChatMessage>> {
    let earlier: Vec<TurnRecord> = state
        .short_term
        .iter()
        .filter(|t| t.phase == TaskPhase::Introduction)
        .cloned()
        .collect();
    let transcript = if earlier.is_empty() {
        "(we have not talked yet)".to_string()
    } else {
        format_transcript(&earlier)
    };
    let slots = HashMap::from([("user_info_conversation", transcript)]);
    let mut task = deps.prompts.render(TemplateId::Assessment, &slots)?;
    let topic = deps.pedagogy.assessment_topic(&state.profile);
    if topic != DEFAULT_TOPIC {
        for m in &mut task {
            m.content = m.content.replace(DEFAULT_TOPIC, &topic);
        }
    }
    Ok(task)
}

const FOLLOW_UP: &str = "The learner's answer is not yet long enough to assess. Do not give an assessment result yet. React briefly to what they said and ask one follow-up question that invites them to say more about the topic.";

fn assessment_turn(state: &mut SessionState, deps: &Deps<'_>) -> Result<()> {
    let persona = deps.prompts.persona();
    let enough = judge_sufficiency(
        state.phase_history(),
        &deps.pedagogy.gates,
        state.phase_speech_ms(),
        deps.backend,
        deps.prompts,
    );
    if enough {
        match assess_level(state.phase_history(), &persona, deps.backend, deps.prompts) {
            Ok(result) => {
                let rationale = result.rationale.clone();
                state.set_assessment(result);
                state.apply(SessionEvent::SaturationReached)?;
                return menu_reply(state, Some(rationale), deps).map(drop);
            }
            Err(Error::Assessment(e)) => log::warn!("{e}; asking a follow-up instead"),
            Err(e) => return Err(e),
        }
    }
    if capped(state) {
        return state.apply(SessionEvent::SaturationReached);
    }
    let system = deps.prompts.template(TemplateId::Assessment).messages[0].1.clone();
    let task = [ChatMessage::system(system), ChatMessage::system(FOLLOW_UP)];
    converse(state, &task, None, deps).map(drop)
}

/// Offer a fresh menu. `lead` (the assessment result) opens the same turn.
fn menu_reply(state: &mut SessionState, lead: Option<String>, deps: &Deps<'_>) -> Result<String> {
    let level = state.working_level().unwrap_or(CefrLevel::B1);
    let request = compose_request(
        &deps.prompts.persona(),
        &menu_request(deps.prompts)?,
        state.phase_history(),
        deps.memory_summary.as_deref(),
        state.config.token_window_budget,
    );
    let (raw, menu) = scenario_menu(&request, level, deps.backend, deps.pedagogy)?;
    let generated = menu.iter().all(|s| s.scenario_id.starts_with("gen-"));
    let mut text = if generated { raw } else { format_menu(&menu) };
    if let Some(lead) = lead.filter(|l| !l.is_empty()) {
        text = format!("{lead}\n\n{text}");
    }
    state.offer_menu(menu);
    add_agent_turn(state, text, deps)
}

/// Menu listing used when the model's own list could not be parsed.
pub(crate) fn format_menu(menu: &[Scenario]) -> String {
    let mut out = String::from("Here are three scenarios we can practice. Which one would you like?");
    for (i, s) in menu.iter().enumerate() {
        out.push_str(&format!(
            "\n{}. {}: I am the {}, you are the {}. {}",
            i + 1,
            s.title,
            s.agent_role,
            s.learner_role,
            s.scene_description
        ));
    }
    out
}

fn role_play_task(state: &SessionState, deps: &Deps<'_>) -> Result<Vec<ChatMessage>> {
    let scenario = state
        .active_scenario
        .as_ref()
        .ok_or_else(|| Error::Precondition("role-play without an active scenario".into()))?;
    let assessment = state
        .working_level()
        .map(|l| deps.pedagogy.difficulty_directives(l).slot_text())
        .unwrap_or_default();
    let slots = HashMap::from([("scenario", scenario_slot(scenario)), ("assessment", assessment)]);
    deps.prompts.render(TemplateId::RolePlay, &slots)
}

fn feedback_reply(state: &mut SessionState, deps: &Deps<'_>) -> Result<()> {
    let n = state.short_term.len();
    let end = n - state
        .short_term
        .iter()
        .rev()
        .take_while(|t| t.phase == TaskPhase::Feedback)
        .count();
    let start = end
        - state.short_term[..end]
            .iter()
            .rev()
            .take_while(|t| t.phase == TaskPhase::RolePlay)
            .count();
    let report = generate_feedback(
        &state.short_term[start..end],
        &deps.prompts.persona(),
        deps.backend,
        deps.prompts,
    )?;
    add_agent_turn(state, to_markdown(&report), deps)?;
    state.stage_feedback(report);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{ScriptEntry, ScriptedBackend};
    use crate::session::{LearnerProfile, SessionConfig};

    const DECIDE: &str = "Answer with exactly YES or NO.";

    fn state(max: u32) -> SessionState {
        SessionState::new(
            "t",
            LearnerProfile::new("u"),
            SessionConfig {
                max_turns_per_phase: max,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn input_parsing() {
        assert_eq!(parse_input(" hello ").unwrap(), LearnerInput::Text("hello".into()));
        assert_eq!(
            parse_input("/END").unwrap(),
            LearnerInput::Command(UserCommand::EndSession)
        );
        assert_eq!(
            parse_input("/switch").unwrap(),
            LearnerInput::Command(UserCommand::SwitchRolePlay)
        );
        assert_eq!(
            parse_input("/scenario at the bank").unwrap(),
            LearnerInput::CustomScenario("at the bank".into())
        );
        assert!(parse_input("/scenario").is_err());
        assert!(parse_input("/dance").is_err());
        assert!(parse_input("   ").is_err());
    }

    #[test]
    fn intro_saturates_into_assessment_opener() {
        let b = ScriptedBackend::new(vec![
            ScriptEntry::reply("Hello! What is your name?"),
            ScriptEntry::when(DECIDE, "YES"),
            ScriptEntry::reply("Thanks, Mia. Now describe a memorable experience."),
        ]);
        let clock = StepClock::new(1_000, 10);
        let deps = Deps::new(&b, &clock);
        let mut s = state(8);
        assert!(open_phase(&mut s, &deps).unwrap().is_some());
        assert_eq!(open_phase(&mut s, &deps).unwrap(), None);
        let out = step(&mut s, "I'm Mia from Spain, I need English for work.", &deps).unwrap();
        assert_eq!(out.phase_before, TaskPhase::Introduction);
        assert_eq!(out.phase_after, TaskPhase::Assessment);
        assert_eq!(out.replies.len(), 1);
        assert!(out.replies[0].text.starts_with("Thanks, Mia"));
        let req = &b.requests()[2];
        assert!(req.iter().any(|m| m.content.contains("Learner: I'm Mia from Spain")));
    }

    #[test]
    fn backend_failure_keeps_learner_turn() {
        let b = ScriptedBackend::new(vec![ScriptEntry::when(DECIDE, "NO"), ScriptEntry::failure()]);
        let clock = StepClock::new(1_000, 10);
        let deps = Deps::new(&b, &clock);
        let mut s = state(8);
        let err = step(&mut s, "hello there", &deps).unwrap_err();
        assert!(matches!(err, Error::BackendUnavailable { .. }));
        assert_eq!(s.short_term.len(), 1);
        assert_eq!(s.short_term[0].role, Role::Learner);
    }

    #[test]
    fn cap_forces_intro_forward() {
        let b = ScriptedBackend::new(vec![
            ScriptEntry::when(DECIDE, "NO"),
            ScriptEntry::reply("Tell me more."),
        ]);
        let clock = StepClock::new(1_000, 10);
        let deps = Deps::new(&b, &clock);
        let mut s = state(2);
        step(&mut s, "hi", &deps).unwrap();
        assert_eq!(s.phase, TaskPhase::Introduction);
        let b2 = ScriptedBackend::new(vec![ScriptEntry::reply("Now tell me a story.")]);
        let deps = Deps::new(&b2, &clock);
        step(&mut s, "ok", &deps).unwrap();
        assert_eq!(s.phase, TaskPhase::Assessment);
        // no decision call once the cap is hit
        assert_eq!(b2.requests().len(), 1);
    }

    #[test]
    fn commands_and_protocol_errors() {
        let b = ScriptedBackend::new(vec![]);
        let clock = StepClock::new(1_000, 10);
        let deps = Deps::new(&b, &clock);
        let mut s = state(8);
        assert!(matches!(
            step(&mut s, "/switch", &deps),
            Err(Error::Protocol {
                from: TaskPhase::Introduction,
                to: TaskPhase::ScenarioSelection
            })
        ));
        assert!(matches!(
            force_transition(&mut s, TaskPhase::Feedback, &deps),
            Err(Error::Protocol { .. })
        ));
        let out = step(&mut s, "/end", &deps).unwrap();
        assert_eq!(out.phase_after, TaskPhase::Ended);
        assert_eq!(out.notes, ["session ended by the learner"]);
        assert_eq!(s.short_term.last().unwrap().phase, TaskPhase::Ended);
        assert!(step(&mut s, "/end", &deps).unwrap().notes.is_empty());
        assert!(matches!(step(&mut s, "hello", &deps), Err(Error::SessionEnded)));
    }

    #[test]
    fn time_limit_ends_session() {
        let b = ScriptedBackend::new(vec![ScriptEntry::when(DECIDE, "NO"), ScriptEntry::reply("Hi!")]);
        let clock = StepClock::new(0, 1_000);
        let deps = Deps::new(&b, &clock);
        let mut s = SessionState::new(
            "t",
            LearnerProfile::new("u"),
            SessionConfig {
                session_time_limit_s: Some(1.5),
                ..Default::default()
            },
        )
        .unwrap();
        step(&mut s, "hello", &deps).unwrap();
        let out = step(&mut s, "still here", &deps).unwrap();
        assert_eq!(out.phase_after, TaskPhase::Ended);
        assert_eq!(out.notes[0], "time limit reached");
    }

    #[test]
    fn single_mode_uses_only_the_single_prompt() {
        let b = ScriptedBackend::new(vec![ScriptEntry::reply("Let's start."), ScriptEntry::reply("Great.")]);
        let clock = StepClock::new(1_000, 10);
        let deps = Deps::new(&b, &clock);
        let mut s = SessionState::new(
            "t",
            LearnerProfile::new("u"),
            SessionConfig {
                prompt_mode: PromptMode::Single,
                max_turns_per_phase: 1,
                ..Default::default()
            },
        )
        .unwrap();
        open_phase(&mut s, &deps).unwrap();
        step(&mut s, "hello", &deps).unwrap();
        assert_eq!(s.phase, TaskPhase::Introduction);
        assert!(step(&mut s, "/switch", &deps).is_err());
        let single = deps.prompts.render_single_prompt();
        for req in b.requests() {
            assert_eq!(req[0], single[0]);
            assert!(req[1..].iter().all(|m| m.role != crate::prompt::ChatRole::System));
        }
        step(&mut s, "/end", &deps).unwrap();
        assert_eq!(s.phase, TaskPhase::Ended);
    }

    #[test]
    fn custom_scenario_from_role_play() {
        let b = ScriptedBackend::new(vec![ScriptEntry::reply("Welcome to the bank. How can I help?")]);
        let clock = StepClock::new(1_000, 10);
        let deps = Deps::new(&b, &clock);
        let mut s = state(8);
        s.phase = TaskPhase::ScenarioSelection;
        let out = step(&mut s, "/scenario opening a bank account", &deps).unwrap();
        assert_eq!(out.phase_after, TaskPhase::RolePlay);
        assert_eq!(s.active_scenario.as_ref().unwrap().title, "opening a bank account");
        assert_eq!(out.replies.len(), 1);
    }

    #[test]
    fn agent_latency_measured_from_previous_turn() {
        let b = ScriptedBackend::new(vec![
            ScriptEntry::reply("Hello!"),
            ScriptEntry::when(DECIDE, "NO"),
            ScriptEntry::reply("Nice."),
        ]);
        let clock = StepClock::new(1_000, 100);
        let deps = Deps::new(&b, &clock);
        let mut s = state(8);
        open_phase(&mut s, &deps).unwrap();
        step(&mut s, "hi", &deps).unwrap();
        let t = &s.short_term;
        assert_eq!(t[0].response_latency_ms, None);
        assert_eq!(t[2].response_latency_ms, Some((t[2].started_at - t[1].ended_at) as u64));
        assert!(t.windows(2).all(|w| w[0].ended_at <= w[1].started_at));
    }
}
