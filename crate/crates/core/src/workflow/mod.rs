//! The session state machine.
//!
//! [`apply_event`] is the only way a phase changes. The engine functions
//! ([`run_turn`], [`open_phase`], [`command`]) decide which events to apply
//! from backend replies and learner input.

mod engine;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pedagogy::provisional_assessment;
use crate::session::{
    validate_transition, AssessmentResult, EmotionLabel, FeedbackReport, LearnerProfile, PromptMode, Role, Scenario,
    SessionConfig, TaskPhase, TurnRecord,
};

pub use engine::{
    begin, check_saturation, clarify_unheard, command, end_session, force_transition, inject_scenario, open_phase,
    parse_input, run_turn, run_utterance, step, Clock, Deps, LearnerInput, StepClock, SystemClock, TurnOutput,
};

/// One utterance with its timing, as carried by utterance events.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Utterance {
    pub text: String,
    pub started_at: i64,
    pub ended_at: i64,
    pub response_latency_ms: Option<u64>,
    pub emotion: Option<EmotionLabel>,
    /// Measured speech time, when the text came from audio.
    pub speech_ms: Option<u64>,
}

impl Utterance {
    pub fn new(text: impl Into<String>) -> Self {
        Utterance {
            text: text.into(),
            ..Default::default()
        }
    }

    pub fn at(text: impl Into<String>, started_at: i64, ended_at: i64) -> Self {
        Utterance {
            text: text.into(),
            started_at,
            ended_at,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UserCommand {
    EndSession,
    SwitchRolePlay,
    RequestScenarios,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionEvent {
    LearnerUtterance(Utterance),
    AgentUtterance(Utterance),
    SaturationReached,
    ScenarioChosen(Scenario),
    UserCommand(UserCommand),
    FeedbackDelivered(FeedbackReport),
}

/// Observable state change, in the order it happened.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Change {
    PhaseChanged {
        from: TaskPhase,
        to: TaskPhase,
    },
    TurnAdded(TurnRecord),
    AssessmentSet(AssessmentResult),
    ScenarioSet {
        active: Option<Scenario>,
        menu: Vec<Scenario>,
    },
    FeedbackReady(FeedbackReport),
    Ended,
}

impl Change {
    pub fn kind(&self) -> &'static str {
        match self {
            Change::PhaseChanged { .. } => "phase_changed",
            Change::TurnAdded(_) => "turn_added",
            Change::AssessmentSet(_) => "assessment_set",
            Change::ScenarioSet { .. } => "scenario_set",
            Change::FeedbackReady(_) => "feedback_ready",
            Change::Ended => "ended",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionState {
    pub session_id: String,
    pub phase: TaskPhase,
    pub profile: LearnerProfile,
    /// Present exactly while the phase is RolePlay or Feedback.
    pub active_scenario: Option<Scenario>,
    pub short_term: Vec<TurnRecord>,
    /// Learner turns in the current phase.
    pub phase_turn_count: u32,
    pub prompt_mode: PromptMode,
    pub config: SessionConfig,
    /// Latest assessment, provisional or not.
    pub assessment: Option<AssessmentResult>,
    /// Scenarios currently offered.
    pub menu: Vec<Scenario>,
    /// Feedback shown but not yet acknowledged by the learner.
    pub pending_feedback: Option<FeedbackReport>,
    pub scenarios_practiced: Vec<String>,
    /// The engine has produced its opening turn for the current phase.
    pub phase_opened: bool,
    phase_speech_ms: Option<u64>,
    journal: Vec<Change>,
}

/// A fresh session in Introduction with a random id.
pub fn init_session(profile: LearnerProfile, config: SessionConfig) -> Result<SessionState> {
    SessionState::new(uuid::Uuid::new_v4().to_string(), profile, config)
}

/// Pure transition: a new state reflecting `event`, or an error and no change.
pub fn apply_event(state: &SessionState, event: SessionEvent) -> Result<SessionState> {
    let mut next = state.clone();
    next.apply(event)?;
    Ok(next)
}

impl SessionState {
    pub fn new(session_id: impl Into<String>, profile: LearnerProfile, config: SessionConfig) -> Result<Self> {
        profile.validate()?;
        config.validate()?;
        let session_id = session_id.into();
        if session_id.trim().is_empty() {
            return Err(Error::Config("session id must not be empty".into()));
        }
        Ok(SessionState {
            session_id,
            phase: TaskPhase::Introduction,
            profile,
            active_scenario: None,
            short_term: Vec::new(),
            phase_turn_count: 0,
            prompt_mode: config.prompt_mode,
            config,
            assessment: None,
            menu: Vec::new(),
            pending_feedback: None,
            scenarios_practiced: Vec::new(),
            phase_opened: false,
            phase_speech_ms: None,
            journal: Vec::new(),
        })
    }

    /// Every change so far; envelope `seq` is the index plus one.
    pub fn journal(&self) -> &[Change] {
        &self.journal
    }

    pub fn phase_speech_ms(&self) -> Option<u64> {
        self.phase_speech_ms
    }

    /// The trailing run of turns recorded in the current phase.
    pub fn phase_history(&self) -> &[TurnRecord] {
        let n = self
            .short_term
            .iter()
            .rev()
            .take_while(|t| t.phase == self.phase)
            .count();
        &self.short_term[self.short_term.len() - n..]
    }

    /// Level to teach at: assessed, else provisional, else none.
    pub fn working_level(&self) -> Option<crate::session::CefrLevel> {
        self.profile
            .assessed_level
            .or(self.assessment.as_ref().map(|a| a.level))
    }

    /// Apply `event` in place. On error nothing changes.
    pub fn apply(&mut self, event: SessionEvent) -> Result<()> {
        if self.phase == TaskPhase::Ended {
            return match event {
                SessionEvent::UserCommand(UserCommand::EndSession) => Ok(()),
                _ => Err(Error::SessionEnded),
            };
        }
        match event {
            SessionEvent::LearnerUtterance(u) => {
                let max = self.config.max_turns_per_phase;
                if self.prompt_mode == PromptMode::Multi && self.phase_turn_count >= max {
                    return Err(Error::PhaseCap { phase: self.phase, max });
                }
                let speech = u.speech_ms;
                self.push_turn(Role::Learner, u)?;
                self.phase_turn_count += 1;
                if let Some(ms) = speech {
                    self.phase_speech_ms = Some(self.phase_speech_ms.unwrap_or(0) + ms);
                }
                Ok(())
            }
            SessionEvent::AgentUtterance(u) => self.push_turn(Role::Agent, u),
            SessionEvent::SaturationReached => self.saturate(),
            SessionEvent::ScenarioChosen(s) => {
                self.check_edge(TaskPhase::RolePlay)?;
                if self.phase != TaskPhase::ScenarioSelection {
                    return Err(Error::Protocol {
                        from: self.phase,
                        to: TaskPhase::RolePlay,
                    });
                }
                s.validate()?;
                self.active_scenario = Some(s);
                self.transition(TaskPhase::RolePlay);
                Ok(())
            }
            SessionEvent::UserCommand(UserCommand::EndSession) => {
                self.transition(TaskPhase::Ended);
                Ok(())
            }
            SessionEvent::UserCommand(UserCommand::SwitchRolePlay) => {
                self.check_edge(TaskPhase::ScenarioSelection)?;
                self.transition(TaskPhase::ScenarioSelection);
                Ok(())
            }
            SessionEvent::UserCommand(UserCommand::RequestScenarios) => {
                if self.phase == TaskPhase::ScenarioSelection {
                    self.menu.clear();
                    self.phase_opened = false;
                    self.record_scenarios();
                    return Ok(());
                }
                self.check_edge(TaskPhase::ScenarioSelection)?;
                self.transition(TaskPhase::ScenarioSelection);
                Ok(())
            }
            SessionEvent::FeedbackDelivered(report) => {
                if self.phase != TaskPhase::Feedback {
                    return Err(Error::Protocol {
                        from: self.phase,
                        to: TaskPhase::ScenarioSelection,
                    });
                }
                if self.pending_feedback.is_none() {
                    self.journal.push(Change::FeedbackReady(report));
                }
                self.pending_feedback = None;
                self.transition(TaskPhase::ScenarioSelection);
                Ok(())
            }
        }
    }

    fn check_edge(&self, to: TaskPhase) -> Result<()> {
        if validate_transition(self.phase, to) {
            Ok(())
        } else {
            Err(Error::Protocol { from: self.phase, to })
        }
    }

    fn saturate(&mut self) -> Result<()> {
        let to = self.phase.forward().ok_or(Error::SessionEnded)?;
        match self.phase {
            TaskPhase::Assessment if self.assessment.is_none() => {
                let words = crate::pedagogy::learner_word_count(self.phase_history());
                self.set_assessment(provisional_assessment(words));
            }
            TaskPhase::ScenarioSelection => {
                let first =
                    self.menu.first().cloned().ok_or_else(|| {
                        Error::Precondition("no scenario has been offered to move into role-play".into())
                    })?;
                self.active_scenario = Some(first);
            }
            _ => {}
        }
        self.transition(to);
        Ok(())
    }

    fn transition(&mut self, to: TaskPhase) {
        debug_assert!(validate_transition(self.phase, to));
        let from = self.phase;
        let scenario_before = self.active_scenario.clone();
        if !matches!(to, TaskPhase::RolePlay | TaskPhase::Feedback) {
            if let Some(s) = self.active_scenario.take() {
                if !self.scenarios_practiced.contains(&s.scenario_id) {
                    self.scenarios_practiced.push(s.scenario_id);
                }
            }
        }
        if to == TaskPhase::ScenarioSelection {
            self.menu.clear();
        }
        if to != TaskPhase::Feedback {
            self.pending_feedback = None;
        }
        self.phase = to;
        self.phase_turn_count = 0;
        self.phase_speech_ms = None;
        self.phase_opened = false;
        self.journal.push(Change::PhaseChanged { from, to });
        if scenario_before != self.active_scenario {
            self.record_scenarios();
        }
        if to == TaskPhase::Ended {
            self.journal.push(Change::Ended);
        }
    }

    fn record_scenarios(&mut self) {
        self.journal.push(Change::ScenarioSet {
            active: self.active_scenario.clone(),
            menu: self.menu.clone(),
        });
    }

    fn push_turn(&mut self, role: Role, u: Utterance) -> Result<()> {
        let turn = TurnRecord {
            seq: self.short_term.len() as u64 + 1,
            role,
            text: u.text,
            phase: self.phase,
            started_at: u.started_at,
            ended_at: u.ended_at,
            response_latency_ms: u.response_latency_ms,
            emotion: u.emotion,
        };
        turn.validate()?;
        self.journal.push(Change::TurnAdded(turn.clone()));
        self.short_term.push(turn);
        Ok(())
    }

    /// A system note in the transcript (commands, delivery fallbacks).
    pub(crate) fn push_system(&mut self, text: &str, at: i64) {
        let at = at.max(self.short_term.last().map_or(at, |t| t.ended_at));
        let _ = self.push_turn(Role::System, Utterance::at(text, at, at));
    }

    /// Record an assessment; only a sufficient one reaches the profile.
    pub(crate) fn set_assessment(&mut self, result: AssessmentResult) {
        if result.sufficient {
            self.profile.assessed_level = Some(result.level);
        }
        self.journal.push(Change::AssessmentSet(result.clone()));
        self.assessment = Some(result);
    }

    pub(crate) fn offer_menu(&mut self, menu: Vec<Scenario>) {
        self.menu = menu;
        self.record_scenarios();
    }

    pub(crate) fn stage_feedback(&mut self, report: FeedbackReport) {
        self.journal.push(Change::FeedbackReady(report.clone()));
        self.pending_feedback = Some(report);
    }
}
