#![allow(dead_code)]

use std::path::{Path, PathBuf};

use tutor_core::app::{AppConfig, SCRIPTED_EPOCH_MS, SCRIPTED_STEP_MS};
use tutor_core::llm::{ScriptEntry, ScriptedBackend};
use tutor_core::session::TurnRecord;
use tutor_core::workflow::{begin, step, Deps, SessionState, StepClock};
use tutor_core::{PromptMode, Role, SessionConfig, TaskPhase};

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn golden(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(rel)
}

pub fn full_flow_config() -> AppConfig {
    AppConfig::from_path(&fixture("full_flow/config.toml")).expect("fixture config")
}

pub fn learner_lines() -> Vec<String> {
    std::fs::read_to_string(fixture("full_flow/learner.txt"))
        .expect("learner fixture")
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect()
}

/// The scripted full session run in-process, keeping the backend for inspection.
pub fn run_full_flow(mode: PromptMode) -> (SessionState, ScriptedBackend) {
    let cfg = full_flow_config();
    let backend = ScriptedBackend::from_path(&fixture("full_flow/script.toml")).expect("script");
    let clock = StepClock::new(SCRIPTED_EPOCH_MS, SCRIPTED_STEP_MS);
    let mut session = cfg.session.clone();
    session.prompt_mode = mode;
    let mut state = SessionState::new("scripted-mia", cfg.profile.clone(), session).unwrap();
    {
        let deps = Deps::new(&backend, &clock);
        begin(&mut state, &deps).expect("opening turn");
        for line in learner_lines() {
            step(&mut state, &line, &deps).unwrap_or_else(|e| panic!("{line:?}: {e}"));
        }
    }
    (state, backend)
}

pub fn session_config(max_turns: u32) -> SessionConfig {
    SessionConfig {
        max_turns_per_phase: max_turns,
        osc_target: None,
        ..SessionConfig::default()
    }
}

pub fn replies<I, S>(texts: I) -> ScriptedBackend
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    ScriptedBackend::new(texts.into_iter().map(ScriptEntry::reply).collect())
}

/// Phases in first-visit order.
pub fn phase_path(turns: &[TurnRecord]) -> Vec<TaskPhase> {
    let mut out: Vec<TaskPhase> = Vec::new();
    for t in turns {
        if out.last() != Some(&t.phase) {
            out.push(t.phase);
        }
    }
    out
}

pub fn learner_turns(turns: &[TurnRecord]) -> usize {
    turns.iter().filter(|t| t.role == Role::Learner).count()
}

pub const MENU_REPLY: &str = "Title: Ordering food at a restaurant\nYou are: a waiter\nI am: a customer\nScene: A busy restaurant at lunchtime.\n\nTitle: Buying breakfast at a cafe\nYou are: a barista\nI am: a customer\nScene: A small coffee shop in the morning.\n\nTitle: A job interview\nYou are: the manager\nI am: a candidate\nScene: A quiet office.";
