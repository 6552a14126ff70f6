use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::AppConfig;
use super::transcript::{iso_ms, write_csv};
use crate::error::{Error, Result};
use crate::llm::{ChatBackend, HttpBackend, ScriptedBackend};
use crate::memory::{recall, summarize_session, JsonlStore, MemoryStore, SummaryContext};
use crate::pedagogy::Pedagogy;
use crate::session::{Scenario, TaskPhase};
use crate::workflow::{
    self, Change, Clock, Deps, SessionState, StepClock, SystemClock, TurnOutput, UserCommand, Utterance,
};

/// 2024-01-01T09:00:00Z; scripted sessions start here.
pub const SCRIPTED_EPOCH_MS: i64 = 1_704_099_600_000;
/// Clock advance per reading in scripted sessions.
pub const SCRIPTED_STEP_MS: i64 = 1_000;

/// One observable state change, as streamed to gateway clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEventEnvelope {
    pub session_id: String,
    /// Gap-free per session from 1. Error envelopes carry 0 and are not part of the stream.
    pub seq: u64,
    pub kind: String,
    pub payload: Value,
    pub ts: String,
}

impl SessionEventEnvelope {
    pub fn from_change(session_id: &str, seq: u64, change: &Change, ts_ms: i64) -> Self {
        let payload = serde_json::to_value(change)
            .ok()
            .and_then(|mut v| v.get_mut("payload").map(Value::take))
            .unwrap_or_else(|| json!({}));
        SessionEventEnvelope {
            session_id: session_id.to_string(),
            seq,
            kind: change.kind().to_string(),
            payload,
            ts: iso_ms(ts_ms),
        }
    }

    pub fn error(session_id: &str, err: &Error, ts_ms: i64) -> Self {
        let mut payload = json!({ "reason": err.to_string() });
        if let Error::Protocol { from, to } = err {
            payload["from"] = json!(from);
            payload["to"] = json!(to);
        }
        SessionEventEnvelope {
            session_id: session_id.to_string(),
            seq: 0,
            kind: "error".into(),
            payload,
            ts: iso_ms(ts_ms),
        }
    }
}

/// Owned collaborators for sessions built from an [`AppConfig`].
pub struct Runtime {
    backend: Box<dyn ChatBackend>,
    clock: Box<dyn Clock>,
    pedagogy: Pedagogy,
    store: Option<JsonlStore>,
    recall_k: usize,
    scripted: bool,
}

impl Runtime {
    /// A scripted backend and step clock when `scripted` is given, else HTTP and the wall clock.
    pub fn from_config(config: &AppConfig, scripted: Option<&Path>) -> Result<Self> {
        let (backend, clock): (Box<dyn ChatBackend>, Box<dyn Clock>) = match scripted {
            Some(p) => (
                Box::new(ScriptedBackend::from_path(p)?),
                Box::new(StepClock::new(SCRIPTED_EPOCH_MS, SCRIPTED_STEP_MS)),
            ),
            None => (
                Box::new(HttpBackend::new(config.backend.clone())?),
                Box::new(SystemClock),
            ),
        };
        let mut rt = Runtime::new(backend, clock).with_gates(config);
        rt.scripted = scripted.is_some();
        if config.memory.enabled {
            rt.store = Some(JsonlStore::open(config.memory_path())?);
            rt.recall_k = config.memory.recall;
        }
        Ok(rt)
    }

    pub fn new(backend: Box<dyn ChatBackend>, clock: Box<dyn Clock>) -> Self {
        Runtime {
            backend,
            clock,
            pedagogy: Pedagogy::builtin().clone(),
            store: None,
            recall_k: 0,
            scripted: false,
        }
    }

    fn with_gates(mut self, config: &AppConfig) -> Self {
        self.pedagogy = self.pedagogy.with_gates(config.gates);
        self
    }

    pub fn with_store(mut self, store: JsonlStore, recall_k: usize) -> Self {
        self.store = Some(store);
        self.recall_k = recall_k;
        self
    }

    pub fn store(&self) -> Option<&dyn MemoryStore> {
        self.store.as_ref().map(|s| s as &dyn MemoryStore)
    }

    pub fn clock(&self) -> &dyn Clock {
        self.clock.as_ref()
    }

    pub fn deps(&self) -> Deps<'_> {
        let mut d = Deps::new(self.backend.as_ref(), self.clock.as_ref());
        d.pedagogy = &self.pedagogy;
        d
    }

    pub fn is_scripted(&self) -> bool {
        self.scripted
    }

    /// A new session for `config`, with recalled memory and a CSV under the log dir.
    ///
    /// Scripted sessions get the fixed id `scripted-<learner_id>`, others a random one.
    pub fn session(&self, config: &AppConfig) -> Result<SessionRunner<'_>> {
        let id = self.scripted.then(|| format!("scripted-{}", config.profile.learner_id));
        self.session_named(config, id)
    }

    pub fn session_named(&self, config: &AppConfig, id: Option<String>) -> Result<SessionRunner<'_>> {
        let state = match id {
            Some(id) => SessionState::new(id, config.profile.clone(), config.session.clone())?,
            None => workflow::init_session(config.profile.clone(), config.session.clone())?,
        };
        let memory = match self.store() {
            Some(store) if self.recall_k > 0 => recall(store, &config.profile.learner_id, self.recall_k)
                .unwrap_or_else(|e| {
                    log::warn!("memory recall failed: {e}");
                    None
                }),
            _ => None,
        };
        let csv = config.session.log_dir.join(format!("{}.csv", state.session_id));
        Ok(SessionRunner::new(state, self.deps().with_memory(memory), Some(csv)).with_store(self.store()))
    }
}

type Listener<'a> = Box<dyn FnMut(&SessionEventEnvelope) + Send + 'a>;

/// Drives one session and keeps its two sinks (CSV and envelopes) in step with the journal.
pub struct SessionRunner<'a> {
    state: SessionState,
    deps: Deps<'a>,
    store: Option<&'a dyn MemoryStore>,
    csv_path: Option<PathBuf>,
    emitted: usize,
    envelopes: Vec<SessionEventEnvelope>,
    listeners: Vec<Listener<'a>>,
    csv_error: Option<Error>,
}

impl<'a> SessionRunner<'a> {
    pub fn new(state: SessionState, deps: Deps<'a>, csv_path: Option<PathBuf>) -> Self {
        SessionRunner {
            state,
            deps,
            store: None,
            csv_path,
            emitted: 0,
            envelopes: Vec::new(),
            listeners: Vec::new(),
            csv_error: None,
        }
    }

    pub fn with_store(mut self, store: Option<&'a dyn MemoryStore>) -> Self {
        self.store = store;
        self
    }

    /// Called with every envelope as it is emitted.
    pub fn on_envelope(&mut self, f: impl FnMut(&SessionEventEnvelope) + Send + 'a) {
        self.listeners.push(Box::new(f));
    }

    pub fn state(&self) -> &SessionState {
        &self.state
    }

    pub fn session_id(&self) -> &str {
        &self.state.session_id
    }

    pub fn envelopes(&self) -> &[SessionEventEnvelope] {
        &self.envelopes
    }

    pub fn csv_path(&self) -> Option<&Path> {
        self.csv_path.as_deref()
    }

    pub fn deps(&self) -> &Deps<'a> {
        &self.deps
    }

    pub fn start(&mut self) -> Result<TurnOutput> {
        let r = workflow::begin(&mut self.state, &self.deps);
        self.flush();
        r
    }

    /// One line of learner input, plain text or slash command.
    pub fn input(&mut self, line: &str) -> Result<TurnOutput> {
        let r = workflow::step(&mut self.state, line, &self.deps);
        self.flush();
        r
    }

    pub fn utterance(&mut self, u: Utterance) -> Result<TurnOutput> {
        let r = workflow::run_utterance(&mut self.state, u, &self.deps);
        self.flush();
        r
    }

    pub fn command(&mut self, cmd: UserCommand) -> Result<TurnOutput> {
        let r = workflow::command(&mut self.state, cmd, &self.deps);
        self.flush();
        r
    }

    pub fn force_transition(&mut self, to: TaskPhase) -> Result<TurnOutput> {
        let r = workflow::force_transition(&mut self.state, to, &self.deps);
        self.flush();
        r
    }

    pub fn inject_scenario(&mut self, s: Scenario) -> Result<TurnOutput> {
        let r = workflow::inject_scenario(&mut self.state, s, &self.deps);
        self.flush();
        r
    }

    pub fn clarify_unheard(&mut self) -> Result<TurnOutput> {
        let r = workflow::clarify_unheard(&mut self.state, &self.deps);
        self.flush();
        r
    }

    pub fn end(&mut self, note: &str) -> Result<TurnOutput> {
        let r = workflow::end_session(&mut self.state, note, &self.deps);
        self.flush();
        r
    }

    /// Time of the newest turn, or now for a session without turns.
    fn latest_ts(&self) -> i64 {
        self.state
            .short_term
            .last()
            .map(|t| t.ended_at)
            .unwrap_or_else(|| self.deps.clock.now_ms())
    }

    /// Emit envelopes for journal entries not yet seen and rewrite the CSV.
    fn flush(&mut self) {
        let journal = self.state.journal();
        if self.emitted == journal.len() {
            return;
        }
        let fallback_ts = self.latest_ts();
        for (i, change) in journal.iter().enumerate().skip(self.emitted) {
            let ts = match change {
                Change::TurnAdded(t) => t.started_at,
                _ => fallback_ts,
            };
            let env = SessionEventEnvelope::from_change(&self.state.session_id, i as u64 + 1, change, ts);
            for l in &mut self.listeners {
                l(&env);
            }
            self.envelopes.push(env);
        }
        self.emitted = journal.len();
        if let Some(path) = &self.csv_path {
            if let Err(e) = write_csv(&self.state.session_id, &self.state.short_term, path) {
                log::error!("writing {}: {e}", path.display());
                self.csv_error = Some(e);
            }
        }
    }

    /// End the session if needed, store its summary, and surface any CSV failure.
    pub fn finish(&mut self, note: &str) -> Result<()> {
        if self.state.phase != TaskPhase::Ended {
            self.end(note)?;
        }
        if let Some(store) = self.store {
            let ctx = SummaryContext {
                session_id: &self.state.session_id,
                profile: &self.state.profile,
                scenarios_practiced: &self.state.scenarios_practiced,
                created_at: self.latest_ts(),
            };
            match summarize_session(&self.state.short_term, &ctx, self.deps.backend) {
                Ok(summary) => {
                    if let Err(e) = store.put(&summary) {
                        log::warn!("storing the session summary failed: {e}");
                    }
                }
                Err(e) => log::warn!("session summary skipped: {e}"),
            }
        }
        match self.csv_error.take() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}
