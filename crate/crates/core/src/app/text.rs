use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use super::runner::SessionRunner;
use super::transcript::read_csv;
use crate::error::{Error, Result};
use crate::session::{Role, TaskPhase, TurnRecord};
use crate::workflow::TurnOutput;

/// Summary of a finished session.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionOutcome {
    pub session_id: String,
    pub csv_path: Option<PathBuf>,
    /// Phases in the order they were entered, starting with Introduction.
    pub phases: Vec<TaskPhase>,
    pub turns: usize,
    /// Diagnostics printed while the session kept going.
    pub errors: usize,
}

pub(crate) fn banner(out: &mut dyn Write, phase: TaskPhase) -> std::io::Result<()> {
    writeln!(out, "== {phase} ==")
}

pub(crate) fn print_output(out: &mut dyn Write, o: &TurnOutput) -> std::io::Result<()> {
    for note in &o.notes {
        writeln!(out, "[{note}]")?;
    }
    let mut phase = o.phase_before;
    for r in &o.replies {
        if r.phase != phase {
            banner(out, r.phase)?;
            phase = r.phase;
        }
        writeln!(out, "Tutor: {}", r.text)?;
    }
    if phase != o.phase_after {
        banner(out, o.phase_after)?;
    }
    Ok(())
}

/// A recoverable failure: print it and keep the session going.
pub(crate) fn diagnostic(e: &Error) -> String {
    match e {
        Error::BackendUnavailable { .. } | Error::ScriptExhausted | Error::MalformedResponse { .. } => {
            format!("! {e}. Your last message was kept; send another line to try again.")
        }
        Error::Protocol { from, to } => format!("! cannot go from {from} to {to} here."),
        _ => format!("! {e}"),
    }
}

/// Interactive loop: one learner line per turn, tutor replies printed with phase banners.
///
/// Ends on `/end` or at end of input. Backend failures are reported and the
/// session carries on.
pub fn run_text_session(
    runner: &mut SessionRunner<'_>,
    input: impl BufRead,
    out: &mut dyn Write,
    echo: bool,
) -> Result<SessionOutcome> {
    let mut errors = 0;
    banner(out, runner.state().phase)?;
    match runner.start() {
        Ok(o) => print_output(out, &o)?,
        Err(e) => {
            errors += 1;
            writeln!(out, "{}", diagnostic(&e))?;
        }
    }
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if echo {
            writeln!(out, "You: {}", line.trim())?;
        }
        match runner.input(&line) {
            Ok(o) => print_output(out, &o)?,
            Err(Error::SessionEnded) => break,
            Err(e) => {
                errors += 1;
                writeln!(out, "{}", diagnostic(&e))?;
            }
        }
        if runner.state().phase == TaskPhase::Ended {
            break;
        }
    }
    runner.finish("learner input closed")?;
    Ok(outcome(runner, errors))
}

pub(crate) fn outcome(runner: &SessionRunner<'_>, errors: usize) -> SessionOutcome {
    let s = runner.state();
    let mut phases = vec![TaskPhase::Introduction];
    for c in s.journal() {
        if let crate::workflow::Change::PhaseChanged { to, .. } = c {
            phases.push(*to);
        }
    }
    SessionOutcome {
        session_id: s.session_id.clone(),
        csv_path: runner.csv_path().map(Path::to_path_buf),
        phases,
        turns: s.short_term.len(),
        errors,
    }
}

/// Statistics over a recorded transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub session_id: Option<String>,
    pub turns: usize,
    /// Phases in first-visit order with their turn counts.
    pub phase_turns: Vec<(TaskPhase, usize)>,
    pub mean_latency_ms: Option<f64>,
}

/// Check a transcript's ordering and print it back with phase banners.
pub fn replay(path: &Path, out: &mut dyn Write) -> Result<ReplayReport> {
    let (session_id, turns) = read_csv(path)?;
    check_order(&turns)?;
    let mut phase_turns: Vec<(TaskPhase, usize)> = Vec::new();
    let mut current = None;
    for t in &turns {
        if current != Some(t.phase) {
            banner(out, t.phase)?;
            current = Some(t.phase);
        }
        match phase_turns.iter_mut().find(|(p, _)| *p == t.phase) {
            Some((_, n)) => *n += 1,
            None => phase_turns.push((t.phase, 1)),
        }
        let who = match t.role {
            Role::Learner => "You",
            Role::Agent => "Tutor",
            Role::System => "System",
        };
        writeln!(out, "{who}: {}", t.text)?;
    }
    let latencies: Vec<u64> = turns.iter().filter_map(|t| t.response_latency_ms).collect();
    let mean_latency_ms =
        (!latencies.is_empty()).then(|| latencies.iter().sum::<u64>() as f64 / latencies.len() as f64);
    writeln!(out, "-- {} turns", turns.len())?;
    if let Some(m) = mean_latency_ms {
        writeln!(out, "-- mean response latency {m:.0} ms")?;
    }
    Ok(ReplayReport {
        session_id,
        turns: turns.len(),
        phase_turns,
        mean_latency_ms,
    })
}

fn check_order(turns: &[TurnRecord]) -> Result<()> {
    for (i, t) in turns.iter().enumerate() {
        if t.seq != i as u64 + 1 {
            return Err(Error::Precondition(format!(
                "transcript seq {} at row {} (expected {})",
                t.seq,
                i + 2,
                i + 1
            )));
        }
        t.validate()?;
    }
    Ok(())
}
