mod common;

use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use common::*;
use tutor_core::app::read_csv;
use tutor_core::TaskPhase;

fn tutor() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_tutor"));
    c.env_remove("ELLMA_CONFIG").env_remove("ELLMA_API_KEY");
    c
}

fn with_stdin(mut cmd: Command, input: &str) -> Output {
    let mut child = cmd
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn scripted_text(log_dir: &Path) -> Command {
    let mut c = tutor();
    c.arg("--scripted")
        .arg(fixture("full_flow/script.toml"))
        .arg("--log-dir")
        .arg(log_dir);
    c
}

#[test]
fn replay_prints_banners_and_counts() {
    let out = tutor().arg("replay").arg(golden("full_flow.csv")).output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let banners: Vec<&str> = stdout.lines().filter(|l| l.starts_with("== ")).collect();
    assert_eq!(
        banners,
        [
            "== Introduction ==",
            "== Assessment ==",
            "== ScenarioSelection ==",
            "== RolePlay ==",
            "== Feedback ==",
            "== Ended =="
        ]
    );
    let (_, turns) = read_csv(&golden("full_flow.csv")).unwrap();
    assert!(stdout.contains(&format!("-- {} turns", turns.len())));
}

#[test]
fn replay_rejects_missing_file() {
    let out = tutor().args(["replay", "/nonexistent/x.csv"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("tutor: "));
}

#[test]
fn config_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let mut cmd = scripted_text(dir.path());
    cmd.env("ELLMA_CONFIG", fixture("full_flow/config.toml")).arg("text");
    let out = with_stdin(cmd, "Hi, I'm Mia.\n/end\n");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    // the fixture profile names the learner, so the transcript is keyed on it
    let (sid, turns) = read_csv(&dir.path().join("scripted-mia.csv")).unwrap();
    assert_eq!(sid.as_deref(), Some("scripted-mia"));
    assert_eq!(learner_turns(&turns), 1);
}

#[test]
fn flag_beats_environment() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[session]\nmax_turns_per_phase = 0\n").unwrap();
    let mut cmd = scripted_text(dir.path());
    cmd.env("ELLMA_CONFIG", &bad)
        .arg("--config")
        .arg(fixture("full_flow/config.toml"))
        .arg("text");
    let out = with_stdin(cmd, "/end\n");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_config_exits_with_failure() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("unknown.toml", "colour = \"blue\"\n"),
        ("zero_cap.toml", "[session]\nmax_turns_per_phase = 0\n"),
        ("syntax.toml", "[session\n"),
    ];
    for (name, body) in cases {
        let path = dir.path().join(name);
        std::fs::write(&path, body).unwrap();
        let mut cmd = scripted_text(dir.path());
        cmd.arg("--config").arg(&path).arg("text");
        let out = with_stdin(cmd, "");
        assert_eq!(out.status.code(), Some(1), "{name}");
        assert!(String::from_utf8_lossy(&out.stderr).contains("configuration"), "{name}");
    }
    let out = tutor()
        .arg("--config")
        .arg(dir.path().join("missing.toml"))
        .arg("text")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stdin_session_runs_full_flow() {
    let dir = tempfile::tempdir().unwrap();
    let mut cmd = scripted_text(dir.path());
    cmd.arg("--config").arg(fixture("full_flow/config.toml")).arg("text");
    let out = with_stdin(cmd, &(learner_lines().join("\n") + "\n"));
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains(
        "-- session scripted-mia (18 turns): Introduction -> Assessment -> ScenarioSelection -> RolePlay -> Feedback -> Ended"
    ));
    let (_, turns) = read_csv(&dir.path().join("scripted-mia.csv")).unwrap();
    let (_, pinned) = read_csv(&golden("full_flow.csv")).unwrap();
    assert_eq!(turns, pinned);
}

#[test]
fn single_mode_refuses_phase_commands() {
    let dir = tempfile::tempdir().unwrap();
    let mut cmd = scripted_text(dir.path());
    cmd.arg("--config")
        .arg(fixture("full_flow/config.toml"))
        .args(["--prompt-mode", "single", "text"]);
    let out = with_stdin(cmd, "Hi there, I am Mia.\n/switch\n/end\n");
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("! cannot go from Introduction"), "{stdout}");
    let (_, turns) = read_csv(&dir.path().join("scripted-mia.csv")).unwrap();
    assert_eq!(phase_path(&turns), [TaskPhase::Introduction, TaskPhase::Ended]);
    assert_eq!(learner_turns(&turns), 1);
}

#[test]
fn exhausted_script_is_reported_and_session_continues() {
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("short.toml");
    std::fs::write(&script, "[[entry]]\nreply = \"Hello! Tell me about yourself.\"\n").unwrap();
    let mut cmd = tutor();
    cmd.arg("--scripted")
        .arg(&script)
        .arg("--log-dir")
        .arg(dir.path())
        .arg("--config")
        .arg(fixture("full_flow/config.toml"))
        .arg("text");
    let out = with_stdin(cmd, "I am Mia.\n/end\n");
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("Your last message was kept"), "{stdout}");
    assert!(stdout.contains("== Ended =="));
}
