mod common;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::Path;
use std::process::Command;

use common::*;
use tutor_core::app::{read_csv, run_voice_session, Runtime, VoiceIo};
use tutor_core::embodiment::{decode_osc, AvatarBridge, ExpressionTable, OscArg, RecordingSink, CHATBOX_ADDRESS};
use tutor_core::speech::{write_wav_file, AudioClip, StubStt, StubTts, WavDirOutput};
use tutor_core::{Role, TaskPhase};

const RATE: u32 = 16_000;

/// `(is_speech, milliseconds)` runs of a square wave or silence.
fn clip(runs: &[(bool, u64)]) -> AudioClip {
    let mut samples = Vec::new();
    for &(speech, ms) in runs {
        let n = (ms * u64::from(RATE) / 1000) as usize;
        samples.extend((0..n).map(|i| match (speech, i % 2) {
            (false, _) => 0i16,
            (true, 0) => 8_000,
            (true, _) => -8_000,
        }));
    }
    AudioClip {
        samples,
        sample_rate: RATE,
        label: None,
    }
}

const FIRST: &str = "Hi! I'm Mia. I'm so happy to meet you, I moved to London from Madrid last year.";
const SECOND: &str = "I want to speak more confidently at work and make some friends in the city.";

fn write_fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let wav = dir.join("two_turns.wav");
    write_wav_file(
        &wav,
        &clip(&[(false, 500), (true, 1_200), (false, 2_500), (true, 1_000), (false, 300)]),
    )
    .unwrap();
    let transcripts = dir.join("transcripts.toml");
    std::fs::write(
        &transcripts,
        format!("[transcripts]\n\"two_turns.wav#1\" = {FIRST:?}\n\"two_turns.wav#2\" = {SECOND:?}\n"),
    )
    .unwrap();
    (wav, transcripts)
}

#[test]
fn two_utterances_make_two_turns() {
    let dir = tempfile::tempdir().unwrap();
    let (wav, transcripts) = write_fixture(dir.path());
    let mut cfg = full_flow_config();
    cfg.session.log_dir = dir.path().join("logs");
    let rt = Runtime::from_config(&cfg, Some(&fixture("full_flow/script.toml"))).unwrap();
    let mut runner = rt.session(&cfg).unwrap();

    let stt = StubStt::from_path(&transcripts).unwrap();
    let tts = StubTts::default();
    let mut out_audio = WavDirOutput::new(dir.path().join("spoken"), "tutor").unwrap();
    let sink = RecordingSink::new();
    let mut bridge = AvatarBridge::new(sink.clone());
    let target: SocketAddr = "127.0.0.1:9000".parse().unwrap();
    let table = ExpressionTable::builtin();
    let mut printed = Vec::new();
    let outcome = {
        let mut io = VoiceIo {
            stt: &stt,
            tts: &tts,
            audio_out: &mut out_audio,
            avatar: Some((&mut bridge, target)),
            expressions: &table,
        };
        run_voice_session(&mut runner, &[wav], &mut io, &mut printed).unwrap()
    };
    bridge.shutdown();

    assert_eq!(outcome.errors, 0);
    assert_eq!(
        outcome.phases,
        [TaskPhase::Introduction, TaskPhase::Assessment, TaskPhase::Ended]
    );
    let turns = &runner.state().short_term;
    let learner: Vec<_> = turns.iter().filter(|t| t.role == Role::Learner).collect();
    assert_eq!(learner.len(), 2);
    assert_eq!((learner[0].text.as_str(), learner[1].text.as_str()), (FIRST, SECOND));
    assert_eq!(learner[0].ended_at - learner[0].started_at, 1_200);
    assert_eq!(learner[1].ended_at - learner[1].started_at, 1_000);
    for t in turns {
        t.validate().unwrap();
    }
    for w in turns.windows(2) {
        assert!(w[1].started_at >= w[0].ended_at, "turns overlap: {w:?}");
    }

    // every agent reply was spoken and shown in the chatbox
    let agent = turns.iter().filter(|t| t.role == Role::Agent).count();
    assert_eq!(agent, 3);
    assert_eq!(std::fs::read_dir(dir.path().join("spoken")).unwrap().count(), agent);
    let sent: Vec<_> = sink.sent().into_iter().map(|(_, d)| decode_osc(&d).unwrap()).collect();
    let chat: Vec<_> = sent.iter().filter(|m| m.address == CHATBOX_ADDRESS).collect();
    assert!(chat.len() >= agent);
    assert!(matches!(&chat[0].args[0], OscArg::Str(s) if turns[0].text.starts_with(s.as_str())));
    // the learner's "happy" turn raised an expression that was later released
    let params: Vec<_> = sent.iter().filter(|m| m.address != CHATBOX_ADDRESS).collect();
    assert!(params.len() >= 2 && params.len() % 2 == 0, "{params:?}");

    let csv = runner.csv_path().unwrap().to_path_buf();
    let (_, saved) = read_csv(&csv).unwrap();
    assert_eq!(&saved, turns);
    let text = String::from_utf8(printed).unwrap();
    assert!(text.contains(&format!("You: {FIRST}")));
}

#[test]
fn unheard_segment_gets_a_clarification() {
    let dir = tempfile::tempdir().unwrap();
    let wav = dir.path().join("mumble.wav");
    write_wav_file(&wav, &clip(&[(true, 800), (false, 100)])).unwrap();
    let stt = StubStt::new(HashMap::new());
    let tts = StubTts::default();
    let mut cfg = full_flow_config();
    cfg.session.log_dir = dir.path().to_path_buf();
    let rt = Runtime::from_config(&cfg, Some(&fixture("full_flow/script.toml"))).unwrap();
    let mut runner = rt.session(&cfg).unwrap();
    let mut sink = tutor_core::speech::NullOutput;
    let table = ExpressionTable::builtin();
    let mut io = VoiceIo {
        stt: &stt,
        tts: &tts,
        audio_out: &mut sink,
        avatar: None,
        expressions: &table,
    };
    let mut printed = Vec::new();
    run_voice_session(&mut runner, &[wav], &mut io, &mut printed).unwrap();
    let turns = &runner.state().short_term;
    assert!(turns.iter().all(|t| t.role != Role::Learner));
    assert!(turns
        .iter()
        .any(|t| t.role == Role::Agent && t.text.starts_with("Sorry, I didn't catch that")));
}

#[test]
fn voice_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let (wav, transcripts) = write_fixture(dir.path());
    let out = Command::new(env!("CARGO_BIN_EXE_tutor"))
        .env_remove("ELLMA_CONFIG")
        .arg("--config")
        .arg(fixture("full_flow/config.toml"))
        .arg("--scripted")
        .arg(fixture("full_flow/script.toml"))
        .arg("--log-dir")
        .arg(dir.path().join("logs"))
        .args(["voice", "--audio"])
        .arg(&wav)
        .arg("--transcripts")
        .arg(&transcripts)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, turns) = read_csv(&dir.path().join("logs/scripted-mia.csv")).unwrap();
    assert_eq!(learner_turns(&turns), 2);

    let out = Command::new(env!("CARGO_BIN_EXE_tutor"))
        .env_remove("ELLMA_CONFIG")
        .arg("--scripted")
        .arg(fixture("full_flow/script.toml"))
        .arg("--log-dir")
        .arg(dir.path())
        .arg("voice")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("no audio source"));
}
