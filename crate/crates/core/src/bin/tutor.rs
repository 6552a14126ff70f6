use std::io::{self, BufReader, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use tutor_core::app::{
    audio_source, replay, run_text_session, run_voice_session, serve_gateway, AppConfig, Runtime, RuntimeFactory,
    SessionOutcome, SpeechKind, VoiceIo,
};
use tutor_core::embodiment::{resolve_target, AvatarBridge, ExpressionTable};
use tutor_core::speech::{
    AudioOutput, HttpStt, HttpTts, NullOutput, SpeechToText, StubStt, StubTts, TextToSpeech, WavDirOutput,
};
use tutor_core::{Error, PromptMode, Result};

#[derive(Parser)]
#[command(name = "tutor", version, about = "Spoken-English tutoring sessions")]
struct Cli {
    /// TOML config file (default: $ELLMA_CONFIG, then built-in defaults)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["single", "multi"])]
    prompt_mode: Option<String>,
    /// Replay backend replies from a TOML script instead of calling a model
    #[arg(long, global = true, value_name = "SCRIPT")]
    scripted: Option<PathBuf>,
    /// Avatar OSC target as host:port, or "off"
    #[arg(long, global = true)]
    osc: Option<String>,
    #[arg(long, global = true)]
    log_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Typed conversation; reads learner lines from stdin or --input
    Text {
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Spoken conversation from recorded WAV input
    Voice {
        /// A 16-bit mono WAV file, or a directory of them
        #[arg(long)]
        audio: Option<PathBuf>,
        /// Transcript table for the stub speech recognizer
        #[arg(long)]
        transcripts: Option<PathBuf>,
    },
    /// Print a recorded CSV transcript and check its ordering
    Replay { csv: PathBuf },
    /// Run the WebSocket operator gateway
    Serve {
        #[arg(long)]
        port: Option<u16>,
    },
}

fn load_config(cli: &Cli) -> Result<AppConfig> {
    let mut cfg = AppConfig::load(cli.config.as_deref())?;
    if let Some(m) = &cli.prompt_mode {
        cfg.session.prompt_mode = if m == "single" {
            PromptMode::Single
        } else {
            PromptMode::Multi
        };
    }
    if let Some(o) = &cli.osc {
        cfg.session.osc_target = (!o.eq_ignore_ascii_case("off")).then(|| o.clone());
    }
    if let Some(d) = &cli.log_dir {
        cfg.session.log_dir = d.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report(out: &mut dyn Write, o: &SessionOutcome) -> io::Result<()> {
    let path: Vec<&str> = o.phases.iter().map(|p| p.as_str()).collect();
    writeln!(
        out,
        "-- session {} ({} turns): {}",
        o.session_id,
        o.turns,
        path.join(" -> ")
    )?;
    if let Some(p) = &o.csv_path {
        writeln!(out, "-- transcript {}", p.display())?;
    }
    Ok(())
}

fn text(cfg: &AppConfig, scripted: Option<&Path>, input: Option<&Path>) -> Result<()> {
    let rt = Runtime::from_config(cfg, scripted)?;
    let mut runner = rt.session(cfg)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let outcome = match input {
        Some(p) => {
            let f = std::fs::File::open(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            run_text_session(&mut runner, BufReader::new(f), &mut out, true)?
        }
        None => {
            let stdin = io::stdin();
            let echo = !stdin.is_terminal();
            run_text_session(&mut runner, stdin.lock(), &mut out, echo)?
        }
    };
    report(&mut out, &outcome)?;
    Ok(())
}

fn voice(cfg: &AppConfig, scripted: Option<&Path>, audio: Option<&Path>, transcripts: Option<&Path>) -> Result<()> {
    let sources = audio_source(audio)?;
    let stt: Box<dyn SpeechToText> = match cfg.speech.stt.kind {
        SpeechKind::Http => Box::new(HttpStt::new(cfg.speech.stt.http_config()?)),
        SpeechKind::Stub => {
            let table = transcripts.or(cfg.speech.transcripts.as_deref()).ok_or_else(|| {
                Error::Config("the stub recognizer needs --transcripts <file.toml> or speech.transcripts".into())
            })?;
            Box::new(StubStt::from_path(table)?)
        }
    };
    let tts: Box<dyn TextToSpeech> = match cfg.speech.tts.kind {
        SpeechKind::Http => Box::new(HttpTts::new(cfg.speech.tts.http_config()?)),
        SpeechKind::Stub => Box::new(StubTts::default()),
    };
    let rt = Runtime::from_config(cfg, scripted)?;
    let mut runner = rt.session(cfg)?;
    let mut audio_out: Box<dyn AudioOutput> = match &cfg.speech.output_dir {
        Some(dir) => Box::new(WavDirOutput::new(dir, runner.session_id())?),
        None => Box::new(NullOutput),
    };
    let mut bridge = match &cfg.session.osc_target {
        Some(t) => Some((AvatarBridge::udp()?, resolve_target(t)?)),
        None => None,
    };
    let expressions = ExpressionTable::builtin();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let outcome = {
        let mut io = VoiceIo {
            stt: stt.as_ref(),
            tts: tts.as_ref(),
            audio_out: audio_out.as_mut(),
            avatar: bridge.as_mut().map(|(b, t)| (b, *t)),
            expressions: &expressions,
        };
        run_voice_session(&mut runner, &sources, &mut io, &mut out)?
    };
    if let Some((b, _)) = bridge {
        b.shutdown();
    }
    report(&mut out, &outcome)?;
    Ok(())
}

fn serve(mut cfg: AppConfig, scripted: Option<PathBuf>, port: Option<u16>) -> Result<()> {
    if let Some(p) = port {
        cfg.gateway.port = p;
    }
    let factory_cfg = cfg.clone();
    let factory: RuntimeFactory = Arc::new(move || Runtime::from_config(&factory_cfg, scripted.as_deref()));
    let handle = serve_gateway(cfg, factory)?;
    println!("gateway listening on ws://{}", handle.addr());
    handle.join();
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Command::Replay { csv } = &cli.command {
        let stdout = io::stdout();
        replay(csv, &mut stdout.lock())?;
        return Ok(());
    }
    let cfg = load_config(&cli)?;
    let scripted = cli.scripted.as_deref();
    match &cli.command {
        Command::Text { input } => text(&cfg, scripted, input.as_deref()),
        Command::Voice { audio, transcripts } => voice(&cfg, scripted, audio.as_deref(), transcripts.as_deref()),
        Command::Serve { port } => serve(cfg, cli.scripted.clone(), *port),
        Command::Replay { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let _ = io::stdout().flush();
            eprintln!("tutor: {e}");
            ExitCode::FAILURE
        }
    }
}
