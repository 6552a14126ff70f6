use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use super::runner::SessionRunner;
use super::text::{diagnostic, outcome, print_output, SessionOutcome};
use crate::embodiment::{map_expression, AvatarBridge, ExpressionTable};
use crate::error::{Error, Result};
use crate::session::TaskPhase;
use crate::speech::{
    frames_from_samples, read_wav_file, spawn_frame_producer, synthesize, transcribe, AudioClip, AudioFrame,
    AudioOutput, EndpointConfig, Endpointer, SpeechToText, TextToSpeech, DEFAULT_FRAME_MS,
};
use crate::workflow::{TurnOutput, Utterance};

/// Recorded learner audio: one WAV file, or every `.wav` in a directory in name order.
pub fn audio_source(path: Option<&Path>) -> Result<Vec<PathBuf>> {
    let path = path.ok_or_else(|| {
        Error::Config(
            "no audio source: pass --audio <file.wav|dir> with 16-bit mono WAV input (live microphone capture is not built in)"
                .into(),
        )
    })?;
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Config(format!("no .wav files in {}", path.display())));
        }
        return Ok(files);
    }
    if !path.exists() {
        return Err(Error::Config(format!("audio source {} does not exist", path.display())));
    }
    Ok(vec![path.to_path_buf()])
}

/// Speech adapters, audio sink and avatar for a voice session.
pub struct VoiceIo<'a> {
    pub stt: &'a dyn SpeechToText,
    pub tts: &'a dyn TextToSpeech,
    pub audio_out: &'a mut dyn AudioOutput,
    pub avatar: Option<(&'a mut AvatarBridge, SocketAddr)>,
    pub expressions: &'a ExpressionTable,
}

impl VoiceIo<'_> {
    fn deliver(&mut self, o: &TurnOutput, voice_id: &str, out: &mut dyn Write) -> Result<()> {
        print_output(out, o)?;
        if let (Some((bridge, target)), Some(emotion)) = (self.avatar.as_mut(), o.learner_emotion) {
            let cmds = map_expression(emotion, self.expressions);
            if let Err(e) = bridge.express(&cmds, *target) {
                log::warn!("avatar expression failed: {e}");
            }
        }
        for r in &o.replies {
            match synthesize(&r.text, voice_id, self.tts) {
                Ok(clip) => {
                    if let Err(e) = self.audio_out.play(&clip) {
                        log::warn!("audio output failed: {e}");
                    }
                }
                Err(e) => {
                    log::warn!("{e}; delivering text only");
                    writeln!(out, "[speech unavailable, text only]")?;
                }
            }
            if let Some((bridge, target)) = self.avatar.as_mut() {
                if let Err(e) = bridge.send_chatbox(&r.text, *target) {
                    log::warn!("chatbox send failed: {e}");
                }
            }
        }
        Ok(())
    }
}

/// Learner segments of one clip, found by the silence endpointer.
///
/// The clip is followed by enough silence to close a trailing utterance.
pub fn segment_clip(clip: &AudioClip, config: &EndpointConfig) -> Result<Vec<(AudioClip, u64, u64, u64)>> {
    let mut frames = frames_from_samples(&clip.samples, clip.sample_rate, DEFAULT_FRAME_MS);
    let tail_frames = config.silence_threshold_ms() / u64::from(DEFAULT_FRAME_MS) + 1;
    let per_frame = clip.sample_rate as usize * DEFAULT_FRAME_MS as usize / 1000;
    let start = frames.len() as u64;
    frames.extend((0..tail_frames).map(|i| AudioFrame {
        samples: vec![0; per_frame.max(1)],
        sample_rate: clip.sample_rate,
        frame_duration_ms: DEFAULT_FRAME_MS,
        timestamp_ms: (start + i) * u64::from(DEFAULT_FRAME_MS),
    }));
    let (rx, producer) = spawn_frame_producer(frames);
    let mut ep = Endpointer::new(*config)?;
    let mut out = Vec::new();
    let name = clip.label.clone().unwrap_or_else(|| "audio".into());
    for frame in rx {
        if let Some(ev) = ep.push(&frame)? {
            let label = format!("{name}#{}", out.len() + 1);
            let seg = clip.slice_ms(ev.speech_start_ms, ev.speech_end_ms, Some(label));
            out.push((seg, ev.speech_start_ms, ev.speech_end_ms, ev.total_speech_ms));
        }
    }
    producer
        .join()
        .map_err(|_| Error::Stream("audio producer thread panicked".into()))?;
    Ok(out)
}

/// Voice loop: endpoint, transcribe, run the turn, speak the reply, drive the avatar.
///
/// Segments are labelled `<file name>#<n>`, which is what the stub STT looks up.
/// Untranscribable segments get a local clarification.
pub fn run_voice_session(
    runner: &mut SessionRunner<'_>,
    sources: &[PathBuf],
    io: &mut VoiceIo<'_>,
    out: &mut dyn Write,
) -> Result<SessionOutcome> {
    let voice_id = runner.state().config.voice_id.clone();
    let endpoint = EndpointConfig {
        silence_threshold_s: runner.state().config.silence_threshold_s,
        ..EndpointConfig::default()
    };
    let mut errors = 0;
    super::text::banner(out, runner.state().phase)?;
    match runner.start() {
        Ok(o) => io.deliver(&o, &voice_id, out)?,
        Err(e) => {
            errors += 1;
            writeln!(out, "{}", diagnostic(&e))?;
        }
    }
    'sources: for path in sources {
        let clip = read_wav_file(path)?;
        let base = runner.deps().clock.now_ms();
        for (seg, start_ms, end_ms, speech_ms) in segment_clip(&clip, &endpoint)? {
            let result = match transcribe(&seg, io.stt) {
                Ok(text) => {
                    writeln!(out, "You: {text}")?;
                    let floor = runner.state().short_term.last().map_or(0, |t| t.ended_at);
                    let started_at = (base + start_ms as i64).max(floor);
                    let u = Utterance {
                        text,
                        started_at,
                        ended_at: started_at + (end_ms - start_ms) as i64,
                        response_latency_ms: None,
                        emotion: None,
                        speech_ms: Some(speech_ms),
                    };
                    runner.utterance(u)
                }
                Err(e) => {
                    log::warn!("{e}");
                    runner.clarify_unheard()
                }
            };
            match result {
                Ok(o) => io.deliver(&o, &voice_id, out)?,
                Err(Error::SessionEnded) => break 'sources,
                Err(e) => {
                    errors += 1;
                    writeln!(out, "{}", diagnostic(&e))?;
                }
            }
            if runner.state().phase == TaskPhase::Ended {
                break 'sources;
            }
        }
    }
    runner.finish("audio input ended")?;
    Ok(outcome(runner, errors))
}
