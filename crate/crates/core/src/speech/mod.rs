//! Turn endpointing plus speech-to-text and text-to-speech adapters.

mod endpoint;

use std::collections::HashMap;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use crate::error::{Error, Result};

pub use endpoint::{
    detect_endpoint, frames_from_samples, spawn_frame_producer, ActivityDetector, ActivityDetectorKind, AudioFrame,
    EndpointConfig, Endpointer, EnergyGate, TurnBoundaryEvent, FRAME_QUEUE_DEPTH,
};

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
pub const DEFAULT_FRAME_MS: u32 = 20;
/// Stub TTS speaking rate.
pub const STUB_TTS_MS_PER_CHAR: u64 = 15;

/// A span of mono PCM16 audio.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioClip {
    pub samples: Vec<i16>,
    pub sample_rate: u32,
    /// Where the audio came from, e.g. `greeting.wav` or `stream.wav#2`.
    pub label: Option<String>,
}

impl AudioClip {
    pub fn duration_ms(&self) -> u64 {
        if self.sample_rate == 0 {
            return 0;
        }
        self.samples.len() as u64 * 1000 / u64::from(self.sample_rate)
    }

    /// The `[start_ms, end_ms)` slice of this clip.
    pub fn slice_ms(&self, start_ms: u64, end_ms: u64, label: Option<String>) -> AudioClip {
        let at = |ms: u64| ((ms * u64::from(self.sample_rate) / 1000) as usize).min(self.samples.len());
        AudioClip {
            samples: self.samples[at(start_ms)..at(end_ms.max(start_ms))].to_vec(),
            sample_rate: self.sample_rate,
            label,
        }
    }

    pub fn to_wav_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Cursor::new(Vec::new());
        {
            let mut w = hound::WavWriter::new(&mut buf, wav_spec(self.sample_rate))
                .map_err(|e| Error::Synthesis(e.to_string()))?;
            for s in &self.samples {
                w.write_sample(*s).map_err(|e| Error::Synthesis(e.to_string()))?;
            }
            w.finalize().map_err(|e| Error::Synthesis(e.to_string()))?;
        }
        Ok(buf.into_inner())
    }
}

fn wav_spec(sample_rate: u32) -> hound::WavSpec {
    hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    }
}

fn read_wav<R: std::io::Read>(reader: hound::WavReader<R>, label: Option<String>) -> Result<AudioClip> {
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::Stream(format!(
            "expected PCM16 mono WAV, got {} channel(s), {} bits",
            spec.channels, spec.bits_per_sample
        )));
    }
    let samples = reader
        .into_samples::<i16>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Stream(e.to_string()))?;
    Ok(AudioClip {
        samples,
        sample_rate: spec.sample_rate,
        label,
    })
}

/// Read a PCM16 mono WAV file.
pub fn read_wav_file(path: &Path) -> Result<AudioClip> {
    let reader = hound::WavReader::open(path).map_err(|e| Error::Stream(format!("{}: {e}", path.display())))?;
    let label = path.file_name().map(|n| n.to_string_lossy().into_owned());
    read_wav(reader, label)
}

pub fn read_wav_bytes(bytes: &[u8]) -> Result<AudioClip> {
    let reader = hound::WavReader::new(Cursor::new(bytes)).map_err(|e| Error::Stream(e.to_string()))?;
    read_wav(reader, None)
}

pub fn write_wav_file(path: &Path, clip: &AudioClip) -> Result<()> {
    std::fs::write(path, clip.to_wav_bytes()?)?;
    Ok(())
}

pub trait SpeechToText: Send + Sync {
    fn transcribe(&self, segment: &AudioClip) -> Result<String>;
}

pub trait TextToSpeech: Send + Sync {
    fn synthesize(&self, text: &str, voice_id: &str) -> Result<AudioClip>;
}

fn check_segment(segment: &AudioClip) -> Result<()> {
    if segment.samples.is_empty() {
        return Err(Error::Precondition("cannot transcribe an empty segment".into()));
    }
    Ok(())
}

/// Transcribe through any adapter, enforcing the non-empty precondition.
pub fn transcribe(segment: &AudioClip, backend: &dyn SpeechToText) -> Result<String> {
    check_segment(segment)?;
    backend.transcribe(segment)
}

pub fn synthesize(text: &str, voice_id: &str, backend: &dyn TextToSpeech) -> Result<AudioClip> {
    if text.is_empty() {
        return Err(Error::Precondition("cannot synthesize empty text".into()));
    }
    backend.synthesize(text, voice_id)
}

/// Offline STT: looks the segment label up in a fixture map.
#[derive(Debug, Clone, Default)]
pub struct StubStt {
    transcripts: HashMap<String, String>,
}

#[derive(Deserialize)]
struct StubSttFile {
    transcripts: HashMap<String, String>,
}

impl StubStt {
    pub fn new(transcripts: HashMap<String, String>) -> Self {
        StubStt { transcripts }
    }

    /// TOML with a `[transcripts]` table mapping labels to text.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: StubSttFile = toml::from_str(&text).map_err(|e| Error::Data {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(Self::new(file.transcripts))
    }
}

impl SpeechToText for StubStt {
    fn transcribe(&self, segment: &AudioClip) -> Result<String> {
        check_segment(segment)?;
        let label = segment
            .label
            .as_deref()
            .ok_or_else(|| Error::Transcription("segment has no label for the stub map".into()))?;
        self.transcripts
            .get(label)
            .cloned()
            .ok_or_else(|| Error::Transcription(format!("no fixture transcript for {label:?}")))
    }
}

/// Offline TTS: silence lasting 15 ms per character.
#[derive(Debug, Clone, Copy)]
pub struct StubTts {
    pub sample_rate: u32,
}

impl Default for StubTts {
    fn default() -> Self {
        StubTts {
            sample_rate: DEFAULT_SAMPLE_RATE,
        }
    }
}

impl TextToSpeech for StubTts {
    fn synthesize(&self, text: &str, voice_id: &str) -> Result<AudioClip> {
        let chars = text.chars().count() as u64;
        let n = chars * STUB_TTS_MS_PER_CHAR * u64::from(self.sample_rate) / 1000;
        Ok(AudioClip {
            samples: vec![0; n as usize],
            sample_rate: self.sample_rate,
            label: Some(format!("tts:{voice_id}")),
        })
    }
}

#[derive(Debug, Clone)]
pub struct HttpSpeechConfig {
    pub endpoint_url: String,
    pub model_id: String,
    pub timeout_s: f64,
    pub api_key: Option<String>,
}

fn agent(timeout_s: f64) -> ureq::Agent {
    ureq::AgentBuilder::new()
        .timeout(Duration::from_secs_f64(timeout_s.max(0.001)))
        .build()
}

fn with_auth(req: ureq::Request, key: &Option<String>) -> ureq::Request {
    match key {
        Some(k) => req.set("Authorization", &format!("Bearer {k}")),
        None => req,
    }
}

/// STT over HTTP: POSTs the segment as `audio/wav`, expects `{"text": ...}`.
pub struct HttpStt {
    config: HttpSpeechConfig,
    agent: ureq::Agent,
}

impl HttpStt {
    pub fn new(config: HttpSpeechConfig) -> Self {
        let agent = agent(config.timeout_s);
        HttpStt { config, agent }
    }
}

#[derive(Deserialize)]
struct TranscriptBody {
    text: String,
}

impl SpeechToText for HttpStt {
    fn transcribe(&self, segment: &AudioClip) -> Result<String> {
        check_segment(segment)?;
        let wav = segment
            .to_wav_bytes()
            .map_err(|e| Error::Transcription(e.to_string()))?;
        let req = self
            .agent
            .post(&self.config.endpoint_url)
            .set("Content-Type", "audio/wav")
            .query("model", &self.config.model_id);
        let resp = with_auth(req, &self.config.api_key)
            .send_bytes(&wav)
            .map_err(|e| Error::Transcription(e.to_string()))?;
        let body: TranscriptBody = resp
            .into_json()
            .map_err(|e| Error::Transcription(format!("bad response body: {e}")))?;
        Ok(body.text)
    }
}

/// TTS over HTTP: POSTs `{model, input, voice, response_format: "wav"}`, expects WAV bytes.
pub struct HttpTts {
    config: HttpSpeechConfig,
    agent: ureq::Agent,
}

impl HttpTts {
    pub fn new(config: HttpSpeechConfig) -> Self {
        let agent = agent(config.timeout_s);
        HttpTts { config, agent }
    }
}

impl TextToSpeech for HttpTts {
    fn synthesize(&self, text: &str, voice_id: &str) -> Result<AudioClip> {
        let req = self.agent.post(&self.config.endpoint_url);
        let resp = with_auth(req, &self.config.api_key)
            .send_json(serde_json::json!({
                "model": self.config.model_id,
                "input": text,
                "voice": voice_id,
                "response_format": "wav",
            }))
            .map_err(|e| Error::Synthesis(e.to_string()))?;
        let mut bytes = Vec::new();
        std::io::Read::read_to_end(&mut resp.into_reader(), &mut bytes).map_err(|e| Error::Synthesis(e.to_string()))?;
        read_wav_bytes(&bytes).map_err(|e| Error::Synthesis(e.to_string()))
    }
}

/// Destination for synthesized speech.
pub trait AudioOutput: Send {
    fn play(&mut self, clip: &AudioClip) -> Result<()>;
}

/// Writes each utterance to `<dir>/<prefix>-<n>.wav`.
#[derive(Debug)]
pub struct WavDirOutput {
    dir: PathBuf,
    prefix: String,
    count: usize,
}

impl WavDirOutput {
    pub fn new(dir: impl Into<PathBuf>, prefix: impl Into<String>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(WavDirOutput {
            dir,
            prefix: prefix.into(),
            count: 0,
        })
    }
}

impl AudioOutput for WavDirOutput {
    fn play(&mut self, clip: &AudioClip) -> Result<()> {
        self.count += 1;
        write_wav_file(&self.dir.join(format!("{}-{:03}.wav", self.prefix, self.count)), clip)
    }
}

#[derive(Debug, Default)]
pub struct NullOutput;

impl AudioOutput for NullOutput {
    fn play(&mut self, _clip: &AudioClip) -> Result<()> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(label: &str, n: usize) -> AudioClip {
        AudioClip {
            samples: vec![1; n],
            sample_rate: DEFAULT_SAMPLE_RATE,
            label: Some(label.into()),
        }
    }

    #[test]
    fn stub_stt() {
        let stt = StubStt::new(HashMap::from([("a.wav".to_string(), "hello".to_string())]));
        assert_eq!(transcribe(&clip("a.wav", 10), &stt).unwrap(), "hello");
        assert!(matches!(
            transcribe(&clip("a.wav", 0), &stt),
            Err(Error::Precondition(_))
        ));
        assert!(matches!(
            transcribe(&clip("b.wav", 10), &stt),
            Err(Error::Transcription(_))
        ));
    }

    #[test]
    fn stub_tts_duration() {
        let tts = StubTts::default();
        let a = synthesize("hi", "alloy", &tts).unwrap();
        assert_eq!(a.samples.len(), (0.015 * 2.0 * 16000.0) as usize);
        assert_eq!(a.duration_ms(), 30);
        assert!(a.samples.iter().all(|&s| s == 0));
        assert!(synthesize("", "alloy", &tts).is_err());
    }

    #[test]
    fn wav_round_trip_and_slice() {
        let c = AudioClip {
            samples: (0..1600).map(|i| i as i16).collect(),
            sample_rate: 16_000,
            label: None,
        };
        let back = read_wav_bytes(&c.to_wav_bytes().unwrap()).unwrap();
        assert_eq!(back.samples, c.samples);
        let s = c.slice_ms(10, 20, Some("x#1".into()));
        assert_eq!(s.samples.len(), 160);
        assert_eq!(s.samples[0], 160);
    }
}
