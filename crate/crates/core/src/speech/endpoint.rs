use std::sync::mpsc::{Receiver, SyncSender};
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioFrame {
    /// Signed 16-bit mono PCM.
    pub samples: Vec<i16>,
    pub sample_rate: u32,
    pub frame_duration_ms: u32,
    /// Stream-relative start of the frame.
    pub timestamp_ms: u64,
}

impl AudioFrame {
    pub fn end_ms(&self) -> u64 {
        self.timestamp_ms + u64::from(self.frame_duration_ms)
    }

    /// Frame energy in dBFS (full scale = 0 dB). Silent frames give `-inf`.
    pub fn energy_dbfs(&self) -> f64 {
        if self.samples.is_empty() {
            return f64::NEG_INFINITY;
        }
        let sum_sq: f64 = self.samples.iter().map(|&s| f64::from(s) * f64::from(s)).sum();
        let rms = (sum_sq / self.samples.len() as f64).sqrt();
        20.0 * (rms / 32768.0).log10()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ActivityDetectorKind {
    Energy { threshold_db: f64 },
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub silence_threshold_s: f64,
    pub activity_detector: ActivityDetectorKind,
    pub min_speech_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            silence_threshold_s: 2.0,
            activity_detector: ActivityDetectorKind::Energy { threshold_db: -35.0 },
            min_speech_ms: 200,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.silence_threshold_s.is_finite() && self.silence_threshold_s > 0.0) {
            return Err(Error::Config(format!(
                "silence_threshold_s must be positive, got {}",
                self.silence_threshold_s
            )));
        }
        Ok(())
    }

    pub fn silence_threshold_ms(&self) -> u64 {
        (self.silence_threshold_s * 1000.0).round() as u64
    }
}

/// Decides whether a frame carries speech.
pub trait ActivityDetector {
    fn is_speech(&mut self, frame: &AudioFrame) -> bool;
}

#[derive(Debug, Clone, Copy)]
pub struct EnergyGate {
    pub threshold_db: f64,
}

impl ActivityDetector for EnergyGate {
    fn is_speech(&mut self, frame: &AudioFrame) -> bool {
        frame.energy_dbfs() >= self.threshold_db
    }
}

impl<F: FnMut(&AudioFrame) -> bool> ActivityDetector for F {
    fn is_speech(&mut self, frame: &AudioFrame) -> bool {
        self(frame)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnBoundaryEvent {
    pub speech_start_ms: u64,
    pub speech_end_ms: u64,
    /// Sum of active frame durations inside the segment.
    pub total_speech_ms: u64,
    /// Stream time at which the boundary became known.
    pub emitted_at_ms: u64,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    start: u64,
    end: u64,
    active: u64,
}

/// Incremental silence-threshold endpointer.
pub struct Endpointer<D> {
    config: EndpointConfig,
    threshold_ms: u64,
    detector: D,
    segment: Option<Segment>,
    last_timestamp: Option<u64>,
    frame_duration: Option<u32>,
}

impl Endpointer<EnergyGate> {
    /// Energy-gated endpointer. An `External` detector kind needs [`Endpointer::with_detector`].
    pub fn new(config: EndpointConfig) -> Result<Self> {
        match config.activity_detector {
            ActivityDetectorKind::Energy { threshold_db } => {
                Endpointer::with_detector(config, EnergyGate { threshold_db })
            }
            ActivityDetectorKind::External => Err(Error::Config(
                "external activity detector selected but none supplied".into(),
            )),
        }
    }
}

impl<D: ActivityDetector> Endpointer<D> {
    pub fn with_detector(config: EndpointConfig, detector: D) -> Result<Self> {
        config.validate()?;
        Ok(Endpointer {
            threshold_ms: config.silence_threshold_ms(),
            config,
            detector,
            segment: None,
            last_timestamp: None,
            frame_duration: None,
        })
    }

    pub fn push(&mut self, frame: &AudioFrame) -> Result<Option<TurnBoundaryEvent>> {
        if let Some(prev) = self.last_timestamp {
            if frame.timestamp_ms < prev {
                return Err(Error::Stream(format!(
                    "frame at {} ms arrived after {} ms",
                    frame.timestamp_ms, prev
                )));
            }
        }
        match self.frame_duration {
            Some(d) if d != frame.frame_duration_ms => {
                return Err(Error::Stream(format!(
                    "frame duration changed from {d} ms to {} ms",
                    frame.frame_duration_ms
                )))
            }
            None if frame.frame_duration_ms == 0 => {
                return Err(Error::Stream("frame duration must be positive".into()))
            }
            _ => self.frame_duration = Some(frame.frame_duration_ms),
        }
        self.last_timestamp = Some(frame.timestamp_ms);

        if self.detector.is_speech(frame) {
            let seg = self.segment.get_or_insert(Segment {
                start: frame.timestamp_ms,
                end: frame.end_ms(),
                active: 0,
            });
            seg.end = frame.end_ms();
            seg.active += u64::from(frame.frame_duration_ms);
            return Ok(None);
        }

        let Some(seg) = self.segment else {
            return Ok(None);
        };
        let silence = frame.end_ms().saturating_sub(seg.end);
        if silence < self.threshold_ms {
            return Ok(None);
        }
        self.segment = None;
        if seg.end - seg.start < self.config.min_speech_ms {
            return Ok(None);
        }
        Ok(Some(TurnBoundaryEvent {
            speech_start_ms: seg.start,
            speech_end_ms: seg.end,
            total_speech_ms: seg.active,
            emitted_at_ms: frame.end_ms(),
        }))
    }
}

/// Run the endpointer over a whole frame sequence.
pub fn detect_endpoint<'a, I>(frames: I, config: &EndpointConfig) -> Result<Vec<TurnBoundaryEvent>>
where
    I: IntoIterator<Item = &'a AudioFrame>,
{
    let mut ep = Endpointer::new(*config)?;
    let mut out = Vec::new();
    for f in frames {
        if let Some(ev) = ep.push(f)? {
            out.push(ev);
        }
    }
    Ok(out)
}

/// Queue depth between the capture thread and the endpointer.
pub const FRAME_QUEUE_DEPTH: usize = 64;

/// Spawn a producer thread pushing `frames` into a bounded queue; the
/// producer blocks when the consumer falls behind.
pub fn spawn_frame_producer<I>(frames: I) -> (Receiver<AudioFrame>, JoinHandle<()>)
where
    I: IntoIterator<Item = AudioFrame> + Send + 'static,
    I::IntoIter: Send,
{
    let (tx, rx): (SyncSender<AudioFrame>, Receiver<AudioFrame>) = std::sync::mpsc::sync_channel(FRAME_QUEUE_DEPTH);
    let handle = std::thread::Builder::new()
        .name("audio-capture".into())
        .spawn(move || {
            for f in frames {
                if tx.send(f).is_err() {
                    break;
                }
            }
        })
        .expect("spawn audio producer");
    (rx, handle)
}

/// Split PCM into fixed-duration frames; a short tail is zero-padded.
pub fn frames_from_samples(samples: &[i16], sample_rate: u32, frame_duration_ms: u32) -> Vec<AudioFrame> {
    let per_frame = (sample_rate as usize * frame_duration_ms as usize / 1000).max(1);
    samples
        .chunks(per_frame)
        .enumerate()
        .map(|(i, chunk)| {
            let mut s = chunk.to_vec();
            s.resize(per_frame, 0);
            AudioFrame {
                samples: s,
                sample_rate,
                frame_duration_ms,
                timestamp_ms: i as u64 * u64::from(frame_duration_ms),
            }
        })
        .collect()
}
