//! Avatar control: emotion mirroring and chat text over OSC/UDP.

mod emotion;
mod expression;
mod osc;

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};

pub use crate::session::EmotionLabel;
pub use emotion::{detect_emotion, Lexicon};
pub use expression::{map_expression, ExpressionCommand, ExpressionTable, ParamValue, AVATAR_PARAMETER_PREFIX};
pub use osc::{decode_osc, encode_osc, is_address_safe, validate_address, OscArg, OscMessage};

pub const CHATBOX_ADDRESS: &str = "/chatbox/input";
pub const DEFAULT_CHATBOX_CHUNK: usize = 144;
pub const DEFAULT_OSC_TARGET: &str = "127.0.0.1:9000";

/// Where encoded datagrams go.
pub trait OscSink: Send {
    fn send(&mut self, target: SocketAddr, datagram: &[u8]) -> std::io::Result<()>;
}

pub struct UdpSink {
    socket: UdpSocket,
}

impl UdpSink {
    pub fn bind_any() -> std::io::Result<Self> {
        Ok(UdpSink {
            socket: UdpSocket::bind("0.0.0.0:0")?,
        })
    }
}

impl OscSink for UdpSink {
    fn send(&mut self, target: SocketAddr, datagram: &[u8]) -> std::io::Result<()> {
        self.socket.send_to(datagram, target).map(|_| ())
    }
}

type Datagram = (SocketAddr, Vec<u8>);

/// In-memory sink for tests and dry runs.
#[derive(Debug, Clone, Default)]
pub struct RecordingSink {
    sent: Arc<Mutex<Vec<Datagram>>>,
}

impl RecordingSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sent(&self) -> Vec<(SocketAddr, Vec<u8>)> {
        self.sent.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }
}

impl OscSink for RecordingSink {
    fn send(&mut self, target: SocketAddr, datagram: &[u8]) -> std::io::Result<()> {
        self.sent
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push((target, datagram.to_vec()));
        Ok(())
    }
}

pub fn resolve_target(target: &str) -> Result<SocketAddr> {
    target
        .to_socket_addrs()
        .map_err(|e| Error::Config(format!("OSC target {target:?}: {e}")))?
        .next()
        .ok_or_else(|| Error::Config(format!("OSC target {target:?} resolves to nothing")))
}

/// Split text into chunks of at most `limit` characters, in order.
pub fn chunk_text(text: &str, limit: usize) -> Vec<String> {
    let limit = limit.max(1);
    let chars: Vec<char> = text.chars().collect();
    chars.chunks(limit).map(|c| c.iter().collect()).collect()
}

/// Chatbox messages for `text`, split at `chunk_limit` characters.
pub fn chatbox_messages(text: &str, chunk_limit: usize) -> Result<Vec<OscMessage>> {
    if text.is_empty() {
        return Err(Error::Precondition("chatbox text must not be empty".into()));
    }
    Ok(chunk_text(text, chunk_limit)
        .into_iter()
        .map(|chunk| OscMessage::new(CHATBOX_ADDRESS, vec![OscArg::Str(chunk), OscArg::True]))
        .collect())
}

struct Job {
    due: Instant,
    order: u64,
    target: SocketAddr,
    datagram: Vec<u8>,
}

impl PartialEq for Job {
    fn eq(&self, other: &Self) -> bool {
        (self.due, self.order) == (other.due, other.order)
    }
}
impl Eq for Job {}
impl PartialOrd for Job {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Job {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.due, self.order).cmp(&(other.due, other.order))
    }
}

enum Command {
    Send(Job),
    Shutdown,
}

/// Owns the outbound socket on its own thread; callers enqueue in order.
///
/// Datagrams for one target leave in enqueue order (delayed releases leave at
/// their due time). Pending releases are flushed on shutdown so no expression
/// stays stuck on the avatar.
pub struct AvatarBridge {
    tx: mpsc::Sender<Command>,
    worker: Option<JoinHandle<()>>,
    order: u64,
    chunk_limit: usize,
}

impl AvatarBridge {
    pub fn new(sink: impl OscSink + 'static) -> Self {
        let (tx, rx) = mpsc::channel::<Command>();
        let mut sink: Box<dyn OscSink> = Box::new(sink);
        let worker = std::thread::Builder::new()
            .name("osc-sender".into())
            .spawn(move || {
                let mut pending: BinaryHeap<Reverse<Job>> = BinaryHeap::new();
                let mut send = |job: Job| {
                    if let Err(e) = sink.send(job.target, &job.datagram) {
                        log::warn!("OSC send to {} failed: {e}", job.target);
                    }
                };
                loop {
                    let now = Instant::now();
                    while pending.peek().is_some_and(|Reverse(j)| j.due <= now) {
                        send(pending.pop().unwrap().0);
                    }
                    let wait = pending
                        .peek()
                        .map(|Reverse(j)| j.due.saturating_duration_since(now))
                        .unwrap_or(Duration::from_secs(3600));
                    match rx.recv_timeout(wait) {
                        Ok(Command::Send(job)) => pending.push(Reverse(job)),
                        Ok(Command::Shutdown) | Err(RecvTimeoutError::Disconnected) => break,
                        Err(RecvTimeoutError::Timeout) => {}
                    }
                }
                while let Some(Reverse(job)) = pending.pop() {
                    send(job);
                }
            })
            .expect("spawn OSC sender");
        AvatarBridge {
            tx,
            worker: Some(worker),
            order: 0,
            chunk_limit: DEFAULT_CHATBOX_CHUNK,
        }
    }

    pub fn udp() -> Result<Self> {
        Ok(Self::new(UdpSink::bind_any()?))
    }

    pub fn with_chunk_limit(mut self, limit: usize) -> Self {
        self.chunk_limit = limit.max(1);
        self
    }

    fn enqueue(&mut self, target: SocketAddr, msg: &OscMessage, delay: Duration) -> Result<()> {
        let datagram = encode_osc(msg)?;
        self.order += 1;
        let job = Job {
            due: Instant::now() + delay,
            order: self.order,
            target,
            datagram,
        };
        if self.tx.send(Command::Send(job)).is_err() {
            log::warn!("OSC sender thread is gone; dropping {}", msg.address);
        }
        Ok(())
    }

    pub fn send(&mut self, target: SocketAddr, msg: &OscMessage) -> Result<()> {
        self.enqueue(target, msg, Duration::ZERO)
    }

    /// Queue chat text; returns the number of datagrams.
    pub fn send_chatbox(&mut self, text: &str, target: SocketAddr) -> Result<usize> {
        let msgs = chatbox_messages(text, self.chunk_limit)?;
        for m in &msgs {
            self.send(target, m)?;
        }
        Ok(msgs.len())
    }

    /// Set each parameter now and release it after its hold.
    pub fn express(&mut self, commands: &[ExpressionCommand], target: SocketAddr) -> Result<()> {
        for c in commands {
            self.send(target, &c.to_osc())?;
            self.enqueue(target, &c.release_osc(), Duration::from_millis(c.hold_ms))?;
        }
        Ok(())
    }

    /// Flush everything and stop the sender thread.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        let _ = self.tx.send(Command::Shutdown);
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for AvatarBridge {
    fn drop(&mut self) {
        self.stop();
    }
}
