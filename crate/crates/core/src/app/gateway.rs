//! WebSocket event gateway: envelope streams out, operator commands in.
//!
//! Client frames are JSON objects tagged by `op`:
//!
//! ```json
//! {"op": "create_session", "profile": {"learner_id": "ana"}}
//! {"op": "subscribe", "session_id": "...", "from_seq": 0}
//! {"op": "command", "session_id": "...", "command": {"kind": "force_transition", "to": "Feedback"}}
//! ```
//!
//! A subscriber first receives every stored envelope after `from_seq`, then the
//! live tail. Errors go only to the client that caused them, with `seq` 0.

use std::collections::HashMap;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tungstenite::{Message, WebSocket};

use super::config::AppConfig;
use super::runner::{Runtime, SessionEventEnvelope};
use crate::error::{Error, Result};
use crate::session::{LearnerProfile, Scenario, TaskPhase};
use crate::workflow::UserCommand;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorCommand {
    ForceTransition {
        to: TaskPhase,
    },
    EndSession,
    InjectScenario {
        scenario: Scenario,
    },
    /// Learner text typed in the browser.
    SayAsLearner {
        text: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientFrame {
    CreateSession {
        #[serde(default)]
        profile: Option<LearnerProfile>,
    },
    Subscribe {
        session_id: String,
        #[serde(default)]
        from_seq: u64,
    },
    Command {
        session_id: String,
        command: OperatorCommand,
    },
}

type Outbox = Sender<SessionEventEnvelope>;

#[derive(Default)]
struct Stream {
    envelopes: Vec<SessionEventEnvelope>,
    subscribers: Vec<Outbox>,
}

impl Stream {
    fn publish(&mut self, env: &SessionEventEnvelope) {
        self.envelopes.push(env.clone());
        self.subscribers.retain(|s| s.send(env.clone()).is_ok());
    }

    fn subscribe(&mut self, from_seq: u64, outbox: Outbox) {
        for e in self.envelopes.iter().filter(|e| e.seq > from_seq) {
            if outbox.send(e.clone()).is_err() {
                return;
            }
        }
        self.subscribers.push(outbox);
    }
}

enum Job {
    /// Produce the greeting.
    Start(Outbox),
    Operator {
        command: OperatorCommand,
        reply: Outbox,
    },
}

struct SessionHandle {
    jobs: Sender<Job>,
    stream: Arc<Mutex<Stream>>,
}

pub type RuntimeFactory = Arc<dyn Fn() -> Result<Runtime> + Send + Sync>;

struct Hub {
    config: AppConfig,
    factory: RuntimeFactory,
    sessions: Mutex<HashMap<String, SessionHandle>>,
    counter: AtomicU64,
}

fn now_ms() -> i64 {
    chrono::Utc::now().timestamp_millis()
}

fn send_error(to: &Outbox, session_id: &str, err: &Error) {
    let _ = to.send(SessionEventEnvelope::error(session_id, err, now_ms()));
}

impl Hub {
    fn create_session(self: &Arc<Self>, profile: Option<LearnerProfile>, client: &Outbox) -> Result<()> {
        let mut config = self.config.clone();
        if let Some(p) = profile {
            p.validate()?;
            config.profile = p;
        }
        let n = self.counter.fetch_add(1, Ordering::SeqCst) + 1;
        let (ready_tx, ready_rx) = mpsc::channel::<Result<String>>();
        let (jobs_tx, jobs_rx) = mpsc::channel::<Job>();
        let stream = Arc::new(Mutex::new(Stream::default()));
        let factory = self.factory.clone();
        let thread_stream = stream.clone();
        std::thread::Builder::new()
            .name(format!("session-{n}"))
            .spawn(move || session_thread(factory, config, n, thread_stream, jobs_rx, ready_tx))?;
        let session_id = ready_rx
            .recv()
            .map_err(|_| Error::Precondition("session thread exited during startup".into()))??;
        stream.lock().unwrap().subscribe(0, client.clone());
        self.sessions.lock().unwrap().insert(
            session_id.clone(),
            SessionHandle {
                jobs: jobs_tx.clone(),
                stream,
            },
        );
        let _ = jobs_tx.send(Job::Start(client.clone()));
        Ok(())
    }

    fn handle(self: &Arc<Self>, text: &str, client: &Outbox) {
        let frame: ClientFrame = match serde_json::from_str(text) {
            Ok(f) => f,
            Err(e) => {
                send_error(client, "", &Error::Precondition(format!("malformed frame: {e}")));
                return;
            }
        };
        match frame {
            ClientFrame::CreateSession { profile } => {
                if let Err(e) = self.create_session(profile, client) {
                    send_error(client, "", &e);
                }
            }
            ClientFrame::Subscribe { session_id, from_seq } => match self.sessions.lock().unwrap().get(&session_id) {
                Some(h) => h.stream.lock().unwrap().subscribe(from_seq, client.clone()),
                None => send_error(client, &session_id, &unknown(&session_id)),
            },
            ClientFrame::Command { session_id, command } => {
                if let OperatorCommand::SayAsLearner { text } = &command {
                    if text.trim().is_empty() {
                        send_error(client, &session_id, &Error::Precondition("empty learner text".into()));
                        return;
                    }
                }
                let sent = self.sessions.lock().unwrap().get(&session_id).is_some_and(|h| {
                    h.jobs
                        .send(Job::Operator {
                            command,
                            reply: client.clone(),
                        })
                        .is_ok()
                });
                if !sent {
                    send_error(client, &session_id, &unknown(&session_id));
                }
            }
        }
    }
}

fn unknown(session_id: &str) -> Error {
    Error::Precondition(format!("unknown session {session_id:?}"))
}

fn session_thread(
    factory: RuntimeFactory,
    config: AppConfig,
    n: u64,
    stream: Arc<Mutex<Stream>>,
    jobs: Receiver<Job>,
    ready: Sender<Result<String>>,
) {
    let runtime = match factory() {
        Ok(r) => r,
        Err(e) => {
            let _ = ready.send(Err(e));
            return;
        }
    };
    let id = runtime
        .is_scripted()
        .then(|| format!("scripted-{}-{n}", config.profile.learner_id));
    let mut runner = match runtime.session_named(&config, id) {
        Ok(r) => r,
        Err(e) => {
            let _ = ready.send(Err(e));
            return;
        }
    };
    let sid = runner.session_id().to_string();
    let publish = stream.clone();
    runner.on_envelope(move |e| publish.lock().unwrap().publish(e));
    if ready.send(Ok(sid.clone())).is_err() {
        return;
    }
    let mut finished = false;
    for job in jobs {
        let (result, reply) = match job {
            Job::Start(reply) => (runner.start().map(drop), reply),
            Job::Operator { command, reply } => {
                let r = match command {
                    OperatorCommand::SayAsLearner { text } => runner.input(&text),
                    OperatorCommand::EndSession => runner.command(UserCommand::EndSession),
                    OperatorCommand::ForceTransition { to } => runner.force_transition(to),
                    OperatorCommand::InjectScenario { scenario } => runner.inject_scenario(scenario),
                };
                (r.map(drop), reply)
            }
        };
        if let Err(e) = result {
            send_error(&reply, &sid, &e);
        }
        if runner.state().phase == TaskPhase::Ended && !finished {
            finished = true;
            if let Err(e) = runner.finish("ended by operator") {
                log::error!("session {sid}: {e}");
            }
        }
    }
}

fn client_loop(hub: Arc<Hub>, stream: TcpStream, stop: Arc<AtomicBool>) {
    let mut ws: WebSocket<TcpStream> = match tungstenite::accept(stream) {
        Ok(ws) => ws,
        Err(e) => {
            log::warn!("websocket handshake failed: {e}");
            return;
        }
    };
    if let Err(e) = ws.get_ref().set_read_timeout(Some(Duration::from_millis(20))) {
        log::warn!("{e}");
        return;
    }
    let (outbox, inbox) = mpsc::channel::<SessionEventEnvelope>();
    while !stop.load(Ordering::SeqCst) {
        match ws.read() {
            Ok(Message::Text(t)) => hub.handle(t.as_str(), &outbox),
            Ok(Message::Binary(_)) => send_error(
                &outbox,
                "",
                &Error::Precondition("binary frames are not accepted".into()),
            ),
            Ok(Message::Close(_)) => break,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(e) => {
                log::debug!("client closed: {e}");
                break;
            }
        }
        for env in inbox.try_iter() {
            let text = serde_json::to_string(&env).expect("envelope serializes");
            if ws.send(Message::text(text)).is_err() {
                return;
            }
        }
    }
    let _ = ws.close(None);
    let _ = ws.flush();
}

/// A running gateway.
pub struct GatewayHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl GatewayHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Block until the accept loop exits.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Listen on `config.gateway` (port 0 picks a free port) and serve clients on background threads.
pub fn serve_gateway(config: AppConfig, factory: RuntimeFactory) -> Result<GatewayHandle> {
    let listener = TcpListener::bind((config.gateway.bind.as_str(), config.gateway.port))?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let hub = Arc::new(Hub {
        config,
        factory,
        sessions: Mutex::new(HashMap::new()),
        counter: AtomicU64::new(0),
    });
    let accept_stop = stop.clone();
    let thread = std::thread::Builder::new()
        .name("gateway-accept".into())
        .spawn(move || {
            for conn in listener.incoming() {
                if accept_stop.load(Ordering::SeqCst) {
                    break;
                }
                match conn {
                    Ok(s) => {
                        let hub = hub.clone();
                        let stop = accept_stop.clone();
                        let _ = std::thread::Builder::new()
                            .name("gateway-client".into())
                            .spawn(move || client_loop(hub, s, stop));
                    }
                    Err(e) => log::warn!("accept failed: {e}"),
                }
            }
        })?;
    log::info!("gateway listening on ws://{addr}");
    Ok(GatewayHandle {
        addr,
        stop,
        thread: Some(thread),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_parse() {
        let f: ClientFrame = serde_json::from_str(
            r#"{"op":"command","session_id":"s","command":{"kind":"force_transition","to":"Feedback"}}"#,
        )
        .unwrap();
        assert_eq!(
            f,
            ClientFrame::Command {
                session_id: "s".into(),
                command: OperatorCommand::ForceTransition {
                    to: TaskPhase::Feedback
                }
            }
        );
        let f: ClientFrame = serde_json::from_str(r#"{"op":"subscribe","session_id":"s"}"#).unwrap();
        assert_eq!(
            f,
            ClientFrame::Subscribe {
                session_id: "s".into(),
                from_seq: 0
            }
        );
        assert!(serde_json::from_str::<ClientFrame>(r#"{"op":"dance"}"#).is_err());
    }

    #[test]
    fn late_subscriber_sees_no_gap() {
        let mut s = Stream::default();
        let env = |seq| SessionEventEnvelope {
            session_id: "s".into(),
            seq,
            kind: "turn_added".into(),
            payload: serde_json::json!({}),
            ts: String::new(),
        };
        s.publish(&env(1));
        s.publish(&env(2));
        let (tx, rx) = mpsc::channel();
        s.subscribe(1, tx);
        s.publish(&env(3));
        let seqs: Vec<u64> = rx.try_iter().map(|e| e.seq).collect();
        assert_eq!(seqs, [2, 3]);
    }
}
