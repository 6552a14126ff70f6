use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use tutor_core::llm::{BackendConfig, ChatBackend, HttpBackend};
use tutor_core::prompt::ChatMessage;
use tutor_core::speech::{AudioClip, HttpSpeechConfig, HttpStt, HttpTts, SpeechToText, TextToSpeech};
use tutor_core::Error;

struct Request {
    line: String,
    headers: Vec<(String, String)>,
    body: Vec<u8>,
}

impl Request {
    fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }
}

/// Serves one canned `(status, content_type, body)` per connection, in order.
fn serve(responses: Vec<(u16, &'static str, Vec<u8>)>) -> (String, JoinHandle<Vec<Request>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/endpoint", listener.local_addr().unwrap());
    let handle = std::thread::spawn(move || {
        let mut seen = Vec::new();
        for (status, ctype, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let mut headers = Vec::new();
            loop {
                let mut h = String::new();
                reader.read_line(&mut h).unwrap();
                let h = h.trim_end();
                if h.is_empty() {
                    break;
                }
                let (k, v) = h.split_once(':').unwrap();
                headers.push((k.trim().to_string(), v.trim().to_string()));
            }
            let len = headers
                .iter()
                .find(|(k, _)| k.eq_ignore_ascii_case("content-length"))
                .map(|(_, v)| v.parse::<usize>().unwrap())
                .unwrap_or(0);
            let mut req_body = vec![0; len];
            reader.read_exact(&mut req_body).unwrap();
            seen.push(Request {
                line: line.trim_end().to_string(),
                headers,
                body: req_body,
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: {ctype}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                body.len()
            )
            .unwrap();
            stream.write_all(&body).unwrap();
        }
        seen
    });
    (url, handle)
}

fn json(status: u16, body: &str) -> (u16, &'static str, Vec<u8>) {
    (status, "application/json", body.as_bytes().to_vec())
}

fn backend_config(url: String, max_retries: u32) -> BackendConfig {
    BackendConfig {
        endpoint_url: url,
        model_id: "test-model".into(),
        timeout_s: 5.0,
        max_retries,
        backoff_base_ms: 100,
        api_key_env: "UNUSED_KEY_VAR".into(),
    }
}

const OK: &str =
    r#"{"choices":[{"message":{"role":"assistant","content":"Nice to meet you!"},"finish_reason":"stop"}]}"#;

fn hello() -> Vec<ChatMessage> {
    vec![ChatMessage::system("Be kind."), ChatMessage::user("Hi")]
}

#[test]
fn chat_completion_round_trip() {
    let (url, server) = serve(vec![json(200, OK)]);
    let backend = HttpBackend::with_api_key(backend_config(url, 0), Some("sk-test".into())).unwrap();
    let got = backend.complete(&hello(), 0.7).unwrap();
    assert_eq!(got.text, "Nice to meet you!");
    assert!(!got.truncated);

    let reqs = server.join().unwrap();
    assert_eq!(reqs[0].line, "POST /v1/endpoint HTTP/1.1");
    assert_eq!(reqs[0].header("authorization"), Some("Bearer sk-test"));
    let body: serde_json::Value = serde_json::from_slice(&reqs[0].body).unwrap();
    assert_eq!(body["model"], "test-model");
    assert_eq!(body["messages"][0]["role"], "system");
    assert_eq!(body["messages"][1]["content"], "Hi");
    assert!((body["temperature"].as_f64().unwrap() - 0.7).abs() < 1e-6);
}

#[test]
fn length_finish_marks_truncation() {
    let body = r#"{"choices":[{"message":{"content":"Once upon a"},"finish_reason":"length"}]}"#;
    let (url, server) = serve(vec![json(200, body)]);
    let backend = HttpBackend::with_api_key(backend_config(url, 0), None).unwrap();
    assert!(backend.complete(&hello(), 0.0).unwrap().truncated);
    assert_eq!(server.join().unwrap()[0].header("authorization"), None);
}

#[test]
fn transient_failures_are_retried_with_doubling_waits() {
    let (url, server) = serve(vec![json(503, "busy"), json(429, "slow down"), json(200, OK)]);
    let waits = Arc::new(Mutex::new(Vec::new()));
    let log = waits.clone();
    let backend = HttpBackend::with_api_key(backend_config(url, 2), None)
        .unwrap()
        .with_sleeper(move |d| log.lock().unwrap().push(d));
    assert_eq!(backend.complete(&hello(), 0.5).unwrap().text, "Nice to meet you!");
    assert_eq!(server.join().unwrap().len(), 3);
    assert_eq!(
        *waits.lock().unwrap(),
        [Duration::from_millis(100), Duration::from_millis(200)]
    );
}

#[test]
fn exhausted_retries_report_attempts() {
    let (url, server) = serve(vec![json(500, "a"), json(502, "b"), json(500, "c")]);
    let backend = HttpBackend::with_api_key(backend_config(url, 2), None)
        .unwrap()
        .with_sleeper(|_| {});
    match backend.complete(&hello(), 0.5) {
        Err(Error::BackendUnavailable { attempts, reason }) => {
            assert_eq!(attempts, 3);
            assert!(reason.contains("500"), "{reason}");
        }
        other => panic!("expected BackendUnavailable, got {other:?}"),
    }
    server.join().unwrap();
}

#[test]
fn client_errors_are_not_retried() {
    let (url, server) = serve(vec![json(401, "bad key")]);
    let backend = HttpBackend::with_api_key(backend_config(url, 3), None)
        .unwrap()
        .with_sleeper(|_| panic!("no retry expected"));
    assert!(matches!(
        backend.complete(&hello(), 0.5),
        Err(Error::BackendUnavailable { attempts: 1, .. })
    ));
    server.join().unwrap();
}

#[test]
fn malformed_bodies_are_rejected() {
    for body in ["not json", r#"{"choices":[]}"#, r#"{"choices":[{"message":{}}]}"#] {
        let (url, server) = serve(vec![json(200, body)]);
        let backend = HttpBackend::with_api_key(backend_config(url, 2), None)
            .unwrap()
            .with_sleeper(|_| panic!("no retry expected"));
        match backend.complete(&hello(), 0.5) {
            Err(Error::MalformedResponse { raw, .. }) => assert_eq!(raw, body),
            other => panic!("{body}: expected MalformedResponse, got {other:?}"),
        }
        server.join().unwrap();
    }
}

#[test]
fn unreachable_endpoint_is_unavailable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = HttpBackend::with_api_key(backend_config(format!("http://127.0.0.1:{port}/x"), 1), None)
        .unwrap()
        .with_sleeper(|_| {});
    assert!(matches!(
        backend.complete(&hello(), 0.5),
        Err(Error::BackendUnavailable { attempts: 2, .. })
    ));
}

fn speech_config(url: String) -> HttpSpeechConfig {
    HttpSpeechConfig {
        endpoint_url: url,
        model_id: "whisper-1".into(),
        timeout_s: 5.0,
        api_key: Some("sk-speech".into()),
    }
}

fn tone() -> AudioClip {
    AudioClip {
        samples: (0..1600).map(|i| if i % 2 == 0 { 4000 } else { -4000 }).collect(),
        sample_rate: 16_000,
        label: None,
    }
}

#[test]
fn speech_to_text_posts_wav() {
    let (url, server) = serve(vec![json(200, r#"{"text":"I would like a tea."}"#)]);
    let stt = HttpStt::new(speech_config(url));
    let clip = tone();
    assert_eq!(stt.transcribe(&clip).unwrap(), "I would like a tea.");
    let req = &server.join().unwrap()[0];
    assert_eq!(req.line, "POST /v1/endpoint?model=whisper-1 HTTP/1.1");
    assert_eq!(req.header("content-type"), Some("audio/wav"));
    assert_eq!(req.header("authorization"), Some("Bearer sk-speech"));
    assert_eq!(req.body, clip.to_wav_bytes().unwrap());
}

#[test]
fn speech_to_text_errors() {
    let (url, server) = serve(vec![json(200, r#"{"words":[]}"#), json(500, "down")]);
    let stt = HttpStt::new(speech_config(url));
    assert!(matches!(stt.transcribe(&tone()), Err(Error::Transcription(_))));
    assert!(matches!(stt.transcribe(&tone()), Err(Error::Transcription(_))));
    server.join().unwrap();
}

#[test]
fn text_to_speech_returns_clip() {
    let clip = tone();
    let (url, server) = serve(vec![(200, "audio/wav", clip.to_wav_bytes().unwrap())]);
    let tts = HttpTts::new(speech_config(url));
    let got = tts.synthesize("Here is your tea.", "alloy").unwrap();
    assert_eq!((got.samples, got.sample_rate), (clip.samples, clip.sample_rate));
    let req = &server.join().unwrap()[0];
    let body: serde_json::Value = serde_json::from_slice(&req.body).unwrap();
    assert_eq!(
        body,
        serde_json::json!({"model": "whisper-1", "input": "Here is your tea.", "voice": "alloy", "response_format": "wav"})
    );

    let (url, server) = serve(vec![(200, "audio/wav", b"RIFFnope".to_vec())]);
    let tts = HttpTts::new(speech_config(url));
    assert!(matches!(tts.synthesize("Hi", "alloy"), Err(Error::Synthesis(_))));
    server.join().unwrap();
}
