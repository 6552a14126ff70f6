use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ChatBackend, CompletionResult};
use crate::error::{Error, Result};
use crate::prompt::ChatMessage;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    /// Full URL of the `/v1/chat/completions` endpoint.
    pub endpoint_url: String,
    pub model_id: String,
    pub timeout_s: f64,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig {
            endpoint_url: "https://api.openai.com/v1/chat/completions".into(),
            model_id: "gpt-4".into(),
            timeout_s: 30.0,
            max_retries: 2,
            backoff_base_ms: 500,
            api_key_env: "ELLMA_API_KEY".into(),
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_s.is_finite() && self.timeout_s > 0.0) {
            return Err(Error::Config(format!(
                "timeout_s must be positive, got {}",
                self.timeout_s
            )));
        }
        if self.backoff_base_ms == 0 {
            return Err(Error::Config("backoff_base_ms must be positive".into()));
        }
        url_like(&self.endpoint_url)?;
        Ok(())
    }
}

fn url_like(s: &str) -> Result<()> {
    if s.starts_with("http://") || s.starts_with("https://") {
        Ok(())
    } else {
        Err(Error::Config(format!("endpoint_url must be http(s), got {s:?}")))
    }
}

/// Wait before retry `i` (0-based): `base * 2^i`.
pub fn backoff_delays(backoff_base_ms: u64, max_retries: u32) -> Vec<Duration> {
    (0..max_retries)
        .map(|i| Duration::from_millis(backoff_base_ms.saturating_mul(1u64 << i.min(32))))
        .collect()
}

type Sleeper = Box<dyn Fn(Duration) + Send + Sync>;

/// Client for the de-facto chat completions wire format.
pub struct HttpBackend {
    config: BackendConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    sleeper: Sleeper,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("config", &self.config)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

enum Attempt {
    Done(CompletionResult),
    Transient(String),
    Fatal(Error),
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

impl HttpBackend {
    /// Reads the bearer token from `config.api_key_env` if it is set.
    pub fn new(config: BackendConfig) -> Result<Self> {
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Self::with_api_key(config, api_key)
    }

    pub fn with_api_key(config: BackendConfig, api_key: Option<String>) -> Result<Self> {
        config.validate()?;
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_secs_f64(config.timeout_s))
            .build();
        Ok(HttpBackend {
            config,
            agent,
            api_key,
            sleeper: Box::new(std::thread::sleep),
        })
    }

    /// Replace the backoff wait, e.g. to record delays in tests.
    pub fn with_sleeper(mut self, sleeper: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleeper = Box::new(sleeper);
        self
    }

    pub fn config(&self) -> &BackendConfig {
        &self.config
    }

    fn attempt(&self, body: &serde_json::Value) -> Attempt {
        let started = Instant::now();
        let mut req = self
            .agent
            .post(&self.config.endpoint_url)
            .set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp = match req.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Status(code, r)) => {
                let text = r.into_string().unwrap_or_default();
                let reason = format!("HTTP {code}: {}", text.chars().take(200).collect::<String>());
                return if code == 429 || code >= 500 {
                    Attempt::Transient(reason)
                } else {
                    Attempt::Fatal(Error::BackendUnavailable { attempts: 1, reason })
                };
            }
            Err(ureq::Error::Transport(t)) => return Attempt::Transient(t.to_string()),
        };
        let raw = match resp.into_string() {
            Ok(s) => s,
            Err(e) => return Attempt::Transient(format!("reading body: {e}")),
        };
        let latency_ms = started.elapsed().as_millis() as u64;
        let parsed: WireResponse = match serde_json::from_str(&raw) {
            Ok(p) => p,
            Err(e) => {
                return Attempt::Fatal(Error::MalformedResponse {
                    reason: e.to_string(),
                    raw,
                })
            }
        };
        let Some(choice) = parsed.choices.into_iter().next() else {
            return Attempt::Fatal(Error::MalformedResponse {
                reason: "no choices".into(),
                raw,
            });
        };
        let Some(text) = choice.message.content else {
            return Attempt::Fatal(Error::MalformedResponse {
                reason: "choices[0].message.content missing".into(),
                raw,
            });
        };
        Attempt::Done(CompletionResult {
            text,
            latency_ms,
            truncated: choice.finish_reason.as_deref() == Some("length"),
        })
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&self, messages: &[ChatMessage], temperature: f32) -> Result<CompletionResult> {
        let body = json!({
            "model": self.config.model_id,
            "messages": messages,
            "temperature": temperature,
        });
        let delays = backoff_delays(self.config.backoff_base_ms, self.config.max_retries);
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            match self.attempt(&body) {
                Attempt::Done(r) => return Ok(r),
                Attempt::Fatal(e) => return Err(e),
                Attempt::Transient(reason) => {
                    let Some(delay) = delays.get(attempts as usize - 1) else {
                        return Err(Error::BackendUnavailable { attempts, reason });
                    };
                    log::warn!("chat backend attempt {attempts} failed ({reason}); retrying in {delay:?}");
                    (self.sleeper)(*delay);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_is_geometric_and_bounded() {
        let d = backoff_delays(500, 3);
        assert_eq!(
            d,
            vec![
                Duration::from_millis(500),
                Duration::from_millis(1000),
                Duration::from_millis(2000)
            ]
        );
        for (base, r) in [(1u64, 0u32), (7, 1), (500, 2), (250, 5)] {
            let total: u64 = backoff_delays(base, r).iter().map(|d| d.as_millis() as u64).sum();
            assert_eq!(total, base * ((1 << r) - 1));
        }
    }

    #[test]
    fn config_validation() {
        BackendConfig::default().validate().unwrap();
        let bad = BackendConfig {
            timeout_s: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = BackendConfig {
            endpoint_url: "ftp://x".into(),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
