use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::BackendConfig;
use crate::pedagogy::SufficiencyGates;
use crate::session::{LearnerProfile, SessionConfig};
use crate::speech::HttpSpeechConfig;

/// Names the config file when `--config` is not given.
pub const CONFIG_ENV: &str = "ELLMA_CONFIG";
pub const DEFAULT_GATEWAY_PORT: u16 = 8787;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewaySettings {
    pub bind: String,
    pub port: u16,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        GatewaySettings {
            bind: "127.0.0.1".into(),
            port: DEFAULT_GATEWAY_PORT,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MemorySettings {
    pub enabled: bool,
    /// Defaults to `<log_dir>/memory.jsonl`.
    pub path: Option<PathBuf>,
    /// Summaries recalled into the next session.
    pub recall: usize,
}

impl Default for MemorySettings {
    fn default() -> Self {
        MemorySettings {
            enabled: true,
            path: None,
            recall: 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeechKind {
    #[default]
    Stub,
    Http,
}

/// One speech adapter. `stub` reads transcripts from a file keyed by segment label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeechAdapter {
    pub kind: SpeechKind,
    pub endpoint_url: String,
    pub model_id: String,
    pub timeout_s: f64,
    /// Environment variable holding the bearer token, if any.
    pub api_key_env: Option<String>,
}

impl Default for SpeechAdapter {
    fn default() -> Self {
        SpeechAdapter {
            kind: SpeechKind::Stub,
            endpoint_url: String::new(),
            model_id: String::new(),
            timeout_s: 30.0,
            api_key_env: None,
        }
    }
}

impl SpeechAdapter {
    pub fn http_config(&self) -> Result<HttpSpeechConfig> {
        if !(self.endpoint_url.starts_with("http://") || self.endpoint_url.starts_with("https://")) {
            return Err(Error::Config(format!(
                "speech endpoint_url must be an http(s) URL, got {:?}",
                self.endpoint_url
            )));
        }
        Ok(HttpSpeechConfig {
            endpoint_url: self.endpoint_url.clone(),
            model_id: self.model_id.clone(),
            timeout_s: self.timeout_s,
            api_key: self.api_key_env.as_deref().and_then(|v| std::env::var(v).ok()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpeechSettings {
    pub stt: SpeechAdapter,
    pub tts: SpeechAdapter,
    /// Label-to-text table for the stub STT.
    pub transcripts: Option<PathBuf>,
    /// Where synthesized replies are written as WAV files; none discards audio.
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub session: SessionConfig,
    pub backend: BackendConfig,
    pub profile: LearnerProfile,
    pub gates: SufficiencyGates,
    pub speech: SpeechSettings,
    pub memory: MemorySettings,
    pub gateway: GatewaySettings,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            session: SessionConfig::default(),
            backend: BackendConfig::default(),
            profile: LearnerProfile::new("learner"),
            gates: SufficiencyGates::default(),
            speech: SpeechSettings::default(),
            memory: MemorySettings::default(),
            gateway: GatewaySettings::default(),
        }
    }
}

impl AppConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut cfg: AppConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        // "off" or an empty string disables the avatar
        if cfg
            .session
            .osc_target
            .as_deref()
            .is_some_and(|t| t.trim().is_empty() || t.trim().eq_ignore_ascii_case("off"))
        {
            cfg.session.osc_target = None;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Data {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// File named by `flag`, else by `$ELLMA_CONFIG`, else defaults.
    pub fn load(flag: Option<&Path>) -> Result<Self> {
        let env = std::env::var_os(CONFIG_ENV).map(PathBuf::from);
        Self::load_with(flag, env.as_deref())
    }

    pub fn load_with(flag: Option<&Path>, env: Option<&Path>) -> Result<Self> {
        match flag.or(env) {
            Some(p) => Self::from_path(p),
            None => Ok(AppConfig::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.session.validate()?;
        self.backend.validate()?;
        self.profile.validate()?;
        if self.gates.min_words == 0 && self.gates.min_speech_s <= 0.0 {
            return Err(Error::Config("sufficiency gates must not both be zero".into()));
        }
        Ok(())
    }

    pub fn memory_path(&self) -> PathBuf {
        self.memory
            .path
            .clone()
            .unwrap_or_else(|| self.session.log_dir.join("memory.jsonl"))
    }
}
