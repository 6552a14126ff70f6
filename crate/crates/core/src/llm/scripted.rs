use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{ChatBackend, CompletionResult};
use crate::error::{Error, Result};
use crate::prompt::{ChatMessage, ChatRole};

/// One canned reply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    /// Only fires when the latest user message contains this substring.
    #[serde(default, rename = "match", skip_serializing_if = "Option::is_none")]
    pub match_text: Option<String>,
    #[serde(default)]
    pub reply: String,
    /// Simulate a backend outage instead of replying.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub fail: bool,
}

impl ScriptEntry {
    pub fn reply(text: impl Into<String>) -> Self {
        ScriptEntry {
            match_text: None,
            reply: text.into(),
            fail: false,
        }
    }

    pub fn when(needle: impl Into<String>, text: impl Into<String>) -> Self {
        ScriptEntry {
            match_text: Some(needle.into()),
            reply: text.into(),
            fail: false,
        }
    }

    pub fn failure() -> Self {
        ScriptEntry {
            match_text: None,
            reply: String::new(),
            fail: true,
        }
    }
}

#[derive(Debug, Deserialize)]
struct ScriptFile {
    #[serde(default)]
    entry: Vec<ScriptEntry>,
}

#[derive(Debug, Default)]
struct Inner {
    entries: Vec<(ScriptEntry, bool)>,
    requests: Vec<Vec<ChatMessage>>,
}

/// Deterministic backend that replays a script.
///
/// Each request consumes the first unconsumed entry that is either unguarded
/// or whose guard appears in the latest user message.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    inner: Mutex<Inner>,
}

impl ScriptedBackend {
    pub fn new(entries: Vec<ScriptEntry>) -> Self {
        ScriptedBackend {
            inner: Mutex::new(Inner {
                entries: entries.into_iter().map(|e| (e, false)).collect(),
                requests: Vec::new(),
            }),
        }
    }

    /// Load a TOML script made of `[[entry]]` tables with `match`, `reply`, `fail`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ScriptFile = toml::from_str(text).map_err(|e| Error::Config(format!("script: {e}")))?;
        Ok(Self::new(file.entry))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let file: ScriptFile = toml::from_str(&text).map_err(|e| Error::Data {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        Ok(Self::new(file.entry))
    }

    /// Every request seen so far, in order.
    pub fn requests(&self) -> Vec<Vec<ChatMessage>> {
        self.lock().requests.clone()
    }

    pub fn remaining(&self) -> usize {
        self.lock().entries.iter().filter(|(_, used)| !used).count()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, messages: &[ChatMessage], _temperature: f32) -> Result<CompletionResult> {
        let mut inner = self.lock();
        inner.requests.push(messages.to_vec());
        let latest_user = messages
            .iter()
            .rev()
            .find(|m| m.role == ChatRole::User)
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let slot = inner.entries.iter_mut().find(|(e, used)| {
            !*used
                && e.match_text
                    .as_deref()
                    .is_none_or(|needle| latest_user.contains(needle))
        });
        let Some((entry, used)) = slot else {
            return Err(Error::ScriptExhausted);
        };
        *used = true;
        if entry.fail {
            return Err(Error::BackendUnavailable {
                attempts: 1,
                reason: "scripted failure".into(),
            });
        }
        Ok(CompletionResult {
            text: entry.reply.clone(),
            latency_ms: 0,
            truncated: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(user: &str) -> Vec<ChatMessage> {
        vec![ChatMessage::system("s"), ChatMessage::user(user)]
    }

    #[test]
    fn replies_in_order_with_guards() {
        let b = ScriptedBackend::new(vec![
            ScriptEntry::when("YES or NO", "NO"),
            ScriptEntry::reply("first"),
            ScriptEntry::reply("second"),
        ]);
        assert_eq!(b.complete(&req("hello"), 0.7).unwrap().text, "first");
        assert_eq!(b.complete(&req("Answer YES or NO"), 0.0).unwrap().text, "NO");
        assert_eq!(b.complete(&req("again"), 0.7).unwrap().text, "second");
        assert!(matches!(b.complete(&req("x"), 0.7), Err(Error::ScriptExhausted)));
        assert_eq!(b.requests().len(), 4);
    }

    #[test]
    fn toml_script() {
        let b = ScriptedBackend::from_toml_str(
            r#"
            [[entry]]
            reply = "Hello!"

            [[entry]]
            fail = true

            [[entry]]
            match = "menu"
            reply = "Pick one"
            "#,
        )
        .unwrap();
        assert_eq!(b.complete(&req("x"), 0.7).unwrap().text, "Hello!");
        assert!(b.complete(&req("x"), 0.7).unwrap_err().is_backend());
        assert!(b.complete(&req("x"), 0.7).is_err());
        assert_eq!(b.remaining(), 1);
        assert_eq!(b.complete(&req("the menu"), 0.7).unwrap().text, "Pick one");
    }

    #[test]
    fn deterministic_across_instances() {
        let mk = || ScriptedBackend::new(vec![ScriptEntry::reply("a"), ScriptEntry::reply("b")]);
        let (x, y) = (mk(), mk());
        for _ in 0..2 {
            assert_eq!(x.complete(&req("q"), 0.7).unwrap(), y.complete(&req("q"), 0.7).unwrap());
        }
    }
}
