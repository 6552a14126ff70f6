use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::SessionSummary;
use crate::error::{Error, Result};

pub const SUMMARY_SCHEMA_VERSION: u32 = 1;

/// Keyed store of session summaries.
pub trait MemoryStore: Send + Sync {
    fn put(&self, summary: &SessionSummary) -> Result<()>;

    /// Summaries for a learner, newest first.
    fn list_by_learner(&self, learner_id: &str) -> Result<Vec<SessionSummary>>;
}

#[derive(Serialize, Deserialize)]
struct Line {
    v: u32,
    #[serde(flatten)]
    summary: SessionSummary,
}

/// Single-file JSON-lines store, one summary per line.
#[derive(Debug)]
pub struct JsonlStore {
    path: PathBuf,
    write_lock: Mutex<()>,
}

impl JsonlStore {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        Ok(JsonlStore {
            path,
            write_lock: Mutex::new(()),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn read_all(&self) -> Result<Vec<SessionSummary>> {
        let file = match std::fs::File::open(&self.path) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
            Err(e) => return Err(e.into()),
        };
        let mut out = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line).map_err(|e| Error::Data {
                path: self.path.clone(),
                reason: format!("line {}: {e}", n + 1),
            })?;
            if parsed.v != SUMMARY_SCHEMA_VERSION {
                log::warn!(
                    "{}: line {} has schema v{}, skipping",
                    self.path.display(),
                    n + 1,
                    parsed.v
                );
                continue;
            }
            out.push(parsed.summary);
        }
        Ok(out)
    }
}

impl MemoryStore for JsonlStore {
    fn put(&self, summary: &SessionSummary) -> Result<()> {
        if summary.summary_text.trim().is_empty() {
            return Err(Error::Precondition("summary_text must not be empty".into()));
        }
        let mut line = serde_json::to_string(&Line {
            v: SUMMARY_SCHEMA_VERSION,
            summary: summary.clone(),
        })?;
        line.push('\n');
        let _guard = self.write_lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    fn list_by_learner(&self, learner_id: &str) -> Result<Vec<SessionSummary>> {
        let mut hits: Vec<SessionSummary> = self
            .read_all()?
            .into_iter()
            .filter(|s| s.learner_id == learner_id)
            .collect();
        // later lines win ties
        hits.reverse();
        hits.sort_by_key(|h| std::cmp::Reverse(h.created_at));
        Ok(hits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::recall;
    use crate::session::CefrLevel;

    fn summary(learner: &str, session: &str, at: i64) -> SessionSummary {
        SessionSummary {
            learner_id: learner.into(),
            session_id: session.into(),
            created_at: at,
            key_facts: vec!["fact".into()],
            assessed_level: Some(CefrLevel::A2),
            scenarios_practiced: vec!["lib-cafe".into()],
            summary_text: format!("summary of {session}"),
        }
    }

    #[test]
    fn recall_orders_newest_first() {
        let dir = tempfile::tempdir().unwrap();
        let store = JsonlStore::open(dir.path().join("m.jsonl")).unwrap();
        assert_eq!(recall(&store, "ana", 1).unwrap(), None);
        store.put(&summary("ana", "s1", 100)).unwrap();
        store.put(&summary("ana", "s3", 300)).unwrap();
        store.put(&summary("ana", "s2", 200)).unwrap();
        store.put(&summary("bo", "s9", 900)).unwrap();
        assert_eq!(recall(&store, "ana", 1).unwrap().unwrap(), "summary of s3");
        assert_eq!(
            recall(&store, "ana", 2).unwrap().unwrap(),
            "summary of s3\n\nsummary of s2"
        );
        assert!(recall(&store, "ana", 0).is_err());
        assert_eq!(recall(&store, "nobody", 3).unwrap(), None);
    }

    #[test]
    fn lines_carry_schema_version() {
        let dir = tempfile::tempdir().unwrap();
        let store = JsonlStore::open(dir.path().join("m.jsonl")).unwrap();
        store.put(&summary("ana", "s1", 1)).unwrap();
        let raw = std::fs::read_to_string(store.path()).unwrap();
        let v: serde_json::Value = serde_json::from_str(raw.trim()).unwrap();
        assert_eq!(v["v"], 1);
        assert_eq!(v["learner_id"], "ana");
    }
}
