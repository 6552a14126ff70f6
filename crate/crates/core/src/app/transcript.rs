//! CSV session transcripts.

use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::session::TurnRecord;

pub const CSV_HEADER: [&str; 9] = [
    "session_id",
    "seq",
    "ts_start_iso",
    "ts_end_iso",
    "phase",
    "role",
    "text",
    "latency_ms",
    "emotion",
];

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    session_id: String,
    seq: u64,
    ts_start_iso: String,
    ts_end_iso: String,
    phase: String,
    role: String,
    text: String,
    latency_ms: Option<u64>,
    emotion: Option<String>,
}

/// RFC 3339 UTC with millisecond precision.
pub fn iso_ms(ms: i64) -> String {
    DateTime::<Utc>::from_timestamp_millis(ms)
        .unwrap_or_default()
        .to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub fn parse_iso_ms(s: &str) -> Result<i64> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.timestamp_millis())
        .map_err(|e| Error::Precondition(format!("bad timestamp {s:?}: {e}")))
}

pub fn write_csv_to<W: Write>(out: W, session_id: &str, transcript: &[TurnRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_HEADER)?;
    for t in transcript {
        w.serialize(Row {
            session_id: session_id.to_string(),
            seq: t.seq,
            ts_start_iso: iso_ms(t.started_at),
            ts_end_iso: iso_ms(t.ended_at),
            phase: t.phase.to_string(),
            role: t.role.as_str().to_string(),
            text: t.text.clone(),
            latency_ms: t.response_latency_ms,
            emotion: t.emotion.map(|e| e.to_string()),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Header plus one row per turn. Written to a sibling file and renamed into place.
pub fn write_csv(session_id: &str, transcript: &[TurnRecord], path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("csv.tmp");
    write_csv_to(std::fs::File::create(&tmp)?, session_id, transcript)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn bad_row(line: u64, what: impl std::fmt::Display) -> Error {
    Error::Precondition(format!("transcript row {line}: {what}"))
}

pub fn read_csv_from<R: Read>(input: R) -> Result<(Option<String>, Vec<TurnRecord>)> {
    let mut r = csv::ReaderBuilder::new().from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::Precondition(format!("unexpected transcript header {header:?}")));
    }
    let mut session = None;
    let mut turns = Vec::new();
    for (i, row) in r.deserialize::<Row>().enumerate() {
        let line = i as u64 + 2;
        let row = row?;
        match &session {
            None => session = Some(row.session_id.clone()),
            Some(s) if *s != row.session_id => {
                return Err(bad_row(line, format!("mixes sessions {s} and {}", row.session_id)))
            }
            _ => {}
        }
        turns.push(TurnRecord {
            seq: row.seq,
            role: row.role.parse().map_err(|e| bad_row(line, e))?,
            text: row.text,
            phase: row.phase.parse().map_err(|e| bad_row(line, e))?,
            started_at: parse_iso_ms(&row.ts_start_iso)?,
            ended_at: parse_iso_ms(&row.ts_end_iso)?,
            response_latency_ms: row.latency_ms,
            emotion: row
                .emotion
                .filter(|e| !e.is_empty())
                .map(|e| e.parse())
                .transpose()
                .map_err(|e| bad_row(line, e))?,
        });
    }
    Ok((session, turns))
}

/// The session id (absent for a header-only file) and its turns.
pub fn read_csv(path: &Path) -> Result<(Option<String>, Vec<TurnRecord>)> {
    read_csv_from(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{EmotionLabel, Role, TaskPhase};

    fn turn(seq: u64, text: &str) -> TurnRecord {
        TurnRecord {
            seq,
            role: if seq % 2 == 1 { Role::Learner } else { Role::Agent },
            text: text.into(),
            phase: TaskPhase::RolePlay,
            started_at: 1_700_000_000_123 + seq as i64,
            ended_at: 1_700_000_000_500 + seq as i64,
            response_latency_ms: seq.is_multiple_of(2).then_some(377),
            emotion: Some(EmotionLabel::Joy),
        }
    }

    #[test]
    fn two_turns_three_lines() {
        let mut buf = Vec::new();
        write_csv_to(&mut buf, "s1", &[turn(1, "hi"), turn(2, "hello")]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert_eq!(
            text.lines().next().unwrap(),
            "session_id,seq,ts_start_iso,ts_end_iso,phase,role,text,latency_ms,emotion"
        );
        assert_eq!(
            text.lines().nth(2).unwrap(),
            "s1,2,2023-11-14T22:13:20.125Z,2023-11-14T22:13:20.502Z,RolePlay,agent,hello,377,joy"
        );
    }

    #[test]
    fn empty_transcript_is_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        write_csv("s", &[], &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap().lines().count(), 1);
        assert_eq!(read_csv(&p).unwrap(), (None, vec![]));
    }

    #[test]
    fn awkward_text_round_trips() {
        let turns = vec![
            turn(1, "a, b and \"c\""),
            turn(2, "line one\nline two\r\nthree"),
            turn(3, "¿Qué tal? 你好 👋"),
        ];
        let mut buf = Vec::new();
        write_csv_to(&mut buf, "s,1", &turns).unwrap();
        let (sid, back) = read_csv_from(buf.as_slice()).unwrap();
        assert_eq!(sid.as_deref(), Some("s,1"));
        assert_eq!(back, turns);
    }

    #[test]
    fn wrong_header_rejected() {
        assert!(read_csv_from("a,b\n1,2\n".as_bytes()).is_err());
    }
}
