//! Line-delimited run log: `{"ts","stage","event","digest"}` per record.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Plan,
    Execute,
    Summarize,
    Develop,
    Judge,
    Justify,
    PoseQuestions,
    AnswerQuestion,
    Pipeline,
}

impl Stage {
    /// Short code used in stage-order assertions (`S1`..`S6`).
    pub fn code(self) -> &'static str {
        match self {
            Stage::Plan => "S1",
            Stage::Execute => "S2",
            Stage::Summarize => "S3",
            Stage::Develop => "S4",
            Stage::Judge => "S5",
            Stage::Justify => "S6",
            Stage::PoseQuestions => "Q1",
            Stage::AnswerQuestion => "Q2",
            Stage::Pipeline => "P",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub ts: String,
    pub stage: Stage,
    pub event: String,
    /// First 16 hex chars of the SHA-256 of the event payload; empty when there is none.
    pub digest: String,
}

pub fn short_digest(payload: &str) -> String {
    hex::encode(Sha256::digest(payload.as_bytes()))[..16].to_owned()
}

#[derive(Default)]
pub struct RunLog {
    records: Mutex<Vec<LogRecord>>,
    sink: Option<Mutex<BufWriter<File>>>,
}

impl std::fmt::Debug for RunLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunLog").field("records", &self.len()).finish()
    }
}

impl RunLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Also appends every record to `path` as it is logged.
    pub fn to_file(path: &Path) -> Result<Self> {
        Ok(Self {
            records: Mutex::new(Vec::new()),
            sink: Some(Mutex::new(BufWriter::new(File::create(path)?))),
        })
    }

    pub fn log(&self, stage: Stage, event: impl Into<String>, payload: Option<&str>) {
        let rec = LogRecord {
            ts: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
            stage,
            event: event.into(),
            digest: payload.map(short_digest).unwrap_or_default(),
        };
        if let Some(sink) = &self.sink {
            let mut w = sink.lock().expect("run log poisoned");
            if let Ok(line) = serde_json::to_string(&rec) {
                let _ = writeln!(w, "{line}");
                let _ = w.flush();
            }
        }
        self.records.lock().expect("run log poisoned").push(rec);
    }

    pub fn records(&self) -> Vec<LogRecord> {
        self.records.lock().expect("run log poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.records.lock().expect("run log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stage codes of `start` events in order, excluding pipeline markers.
    pub fn stage_sequence(&self) -> Vec<&'static str> {
        self.records
            .lock()
            .expect("run log poisoned")
            .iter()
            .filter(|r| r.event == "start" && r.stage != Stage::Pipeline)
            .map(|r| r.stage.code())
            .collect()
    }

    pub fn count(&self, stage: Stage, event: &str) -> usize {
        self.records
            .lock()
            .expect("run log poisoned")
            .iter()
            .filter(|r| r.stage == stage && r.event == event)
            .count()
    }

    pub fn events(&self, stage: Stage) -> Vec<String> {
        self.records
            .lock()
            .expect("run log poisoned")
            .iter()
            .filter(|r| r.stage == stage)
            .map(|r| r.event.clone())
            .collect()
    }
}

/// Reads a run-log file back.
pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Into::into))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_roundtrip_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let log = RunLog::to_file(&path).unwrap();
        log.log(Stage::Plan, "start", None);
        log.log(Stage::Plan, "complete", Some("web_search(\"x\")"));
        let back = read_log(&path).unwrap();
        assert_eq!(back, log.records());
        assert_eq!(back[1].digest.len(), 16);
        assert_eq!(log.stage_sequence(), ["S1"]);
    }
}
