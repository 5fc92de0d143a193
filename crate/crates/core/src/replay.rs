//! Record/replay of external interactions.
//!
//! A cassette is a directory:
//!
//! ```text
//! <cassette>/interactions.jsonl   one JSON object per line, see `Interaction`
//! <cassette>/assets/<sha256hex>   binary payloads (downloaded images)
//! ```
//!
//! Each line has the fields `kind`, `fingerprint`, `recorded_at`, `request`,
//! `response` in that order. `response` is either `{"json": <value>}` or
//! `{"asset": "<sha256hex>"}`. The file is append-only; when a fingerprint
//! occurs more than once the last line wins.
//!
//! The fingerprint is the lowercase hex SHA-256 of
//! `<kind> "\n" <canonical request JSON>`. Canonical JSON has object keys in
//! lexicographic order, no insignificant whitespace, and every string
//! normalized by [`canonical_text`]. Image payloads enter requests only as
//! their content hash.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionKind {
    Llm,
    WebSearch,
    ImageSearch,
    ReverseImageSearch,
    Geolocate,
    Scrape,
    Download,
    Embed,
}

impl InteractionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InteractionKind::Llm => "llm",
            InteractionKind::WebSearch => "web_search",
            InteractionKind::ImageSearch => "image_search",
            InteractionKind::ReverseImageSearch => "reverse_image_search",
            InteractionKind::Geolocate => "geolocate",
            InteractionKind::Scrape => "scrape",
            InteractionKind::Download => "download",
            InteractionKind::Embed => "embed",
        }
    }
}

impl fmt::Display for InteractionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Json(Value),
    Bytes(Vec<u8>),
}

impl Payload {
    pub fn into_json(self) -> Result<Value> {
        match self {
            Payload::Json(v) => Ok(v),
            Payload::Bytes(_) => Err(Error::Cassette("expected a JSON payload, found bytes".into())),
        }
    }

    pub fn into_bytes(self) -> Result<Vec<u8>> {
        match self {
            Payload::Bytes(b) => Ok(b),
            Payload::Json(_) => Err(Error::Cassette("expected a binary payload, found JSON".into())),
        }
    }
}

/// Normalizes text for fingerprinting: CRLF/CR become LF, trailing
/// whitespace is removed from every line, and the whole text is trimmed.
pub fn canonical_text(s: &str) -> String {
    let unified = s.replace("\r\n", "\n").replace('\r', "\n");
    let lines: Vec<&str> = unified.split('\n').map(str::trim_end).collect();
    lines.join("\n").trim().to_owned()
}

pub fn canonicalize(value: &Value) -> Value {
    match value {
        Value::String(s) => Value::String(canonical_text(s)),
        Value::Array(items) => Value::Array(items.iter().map(canonicalize).collect()),
        // serde_json's default map is ordered by key.
        Value::Object(map) => Value::Object(map.iter().map(|(k, v)| (k.clone(), canonicalize(v))).collect()),
        other => other.clone(),
    }
}

pub fn fingerprint(kind: InteractionKind, request: &Value) -> String {
    let canonical = serde_json::to_string(&canonicalize(request)).expect("JSON values serialize");
    let mut hasher = Sha256::new();
    hasher.update(kind.as_str().as_bytes());
    hasher.update(b"\n");
    hasher.update(canonical.as_bytes());
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoredResponse {
    Json(Value),
    Asset(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub kind: InteractionKind,
    pub fingerprint: String,
    pub recorded_at: String,
    pub request: Value,
    pub response: StoredResponse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CassetteMode {
    Record,
    ReplayStrict,
    ReplayFallthrough,
}

impl std::str::FromStr for CassetteMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "record" => Ok(CassetteMode::Record),
            "replay" | "replay-strict" | "strict" => Ok(CassetteMode::ReplayStrict),
            "replay-fallthrough" | "fallthrough" => Ok(CassetteMode::ReplayFallthrough),
            other => Err(Error::Config(format!("unknown cassette mode {other:?}"))),
        }
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CassetteStats {
    pub hits: usize,
    pub live_calls: usize,
    pub recorded: usize,
}

pub struct Cassette {
    dir: PathBuf,
    mode: CassetteMode,
    index: RwLock<HashMap<String, Interaction>>,
    writer: Mutex<Option<File>>,
    hits: AtomicUsize,
    live_calls: AtomicUsize,
    recorded: AtomicUsize,
}

impl fmt::Debug for Cassette {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Cassette")
            .field("dir", &self.dir)
            .field("mode", &self.mode)
            .field("interactions", &self.len())
            .finish()
    }
}

const INTERACTIONS_FILE: &str = "interactions.jsonl";
const ASSETS_DIR: &str = "assets";

impl Cassette {
    /// Opens the cassette at `dir`. Replay modes require an existing
    /// cassette; record mode creates the directory when needed.
    pub fn open(dir: impl AsRef<Path>, mode: CassetteMode) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let file = dir.join(INTERACTIONS_FILE);
        let mut index = HashMap::new();
        if file.exists() {
            let reader = BufReader::new(File::open(&file)?);
            for (n, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let interaction: Interaction = serde_json::from_str(&line)
                    .map_err(|e| Error::Cassette(format!("{}:{}: {e}", file.display(), n + 1)))?;
                index.insert(interaction.fingerprint.clone(), interaction);
            }
        } else if mode != CassetteMode::Record {
            return Err(Error::Cassette(format!("no cassette at {}", dir.display())));
        }
        Ok(Self {
            dir,
            mode,
            index: RwLock::new(index),
            writer: Mutex::new(None),
            hits: AtomicUsize::new(0),
            live_calls: AtomicUsize::new(0),
            recorded: AtomicUsize::new(0),
        })
    }

    pub fn mode(&self) -> CassetteMode {
        self.mode
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.index.read().expect("cassette index poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn stats(&self) -> CassetteStats {
        CassetteStats {
            hits: self.hits.load(Ordering::SeqCst),
            live_calls: self.live_calls.load(Ordering::SeqCst),
            recorded: self.recorded.load(Ordering::SeqCst),
        }
    }

    pub fn interactions(&self) -> Vec<Interaction> {
        let mut all: Vec<_> = self
            .index
            .read()
            .expect("cassette index poisoned")
            .values()
            .cloned()
            .collect();
        all.sort_by(|a, b| (a.kind.as_str(), &a.fingerprint).cmp(&(b.kind.as_str(), &b.fingerprint)));
        all
    }

    /// Routes one external call through the cassette according to its mode.
    pub fn intercept<F>(&self, kind: InteractionKind, request: &Value, live_call: F) -> Result<Payload>
    where
        F: FnOnce() -> Result<Payload>,
    {
        let fp = fingerprint(kind, request);
        if self.mode != CassetteMode::Record {
            let stored = self.index.read().expect("cassette index poisoned").get(&fp).cloned();
            if let Some(interaction) = stored {
                self.hits.fetch_add(1, Ordering::SeqCst);
                return self.load_response(&interaction.response);
            }
            if self.mode == CassetteMode::ReplayStrict {
                return Err(Error::MissingInteraction {
                    kind: kind.to_string(),
                    fingerprint: fp,
                });
            }
            self.live_calls.fetch_add(1, Ordering::SeqCst);
            return live_call();
        }

        self.live_calls.fetch_add(1, Ordering::SeqCst);
        let payload = live_call()?;
        self.store(kind, fp, request, &payload)?;
        Ok(payload)
    }

    fn load_response(&self, response: &StoredResponse) -> Result<Payload> {
        match response {
            StoredResponse::Json(v) => Ok(Payload::Json(v.clone())),
            StoredResponse::Asset(hash) => {
                let path = self.dir.join(ASSETS_DIR).join(hash);
                let bytes = fs::read(&path).map_err(|e| Error::Cassette(format!("asset {}: {e}", path.display())))?;
                Ok(Payload::Bytes(bytes))
            }
        }
    }

    fn store(&self, kind: InteractionKind, fp: String, request: &Value, payload: &Payload) -> Result<()> {
        let response = match payload {
            Payload::Json(v) => StoredResponse::Json(v.clone()),
            Payload::Bytes(bytes) => {
                let hash = hex::encode(Sha256::digest(bytes));
                let assets = self.dir.join(ASSETS_DIR);
                fs::create_dir_all(&assets)?;
                let path = assets.join(&hash);
                if !path.exists() {
                    fs::write(&path, bytes)?;
                }
                StoredResponse::Asset(hash)
            }
        };
        let interaction = Interaction {
            kind,
            fingerprint: fp.clone(),
            recorded_at: now_rfc3339(),
            request: canonicalize(request),
            response,
        };
        let line = serde_json::to_string(&interaction)?;

        let mut writer = self.writer.lock().expect("cassette writer poisoned");
        if writer.is_none() {
            fs::create_dir_all(&self.dir)?;
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(self.dir.join(INTERACTIONS_FILE))?;
            *writer = Some(file);
        }
        let file = writer.as_mut().expect("writer initialized above");
        writeln!(file, "{line}")?;
        file.flush()?;
        drop(writer);

        self.index
            .write()
            .expect("cassette index poisoned")
            .insert(fp, interaction);
        self.recorded.fetch_add(1, Ordering::SeqCst);
        Ok(())
    }
}

fn now_rfc3339() -> String {
    let now: DateTime<Utc> = Utc::now();
    now.to_rfc3339_opts(SecondsFormat::Millis, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;
    use std::cell::Cell;

    #[test]
    fn same_request_same_digest() {
        let req = json!({"prompt": "hello", "images": ["ab"]});
        assert_eq!(
            fingerprint(InteractionKind::Llm, &req),
            fingerprint(InteractionKind::Llm, &req)
        );
    }

    #[test]
    fn trailing_whitespace_is_ignored() {
        let a = json!({"prompt": "line one\nline two"});
        let b = json!({"prompt": "line one   \r\nline two \n\n"});
        assert_eq!(
            fingerprint(InteractionKind::Llm, &a),
            fingerprint(InteractionKind::Llm, &b)
        );
    }

    #[test]
    fn kind_and_content_change_digest() {
        let a = json!({"image": "00aa"});
        let b = json!({"image": "00ab"});
        assert_ne!(
            fingerprint(InteractionKind::Geolocate, &a),
            fingerprint(InteractionKind::Geolocate, &b)
        );
        assert_ne!(
            fingerprint(InteractionKind::Geolocate, &a),
            fingerprint(InteractionKind::ReverseImageSearch, &a)
        );
    }

    #[test]
    fn key_order_does_not_matter() {
        let a: Value = serde_json::from_str(r#"{"b": 1, "a": [1, {"y": 2, "x": 3}]}"#).unwrap();
        let b: Value = serde_json::from_str(r#"{"a": [1, {"x": 3, "y": 2}], "b": 1}"#).unwrap();
        assert_eq!(
            fingerprint(InteractionKind::Embed, &a),
            fingerprint(InteractionKind::Embed, &b)
        );
    }

    #[test]
    fn record_then_strict_replay() {
        let dir = tempfile::tempdir().unwrap();
        let req = json!({"q": "fico"});
        {
            let tape = Cassette::open(dir.path(), CassetteMode::Record).unwrap();
            let out = tape
                .intercept(InteractionKind::WebSearch, &req, || Ok(Payload::Json(json!(["r1"]))))
                .unwrap();
            assert_eq!(out, Payload::Json(json!(["r1"])));
            tape.intercept(InteractionKind::Download, &json!({"url": "u"}), || {
                Ok(Payload::Bytes(vec![1, 2, 3]))
            })
            .unwrap();
        }
        let tape = Cassette::open(dir.path(), CassetteMode::ReplayStrict).unwrap();
        let live = Cell::new(0);
        let out = tape
            .intercept(InteractionKind::WebSearch, &req, || {
                live.set(live.get() + 1);
                Ok(Payload::Json(json!("live")))
            })
            .unwrap();
        assert_eq!(out, Payload::Json(json!(["r1"])));
        let bytes = tape
            .intercept(InteractionKind::Download, &json!({"url": "u"}), || unreachable!())
            .unwrap();
        assert_eq!(bytes, Payload::Bytes(vec![1, 2, 3]));
        assert_eq!(live.get(), 0);

        let err = tape
            .intercept(InteractionKind::WebSearch, &json!({"q": "new"}), || unreachable!())
            .unwrap_err();
        match err {
            Error::MissingInteraction { kind, fingerprint: fp } => {
                assert_eq!(kind, "web_search");
                assert_eq!(fp, fingerprint(InteractionKind::WebSearch, &json!({"q": "new"})));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn fallthrough_uses_stored_then_live() {
        let dir = tempfile::tempdir().unwrap();
        let req = json!({"q": 1});
        Cassette::open(dir.path(), CassetteMode::Record)
            .unwrap()
            .intercept(InteractionKind::Embed, &req, || Ok(Payload::Json(json!([0.5]))))
            .unwrap();
        let tape = Cassette::open(dir.path(), CassetteMode::ReplayFallthrough).unwrap();
        assert_eq!(
            tape.intercept(InteractionKind::Embed, &req, || unreachable!()).unwrap(),
            Payload::Json(json!([0.5]))
        );
        assert_eq!(
            tape.intercept(InteractionKind::Embed, &json!({"q": 2}), || Ok(Payload::Json(json!([
                1.0
            ]))))
            .unwrap(),
            Payload::Json(json!([1.0]))
        );
        assert_eq!(tape.stats().hits, 1);
        assert_eq!(tape.stats().live_calls, 1);
    }

    #[test]
    fn rerecording_appends_and_last_line_wins() {
        let dir = tempfile::tempdir().unwrap();
        let req = json!({"q": "x"});
        let tape = Cassette::open(dir.path(), CassetteMode::Record).unwrap();
        tape.intercept(InteractionKind::WebSearch, &req, || Ok(Payload::Json(json!(1))))
            .unwrap();
        tape.intercept(InteractionKind::WebSearch, &req, || Ok(Payload::Json(json!(2))))
            .unwrap();
        drop(tape);
        let lines = fs::read_to_string(dir.path().join(INTERACTIONS_FILE)).unwrap();
        assert_eq!(lines.lines().count(), 2);
        let first: Interaction = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
        assert_eq!(first.response, StoredResponse::Json(json!(1)));
        let replay = Cassette::open(dir.path(), CassetteMode::ReplayStrict).unwrap();
        assert_eq!(replay.len(), 1);
        assert_eq!(
            replay
                .intercept(InteractionKind::WebSearch, &req, || unreachable!())
                .unwrap(),
            Payload::Json(json!(2))
        );
    }

    #[test]
    fn line_field_order_is_fixed() {
        let dir = tempfile::tempdir().unwrap();
        let tape = Cassette::open(dir.path(), CassetteMode::Record).unwrap();
        tape.intercept(InteractionKind::Llm, &json!({"p": "x"}), || {
            Ok(Payload::Json(json!("y")))
        })
        .unwrap();
        let line = fs::read_to_string(dir.path().join(INTERACTIONS_FILE)).unwrap();
        let positions: Vec<usize> = [
            "\"kind\"",
            "\"fingerprint\"",
            "\"recorded_at\"",
            "\"request\"",
            "\"response\"",
        ]
        .iter()
        .map(|k| line.find(k).unwrap())
        .collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn strict_requires_existing_cassette() {
        let dir = tempfile::tempdir().unwrap();
        assert!(Cassette::open(dir.path().join("missing"), CassetteMode::ReplayStrict).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn trailing_space_never_changes_digest(
                lines in prop::collection::vec("[a-z ]{0,12}[a-z]", 1..6),
                pads in prop::collection::vec("[ \t]{0,3}", 6),
                crlf in any::<bool>(),
            ) {
                let clean = lines.join("\n");
                let sep = if crlf { "\r\n" } else { "\n" };
                let padded = lines
                    .iter()
                    .zip(pads.iter())
                    .map(|(l, p)| format!("{l}{p}"))
                    .collect::<Vec<_>>()
                    .join(sep);
                prop_assert_eq!(
                    fingerprint(InteractionKind::Llm, &json!({ "prompt": clean })),
                    fingerprint(InteractionKind::Llm, &json!({ "prompt": padded }))
                );
            }
        }
    }
}
