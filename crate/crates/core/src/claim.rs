//! Claims, the media registry behind `<image:k>` references, and verdicts.
//!
//! Every image that enters a fact-check (claim images, scraped evidence
//! images) is registered once and addressed by a small integer id. Prompts,
//! reports and model outputs refer to images textually as `<image:k>`.

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use chrono::NaiveDate;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Identifier of a registered image; the `k` in `<image:k>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MediaId(pub u32);

impl fmt::Display for MediaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<image:{}>", self.0)
    }
}

/// SHA-256 of an image payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ContentHash(pub [u8; 32]);

impl ContentHash {
    pub fn of(bytes: &[u8]) -> Self {
        Self(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Debug, Clone)]
pub struct MediaRef {
    pub id: MediaId,
    pub bytes: Arc<[u8]>,
    pub mime: &'static str,
    pub content_hash: ContentHash,
    pub source_url: Option<String>,
}

impl MediaRef {
    pub fn extension(&self) -> &'static str {
        match self.mime {
            "image/png" => "png",
            "image/jpeg" => "jpg",
            "image/gif" => "gif",
            "image/webp" => "webp",
            _ => "bin",
        }
    }
}

/// Detects the image type from magic bytes.
pub fn sniff_image_mime(bytes: &[u8]) -> Option<&'static str> {
    if bytes.starts_with(&[0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A]) {
        Some("image/png")
    } else if bytes.starts_with(&[0xFF, 0xD8, 0xFF]) {
        Some("image/jpeg")
    } else if bytes.starts_with(b"GIF87a") || bytes.starts_with(b"GIF89a") {
        Some("image/gif")
    } else if bytes.len() >= 12 && &bytes[0..4] == b"RIFF" && &bytes[8..12] == b"WEBP" {
        Some("image/webp")
    } else {
        None
    }
}

#[derive(Default)]
struct RegistryInner {
    entries: Vec<MediaRef>,
    by_hash: HashMap<ContentHash, MediaId>,
}

/// Per-run store of images. Ids are allocated sequentially from 1 and
/// identical payloads are deduplicated by content hash.
#[derive(Default)]
pub struct MediaRegistry {
    inner: Mutex<RegistryInner>,
}

impl fmt::Debug for MediaRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MediaRegistry").field("len", &self.len()).finish()
    }
}

impl MediaRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_image(&self, bytes: &[u8], source_url: Option<&str>) -> Result<MediaRef> {
        if bytes.is_empty() {
            return Err(Error::NotAnImage("empty payload".into()));
        }
        let mime = sniff_image_mime(bytes)
            .ok_or_else(|| Error::NotAnImage(format!("unrecognized magic bytes in {}-byte payload", bytes.len())))?;
        let hash = ContentHash::of(bytes);
        let mut inner = self.inner.lock().expect("media registry poisoned");
        if let Some(id) = inner.by_hash.get(&hash) {
            return Ok(inner.entries[(id.0 - 1) as usize].clone());
        }
        let id = MediaId(inner.entries.len() as u32 + 1);
        let media = MediaRef {
            id,
            bytes: Arc::from(bytes),
            mime,
            content_hash: hash,
            source_url: source_url.map(str::to_owned),
        };
        inner.entries.push(media.clone());
        inner.by_hash.insert(hash, id);
        Ok(media)
    }

    pub fn get(&self, id: MediaId) -> Option<MediaRef> {
        let inner = self.inner.lock().expect("media registry poisoned");
        id.0.checked_sub(1)
            .and_then(|idx| inner.entries.get(idx as usize))
            .cloned()
    }

    pub fn resolve(&self, id: MediaId) -> Result<MediaRef> {
        self.get(id).ok_or(Error::UnknownImageRef(id.0))
    }

    pub fn contains(&self, id: MediaId) -> bool {
        self.get(id).is_some()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("media registry poisoned").entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self) -> Vec<MediaId> {
        let inner = self.inner.lock().expect("media registry poisoned");
        inner.entries.iter().map(|m| m.id).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Segment {
    Text(String),
    Image(MediaId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    content: Vec<Segment>,
    pub claimant: Option<String>,
    pub date: Option<NaiveDate>,
    pub origin: Option<String>,
}

impl Claim {
    pub fn new(content: Vec<Segment>) -> Result<Self> {
        let meaningful = content.iter().any(|s| match s {
            Segment::Text(t) => !t.trim().is_empty(),
            Segment::Image(_) => true,
        });
        if !meaningful {
            return Err(Error::InvalidClaim("claim content is empty".into()));
        }
        Ok(Self {
            content,
            claimant: None,
            date: None,
            origin: None,
        })
    }

    pub fn from_text(text: impl Into<String>) -> Result<Self> {
        Self::new(vec![Segment::Text(text.into())])
    }

    pub fn with_claimant(mut self, claimant: impl Into<String>) -> Self {
        self.claimant = Some(claimant.into());
        self
    }

    pub fn with_date(mut self, date: NaiveDate) -> Self {
        self.date = Some(date);
        self
    }

    pub fn with_origin(mut self, origin: impl Into<String>) -> Self {
        self.origin = Some(origin.into());
        self
    }

    pub fn content(&self) -> &[Segment] {
        &self.content
    }

    /// Distinct image ids in first-occurrence order.
    pub fn image_ids(&self) -> Vec<MediaId> {
        let mut out = Vec::new();
        for seg in &self.content {
            if let Segment::Image(id) = seg {
                if !out.contains(id) {
                    out.push(*id);
                }
            }
        }
        out
    }

    pub fn is_multimodal(&self) -> bool {
        self.content.iter().any(|s| matches!(s, Segment::Image(_)))
    }

    /// Checks that every image segment resolves in `registry`.
    pub fn validate(&self, registry: &MediaRegistry) -> Result<()> {
        for id in self.image_ids() {
            if !registry.contains(id) {
                return Err(Error::UnknownImageRef(id.0));
            }
        }
        Ok(())
    }

    /// Text segments only, whitespace-collapsed. Used where a plain query string is needed.
    pub fn text_only(&self) -> String {
        let joined: String = self
            .content
            .iter()
            .filter_map(|s| match s {
                Segment::Text(t) => Some(t.as_str()),
                Segment::Image(_) => None,
            })
            .collect::<Vec<_>>()
            .join(" ");
        joined.split_whitespace().collect::<Vec<_>>().join(" ")
    }
}

/// Renders a claim as prompt text: segments in order, images as `<image:k>`,
/// followed by `Claimant:` and `Date:` lines when present.
pub fn render_claim(claim: &Claim) -> String {
    let mut out = String::new();
    for seg in &claim.content {
        match seg {
            Segment::Text(t) => out.push_str(t),
            Segment::Image(id) => out.push_str(&id.to_string()),
        }
    }
    if let Some(claimant) = &claim.claimant {
        out.push_str("\nClaimant: ");
        out.push_str(claimant);
    }
    if let Some(date) = &claim.date {
        out.push_str("\nDate: ");
        out.push_str(&date.format("%Y-%m-%d").to_string());
    }
    out
}

fn image_ref_regex() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<image:([0-9]+)>").expect("static regex"))
}

/// Every `<image:k>` id in `text`, first-occurrence order, without duplicates.
pub fn parse_image_refs(text: &str) -> Vec<MediaId> {
    let mut out = Vec::new();
    for cap in image_ref_regex().captures_iter(text) {
        if let Ok(k) = cap[1].parse::<u32>() {
            let id = MediaId(k);
            if !out.contains(&id) {
                out.push(id);
            }
        }
    }
    out
}

/// Splits text into alternating text spans and image refs, in order.
pub fn split_image_refs(text: &str) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut last = 0;
    for cap in image_ref_regex().captures_iter(text) {
        let whole = cap.get(0).expect("group 0");
        let Ok(k) = cap[1].parse::<u32>() else {
            continue;
        };
        if whole.start() > last {
            out.push(Segment::Text(text[last..whole.start()].to_owned()));
        }
        out.push(Segment::Image(MediaId(k)));
        last = whole.end();
    }
    if last < text.len() {
        out.push(Segment::Text(text[last..].to_owned()));
    }
    out
}

/// Replaces each `<image:k>` with the output of `f`, keeping the rest verbatim.
pub(crate) fn replace_image_refs<F>(text: &str, mut f: F) -> Result<String>
where
    F: FnMut(MediaId) -> Result<String>,
{
    let mut out = String::with_capacity(text.len());
    for seg in split_image_refs(text) {
        match seg {
            Segment::Text(t) => out.push_str(&t),
            Segment::Image(id) => out.push_str(&f(id)?),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: String,
    pub rationale: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const PNG_HEADER: &[u8] = &[0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A, 0, 0, 0, 13];
    const JPEG_HEADER: &[u8] = &[0xFF, 0xD8, 0xFF, 0xE0, 0x00, 0x10, b'J', b'F', b'I', b'F'];
    const WEBP_HEADER: &[u8] = b"RIFF\x24\x00\x00\x00WEBPVP8 ";
    const GIF_HEADER: &[u8] = b"GIF89a\x01\x00\x01\x00";

    fn png(tag: u8) -> Vec<u8> {
        let mut v = PNG_HEADER.to_vec();
        v.push(tag);
        v
    }

    #[test]
    fn sniffing_fixture_set() {
        assert_eq!(sniff_image_mime(PNG_HEADER), Some("image/png"));
        assert_eq!(sniff_image_mime(JPEG_HEADER), Some("image/jpeg"));
        assert_eq!(sniff_image_mime(WEBP_HEADER), Some("image/webp"));
        assert_eq!(sniff_image_mime(GIF_HEADER), Some("image/gif"));
        assert_eq!(sniff_image_mime(b"abc"), None);
        assert_eq!(sniff_image_mime(b"RIFF\x00\x00\x00\x00WAVE"), None);
        assert_eq!(sniff_image_mime(&PNG_HEADER[..4]), None);
    }

    #[test]
    fn register_dedups_identical_payloads() {
        let reg = MediaRegistry::new();
        let a = reg.register_image(&png(1), None).unwrap();
        let again = reg.register_image(&png(1), Some("https://elsewhere")).unwrap();
        assert_eq!(a.id, again.id);
        let b = reg.register_image(&png(2), None).unwrap();
        assert_ne!(a.id, b.id);
        assert_eq!(reg.len(), 2);
        assert_eq!(a.id, MediaId(1));
        assert_eq!(b.id, MediaId(2));
    }

    #[test]
    fn register_rejects_text_payload() {
        let reg = MediaRegistry::new();
        assert!(matches!(reg.register_image(b"abc", None), Err(Error::NotAnImage(_))));
        assert!(matches!(reg.register_image(b"", None), Err(Error::NotAnImage(_))));
        assert!(reg.is_empty());
    }

    #[test]
    fn render_plain_and_multimodal() {
        assert_eq!(render_claim(&Claim::from_text("hello").unwrap()), "hello");
        let claim = Claim::new(vec![
            Segment::Image(MediaId(1232)),
            Segment::Text(" Image of a bus powered by compressed natural gas, bursting into flames in Italy.".into()),
        ])
        .unwrap();
        assert_eq!(
            render_claim(&claim),
            "<image:1232> Image of a bus powered by compressed natural gas, bursting into flames in Italy."
        );
    }

    #[test]
    fn render_with_claimant_and_date() {
        let claim = Claim::from_text("Robert Fico was shot.")
            .unwrap()
            .with_claimant("X")
            .with_date(NaiveDate::from_ymd_opt(2024, 5, 15).unwrap());
        assert_eq!(
            render_claim(&claim),
            "Robert Fico was shot.\nClaimant: X\nDate: 2024-05-15"
        );
    }

    #[test]
    fn image_refs_order_and_dedup() {
        assert!(parse_image_refs("no images").is_empty());
        assert_eq!(
            parse_image_refs("<image:3> and <image:3> and <image:7>"),
            vec![MediaId(3), MediaId(7)]
        );
        assert!(parse_image_refs("<image:abc>").is_empty());
        assert!(parse_image_refs("<image:-1> <image: 4> <image:99999999999>").is_empty());
    }

    #[test]
    fn empty_claim_rejected() {
        assert!(Claim::new(vec![]).is_err());
        assert!(Claim::from_text("   ").is_err());
    }

    #[test]
    fn validate_detects_dangling_image() {
        let reg = MediaRegistry::new();
        let claim = Claim::new(vec![Segment::Image(MediaId(4))]).unwrap();
        assert!(matches!(claim.validate(&reg), Err(Error::UnknownImageRef(4))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn segment() -> impl Strategy<Value = Segment> {
            prop_oneof![
                "[a-zA-Z0-9 .,:<>]{0,20}".prop_map(Segment::Text),
                (1u32..50).prop_map(|k| Segment::Image(MediaId(k))),
            ]
        }

        proptest! {
            #[test]
            fn render_then_parse_recovers_image_ids(segs in prop::collection::vec(segment(), 1..12)) {
                prop_assume!(Claim::new(segs.clone()).is_ok());
                // A text span must not fabricate a ref on its own.
                prop_assume!(segs.iter().all(|s| match s { Segment::Text(t) => !t.contains("<image:"), _ => true }));
                let claim = Claim::new(segs).unwrap();
                let rendered = render_claim(&claim);
                prop_assert_eq!(parse_image_refs(&rendered), claim.image_ids());
            }

            #[test]
            fn registry_holds_distinct_payload_count(tags in prop::collection::vec(0u8..20, 0..40)) {
                let reg = MediaRegistry::new();
                for t in &tags {
                    reg.register_image(&png(*t), None).unwrap();
                }
                let distinct: std::collections::HashSet<_> = tags.iter().collect();
                prop_assert_eq!(reg.len(), distinct.len());
            }
        }
    }
}
