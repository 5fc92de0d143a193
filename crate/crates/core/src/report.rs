//! The fact-check report: an ordered list of blocks that every stage reads
//! as context and extends with its own output.
//!
//! Two renderings exist. The prompt rendering (`render_text`,
//! `snapshot_for_prompt`) keeps images as `<image:k>` references. The
//! Markdown rendering writes images to an asset directory and links them.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::claim::{parse_image_refs, render_claim, replace_image_refs, Claim, MediaRef, MediaRegistry};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    Claim,
    Actions,
    Evidence,
    Elaboration,
    Verdict,
    Justification,
    QA,
}

impl BlockKind {
    fn name(self) -> &'static str {
        match self {
            BlockKind::Claim => "claim block",
            BlockKind::Actions => "actions block",
            BlockKind::Evidence => "evidence block",
            BlockKind::Elaboration => "elaboration block",
            BlockKind::Verdict => "verdict block",
            BlockKind::Justification => "justification block",
            BlockKind::QA => "QA block",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceBlock {
    pub tool: String,
    pub source_url: Option<String>,
    pub title: Option<String>,
    pub result_date: Option<NaiveDate>,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportBlock {
    Claim {
        text: String,
    },
    /// Serialized action lines, e.g. `web_search("...")`.
    Actions {
        actions: Vec<String>,
    },
    Evidence(EvidenceBlock),
    Elaboration {
        text: String,
    },
    Verdict {
        label: String,
        display_name: String,
        rationale: String,
    },
    Justification {
        text: String,
    },
    QA {
        question: String,
        answer: String,
        sources: Vec<String>,
    },
}

impl ReportBlock {
    pub fn kind(&self) -> BlockKind {
        match self {
            ReportBlock::Claim { .. } => BlockKind::Claim,
            ReportBlock::Actions { .. } => BlockKind::Actions,
            ReportBlock::Evidence(_) => BlockKind::Evidence,
            ReportBlock::Elaboration { .. } => BlockKind::Elaboration,
            ReportBlock::Verdict { .. } => BlockKind::Verdict,
            ReportBlock::Justification { .. } => BlockKind::Justification,
            ReportBlock::QA { .. } => BlockKind::QA,
        }
    }

    fn body(&self) -> String {
        match self {
            ReportBlock::Claim { text } | ReportBlock::Elaboration { text } | ReportBlock::Justification { text } => {
                text.clone()
            }
            ReportBlock::Actions { actions } => actions.join("\n"),
            ReportBlock::Evidence(e) => e.summary.clone(),
            ReportBlock::Verdict { rationale, .. } => rationale.clone(),
            ReportBlock::QA { question, answer, .. } => format!("{question}\n{answer}"),
        }
    }

    fn render(&self, flavor: Flavor) -> String {
        match self {
            ReportBlock::Claim { text } => format!("## Claim\n{text}"),
            ReportBlock::Actions { actions } => {
                format!("## Actions\n```\n{}\n```", actions.join("\n"))
            }
            ReportBlock::Evidence(e) => {
                let mut out = format!("### Evidence from `{}`", e.tool);
                match (&e.source_url, flavor) {
                    (Some(url), Flavor::Markdown) => {
                        let title = e.title.as_deref().filter(|t| !t.trim().is_empty()).unwrap_or(url);
                        out.push_str(&format!("\nSource: [{}]({url})", escape_link_text(title)));
                    }
                    (Some(url), Flavor::Prompt) => {
                        if let Some(title) = e.title.as_deref().filter(|t| !t.trim().is_empty()) {
                            out.push_str(&format!("\nSource: {title} ({url})"));
                        } else {
                            out.push_str(&format!("\nSource: {url}"));
                        }
                    }
                    (None, _) => {}
                }
                if let Some(d) = e.result_date {
                    out.push_str(&format!("\nPublished: {}", d.format("%Y-%m-%d")));
                }
                out.push('\n');
                out.push_str(&e.summary);
                out
            }
            ReportBlock::Elaboration { text } => format!("## Elaboration\n{text}"),
            ReportBlock::Verdict {
                display_name,
                rationale,
                ..
            } => {
                format!("## Final Judgement\n{rationale}\n\n### Verdict: {display_name}")
            }
            ReportBlock::Justification { text } => format!("## Justification\n{text}"),
            ReportBlock::QA {
                question,
                answer,
                sources,
            } => {
                let mut out = format!("### Question: {question}\nAnswer: {answer}");
                if !sources.is_empty() {
                    let rendered: Vec<String> = match flavor {
                        Flavor::Markdown => sources.iter().map(|s| format!("[{s}]({s})")).collect(),
                        Flavor::Prompt => sources.clone(),
                    };
                    out.push_str(&format!("\nSources: {}", rendered.join(", ")));
                }
                out
            }
        }
    }
}

fn escape_link_text(s: &str) -> String {
    s.replace('[', "\\[").replace(']', "\\]")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Flavor {
    Prompt,
    Markdown,
}

/// Character-ratio token estimate; deterministic, not a real tokenizer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenEstimator {
    pub chars_per_token: usize,
    pub tokens_per_image: usize,
}

impl Default for TokenEstimator {
    fn default() -> Self {
        Self {
            chars_per_token: 4,
            tokens_per_image: 0,
        }
    }
}

impl TokenEstimator {
    pub fn text(&self, text: &str) -> usize {
        let chars = text.chars().count();
        let per = self.chars_per_token.max(1);
        chars.div_ceil(per) + parse_image_refs(text).len() * self.tokens_per_image
    }
}

pub const TRUNCATION_NOTICE: &str = "_[Earlier report blocks were omitted to fit the context window.]_";

#[derive(Clone, Serialize)]
pub struct Report {
    claim: Claim,
    blocks: Vec<ReportBlock>,
    pub iteration: usize,
    action_history: BTreeSet<String>,
    finalized: bool,
    #[serde(skip)]
    registry: Arc<MediaRegistry>,
}

impl fmt::Debug for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Report")
            .field("blocks", &self.blocks.len())
            .field("iteration", &self.iteration)
            .field("finalized", &self.finalized)
            .finish()
    }
}

impl Report {
    pub fn new(claim: Claim, registry: Arc<MediaRegistry>) -> Result<Self> {
        claim.validate(&registry)?;
        let text = render_claim(&claim);
        Ok(Self {
            claim,
            blocks: vec![ReportBlock::Claim { text }],
            iteration: 0,
            action_history: BTreeSet::new(),
            finalized: false,
            registry,
        })
    }

    pub fn claim(&self) -> &Claim {
        &self.claim
    }

    pub fn blocks(&self) -> &[ReportBlock] {
        &self.blocks
    }

    pub fn registry(&self) -> &Arc<MediaRegistry> {
        &self.registry
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    pub fn action_history(&self) -> &BTreeSet<String> {
        &self.action_history
    }

    pub fn record_action(&mut self, canonical_key: String) {
        self.action_history.insert(canonical_key);
    }

    pub fn count(&self, kind: BlockKind) -> usize {
        self.blocks.iter().filter(|b| b.kind() == kind).count()
    }

    pub fn verdict(&self) -> Option<(&str, &str)> {
        self.blocks.iter().find_map(|b| match b {
            ReportBlock::Verdict { label, rationale, .. } => Some((label.as_str(), rationale.as_str())),
            _ => None,
        })
    }

    /// Appends `block`. A new verdict replaces the previous one (removed from
    /// its old position, appended at the end). A justification finalizes the report.
    pub fn append_block(&mut self, block: ReportBlock) -> Result<()> {
        let kind = block.kind();
        if self.finalized {
            return Err(Error::AlreadyFinalized(kind.name()));
        }
        if kind == BlockKind::Claim {
            return Err(Error::Precondition("a report holds exactly one claim block".into()));
        }
        for id in parse_image_refs(&block.body()) {
            if !self.registry.contains(id) {
                return Err(Error::UnknownImageRef(id.0));
            }
        }
        if kind == BlockKind::Verdict {
            self.blocks.retain(|b| b.kind() != BlockKind::Verdict);
        }
        if kind == BlockKind::Justification {
            self.finalized = true;
        }
        self.blocks.push(block);
        Ok(())
    }

    /// Full prompt rendering with `<image:k>` references.
    pub fn render_text(&self) -> String {
        render_blocks(self.blocks.iter(), Flavor::Prompt)
    }

    /// Prompt rendering that fits `budget` tokens: evidence blocks are dropped
    /// oldest-first, then elaborations, then any other non-claim block.
    pub fn snapshot_for_prompt(&self, budget: usize, estimator: &TokenEstimator) -> Result<String> {
        if budget == 0 {
            return Err(Error::Precondition("token budget must be positive".into()));
        }
        let full = self.render_text();
        if estimator.text(&full) <= budget {
            return Ok(full);
        }
        let claim_only = self.blocks[0].render(Flavor::Prompt);
        let claim_tokens = estimator.text(&claim_only);
        if claim_tokens > budget {
            return Err(Error::BudgetTooSmall {
                budget,
                needed: claim_tokens,
            });
        }

        let drop_order: Vec<usize> = [BlockKind::Evidence, BlockKind::Elaboration]
            .iter()
            .flat_map(|k| self.indices_of(*k))
            .chain(
                (1..self.blocks.len())
                    .filter(|i| !matches!(self.blocks[*i].kind(), BlockKind::Evidence | BlockKind::Elaboration)),
            )
            .collect();

        let mut dropped = vec![false; self.blocks.len()];
        for idx in drop_order {
            dropped[idx] = true;
            let text = self.render_with_notice(&dropped);
            if estimator.text(&text) <= budget {
                return Ok(text);
            }
        }
        Ok(claim_only)
    }

    fn indices_of(&self, kind: BlockKind) -> Vec<usize> {
        (0..self.blocks.len())
            .filter(|i| self.blocks[*i].kind() == kind)
            .collect()
    }

    fn render_with_notice(&self, dropped: &[bool]) -> String {
        let mut parts = vec![self.blocks[0].render(Flavor::Prompt), TRUNCATION_NOTICE.to_owned()];
        parts.extend(
            self.blocks
                .iter()
                .enumerate()
                .skip(1)
                .filter(|(i, _)| !dropped[*i])
                .map(|(_, b)| b.render(Flavor::Prompt)),
        );
        parts.join("\n\n")
    }

    /// Markdown document for humans. Referenced images are written into
    /// `asset_dir` as `<sha256>.<ext>` and linked relative to the directory name.
    pub fn render_markdown(&self, asset_dir: &Path) -> Result<(String, Vec<PathBuf>)> {
        let dir_name = asset_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "assets".into());
        let body = format!(
            "# Fact-Check Report\n\n{}\n",
            render_blocks(self.blocks.iter(), Flavor::Markdown)
        );

        let mut files: Vec<(PathBuf, MediaRef)> = Vec::new();
        let mut markdown = String::with_capacity(body.len());
        let mut in_fence = false;
        // References inside fenced blocks (action listings) stay literal.
        for line in body.split_inclusive('\n') {
            if line.trim_start().starts_with("```") {
                in_fence = !in_fence;
            }
            if in_fence || line.trim_start().starts_with("```") {
                markdown.push_str(line);
                continue;
            }
            markdown.push_str(&replace_image_refs(line, |id| {
                let media = self.registry.get(id).ok_or(Error::UnresolvedImage(id.0))?;
                let file = format!("{}.{}", media.content_hash.to_hex(), media.extension());
                let path = asset_dir.join(&file);
                if !files.iter().any(|(p, _)| *p == path) {
                    files.push((path, media));
                }
                Ok(format!("![image {}]({dir_name}/{file})", id.0))
            })?);
        }

        if !files.is_empty() {
            fs::create_dir_all(asset_dir)?;
        }
        for (path, media) in &files {
            fs::write(path, &media.bytes)?;
        }
        Ok((markdown, files.into_iter().map(|(p, _)| p).collect()))
    }
}

fn render_blocks<'a>(blocks: impl Iterator<Item = &'a ReportBlock>, flavor: Flavor) -> String {
    blocks.map(|b| b.render(flavor)).collect::<Vec<_>>().join("\n\n")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::claim::{MediaId, Segment};

    fn png(tag: u8) -> Vec<u8> {
        let mut v = vec![0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A];
        v.push(tag);
        v
    }

    fn evidence(summary: &str, url: &str) -> ReportBlock {
        ReportBlock::Evidence(EvidenceBlock {
            tool: "web_search".into(),
            source_url: Some(url.into()),
            title: None,
            result_date: None,
            summary: summary.into(),
        })
    }

    fn verdict(label: &str) -> ReportBlock {
        ReportBlock::Verdict {
            label: label.into(),
            display_name: label.to_uppercase(),
            rationale: "because".into(),
        }
    }

    fn report() -> Report {
        Report::new(
            Claim::from_text("The sky is green.").unwrap(),
            Arc::new(MediaRegistry::new()),
        )
        .unwrap()
    }

    #[test]
    fn append_evidence_to_fresh_report() {
        let mut r = report();
        r.append_block(evidence("x", "https://a.org")).unwrap();
        let kinds: Vec<_> = r.blocks().iter().map(|b| b.kind()).collect();
        assert_eq!(kinds, vec![BlockKind::Claim, BlockKind::Evidence]);
    }

    #[test]
    fn second_verdict_replaces_first() {
        let mut r = report();
        r.append_block(verdict("nei")).unwrap();
        r.append_block(evidence("more", "https://b.org")).unwrap();
        r.append_block(verdict("refuted")).unwrap();
        assert_eq!(r.count(BlockKind::Verdict), 1);
        assert_eq!(r.verdict().unwrap().0, "refuted");
        assert_eq!(r.blocks().last().unwrap().kind(), BlockKind::Verdict);
    }

    #[test]
    fn append_after_finalize_fails() {
        let mut r = report();
        r.append_block(ReportBlock::Justification { text: "done".into() })
            .unwrap();
        assert!(r.is_finalized());
        assert!(matches!(
            r.append_block(evidence("x", "u")),
            Err(Error::AlreadyFinalized(_))
        ));
        assert!(matches!(
            r.append_block(ReportBlock::Justification { text: "again".into() }),
            Err(Error::AlreadyFinalized(_))
        ));
    }

    #[test]
    fn append_rejects_dangling_image_ref() {
        let mut r = report();
        assert!(matches!(
            r.append_block(evidence("see <image:9>", "u")),
            Err(Error::UnknownImageRef(9))
        ));
    }

    #[test]
    fn markdown_without_evidence_has_claim_and_verdict_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = report();
        r.append_block(verdict("refuted")).unwrap();
        let (md, files) = r.render_markdown(&dir.path().join("assets")).unwrap();
        assert!(files.is_empty());
        assert!(md.contains("## Claim\nThe sky is green."));
        assert!(md.contains("### Verdict: REFUTED"));
        assert!(!md.contains("Evidence"));
    }

    #[test]
    fn markdown_writes_each_image_once() {
        let dir = tempfile::tempdir().unwrap();
        let registry = Arc::new(MediaRegistry::new());
        let img = registry.register_image(&png(7), None).unwrap();
        let mut r = Report::new(Claim::from_text("c").unwrap(), registry).unwrap();
        r.append_block(evidence(&format!("photo {}", img.id), "https://news.example/a"))
            .unwrap();
        let assets = dir.path().join("assets");
        let (md, files) = r.render_markdown(&assets).unwrap();
        assert_eq!(files.len(), 1);
        assert_eq!(fs::read(&files[0]).unwrap(), png(7));
        let link = format!("(assets/{}.png)", img.content_hash.to_hex());
        assert_eq!(md.matches(&link).count(), 1);
        assert!(md.contains("Source: [https://news.example/a](https://news.example/a)"));
        // Deterministic.
        let (md2, _) = r.render_markdown(&assets).unwrap();
        assert_eq!(md, md2);
    }

    #[test]
    fn claim_images_render_in_markdown() {
        let dir = tempfile::tempdir().unwrap();
        let registry = Arc::new(MediaRegistry::new());
        let img = registry.register_image(&png(1), None).unwrap();
        let claim = Claim::new(vec![Segment::Image(img.id), Segment::Text(" caption".into())]).unwrap();
        let r = Report::new(claim, registry).unwrap();
        let (md, files) = r.render_markdown(&dir.path().join("a")).unwrap();
        assert_eq!(files.len(), 1);
        assert!(md.contains("![image 1](a/"));
        assert!(!md.contains("<image:"));
        let _ = MediaId(1);
    }

    #[test]
    fn fenced_image_refs_stay_literal() {
        let dir = tempfile::tempdir().unwrap();
        let registry = Arc::new(MediaRegistry::new());
        let img = registry.register_image(&png(3), None).unwrap();
        let claim = Claim::new(vec![Segment::Image(img.id), Segment::Text(" caption".into())]).unwrap();
        let mut r = Report::new(claim, registry).unwrap();
        r.append_block(ReportBlock::Actions {
            actions: vec!["geolocate(<image:1>)".into()],
        })
        .unwrap();
        let (md, _) = r.render_markdown(&dir.path().join("a")).unwrap();
        assert!(md.contains("geolocate(<image:1>)"));
        assert_eq!(md.matches("![image 1]").count(), 1);
    }

    #[test]
    fn snapshot_large_budget_is_full_render() {
        let mut r = report();
        r.append_block(evidence("abc", "https://a")).unwrap();
        let est = TokenEstimator::default();
        assert_eq!(r.snapshot_for_prompt(1_000_000, &est).unwrap(), r.render_text());
    }

    #[test]
    fn snapshot_drops_oldest_evidence_first() {
        let est = TokenEstimator {
            chars_per_token: 1,
            tokens_per_image: 0,
        };
        let mut r = report();
        r.append_block(evidence(&"old ".repeat(20), "https://old")).unwrap();
        r.append_block(ReportBlock::Elaboration {
            text: "thinking".into(),
        })
        .unwrap();
        r.append_block(evidence("new", "https://new")).unwrap();

        // Budget = everything minus the oldest evidence block plus the notice.
        let without_oldest = {
            let mut dropped = vec![false; r.blocks().len()];
            dropped[1] = true;
            r.render_with_notice(&dropped)
        };
        let budget = est.text(&without_oldest);
        assert!(budget < est.text(&r.render_text()));
        let snap = r.snapshot_for_prompt(budget, &est).unwrap();
        assert_eq!(snap, without_oldest);
        assert!(!snap.contains("https://old"));
        assert!(snap.contains("https://new"));
        assert!(snap.contains("thinking"));
        assert!(snap.contains(TRUNCATION_NOTICE));
    }

    #[test]
    fn snapshot_drops_elaborations_after_evidence() {
        let est = TokenEstimator {
            chars_per_token: 1,
            tokens_per_image: 0,
        };
        let mut r = report();
        r.append_block(ReportBlock::Elaboration { text: "e".repeat(50) })
            .unwrap();
        r.append_block(evidence("x", "https://x")).unwrap();
        r.append_block(verdict("nei")).unwrap();
        let claim_plus_notice_plus_verdict = {
            let mut dropped = vec![false; r.blocks().len()];
            dropped[1] = true;
            dropped[2] = true;
            r.render_with_notice(&dropped)
        };
        let snap = r
            .snapshot_for_prompt(est.text(&claim_plus_notice_plus_verdict), &est)
            .unwrap();
        assert_eq!(snap, claim_plus_notice_plus_verdict);
    }

    #[test]
    fn snapshot_budget_below_claim_fails() {
        let r = report();
        let est = TokenEstimator::default();
        assert!(matches!(
            r.snapshot_for_prompt(2, &est),
            Err(Error::BudgetTooSmall { .. })
        ));
    }

    #[test]
    fn estimator_counts_chars() {
        let est = TokenEstimator::default();
        assert_eq!(est.text(""), 0);
        assert_eq!(est.text("abcd"), 1);
        assert_eq!(est.text("abcde"), 2);
        let with_images = TokenEstimator {
            chars_per_token: 4,
            tokens_per_image: 10,
        };
        assert_eq!(with_images.text("<image:1>abc"), 3 + 10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn snapshot_always_keeps_claim(n in 0usize..8, budget in 10usize..400) {
                let est = TokenEstimator { chars_per_token: 1, tokens_per_image: 0 };
                let mut r = report();
                for i in 0..n {
                    r.append_block(evidence(&format!("finding {i}"), "https://e.org")).unwrap();
                }
                if let Ok(snap) = r.snapshot_for_prompt(budget, &est) {
                    prop_assert!(snap.contains("## Claim\nThe sky is green."));
                }
            }
        }
    }
}
