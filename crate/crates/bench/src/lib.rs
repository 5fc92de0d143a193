//! Deterministic workloads for the criterion benches.

use std::sync::Arc;

use factcheck_core::tools::{KbDocument, KnowledgeBase};
use factcheck_core::{Claim, EvidenceBlock, MediaRegistry, Report, ReportBlock, Segment};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &[
    "bus", "fire", "protest", "minister", "shot", "stove", "ban", "order", "flood", "bridge", "election", "vaccine",
];

fn phrase(rng: &mut ChaCha8Rng, words: usize) -> String {
    (0..words)
        .map(|_| WORDS[rng.random_range(0..WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

/// A planner code block with `n` action lines, a quarter of them image actions.
pub fn action_block(seed: u64, n: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = Vec::with_capacity(n);
    for i in 0..n {
        let line = match i % 4 {
            0 => format!("web_search(\"{}\")", phrase(&mut rng, 4)),
            1 => format!("image_search(\"{}\")", phrase(&mut rng, 3)),
            2 => "reverse_search(<image:1>)".to_owned(),
            _ => "geolocate(<image:1>)".to_owned(),
        };
        lines.push(line);
    }
    lines.join("\n")
}

/// A registry holding one tiny PNG as `<image:1>`.
pub fn registry_with_image() -> MediaRegistry {
    let registry = MediaRegistry::new();
    registry
        .register_image(&[0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a, 0, 0, 0, 0], None)
        .expect("PNG signature");
    registry
}

/// `docs` documents with uniform vectors in [-1, 1)^dim.
pub fn knowledge_base(seed: u64, docs: usize, dim: usize) -> KnowledgeBase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let documents = (0..docs)
        .map(|i| KbDocument {
            id: i as u32,
            url: format!("https://kb.example/{i}"),
            text: phrase(&mut rng, 12),
        })
        .collect();
    let vectors = (0..docs * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    KnowledgeBase::new(documents, dim, vectors).expect("consistent dimensions")
}

pub fn query_vector(seed: u64, dim: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Search-result URLs over a mix of ordinary and fact-checking hosts.
pub fn urls(seed: u64, n: usize) -> Vec<String> {
    const HOSTS: &[&str] = &[
        "reuters.com",
        "snopes.com",
        "bbc.co.uk",
        "politifact.com",
        "example.org",
        "x.com",
        "fox.com",
        "afp.com",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let host = HOSTS[rng.random_range(0..HOSTS.len())];
            format!("https://www.{host}/story/{i}")
        })
        .collect()
}

/// A report after `iterations` rounds of actions plus `per_round` evidence blocks.
pub fn grown_report(iterations: usize, per_round: usize) -> Report {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let claim = Claim::new(vec![Segment::Text(phrase(&mut rng, 16))]).expect("non-empty claim");
    let mut report = Report::new(claim, Arc::new(MediaRegistry::new())).expect("fresh report");
    for _ in 0..iterations {
        let actions = (0..per_round)
            .map(|_| format!("web_search(\"{}\")", phrase(&mut rng, 4)))
            .collect();
        report
            .append_block(ReportBlock::Actions { actions })
            .expect("open report");
        for j in 0..per_round {
            report
                .append_block(ReportBlock::Evidence(EvidenceBlock {
                    tool: "web_search".into(),
                    source_url: Some(format!("https://news.example/{j}")),
                    title: Some(phrase(&mut rng, 5)),
                    result_date: None,
                    summary: phrase(&mut rng, 120),
                }))
                .expect("open report");
        }
        report
            .append_block(ReportBlock::Elaboration {
                text: phrase(&mut rng, 80),
            })
            .expect("open report");
    }
    report
}
