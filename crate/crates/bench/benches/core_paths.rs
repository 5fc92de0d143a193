use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use factcheck_bench::{action_block, grown_report, knowledge_base, query_vector, registry_with_image, urls};
use factcheck_core::actions::parse_actions;
use factcheck_core::benchmark::metrics::micro_f1;
use factcheck_core::replay::{canonicalize, fingerprint, InteractionKind};
use factcheck_core::tools::{filter_urls, DomainPolicy};
use factcheck_core::TokenEstimator;
use serde_json::json;

fn actions(c: &mut Criterion) {
    let registry = registry_with_image();
    let mut group = c.benchmark_group("parse_actions");
    for n in [4, 32] {
        let block = action_block(1, n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &block, |b, block| {
            b.iter(|| parse_actions(black_box(block), &registry).expect("valid block"))
        });
    }
    group.finish();
}

fn kb_search(c: &mut Criterion) {
    let mut group = c.benchmark_group("kb_search");
    for docs in [1_000, 20_000] {
        let kb = knowledge_base(2, docs, 256);
        let query = query_vector(3, 256);
        group.bench_with_input(BenchmarkId::from_parameter(docs), &kb, |b, kb| {
            b.iter(|| kb.search(black_box(&query), 5).expect("matching dimension").len())
        });
    }
    group.finish();
}

fn policy(c: &mut Criterion) {
    let policy = DomainPolicy::default();
    let batch = urls(4, 100);
    c.bench_function("policy_filter_100", |b| {
        b.iter(|| filter_urls(black_box(batch.clone()), &policy).len())
    });
}

fn cassette_fingerprint(c: &mut Criterion) {
    let request = json!({
        "model_id": "gpt-4o-2024-08-06",
        "temperature": 0.01,
        "top_p": 0.9,
        "max_tokens": 2048,
        "task": "judge",
        "content": [{"text": action_block(5, 64)}, {"image_sha256": "ab".repeat(32)}],
    });
    c.bench_function("canonicalize", |b| b.iter(|| canonicalize(black_box(&request))));
    c.bench_function("fingerprint", |b| {
        b.iter(|| fingerprint(InteractionKind::Llm, black_box(&request)))
    });
}

fn report_snapshot(c: &mut Criterion) {
    let report = grown_report(3, 8);
    let estimator = TokenEstimator::default();
    let full = estimator.text(&report.render_text());
    let mut group = c.benchmark_group("snapshot_for_prompt");
    for (name, budget) in [("fits", full + 100), ("truncates", full / 3)] {
        group.bench_function(name, |b| {
            b.iter(|| {
                report
                    .snapshot_for_prompt(black_box(budget), &estimator)
                    .expect("budget covers claim")
            })
        });
    }
    group.finish();
}

fn metrics(c: &mut Criterion) {
    let labels = ["supported", "refuted", "nei", "conflicting"];
    let preds: Vec<&str> = (0..10_000).map(|i| labels[i % 4]).collect();
    let golds: Vec<&str> = (0..10_000).map(|i| labels[(i / 3) % 4]).collect();
    c.bench_function("micro_f1_10k", |b| {
        b.iter(|| micro_f1(black_box(&preds), black_box(&golds)).expect("equal lengths"))
    });
}

criterion_group!(
    benches,
    actions,
    kb_search,
    policy,
    cassette_fingerprint,
    report_snapshot,
    metrics
);
criterion_main!(benches);
