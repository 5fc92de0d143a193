//! The shipped replay fixtures: three recorded fact-checks under `tests/fixtures/`.
#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use chrono::NaiveDate;
use factcheck_core::config::AppConfig;
use factcheck_core::pipeline::{FactCheckOutcome, RunLog};
use factcheck_core::replay::{Cassette, CassetteMode};
use factcheck_core::tools::KnowledgeBase;
use factcheck_core::{Benchmark, Claim, MediaRegistry, Segment};

pub struct Case {
    pub name: &'static str,
    pub benchmark: Benchmark,
    pub text: &'static str,
    /// File under `fixtures/images/`, placed before the text.
    pub image: Option<&'static str>,
    pub claimant: Option<&'static str>,
    pub date: Option<&'static str>,
    /// Answer web searches from `fixtures/kb/index`.
    pub kb: bool,
    pub expected: &'static str,
}

pub const CASES: [Case; 3] = [
    Case {
        name: "averitec_text",
        benchmark: Benchmark::Averitec,
        text: "Joe Biden signed an executive order banning gas stoves in January 2023.",
        image: None,
        claimant: Some("Facebook user"),
        date: Some("2023-01-20"),
        kb: true,
        expected: "refuted",
    },
    Case {
        name: "verite_bus",
        benchmark: Benchmark::Verite,
        text: "A city bus set on fire by protesters in Bratislava during the 2024 demonstrations.",
        image: Some("bus.png"),
        claimant: None,
        date: None,
        kb: false,
        expected: "ooc",
    },
    Case {
        name: "crplus_fico",
        benchmark: Benchmark::Claimreview,
        text: "Slovakian Prime Minister Robert Fico being dragged into a car after being shot.",
        image: Some("fico.png"),
        claimant: Some("X user"),
        date: Some("2024-05-16"),
        kb: false,
        expected: "supported",
    },
];

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn cassette_dir(case: &Case) -> PathBuf {
    fixtures().join("cassettes").join(case.name)
}

pub fn golden_path(case: &Case) -> PathBuf {
    fixtures().join("golden").join(format!("{}.md", case.name))
}

pub fn kb_dir() -> PathBuf {
    fixtures().join("kb/index")
}

pub fn claim(case: &Case) -> (Claim, Arc<MediaRegistry>) {
    let registry = MediaRegistry::new();
    let mut content = Vec::new();
    let mut text = case.text.to_owned();
    if let Some(file) = case.image {
        let bytes = std::fs::read(fixtures().join("images").join(file)).expect("fixture image");
        content.push(Segment::Image(registry.register_image(&bytes, None).unwrap().id));
        text.insert(0, ' ');
    }
    content.push(Segment::Text(text));
    let mut claim = Claim::new(content).unwrap();
    if let Some(c) = case.claimant {
        claim = claim.with_claimant(c);
    }
    if let Some(d) = case.date {
        claim = claim.with_date(NaiveDate::parse_from_str(d, "%Y-%m-%d").unwrap());
    }
    (claim, Arc::new(registry))
}

pub fn config(case: &Case) -> AppConfig {
    let overrides = [(
        "pipeline.benchmark".to_owned(),
        format!("\"{}\"", case.benchmark.name()),
    )];
    AppConfig::resolve(
        Some(&fixtures().join("replay.toml")),
        std::iter::empty::<(String, String)>(),
        &overrides,
    )
    .unwrap()
}

pub fn kb(case: &Case) -> Option<Arc<KnowledgeBase>> {
    case.kb
        .then(|| Arc::new(KnowledgeBase::load(&kb_dir()).expect("fixture index")))
}

/// One strict replay; returns the rendered Markdown report and the outcome.
pub fn replay(case: &Case) -> factcheck_core::Result<(String, FactCheckOutcome)> {
    let cassette = Arc::new(Cassette::open(cassette_dir(case), CassetteMode::ReplayStrict)?);
    let checker = config(case).fact_checker(Some(cassette), &|_| None)?;
    let (claim, registry) = claim(case);
    let outcome = checker.run(claim, registry, kb(case), &RunLog::in_memory())?;
    let assets = tempfile::tempdir()?;
    let (markdown, _) = outcome.report.render_markdown(&assets.path().join("assets"))?;
    Ok((markdown, outcome))
}
