use std::collections::BTreeMap;
use std::sync::Arc;

use factcheck_core::actions::ActionKind;
use factcheck_core::llm::TemplateName;
use factcheck_core::net::HttpFailure;
use factcheck_core::pipeline::{FactCheckOutcome, Mode, PipelineConfig, RunLog, Stage, NO_ANSWER};
use factcheck_core::report::BlockKind;
use factcheck_core::testing::{
    fake_png, hit, offline_checker, page, ScriptedChat, StaticFetch, StaticGeo, StaticScrape, StaticSearch,
    StaticVision,
};
use factcheck_core::tools::{Backends, GeoScore};
use factcheck_core::{Benchmark, Claim, Error, MediaRegistry, Segment};

const PLAN_WEB: &str = "```\nweb_search(\"fico housing\")\n```";

fn s(x: &str) -> String {
    x.to_owned()
}

fn web_backends() -> Backends {
    let search = StaticSearch {
        fallback: vec![hit("https://news.example/a", "Article A")],
        ..Default::default()
    };
    let scrape = StaticScrape(BTreeMap::from([(
        s("https://news.example/a"),
        page("Fico said the housing plan passed."),
    )]));
    Backends {
        search: Some(Arc::new(search)),
        scrape: Some(Arc::new(scrape)),
        ..Default::default()
    }
}

fn image_backends() -> Backends {
    let mut b = web_backends();
    b.vision = Some(Arc::new(StaticVision {
        fallback: vec![hit("https://news.example/a", "Article A")],
        ..Default::default()
    }));
    b.geo = Some(Arc::new(StaticGeo(vec![GeoScore {
        code: s("SK"),
        name: Some(s("Slovakia")),
        score: 0.8,
    }])));
    b.fetch = Some(Arc::new(StaticFetch::default()));
    b
}

fn script(judge: &[&str]) -> ScriptedChat {
    ScriptedChat::by_task([
        (TemplateName::Plan, vec![s(PLAN_WEB)]),
        (TemplateName::Summarize, vec![s("Fico announced the plan.")]),
        (TemplateName::Develop, vec![s("The article confirms it.")]),
        (TemplateName::Judge, judge.iter().map(|j| s(j)).collect()),
        (
            TemplateName::Justify,
            vec![s("Supported by [A](https://news.example/a).")],
        ),
    ])
}

fn run_text(chat: Arc<ScriptedChat>, config: PipelineConfig, log: &RunLog) -> factcheck_core::Result<FactCheckOutcome> {
    let checker = offline_checker(chat, web_backends(), config);
    let claim = Claim::from_text("Fico's housing plan passed.").unwrap();
    checker.run(claim, Arc::new(MediaRegistry::new()), None, log)
}

fn run_image(
    chat: Arc<ScriptedChat>,
    config: PipelineConfig,
    log: &RunLog,
) -> factcheck_core::Result<FactCheckOutcome> {
    let checker = offline_checker(chat, image_backends(), config);
    let registry = Arc::new(MediaRegistry::new());
    let img = registry.register_image(&fake_png(7), None).unwrap();
    let claim = Claim::new(vec![Segment::Image(img.id), Segment::Text(s(" A bus in Bratislava."))]).unwrap();
    checker.run(claim, registry, None, log)
}

fn assert_finalized(outcome: &FactCheckOutcome) {
    assert!(outcome.report.is_finalized());
    assert_eq!(outcome.report.count(BlockKind::Verdict), 1);
    assert_eq!(outcome.report.count(BlockKind::Justification), 1);
}

#[test]
fn decisive_first_verdict_runs_one_iteration() {
    let log = RunLog::in_memory();
    let chat = Arc::new(script(&["The claim holds. `supported`"]));
    let out = run_text(chat, PipelineConfig::for_benchmark(Benchmark::Averitec), &log).unwrap();
    assert_eq!(out.iterations_used, 1);
    assert_eq!(out.verdict.label, "supported");
    assert_eq!(log.stage_sequence(), ["S1", "S2", "S3", "S4", "S5", "S6"]);
    assert_finalized(&out);
    assert_eq!(out.report.count(BlockKind::Evidence), 1);
    assert_eq!(out.counters.llm.calls, 5);
    assert_eq!(out.counters.tool_calls.get("web_search"), Some(&1));
}

#[test]
fn nei_forever_stops_at_max_iterations() {
    let log = RunLog::in_memory();
    let chat = Arc::new(script(&["`nei`"]));
    let out = run_text(chat, PipelineConfig::for_benchmark(Benchmark::Averitec), &log).unwrap();
    assert_eq!(out.iterations_used, 3);
    assert_eq!(out.verdict.label, "nei");
    assert_finalized(&out);
    assert_eq!(log.count(Stage::Judge, "verdict nei"), 3);
    assert_eq!(log.count(Stage::Justify, "start"), 1);
}

#[test]
fn decisive_second_verdict_runs_two_iterations() {
    let log = RunLog::in_memory();
    let chat = Arc::new(script(&["`nei`", "`supported`"]));
    let out = run_text(chat, PipelineConfig::for_benchmark(Benchmark::Averitec), &log).unwrap();
    assert_eq!(out.iterations_used, 2);
    assert_eq!(out.verdict.label, "supported");
    assert_finalized(&out);
}

#[test]
fn empty_plan_jumps_to_judge_until_final_iteration() {
    let log = RunLog::in_memory();
    let chat = Arc::new(ScriptedChat::by_task([
        (TemplateName::Plan, vec![s("I have no actions to propose.")]),
        (TemplateName::Develop, vec![s("Information about the vote is missing.")]),
        (TemplateName::Judge, vec![s("`nei`")]),
        (TemplateName::Justify, vec![s("Nothing could be verified.")]),
    ]));
    let out = run_text(chat, PipelineConfig::for_benchmark(Benchmark::Averitec), &log).unwrap();
    assert_eq!(out.iterations_used, 3);
    assert_eq!(log.stage_sequence(), ["S1", "S5", "S1", "S5", "S1", "S4", "S5", "S6"]);
    assert_eq!(out.report.count(BlockKind::Elaboration), 1);
}

#[test]
fn judge_retries_once_with_reminder() {
    let log = RunLog::in_memory();
    let chat = Arc::new(script(&["It looks wrong to me.", "`refuted`"]));
    let out = run_text(chat.clone(), PipelineConfig::for_benchmark(Benchmark::Averitec), &log).unwrap();
    assert_eq!(out.verdict.label, "refuted");
    assert_eq!(log.count(Stage::Judge, "retry"), 1);
    let judges = chat.requests_for(TemplateName::Judge);
    assert_eq!(judges.len(), 2);
    assert!(judges[1]
        .content
        .to_prompt_text()
        .ends_with(factcheck_core::pipeline::JUDGE_FORMAT_REMINDER));
}

#[test]
fn judge_defaults_to_nei_after_two_failures() {
    let log = RunLog::in_memory();
    let chat = Arc::new(script(&["unclear"]));
    let out = run_text(chat, PipelineConfig::for_benchmark(Benchmark::Averitec), &log).unwrap();
    assert_eq!(out.verdict.label, "nei");
    assert_eq!(out.iterations_used, 3);
}

#[test]
fn taxonomy_without_nei_is_unjudgeable() {
    let log = RunLog::in_memory();
    let chat = Arc::new(script(&["unclear"]));
    let err = run_image(chat, PipelineConfig::for_benchmark(Benchmark::Verite), &log).unwrap_err();
    match err {
        Error::PipelineFailed { report, source } => {
            assert!(matches!(*source, Error::UnjudgeableClaim));
            assert!(!report.is_finalized());
            assert!(report.count(BlockKind::Evidence) > 0);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn plan_failure_carries_partial_report() {
    let chat = Arc::new(ScriptedChat::new(|req| match req.task {
        TemplateName::Plan => Err(HttpFailure::Status(500, s("boom"))),
        _ => Ok(s("NONE")),
    }));
    let err = run_text(
        chat,
        PipelineConfig::for_benchmark(Benchmark::Averitec),
        &RunLog::in_memory(),
    )
    .unwrap_err();
    let Error::PipelineFailed { report, source } = err else {
        panic!("expected PipelineFailed");
    };
    assert!(matches!(*source, Error::EndpointUnavailable { .. }));
    assert_eq!(report.blocks().len(), 1);
}

#[test]
fn justify_failure_leaves_placeholder() {
    let chat = Arc::new(ScriptedChat::new(|req| match req.task {
        TemplateName::Plan => Ok(s(PLAN_WEB)),
        TemplateName::Judge => Ok(s("`supported`")),
        TemplateName::Justify => Err(HttpFailure::Status(503, s("down"))),
        _ => Ok(s("Some text.")),
    }));
    let out = run_text(
        chat,
        PipelineConfig::for_benchmark(Benchmark::Averitec),
        &RunLog::in_memory(),
    )
    .unwrap();
    assert_finalized(&out);
    assert!(out.warnings.iter().any(|w| w.contains("justification failed")));
}

#[test]
fn summaries_marked_none_add_no_evidence() {
    let chat = Arc::new(ScriptedChat::by_task([
        (TemplateName::Plan, vec![s(PLAN_WEB)]),
        (TemplateName::Summarize, vec![s("NONE")]),
        (TemplateName::Judge, vec![s("`refuted`")]),
    ]));
    let log = RunLog::in_memory();
    let out = run_text(chat, PipelineConfig::for_benchmark(Benchmark::Averitec), &log).unwrap();
    assert_eq!(out.report.count(BlockKind::Evidence), 0);
    assert_eq!(log.count(Stage::Develop, "skip"), 1);
}

#[test]
fn no_planning_runs_each_tool_once_per_iteration() {
    let mut config = PipelineConfig::for_benchmark(Benchmark::Verite);
    config.ablation.no_planning = true;
    config.taxonomy = Benchmark::Claimreview.taxonomy();
    let chat = Arc::new(script(&["`nei`"]));
    let log = RunLog::in_memory();
    let out = run_image(chat.clone(), config, &log).unwrap();
    assert_eq!(out.iterations_used, 3);
    assert!(chat.requests_for(TemplateName::Plan).is_empty());
    for kind in ActionKind::ALL {
        assert_eq!(log.count(Stage::Execute, &format!("action {kind}")), 3, "{kind}");
    }
}

#[test]
fn develop_ablations() {
    let mut config = PipelineConfig::for_benchmark(Benchmark::Claimreview);
    config.ablation.no_develop = true;
    let log = RunLog::in_memory();
    let chat = Arc::new(script(&["`supported`"]));
    run_image(chat.clone(), config, &log).unwrap();
    assert!(log.events(Stage::Develop).is_empty());
    assert!(chat.requests_for(TemplateName::Develop).is_empty());

    let mut config = PipelineConfig::for_benchmark(Benchmark::Claimreview);
    config.ablation.unimodal_develop = true;
    let chat = Arc::new(script(&["`supported`"]));
    run_image(chat.clone(), config, &RunLog::in_memory()).unwrap();
    let dev = chat.requests_for(TemplateName::Develop);
    assert_eq!(dev.len(), 1);
    assert!(dev[0].content.image_ids().is_empty());

    let chat = Arc::new(script(&["`supported`"]));
    run_image(
        chat.clone(),
        PipelineConfig::for_benchmark(Benchmark::Claimreview),
        &RunLog::in_memory(),
    )
    .unwrap();
    assert!(!chat.requests_for(TemplateName::Develop)[0]
        .content
        .image_ids()
        .is_empty());
}

#[test]
fn single_turn_caps_iterations() {
    let config = PipelineConfig::for_benchmark(Benchmark::Averitec).single_turn();
    let out = run_text(Arc::new(script(&["`nei`"])), config, &RunLog::in_memory()).unwrap();
    assert_eq!(out.iterations_used, 1);
}

#[test]
fn zero_iterations_rejected() {
    let mut config = PipelineConfig::for_benchmark(Benchmark::Averitec);
    config.max_iterations = 0;
    let err = run_text(Arc::new(script(&["`nei`"])), config, &RunLog::in_memory()).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

#[test]
fn infact_produces_qa_pairs() {
    let mut config = PipelineConfig::for_benchmark(Benchmark::Averitec);
    config.mode = Mode::InFact;
    let chat = Arc::new(ScriptedChat::by_task([
        (
            TemplateName::PoseQuestions,
            vec![s("1. Who proposed the plan?\n2. Did it pass?")],
        ),
        (TemplateName::Plan, vec![s(PLAN_WEB)]),
        (
            TemplateName::AnswerQuestion,
            vec![s("Fico proposed it, per [A](https://news.example/a)."), s("NONE")],
        ),
        (TemplateName::Judge, vec![s("`supported`")]),
        (TemplateName::Justify, vec![s("Summary.")]),
    ]));
    let log = RunLog::in_memory();
    let out = run_text(chat, config, &log).unwrap();
    let qa = out.qa_pairs.clone().expect("qa pairs");
    assert_eq!(qa.len(), 2);
    assert_eq!(qa[0].sources, ["https://news.example/a"]);
    assert_eq!(qa[1].answer, NO_ANSWER);
    assert!(qa[1].sources.is_empty());
    assert_eq!(out.report.count(BlockKind::QA), 2);
    assert_finalized(&out);
    assert_eq!(log.stage_sequence(), ["Q1", "Q2", "Q2", "S5", "S6"]);
}

#[test]
fn infact_requires_averitec() {
    let mut config = PipelineConfig::for_benchmark(Benchmark::Claimreview);
    config.mode = Mode::InFact;
    let err = run_text(Arc::new(script(&["`nei`"])), config, &RunLog::in_memory()).unwrap_err();
    assert!(matches!(err, Error::Precondition(_)));
}
