//! The fact-checking loop: plan, execute, summarize, develop and judge until
//! the verdict is decisive or the iteration budget is spent, then justify.

mod infact;
pub mod output;
pub mod runlog;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::actions::{plan, Action, ActionKind, PlannerSettings};
use crate::claim::{Claim, MediaRegistry, Verdict};
use crate::error::{Error, Result};
use crate::llm::{extract_choice, Binding, ChatContent, Gateway, TemplateName, TemplateSet, UsageSnapshot};
use crate::report::{BlockKind, Report, ReportBlock};
use crate::summarize::{summarize_geolocation, summarize_result, SummaryOutcome, DEFAULT_MAX_RESULT_CHARS};
use crate::taxonomy::{Benchmark, LabelTaxonomy};
use crate::tools::{KnowledgeBase, SearchResult, ToolContext, ToolOutput, Tools};

pub use infact::{parse_questions, QaPair, NO_ANSWER};
pub use output::{
    write_failure, write_outcome, OutcomeSummary, ASSET_DIR, OUTCOME_FILE, QA_FILE, REPORT_FILE, RUN_LOG_FILE,
};
pub use runlog::{read_log, LogRecord, RunLog, Stage};

/// Appended to the judge prompt when the first answer named no option.
pub const JUDGE_FORMAT_REMINDER: &str = "\n\nImportant: your answer must end with exactly one of the Decision Options, written exactly as listed and enclosed in backticks, like `this`.";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Replace the planner with a fixed schedule: every available tool once per iteration.
    pub no_planning: bool,
    /// Skip Stage 4 entirely.
    pub no_develop: bool,
    /// Strip image segments from the develop prompt.
    pub unimodal_develop: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    #[default]
    Iterative,
    /// Question-answering variant producing QA pairs.
    InFact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub max_iterations: usize,
    pub taxonomy: LabelTaxonomy,
    pub plan_rules: String,
    pub judge_rules: String,
    pub enabled_actions: BTreeSet<ActionKind>,
    pub max_actions_per_iteration: usize,
    pub temporal_filtering: bool,
    pub ablation: Ablation,
    pub max_result_chars: usize,
    /// Concurrent summarization calls within one iteration.
    pub summary_parallelism: usize,
    pub mode: Mode,
    pub infact_questions: usize,
    pub infact_results: usize,
    pub infact_queries_per_question: usize,
}

impl PipelineConfig {
    pub fn for_benchmark(b: Benchmark) -> Self {
        Self {
            max_iterations: 3,
            taxonomy: b.taxonomy(),
            plan_rules: b.plan_rules().to_owned(),
            judge_rules: b.judge_rules().to_owned(),
            enabled_actions: ActionKind::ALL.into_iter().collect(),
            max_actions_per_iteration: 5,
            temporal_filtering: true,
            ablation: Ablation::default(),
            max_result_chars: DEFAULT_MAX_RESULT_CHARS,
            summary_parallelism: 4,
            mode: Mode::Iterative,
            infact_questions: 10,
            infact_results: 5,
            infact_queries_per_question: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if self.taxonomy.labels.is_empty() {
            return Err(Error::Config("taxonomy has no labels".into()));
        }
        Ok(())
    }

    /// The single-turn ablation.
    pub fn single_turn(mut self) -> Self {
        self.max_iterations = 1;
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounters {
    pub llm: UsageSnapshot,
    /// External tool requests by interaction kind (cache hits excluded).
    pub tool_calls: BTreeMap<String, usize>,
    pub actions: usize,
    pub evidence_blocks: usize,
}

#[derive(Debug, Clone)]
pub struct FactCheckOutcome {
    pub report: Report,
    pub verdict: Verdict,
    pub iterations_used: usize,
    pub qa_pairs: Option<Vec<QaPair>>,
    pub counters: RunCounters,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JudgeOutcome {
    pub label: String,
    pub rationale: String,
    /// The first answer named no option and the reminder was needed.
    pub retried: bool,
    /// Both answers named no option and the NEI label was used.
    pub defaulted: bool,
}

/// Prompt text for `[Record]` that leaves room for `overhead` in the budget.
fn record_for(gateway: &Gateway, report: &Report, overhead: &str) -> Result<String> {
    let used = gateway.estimator().text(overhead);
    let budget = gateway.config().prompt_budget().saturating_sub(used).max(1);
    report.snapshot_for_prompt(budget, gateway.estimator())
}

/// Stage 5: one judge call, one retry with a format reminder, then NEI.
pub fn judge(
    gateway: &Gateway,
    templates: &TemplateSet,
    report: &Report,
    taxonomy: &LabelTaxonomy,
    extra_rules: &str,
) -> Result<JudgeOutcome> {
    let template = templates.get(TemplateName::Judge);
    let options = taxonomy.decision_options();
    let record = record_for(
        gateway,
        report,
        &format!("{}{extra_rules}{options}{JUDGE_FORMAT_REMINDER}", template.body),
    )?;
    let bindings: BTreeMap<&str, Binding> = [
        ("Extra Rules", Binding::Literal(extra_rules.to_owned())),
        ("Decision Options", Binding::Literal(options)),
        ("Record", Binding::Text(record)),
    ]
    .into_iter()
    .collect();
    let content = template.fill(&bindings)?;
    let first = gateway.complete(TemplateName::Judge, content.clone(), report.registry())?;
    if let Ok(label) = extract_choice(&first, taxonomy) {
        return Ok(JudgeOutcome {
            label,
            rationale: first.trim().to_owned(),
            retried: false,
            defaulted: false,
        });
    }
    let mut again = content;
    again.push_text(JUDGE_FORMAT_REMINDER);
    let second = gateway.complete(TemplateName::Judge, again, report.registry())?;
    match extract_choice(&second, taxonomy) {
        Ok(label) => Ok(JudgeOutcome {
            label,
            rationale: second.trim().to_owned(),
            retried: true,
            defaulted: false,
        }),
        Err(_) => match &taxonomy.nei_label {
            Some(nei) => Ok(JudgeOutcome {
                label: nei.clone(),
                rationale: second.trim().to_owned(),
                retried: true,
                defaulted: true,
            }),
            None => Err(Error::UnjudgeableClaim),
        },
    }
}

/// Stage 4 prompt content (exposed for inspection in tests and tools).
pub fn develop_content(
    gateway: &Gateway,
    templates: &TemplateSet,
    report: &Report,
    unimodal: bool,
) -> Result<ChatContent> {
    let template = templates.get(TemplateName::Develop);
    let record = record_for(gateway, report, &template.body)?;
    let bindings: BTreeMap<&str, Binding> = [("Record", Binding::Text(record))].into_iter().collect();
    let content = template.fill(&bindings)?;
    Ok(if unimodal { content.without_images() } else { content })
}

/// Stage 4: appends an elaboration block.
pub fn develop(gateway: &Gateway, templates: &TemplateSet, report: &mut Report, unimodal: bool) -> Result<()> {
    let content = develop_content(gateway, templates, report, unimodal)?;
    let text = gateway.complete(TemplateName::Develop, content, report.registry())?;
    let text = strip_unknown_refs(&text, report.registry());
    report.append_block(ReportBlock::Elaboration { text })
}

/// Stage 6: appends the justification and finalizes the report. A failed
/// model call yields a placeholder justification instead of an error.
pub fn justify(gateway: &Gateway, templates: &TemplateSet, report: &mut Report) -> Result<Option<Error>> {
    let template = templates.get(TemplateName::Justify);
    let attempt = record_for(gateway, report, &template.body).and_then(|record| {
        let bindings: BTreeMap<&str, Binding> = [("Record", Binding::Text(record))].into_iter().collect();
        let content = template.fill(&bindings)?;
        gateway.complete(TemplateName::Justify, content, report.registry())
    });
    let (text, failure) = match attempt {
        Ok(t) => (strip_unknown_refs(&t, report.registry()), None),
        Err(e @ (Error::MissingInteraction { .. } | Error::NetworkDenied(_) | Error::Cassette(_))) => return Err(e),
        Err(e) => (format!("_No justification could be generated: {e}._"), Some(e)),
    };
    report.append_block(ReportBlock::Justification {
        text: text.trim().to_owned(),
    })?;
    Ok(failure)
}

/// Removes `<image:k>` references that do not resolve.
fn strip_unknown_refs(text: &str, registry: &MediaRegistry) -> String {
    crate::claim::replace_image_refs(text, |id| {
        Ok(if registry.contains(id) {
            id.to_string()
        } else {
            String::new()
        })
    })
    .unwrap_or_else(|_| text.to_owned())
}

/// Fixed schedule used when planning is ablated: each available tool once,
/// with the claim text as query and the first claim image as image argument.
pub fn static_schedule(claim: &Claim, kinds: &[ActionKind]) -> Vec<Action> {
    let query = claim.text_only();
    let image = claim.image_ids().first().copied();
    kinds
        .iter()
        .filter_map(|k| match k {
            ActionKind::WebSearch if !query.is_empty() => Some(Action::WebSearch { query: query.clone() }),
            ActionKind::ImageSearch if !query.is_empty() => Some(Action::ImageSearch { query: query.clone() }),
            ActionKind::ReverseSearch => image.map(|image| Action::ReverseImageSearch { image }),
            ActionKind::Geolocate => image.map(|image| Action::Geolocate { image }),
            _ => None,
        })
        .collect()
}

/// Owns the shared services; `run` may be called concurrently.
pub struct FactChecker {
    pub gateway: Arc<Gateway>,
    pub tools: Arc<Tools>,
    pub templates: Arc<TemplateSet>,
    pub config: PipelineConfig,
}

impl std::fmt::Debug for FactChecker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FactChecker").field("config", &self.config).finish()
    }
}

struct Run<'a> {
    checker: &'a FactChecker,
    gateway: Gateway,
    tools: Tools,
    log: &'a RunLog,
    report: Report,
    ctx: ToolContext,
    warnings: Vec<String>,
}

enum Pending {
    Result(SearchResult),
    Geo(crate::claim::MediaId, crate::tools::GeoDistribution),
}

impl FactChecker {
    pub fn new(gateway: Arc<Gateway>, tools: Arc<Tools>, templates: Arc<TemplateSet>, config: PipelineConfig) -> Self {
        Self {
            gateway,
            tools,
            templates,
            config,
        }
    }

    /// Runs one fact-check. Errors other than precondition failures come
    /// back as [`Error::PipelineFailed`] carrying the partial report.
    pub fn run(
        &self,
        claim: Claim,
        registry: Arc<MediaRegistry>,
        kb: Option<Arc<KnowledgeBase>>,
        log: &RunLog,
    ) -> Result<FactCheckOutcome> {
        self.config.validate()?;
        let cutoff = claim.date.filter(|_| self.config.temporal_filtering);
        let report = Report::new(claim, registry.clone())?;
        let mut run = Run {
            checker: self,
            gateway: self.gateway.fork(),
            tools: self.tools.fork(),
            log,
            report,
            ctx: ToolContext::new(registry).with_cutoff(cutoff).with_kb(kb),
            warnings: Vec::new(),
        };
        log.log(Stage::Pipeline, "start", None);
        let result = match self.config.mode {
            Mode::Iterative => run.iterate().map(|(verdict, n)| (verdict, n, None)),
            Mode::InFact => run.infact().map(|(verdict, qa)| (verdict, 1, Some(qa))),
        };
        match result {
            Ok((verdict, iterations_used, qa_pairs)) => {
                log.log(Stage::Pipeline, "complete", Some(&verdict.label));
                let counters = run.counters();
                run.warnings.extend(run.ctx.take_warnings());
                Ok(FactCheckOutcome {
                    report: run.report,
                    verdict,
                    iterations_used,
                    qa_pairs,
                    counters,
                    warnings: run.warnings,
                })
            }
            Err(e @ Error::Precondition(_)) => Err(e),
            Err(e) => {
                log.log(Stage::Pipeline, "failed", Some(&e.to_string()));
                Err(Error::PipelineFailed {
                    report: Box::new(run.report),
                    source: Box::new(e),
                })
            }
        }
    }
}

impl Run<'_> {
    fn config(&self) -> &PipelineConfig {
        &self.checker.config
    }

    fn templates(&self) -> &TemplateSet {
        &self.checker.templates
    }

    fn counters(&self) -> RunCounters {
        RunCounters {
            llm: self.gateway.usage(),
            tool_calls: self
                .tools
                .exchange()
                .call_counts()
                .into_iter()
                .map(|(k, v)| (k.as_str().to_owned(), v))
                .collect(),
            actions: self.report.action_history().len(),
            evidence_blocks: self.report.count(BlockKind::Evidence),
        }
    }

    fn warn(&mut self, stage: Stage, msg: String) {
        self.log.log(stage, "warning", Some(&msg));
        tracing::warn!("{msg}");
        self.warnings.push(msg);
    }

    fn enabled_kinds(&self) -> BTreeSet<ActionKind> {
        let supported = self.tools.supported_kinds(&self.ctx);
        self.config()
            .enabled_actions
            .iter()
            .copied()
            .filter(|k| supported.contains(k))
            .collect()
    }

    fn iterate(&mut self) -> Result<(Verdict, usize)> {
        let max = self.config().max_iterations;
        let mut last: Option<JudgeOutcome> = None;
        let mut used = 0;
        for i in 1..=max {
            used = i;
            self.report.iteration = i;
            let final_round = i == max;
            self.log.log(Stage::Pipeline, format!("iteration {i}"), None);

            let actions = self.stage_plan()?;
            if actions.is_empty() && !final_round {
                self.log.log(Stage::Execute, "skip", Some("empty plan"));
            } else {
                if !actions.is_empty() {
                    self.stage_execute_and_summarize(&actions)?;
                }
                self.stage_develop(final_round)?;
            }

            let verdict = self.stage_judge(final_round)?;
            let decisive = !self.config().taxonomy.is_nei(&verdict.label);
            last = Some(verdict);
            if decisive {
                break;
            }
        }
        let verdict = last.expect("at least one iteration ran");
        self.stage_justify()?;
        Ok((
            Verdict {
                label: verdict.label,
                rationale: verdict.rationale,
            },
            used,
        ))
    }

    fn stage_plan(&mut self) -> Result<Vec<Action>> {
        self.log.log(Stage::Plan, "start", None);
        let enabled = self.enabled_kinds();
        let actions = if self.config().ablation.no_planning {
            let kinds: Vec<ActionKind> = ActionKind::ALL.into_iter().filter(|k| enabled.contains(k)).collect();
            self.log.log(Stage::Plan, "static", None);
            static_schedule(self.report.claim(), &kinds)
        } else {
            let settings = PlannerSettings {
                enabled,
                max_actions_per_iteration: self.config().max_actions_per_iteration,
                extra_rules: self.config().plan_rules.clone(),
            };
            let outcome = plan(&self.gateway, self.templates(), &self.report, &settings)?;
            for w in outcome.warnings {
                self.warn(Stage::Plan, w);
            }
            outcome.actions
        };
        let listing: Vec<String> = actions.iter().map(Action::to_call).collect();
        self.log.log(Stage::Plan, "complete", Some(&listing.join("\n")));
        Ok(actions)
    }

    fn stage_execute_and_summarize(&mut self, actions: &[Action]) -> Result<()> {
        self.log.log(Stage::Execute, "start", None);
        self.report.append_block(ReportBlock::Actions {
            actions: actions.iter().map(Action::to_call).collect(),
        })?;
        let mut pending = Vec::new();
        for action in actions {
            let call = action.to_call();
            self.log
                .log(Stage::Execute, format!("action {}", action.kind()), Some(&call));
            if let Ok(key) = action.canonical_key(self.report.registry()) {
                self.report.record_action(key);
            }
            match self.tools.execute(action, &self.ctx) {
                Ok(ToolOutput::Results(results)) => pending.extend(results.into_iter().map(Pending::Result)),
                Ok(ToolOutput::Geo { image, distribution }) => pending.push(Pending::Geo(image, distribution)),
                Err(e) if e.is_fatal() => return Err(e),
                Err(e) => self.warn(Stage::Execute, format!("{call} failed: {e}")),
            }
        }
        self.log.log(Stage::Execute, "complete", None);

        self.log.log(Stage::Summarize, "start", None);
        let results: Vec<&SearchResult> = pending
            .iter()
            .filter_map(|p| match p {
                Pending::Result(r) => Some(r),
                Pending::Geo(..) => None,
            })
            .collect();
        let summaries = self.summarize_all(&results);
        let mut summaries = summaries.into_iter();
        for p in &pending {
            match p {
                Pending::Result(r) => {
                    let outcome = summaries.next().expect("one summary per result");
                    match outcome {
                        Ok(SummaryOutcome { block, warnings, .. }) => {
                            for w in warnings {
                                self.warn(Stage::Summarize, w);
                            }
                            match block {
                                Some(b) => {
                                    self.log.log(Stage::Summarize, "evidence", Some(&b.summary));
                                    self.report.append_block(ReportBlock::Evidence(b))?;
                                }
                                None => self.log.log(Stage::Summarize, "none", Some(&r.url)),
                            }
                        }
                        Err(e) if e.is_fatal() => return Err(e),
                        Err(e) => self.warn(Stage::Summarize, format!("summarizing {} failed: {e}", r.url)),
                    }
                }
                Pending::Geo(image, dist) => {
                    let media = self.report.registry().resolve(*image)?;
                    let block = summarize_geolocation(dist, &media)?;
                    self.log.log(Stage::Summarize, "evidence", Some(&block.summary));
                    self.report.append_block(ReportBlock::Evidence(block))?;
                }
            }
        }
        self.log.log(Stage::Summarize, "complete", None);
        Ok(())
    }

    /// Summaries of one batch, all against the same report state, in input order.
    fn summarize_all(&self, results: &[&SearchResult]) -> Vec<Result<SummaryOutcome>> {
        let width = self.config().summary_parallelism.max(1);
        let max_chars = self.config().max_result_chars;
        let (gateway, templates, report) = (&self.gateway, self.templates(), &self.report);
        let mut out = Vec::with_capacity(results.len());
        for chunk in results.chunks(width) {
            if chunk.len() == 1 {
                out.push(summarize_result(gateway, templates, chunk[0], report, max_chars));
                continue;
            }
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|r| s.spawn(move || summarize_result(gateway, templates, r, report, max_chars)))
                    .collect();
                out.extend(handles.into_iter().map(|h| h.join().expect("summary worker panicked")));
            });
        }
        out
    }

    fn stage_develop(&mut self, final_round: bool) -> Result<()> {
        if self.config().ablation.no_develop {
            return Ok(());
        }
        if self.report.count(BlockKind::Evidence) == 0 && !final_round {
            self.log.log(Stage::Develop, "skip", Some("no evidence"));
            return Ok(());
        }
        self.log.log(Stage::Develop, "start", None);
        let unimodal = self.config().ablation.unimodal_develop;
        develop(&self.gateway, &self.checker.templates, &mut self.report, unimodal)?;
        self.log.log(Stage::Develop, "complete", None);
        Ok(())
    }

    fn stage_judge(&mut self, final_round: bool) -> Result<JudgeOutcome> {
        self.log.log(Stage::Judge, "start", None);
        let config = &self.checker.config;
        let outcome = judge(
            &self.gateway,
            &self.checker.templates,
            &self.report,
            &config.taxonomy,
            &config.judge_rules,
        )?;
        if outcome.retried {
            self.log.log(Stage::Judge, "retry", None);
        }
        if outcome.defaulted {
            self.warn(Stage::Judge, "no decision option found twice; defaulting to NEI".into());
        }
        let nei = config.taxonomy.is_nei(&outcome.label);
        self.log.log(
            Stage::Judge,
            format!("verdict {}", outcome.label),
            Some(&outcome.rationale),
        );
        if !nei || final_round {
            let display_name = config
                .taxonomy
                .get(&outcome.label)
                .map_or_else(|| outcome.label.clone(), |l| l.display_name.clone());
            self.report.append_block(ReportBlock::Verdict {
                label: outcome.label.clone(),
                display_name,
                rationale: strip_unknown_refs(&outcome.rationale, self.report.registry()),
            })?;
        }
        self.log.log(Stage::Judge, "complete", None);
        Ok(outcome)
    }

    fn stage_justify(&mut self) -> Result<()> {
        self.log.log(Stage::Justify, "start", None);
        if let Some(failure) = justify(&self.gateway, &self.checker.templates, &mut self.report)? {
            self.warn(Stage::Justify, format!("justification failed: {failure}"));
        }
        self.log.log(Stage::Justify, "complete", None);
        Ok(())
    }
}
