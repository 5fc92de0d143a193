//! Question-answering variant: pose questions, retrieve per question,
//! answer each, then judge once.

use std::collections::{BTreeMap, BTreeSet};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Run, Stage};
use crate::actions::{plan, Action, ActionKind, PlannerSettings};
use crate::claim::Verdict;
use crate::error::{Error, Result};
use crate::llm::{classify_none, Binding, NoneDetection, TemplateName};
use crate::report::ReportBlock;
use crate::summarize::render_result;
use crate::tools::SearchResult;

/// Answer recorded when retrieval or the model produced nothing usable.
pub const NO_ANSWER: &str = "No answer could be found.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaPair {
    pub question: String,
    pub answer: String,
    pub sources: Vec<String>,
}

/// Numbered or bulleted lines become questions; other lines are ignored
/// unless nothing is numbered, in which case every line ending in `?` counts.
pub fn parse_questions(response: &str, cap: usize) -> Vec<String> {
    let item = Regex::new(r"^\s*(?:\d+[.)]|[-*•])\s+(.+?)\s*$").expect("static regex");
    let mut out: Vec<String> = response
        .lines()
        .filter_map(|l| item.captures(l).map(|c| c[1].trim_matches('*').trim().to_owned()))
        .filter(|q| !q.is_empty())
        .collect();
    if out.is_empty() {
        out = response
            .lines()
            .map(str::trim)
            .filter(|l| l.ends_with('?'))
            .map(str::to_owned)
            .collect();
    }
    let mut seen = BTreeSet::new();
    out.retain(|q| seen.insert(q.to_lowercase()));
    out.truncate(cap);
    out
}

impl Run<'_> {
    pub(super) fn infact(&mut self) -> Result<(Verdict, Vec<QaPair>)> {
        if self.config().taxonomy.name != "averitec" {
            return Err(Error::Precondition(format!(
                "question-answering mode requires the averitec taxonomy, got {}",
                self.config().taxonomy.name
            )));
        }
        self.report.iteration = 1;
        let questions = self.pose_questions()?;
        let mut pairs = Vec::with_capacity(questions.len());
        for question in questions {
            let pair = self.answer_question(&question)?;
            self.report.append_block(ReportBlock::QA {
                question: pair.question.clone(),
                answer: pair.answer.clone(),
                sources: pair.sources.clone(),
            })?;
            pairs.push(pair);
        }
        let verdict = self.stage_judge(true)?;
        self.stage_justify()?;
        Ok((
            Verdict {
                label: verdict.label,
                rationale: verdict.rationale,
            },
            pairs,
        ))
    }

    fn pose_questions(&mut self) -> Result<Vec<String>> {
        self.log.log(Stage::PoseQuestions, "start", None);
        let template = self.templates().get(TemplateName::PoseQuestions);
        let record = super::record_for(&self.gateway, &self.report, &template.body)?;
        let bindings: BTreeMap<&str, Binding> = [("Record", Binding::Text(record))].into_iter().collect();
        let content = template.fill(&bindings)?;
        let response = self
            .gateway
            .complete(TemplateName::PoseQuestions, content, self.report.registry())?;
        let questions = parse_questions(&response, self.config().infact_questions);
        if questions.is_empty() {
            self.warn(Stage::PoseQuestions, "no questions could be parsed".into());
        }
        self.log
            .log(Stage::PoseQuestions, "complete", Some(&questions.join("\n")));
        Ok(questions)
    }

    fn queries_for(&mut self, question: &str) -> Result<Vec<String>> {
        let settings = PlannerSettings {
            enabled: [ActionKind::WebSearch].into_iter().collect(),
            max_actions_per_iteration: self.config().infact_queries_per_question,
            extra_rules: format!("* Only propose searches that help answer this question: {question}\n"),
        };
        let outcome = plan(&self.gateway, self.templates(), &self.report, &settings)?;
        for w in outcome.warnings {
            self.warn(Stage::AnswerQuestion, w);
        }
        let mut queries: Vec<String> = outcome
            .actions
            .into_iter()
            .filter_map(|a| match a {
                Action::WebSearch { query } => Some(query),
                _ => None,
            })
            .collect();
        if queries.is_empty() {
            queries.push(question.to_owned());
        }
        Ok(queries)
    }

    fn retrieve(&mut self, queries: &[String]) -> Result<Vec<SearchResult>> {
        let k = self.config().infact_results;
        let mut out: Vec<SearchResult> = Vec::new();
        for q in queries {
            let found = match self.ctx.kb.clone() {
                Some(kb) => self.tools.kb_search(&kb, q, k),
                None => self.tools.web_search(q, &self.ctx),
            };
            match found {
                Ok(results) => {
                    for r in results {
                        if out.len() < k && !out.iter().any(|o| o.url == r.url) {
                            out.push(r);
                        }
                    }
                }
                Err(e) if e.is_fatal() => return Err(e),
                Err(e) => self.warn(Stage::AnswerQuestion, format!("search {q:?} failed: {e}")),
            }
        }
        Ok(out)
    }

    fn answer_question(&mut self, question: &str) -> Result<QaPair> {
        self.log.log(Stage::AnswerQuestion, "start", Some(question));
        let queries = self.queries_for(question)?;
        let results = self.retrieve(&queries)?;
        let unanswered = QaPair {
            question: question.to_owned(),
            answer: NO_ANSWER.to_owned(),
            sources: Vec::new(),
        };
        if results.is_empty() {
            self.log.log(Stage::AnswerQuestion, "complete", Some(NO_ANSWER));
            return Ok(unanswered);
        }
        let per_result = (self.config().max_result_chars / results.len().max(1)).max(1);
        let rendered: Vec<String> = results
            .iter()
            .enumerate()
            .map(|(i, r)| format!("## Result {}\n{}", i + 1, render_result(r, per_result)))
            .collect();
        let rendered = rendered.join("\n\n");
        let template = self.templates().get(TemplateName::AnswerQuestion);
        let record = super::record_for(
            &self.gateway,
            &self.report,
            &format!("{}{question}{rendered}", template.body),
        )?;
        let bindings: BTreeMap<&str, Binding> = [
            ("Record", Binding::Text(record)),
            ("Question", Binding::Literal(question.to_owned())),
            ("Search_Results", Binding::Text(rendered)),
        ]
        .into_iter()
        .collect();
        let content = template.fill(&bindings)?;
        let answer = self
            .gateway
            .complete(TemplateName::AnswerQuestion, content, self.report.registry())?;
        let answer = answer.trim();
        if answer.is_empty() || classify_none(answer) != NoneDetection::Content {
            self.log.log(Stage::AnswerQuestion, "complete", Some(NO_ANSWER));
            return Ok(unanswered);
        }
        let answer = super::strip_unknown_refs(answer, self.report.registry());
        self.log.log(Stage::AnswerQuestion, "complete", Some(&answer));
        Ok(QaPair {
            question: question.to_owned(),
            answer,
            sources: results.into_iter().map(|r| r.url).collect(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn questions_from_numbered_list() {
        let text = "Here you go:\n1. Who said it?\n2) When?\n- Where was it?\n1. Who said it?\n";
        assert_eq!(parse_questions(text, 10), ["Who said it?", "When?", "Where was it?"]);
        assert_eq!(parse_questions(text, 2).len(), 2);
    }

    #[test]
    fn questions_without_numbering() {
        assert_eq!(parse_questions("Who?\nnot a question\nWhy?", 10), ["Who?", "Why?"]);
        assert!(parse_questions("", 10).is_empty());
    }
}
