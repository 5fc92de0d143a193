//! Prompt templates with `[Placeholder]` markers.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::claim::split_image_refs;
use crate::error::{Error, Result};
use crate::llm::ChatContent;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateName {
    Plan,
    Summarize,
    Develop,
    Judge,
    Justify,
    PoseQuestions,
    AnswerQuestion,
}

impl TemplateName {
    pub const ALL: [TemplateName; 7] = [
        TemplateName::Plan,
        TemplateName::Summarize,
        TemplateName::Develop,
        TemplateName::Judge,
        TemplateName::Justify,
        TemplateName::PoseQuestions,
        TemplateName::AnswerQuestion,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateName::Plan => "plan.md",
            TemplateName::Summarize => "summarize.md",
            TemplateName::Develop => "develop.md",
            TemplateName::Judge => "judge.md",
            TemplateName::Justify => "justify.md",
            TemplateName::PoseQuestions => "pose_questions.md",
            TemplateName::AnswerQuestion => "answer_question.md",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateName::Plan => "plan",
            TemplateName::Summarize => "summarize",
            TemplateName::Develop => "develop",
            TemplateName::Judge => "judge",
            TemplateName::Justify => "justify",
            TemplateName::PoseQuestions => "pose_questions",
            TemplateName::AnswerQuestion => "answer_question",
        }
    }

    pub fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateName::Plan => &["Extra Rules", "Valid Actions", "Examples", "Record"],
            TemplateName::Summarize => &["Examples", "Record", "Search_Result"],
            TemplateName::Develop | TemplateName::Justify | TemplateName::PoseQuestions => &["Record"],
            TemplateName::Judge => &["Extra Rules", "Decision Options", "Record"],
            TemplateName::AnswerQuestion => &["Record", "Question", "Search_Results"],
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            TemplateName::Plan => include_str!("../../templates/plan.md"),
            TemplateName::Summarize => include_str!("../../templates/summarize.md"),
            TemplateName::Develop => include_str!("../../templates/develop.md"),
            TemplateName::Judge => include_str!("../../templates/judge.md"),
            TemplateName::Justify => include_str!("../../templates/justify.md"),
            TemplateName::PoseQuestions => include_str!("../../templates/pose_questions.md"),
            TemplateName::AnswerQuestion => include_str!("../../templates/answer_question.md"),
        }
    }
}

impl fmt::Display for TemplateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn placeholder_regex() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\[([A-Z][A-Za-z_ ]*)\]").expect("static regex"))
}

/// Placeholder names that occur in `text`, in order of appearance.
pub fn scan_placeholders(text: &str) -> Vec<String> {
    placeholder_regex()
        .captures_iter(text)
        .map(|c| c[1].to_owned())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Binding {
    /// Text whose `<image:k>` references become image segments.
    Text(String),
    /// Text inserted verbatim, references included (e.g. in-context examples).
    Literal(String),
    Content(ChatContent),
}

impl From<&str> for Binding {
    fn from(s: &str) -> Self {
        Binding::Text(s.to_owned())
    }
}

impl From<String> for Binding {
    fn from(s: String) -> Self {
        Binding::Text(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub name: TemplateName,
    pub body: String,
    pub required: BTreeSet<String>,
}

impl PromptTemplate {
    pub fn new(name: TemplateName, body: impl Into<String>) -> Result<Self> {
        let body = body.into();
        let present: BTreeSet<String> = scan_placeholders(&body).into_iter().collect();
        let required: BTreeSet<String> = name.required_placeholders().iter().map(|s| s.to_string()).collect();
        if let Some(missing) = required.iter().find(|r| !present.contains(*r)) {
            return Err(Error::InvalidTemplate {
                name: name.to_string(),
                reason: format!("required placeholder [{missing}] does not occur in the body"),
            });
        }
        Ok(Self { name, body, required })
    }

    pub fn builtin(name: TemplateName) -> Self {
        Self::new(name, name.builtin()).expect("shipped templates are valid")
    }

    /// Substitutes every bound `[X]` marker in a single pass over the body.
    /// Unbound markers that are not required are left untouched.
    pub fn fill(&self, bindings: &BTreeMap<&str, Binding>) -> Result<ChatContent> {
        if let Some(missing) = self.required.iter().find(|r| !bindings.contains_key(r.as_str())) {
            return Err(Error::MissingPlaceholder(missing.clone()));
        }
        let mut content = ChatContent::default();
        let mut last = 0;
        for cap in placeholder_regex().captures_iter(&self.body) {
            let whole = cap.get(0).expect("group 0");
            let Some(binding) = bindings.get(&cap[1]) else {
                continue;
            };
            content.push_text(&self.body[last..whole.start()]);
            match binding {
                Binding::Text(text) => {
                    for seg in split_image_refs(text) {
                        content.push_segment(seg);
                    }
                }
                Binding::Literal(text) => content.push_text(text),
                Binding::Content(inner) => content.extend(inner.clone()),
            }
            last = whole.end();
        }
        content.push_text(&self.body[last..]);
        Ok(content)
    }
}

/// Free-standing form of [`PromptTemplate::fill`].
pub fn fill_template(template: &PromptTemplate, bindings: &BTreeMap<&str, Binding>) -> Result<ChatContent> {
    template.fill(bindings)
}

/// All prompt templates plus the in-context example blocks.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateName, PromptTemplate>,
    pub plan_examples: String,
    pub summarize_examples: String,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            templates: TemplateName::ALL
                .iter()
                .map(|n| (*n, PromptTemplate::builtin(*n)))
                .collect(),
            plan_examples: include_str!("../../templates/plan_examples.md").to_owned(),
            summarize_examples: include_str!("../../templates/summarize_examples.md").to_owned(),
        }
    }
}

impl TemplateSet {
    /// Shipped templates, overridden by any same-named file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut set = Self::default();
        for name in TemplateName::ALL {
            let path = dir.join(name.file_name());
            if path.exists() {
                let body = std::fs::read_to_string(&path)?;
                set.templates.insert(name, PromptTemplate::new(name, body)?);
            }
        }
        for (file, slot) in [
            ("plan_examples.md", &mut set.plan_examples),
            ("summarize_examples.md", &mut set.summarize_examples),
        ] {
            let path = dir.join(file);
            if path.exists() {
                *slot = std::fs::read_to_string(&path)?;
            }
        }
        Ok(set)
    }

    pub fn get(&self, name: TemplateName) -> &PromptTemplate {
        &self.templates[&name]
    }
}
