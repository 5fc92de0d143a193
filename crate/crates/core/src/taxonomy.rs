//! Benchmark label sets and the per-benchmark prompt rules.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub id: String,
    pub display_name: String,
    pub definition: String,
    /// Extra surface forms accepted when parsing model output and dataset files.
    #[serde(default)]
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelTaxonomy {
    pub name: String,
    pub labels: Vec<Label>,
    pub nei_label: Option<String>,
}

impl LabelTaxonomy {
    pub fn new(name: impl Into<String>, labels: Vec<Label>, nei_label: Option<&str>) -> Result<Self> {
        let name = name.into();
        if labels.is_empty() {
            return Err(Error::InvalidTaxonomy(format!("{name}: no labels")));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].iter().any(|o| o.id == l.id) {
                return Err(Error::InvalidTaxonomy(format!("{name}: duplicate label id {}", l.id)));
            }
        }
        if let Some(nei) = nei_label {
            if !labels.iter().any(|l| l.id == nei) {
                return Err(Error::InvalidTaxonomy(format!(
                    "{name}: NEI label {nei} is not a member"
                )));
            }
        }
        Ok(Self {
            name,
            labels,
            nei_label: nei_label.map(str::to_owned),
        })
    }

    pub fn get(&self, id: &str) -> Option<&Label> {
        self.labels.iter().find(|l| l.id == id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.get(id).is_some()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.labels.iter().map(|l| l.id.as_str()).collect()
    }

    pub fn is_nei(&self, id: &str) -> bool {
        self.nei_label.as_deref() == Some(id)
    }

    /// Case-insensitive lookup by id, display name or alias.
    pub fn lookup(&self, surface: &str) -> Option<&Label> {
        let needle = surface.trim();
        self.labels.iter().find(|l| {
            l.id.eq_ignore_ascii_case(needle)
                || l.display_name.eq_ignore_ascii_case(needle)
                || l.aliases.iter().any(|a| a.eq_ignore_ascii_case(needle))
        })
    }

    /// The `[Decision Options]` block of the judge prompt.
    pub fn decision_options(&self) -> String {
        self.labels
            .iter()
            .map(|l| format!("* `{}`: {}", l.display_name, l.definition))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

fn label(id: &str, display: &str, definition: &str, aliases: &[&str]) -> Label {
    Label {
        id: id.into(),
        display_name: display.into(),
        definition: definition.into(),
        aliases: aliases.iter().map(|s| s.to_string()).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Benchmark {
    Averitec,
    Mocheg,
    Verite,
    #[serde(alias = "claimreview2024+", alias = "crplus")]
    Claimreview,
}

impl Benchmark {
    pub const ALL: [Benchmark; 4] = [
        Benchmark::Averitec,
        Benchmark::Mocheg,
        Benchmark::Verite,
        Benchmark::Claimreview,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Benchmark::Averitec => "averitec",
            Benchmark::Mocheg => "mocheg",
            Benchmark::Verite => "verite",
            Benchmark::Claimreview => "claimreview",
        }
    }

    pub fn taxonomy(self) -> LabelTaxonomy {
        let (labels, nei) = match self {
            Benchmark::Averitec => (
                vec![
                    label("supported", "Supported", "The knowledge from the fact-check supports or at least strongly implies the Claim. Mere plausibility is not enough for this decision.", &[]),
                    label("refuted", "Refuted", "The knowledge from the fact-check explicitly and clearly refutes at least substantial parts if not even the whole Claim.", &[]),
                    label("conflicting", "Conflicting Evidence/Cherrypicking", "The Claim has both supporting and refuting evidence from multiple sources, or the Claim is technically true but misleads by excluding important context.", &["Conflicting Evidence", "Cherrypicking", "C/CP", "conflicting evidence/cherry-picking"]),
                    label("nei", "Not Enough Evidence", "The fact-check does not contain sufficient information to come to a conclusion. In particular, there is substantial lack of both supporting and refuting evidence.", &["NEI", "Not Enough Information", "not enough info"]),
                ],
                Some("nei"),
            ),
            Benchmark::Mocheg => (
                vec![
                    label("supported", "Supported", "The Claim is accurate based on the evidence.", &[]),
                    label("refuted", "Refuted", "The evidence contradicts the Claim.", &[]),
                    label("nei", "NEI", "The Claim does not have enough information to be verified.", &["Not Enough Information", "Not Enough Evidence", "not enough info"]),
                ],
                Some("nei"),
            ),
            Benchmark::Verite => (
                vec![
                    label("true", "True", "The image and the caption belong together: the caption accurately describes the image and its context.", &[]),
                    label("ooc", "OOC", "Out-of-context: the image is authentic but is paired with a caption describing a different, unrelated event, place or time.", &["out-of-context", "out of context"]),
                    label("miscaptioned", "Miscaptioned", "The image is authentic but the caption has been altered so that it misrepresents what the image shows.", &["mis-captioned", "miscaption"]),
                ],
                None,
            ),
            Benchmark::Claimreview => (
                vec![
                    label("refuted", "Refuted", "A claim is considered refuted when the evidence contradicts the claim.", &[]),
                    label("supported", "Supported", "The claim is accurate based on evidence.", &[]),
                    label("misleading", "Misleading", "The claim is misleading or requires additional context.", &["missing context"]),
                    label("nei", "NEI", "The claim does not have enough information to be verified.", &["Not Enough Information", "Not Enough Evidence", "not enough info"]),
                ],
                Some("nei"),
            ),
        };
        LabelTaxonomy::new(self.name(), labels, nei).expect("built-in taxonomy is valid")
    }

    /// Benchmark-specific `[Extra Rules]` for the plan prompt.
    pub fn plan_rules(self) -> &'static str {
        match self {
            Benchmark::Verite => include_str!("../data/extra_rules/verite_plan.md"),
            _ => "",
        }
    }

    /// Benchmark-specific `[Extra Rules]` for the judge prompt.
    pub fn judge_rules(self) -> &'static str {
        match self {
            Benchmark::Averitec => include_str!("../data/extra_rules/averitec_judge.md"),
            Benchmark::Verite => include_str!("../data/extra_rules/verite_judge.md"),
            Benchmark::Claimreview => include_str!("../data/extra_rules/claimreview_judge.md"),
            Benchmark::Mocheg => "",
        }
    }
}

impl fmt::Display for Benchmark {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "averitec" => Ok(Benchmark::Averitec),
            "mocheg" => Ok(Benchmark::Mocheg),
            "verite" => Ok(Benchmark::Verite),
            "claimreview" | "claimreview2024+" | "claimreview2024" | "crplus" | "cr+" => Ok(Benchmark::Claimreview),
            other => Err(Error::Config(format!("unknown benchmark {other:?}"))),
        }
    }
}
