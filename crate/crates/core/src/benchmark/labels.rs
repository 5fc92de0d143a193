use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::taxonomy::LabelTaxonomy;

const BUILTIN_RULES: &str = include_str!("../../data/claimreview_ratings.tsv");

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MappedLabel {
    Label(String),
    /// Left for manual review.
    Unmapped(String),
}

/// Publisher rating → label id. Keys are lowercased with whitespace collapsed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RatingRules {
    rules: BTreeMap<String, String>,
}

fn normalize(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

impl Default for RatingRules {
    fn default() -> Self {
        Self::parse(BUILTIN_RULES).expect("built-in rating rules are valid")
    }
}

impl RatingRules {
    /// Tab-separated `rating<TAB>label`; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rules = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (rating, label) = line.split_once('\t').ok_or_else(|| {
                Error::Config(format!(
                    "rating rules line {}: expected two tab-separated fields",
                    n + 1
                ))
            })?;
            rules.insert(normalize(rating), label.trim().to_owned());
        }
        Ok(Self { rules })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Fails when a rule targets a label outside `taxonomy`.
    pub fn check(&self, taxonomy: &LabelTaxonomy) -> Result<()> {
        match self.rules.values().find(|l| !taxonomy.contains(l)) {
            Some(bad) => Err(Error::UnknownLabel(bad.clone())),
            None => Ok(()),
        }
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

pub fn map_claimreview_label(raw: &str, rules: &RatingRules) -> MappedLabel {
    match rules.rules.get(&normalize(raw)) {
        Some(label) => MappedLabel::Label(label.clone()),
        None => MappedLabel::Unmapped(raw.to_owned()),
    }
}
