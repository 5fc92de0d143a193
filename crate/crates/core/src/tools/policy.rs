//! URL exclusion lists. Matching is a case-insensitive substring test on the
//! full URL, so `x.com` also removes e.g. `fox.com`; that is the contract.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const DEFAULT_EXCLUDED: &str = include_str!("../../data/excluded_domains.txt");
pub const DEFAULT_UNSUPPORTED: &str = include_str!("../../data/unsupported_domains.txt");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainPolicy {
    pub excluded_factcheckers: Vec<String>,
    pub unsupported: Vec<String>,
    #[serde(skip)]
    lowered: Vec<String>,
}

/// One entry per non-empty line; `#` starts a comment.
pub fn parse_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect()
}

impl Default for DomainPolicy {
    fn default() -> Self {
        Self::new(parse_list(DEFAULT_EXCLUDED), parse_list(DEFAULT_UNSUPPORTED))
    }
}

impl DomainPolicy {
    pub fn new(excluded_factcheckers: Vec<String>, unsupported: Vec<String>) -> Self {
        let lowered = excluded_factcheckers
            .iter()
            .chain(unsupported.iter())
            .map(|s| s.to_lowercase())
            .collect();
        Self {
            excluded_factcheckers,
            unsupported,
            lowered,
        }
    }

    /// No filtering at all.
    pub fn permissive() -> Self {
        Self::new(Vec::new(), Vec::new())
    }

    /// One substring per line; blank lines and `#` comments are skipped.
    pub fn from_files(excluded: &Path, unsupported: &Path) -> Result<Self> {
        Ok(Self::new(
            parse_list(&std::fs::read_to_string(excluded)?),
            parse_list(&std::fs::read_to_string(unsupported)?),
        ))
    }

    pub fn blocks(&self, url: &str) -> bool {
        let url = url.to_lowercase();
        self.lowered.iter().any(|p| url.contains(p.as_str()))
    }

    pub fn allows(&self, url: &str) -> bool {
        !self.blocks(url)
    }
}

/// Order-preserving removal of every URL the policy blocks.
pub fn filter_urls<S: AsRef<str>>(urls: Vec<S>, policy: &DomainPolicy) -> Vec<S> {
    urls.into_iter().filter(|u| policy.allows(u.as_ref())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_lists_are_complete() {
        let p = DomainPolicy::default();
        assert_eq!(p.excluded_factcheckers.len(), 19);
        assert_eq!(p.unsupported.len(), 12);
        assert_eq!(p.excluded_factcheckers[0], "snopes.com");
        assert_eq!(p.unsupported.last().unwrap(), "irs.gov");
    }

    #[test]
    fn filtering() {
        let p = DomainPolicy::default();
        assert!(filter_urls(vec!["https://www.snopes.com/fact-check/x"], &p).is_empty());
        assert!(filter_urls(vec!["https://x.com/post/1"], &p).is_empty());
        assert_eq!(
            filter_urls(vec!["https://example.org/a"], &p),
            vec!["https://example.org/a"]
        );
        assert!(p.blocks("https://APNEWS.com/apfactcheck/item"));
        assert!(p.allows("https://apnews.com/article/item"));
        assert!(p.allows("https://www.reuters.com/world/"));
    }
}
