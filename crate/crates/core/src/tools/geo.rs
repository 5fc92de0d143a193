use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One raw score as returned by a geolocation service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoScore {
    pub code: String,
    #[serde(default)]
    pub name: Option<String>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoEntry {
    pub code: String,
    pub name: String,
    pub probability: f64,
}

/// Non-empty, probabilities in [0, 1], sorted descending (ties by code).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeoDistribution {
    entries: Vec<GeoEntry>,
}

impl GeoDistribution {
    /// Negative and non-finite scores become 0; if the total exceeds 1 every
    /// score is divided by it; then values are clipped to [0, 1], sorted and
    /// truncated to `top_k`.
    pub fn from_scores(scores: Vec<GeoScore>, top_k: usize) -> Result<Self> {
        if scores.is_empty() || top_k == 0 {
            return Err(Error::GeoServiceUnavailable("empty distribution".into()));
        }
        let mut cleaned: Vec<(String, String, f64)> = scores
            .into_iter()
            .map(|s| {
                let v = if s.score.is_finite() { s.score.max(0.0) } else { 0.0 };
                let name = s
                    .name
                    .filter(|n| !n.trim().is_empty())
                    .unwrap_or_else(|| s.code.clone());
                (s.code, name, v)
            })
            .collect();
        let total: f64 = cleaned.iter().map(|e| e.2).sum();
        if total > 1.0 {
            for e in &mut cleaned {
                e.2 /= total;
            }
        }
        let mut entries: Vec<GeoEntry> = cleaned
            .into_iter()
            .map(|(code, name, p)| GeoEntry {
                code,
                name,
                probability: p.clamp(0.0, 1.0),
            })
            .collect();
        entries.sort_by(|a, b| {
            b.probability
                .total_cmp(&a.probability)
                .then_with(|| a.code.cmp(&b.code))
        });
        entries.truncate(top_k);
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[GeoEntry] {
        &self.entries
    }

    pub fn top(&self) -> &GeoEntry {
        &self.entries[0]
    }
}
