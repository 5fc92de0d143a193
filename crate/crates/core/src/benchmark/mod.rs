//! Benchmark datasets, metrics and the evaluation runner.
//!
//! Expected files, given either directly or as the directory containing them:
//!
//! | benchmark   | file            | format |
//! |-------------|-----------------|--------|
//! | averitec    | `dev.json`      | JSON array of `{claim, label, claim_date?, speaker?, original_claim_url?}`; dates are `d-m-Y` |
//! | mocheg      | `Corpus2.csv`   | CSV with `claim_id`, `Claim`, `cleaned_truthfulness`, `ruling_outline` columns; one row per evidence item |
//! | verite      | `VERITE.csv`    | CSV with `caption`, `image_path` (relative to the file), `label` columns |
//! | claimreview | `claims.json`   | JSON array of `{id?, text, label, claimant?, date?, image?}`; `label` may be a raw publisher rating |
//!
//! MOCHEG keeps claims with a non-empty ruling. A `mocheg_ids.txt` file
//! (one claim id per line) next to the CSV overrides that filter.

mod labels;
mod loaders;
pub mod metrics;
mod runner;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::claim::{Claim, MediaId, MediaRegistry};
use crate::error::{Error, Result};
use crate::taxonomy::Benchmark;

pub use labels::{map_claimreview_label, MappedLabel, RatingRules};
pub use loaders::{default_file_name, load_dataset, load_dataset_with, LoadOptions};
pub use metrics::{
    accuracy, mean_std, micro_f1, verite_pairwise, verite_pairwise_scored, ConfusionMatrix, VeritePairwise,
};
pub use runner::{run_benchmark, select_subset, ClaimRecord, MetricsReport, RunOptions, Subset};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchmarkInstance {
    pub id: String,
    /// Image segments refer to `images` in order: the i-th image is `<image:i+1>`.
    pub claim: Claim,
    pub gold: String,
    pub meta: BTreeMap<String, String>,
    pub images: Vec<PathBuf>,
}

impl BenchmarkInstance {
    /// A fresh registry holding the claim images under the ids the claim uses.
    pub fn registry(&self) -> Result<Arc<MediaRegistry>> {
        let registry = MediaRegistry::new();
        for (i, path) in self.images.iter().enumerate() {
            let bytes = std::fs::read(path)?;
            let media = registry.register_image(&bytes, None)?;
            if media.id != MediaId(i as u32 + 1) {
                return Err(Error::InvalidClaim(format!(
                    "instance {}: image {} duplicates an earlier image",
                    self.id,
                    path.display()
                )));
            }
        }
        Ok(Arc::new(registry))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRow {
    /// 1-based record number in the source file.
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub benchmark: Benchmark,
    pub instances: Vec<BenchmarkInstance>,
    pub skipped: Vec<SkippedRow>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Gold counts in taxonomy order.
    pub fn distribution(&self) -> Vec<(String, usize)> {
        self.benchmark
            .taxonomy()
            .labels
            .iter()
            .map(|l| (l.id.clone(), self.instances.iter().filter(|i| i.gold == l.id).count()))
            .collect()
    }

    /// Gold counts for the labels named, in that order.
    pub fn counts_of(&self, labels: &[&str]) -> Vec<usize> {
        labels
            .iter()
            .map(|l| self.instances.iter().filter(|i| i.gold == *l).count())
            .collect()
    }
}
