use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metrics::{accuracy, mean_std, micro_f1, verite_pairwise_scored, ConfusionMatrix, VeritePairwise};
use super::{BenchmarkInstance, Dataset};
use crate::error::{Error, Result};
use crate::pipeline::{write_failure, write_outcome, FactChecker, RunCounters, RunLog, RUN_LOG_FILE};
use crate::taxonomy::Benchmark;
use crate::tools::KnowledgeBase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subset {
    pub size: usize,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub runs: usize,
    pub workers: usize,
    pub subset: Option<Subset>,
    /// Where `metrics.json` and per-claim directories go; nothing is written when unset.
    pub out_dir: Option<PathBuf>,
    pub kb: Option<Arc<KnowledgeBase>>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            runs: 1,
            workers: 4,
            subset: None,
            out_dir: None,
            kb: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClaimRecord {
    pub id: String,
    pub gold: String,
    pub predicted: Option<String>,
    /// Set when the fact-check did not complete; such claims score as wrong.
    pub failure: Option<String>,
    pub iterations: usize,
    pub counters: RunCounters,
}

impl ClaimRecord {
    pub fn correct(&self) -> bool {
        self.predicted.as_deref() == Some(self.gold.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub benchmark: Benchmark,
    pub n: usize,
    pub runs: usize,
    pub per_run: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    /// Last run.
    pub accuracy: f64,
    /// Last run; failed claims count as wrong.
    pub micro_f1: f64,
    /// Last run.
    pub confusion: ConfusionMatrix,
    pub verite_pairwise: Option<VeritePairwise>,
    pub failures: usize,
    pub config_digest: String,
    pub totals: RunCounters,
    pub instance_ids: Vec<String>,
    /// Last run, in instance order.
    pub records: Vec<ClaimRecord>,
}

/// Sorted instance indices chosen by a seeded partial Fisher-Yates shuffle.
/// Draws are taken over `u64` ranges so the choice is the same on every platform.
pub fn select_subset(n: usize, subset: Option<Subset>) -> Vec<usize> {
    let Some(Subset { size, seed }) = subset else {
        return (0..n).collect();
    };
    let size = size.min(n);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..size {
        let j = rng.random_range(i as u64..n as u64) as usize;
        idx.swap(i, j);
    }
    let mut chosen = idx[..size].to_vec();
    chosen.sort_unstable();
    chosen
}

fn add_counters(total: &mut RunCounters, c: &RunCounters) {
    total.llm.calls += c.llm.calls;
    total.llm.prompt_tokens += c.llm.prompt_tokens;
    total.llm.completion_tokens += c.llm.completion_tokens;
    total.actions += c.actions;
    total.evidence_blocks += c.evidence_blocks;
    for (k, v) in &c.tool_calls {
        *total.tool_calls.entry(k.clone()).or_default() += v;
    }
}

fn dir_name(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn check_one(
    checker: &FactChecker,
    inst: &BenchmarkInstance,
    kb: Option<Arc<KnowledgeBase>>,
    dir: Option<&Path>,
) -> ClaimRecord {
    let mut record = ClaimRecord {
        id: inst.id.clone(),
        gold: inst.gold.clone(),
        predicted: None,
        failure: None,
        iterations: 0,
        counters: RunCounters::default(),
    };
    let log = match dir {
        Some(d) => fs::create_dir_all(d)
            .map_err(Error::from)
            .and_then(|_| RunLog::to_file(&d.join(RUN_LOG_FILE))),
        None => Ok(RunLog::in_memory()),
    };
    let log = match log {
        Ok(l) => l,
        Err(e) => {
            record.failure = Some(format!("io: {e}"));
            return record;
        }
    };
    let result = inst
        .registry()
        .and_then(|registry| checker.run(inst.claim.clone(), registry, kb, &log));
    match result {
        Ok(outcome) => {
            record.predicted = Some(outcome.verdict.label.clone());
            record.iterations = outcome.iterations_used;
            record.counters = outcome.counters.clone();
            if let Some(d) = dir {
                if let Err(e) = write_outcome(d, &inst.id, &outcome) {
                    tracing::warn!("writing outcome for {}: {e}", inst.id);
                }
            }
        }
        Err(e) => {
            let code = match &e {
                Error::PipelineFailed { .. } => "pipeline_failed",
                _ => "instance_error",
            };
            record.failure = Some(format!("{code}: {e}"));
            if let Some(d) = dir {
                if let Err(w) = write_failure(d, &inst.id, &e) {
                    tracing::warn!("writing failure for {}: {w}", inst.id);
                }
            }
        }
    }
    record
}

/// Runs every selected instance `runs` times. Per-claim failures are recorded
/// and scored as wrong; only setup and output errors abort the sweep.
pub fn run_benchmark(checker: &FactChecker, dataset: &Dataset, opts: &RunOptions) -> Result<MetricsReport> {
    if opts.runs == 0 {
        return Err(Error::Config("runs must be at least 1".into()));
    }
    let chosen = select_subset(dataset.len(), opts.subset);
    if chosen.is_empty() {
        return Err(Error::Config("no instances selected".into()));
    }
    let instances: Vec<&BenchmarkInstance> = chosen.iter().map(|&i| &dataset.instances[i]).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;

    let mut per_run = Vec::with_capacity(opts.runs);
    let mut totals = RunCounters::default();
    let mut last: Vec<ClaimRecord> = Vec::new();
    for run in 1..=opts.runs {
        let run_dir = opts.out_dir.as_ref().map(|d| d.join(format!("run{run}")));
        let records: Vec<ClaimRecord> = pool.install(|| {
            instances
                .par_iter()
                .map(|inst| {
                    let dir = run_dir.as_ref().map(|d| d.join(dir_name(&inst.id)));
                    check_one(checker, inst, opts.kb.clone(), dir.as_deref())
                })
                .collect()
        });
        let correct = records.iter().filter(|r| r.correct()).count();
        let acc = correct as f64 / records.len() as f64;
        tracing::info!(run, accuracy = acc, "run complete");
        per_run.push(acc);
        for r in &records {
            add_counters(&mut totals, &r.counters);
        }
        if let Some(d) = &run_dir {
            fs::create_dir_all(d)?;
            let mut f = fs::File::create(d.join("predictions.jsonl"))?;
            for r in &records {
                writeln!(f, "{}", serde_json::to_string(r)?)?;
            }
        }
        last = records;
    }

    let taxonomy = &checker.config.taxonomy;
    let labels: Vec<String> = taxonomy.labels.iter().map(|l| l.id.clone()).collect();
    let preds: Vec<Option<String>> = last.iter().map(|r| r.predicted.clone()).collect();
    let golds: Vec<&str> = last.iter().map(|r| r.gold.as_str()).collect();
    let confusion = ConfusionMatrix::build(&labels, &preds, &golds)?;
    let scored: Vec<String> = preds
        .iter()
        .map(|p| p.clone().unwrap_or_else(|| "<failed>".into()))
        .collect();
    let (mean, std) = mean_std(&per_run);
    let report = MetricsReport {
        benchmark: dataset.benchmark,
        n: last.len(),
        runs: opts.runs,
        accuracy: accuracy(&scored, &golds)?,
        micro_f1: micro_f1(&scored, &golds)?,
        per_run,
        mean,
        std,
        confusion,
        verite_pairwise: match dataset.benchmark {
            Benchmark::Verite => Some(verite_pairwise_scored(&preds, &golds)?),
            _ => None,
        },
        failures: last.iter().filter(|r| r.failure.is_some()).count(),
        config_digest: hex::encode(&Sha256::digest(serde_json::to_vec(&checker.config)?)[..8]),
        totals,
        instance_ids: last.iter().map(|r| r.id.clone()).collect(),
        records: last,
    };
    if let Some(d) = &opts.out_dir {
        fs::create_dir_all(d)?;
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        fs::write(d.join("metrics.json"), text)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_is_seeded_and_sorted() {
        let a = select_subset(100, Some(Subset { size: 10, seed: 7 }));
        assert_eq!(a, select_subset(100, Some(Subset { size: 10, seed: 7 })));
        assert_ne!(a, select_subset(100, Some(Subset { size: 10, seed: 8 })));
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(select_subset(3, Some(Subset { size: 10, seed: 1 })), [0, 1, 2]);
        assert_eq!(select_subset(3, None), [0, 1, 2]);
    }
}
