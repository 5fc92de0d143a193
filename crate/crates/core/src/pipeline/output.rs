//! On-disk layout of one fact-check:
//! `report.md`, `assets/`, `outcome.json`, and `qa.json` in question-answering mode.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FactCheckOutcome, QaPair, RunCounters};
use crate::error::{Error, Result};
use crate::report::Report;

pub const REPORT_FILE: &str = "report.md";
pub const OUTCOME_FILE: &str = "outcome.json";
pub const QA_FILE: &str = "qa.json";
pub const RUN_LOG_FILE: &str = "runlog.jsonl";
pub const ASSET_DIR: &str = "assets";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeSummary {
    pub claim_id: String,
    /// `None` when the fact-check failed.
    pub verdict: Option<String>,
    pub iterations: usize,
    pub counters: RunCounters,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Serialize)]
struct QaFile<'a> {
    claim_id: &'a str,
    verdict: &'a str,
    qa_pairs: &'a [QaPair],
}

fn write_report(dir: &Path, report: &Report) -> Result<()> {
    fs::create_dir_all(dir)?;
    let (markdown, _) = report.render_markdown(&dir.join(ASSET_DIR))?;
    fs::write(dir.join(REPORT_FILE), markdown)?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Writes a completed fact-check and returns its summary.
pub fn write_outcome(dir: &Path, claim_id: &str, outcome: &FactCheckOutcome) -> Result<OutcomeSummary> {
    write_report(dir, &outcome.report)?;
    let summary = OutcomeSummary {
        claim_id: claim_id.to_owned(),
        verdict: Some(outcome.verdict.label.clone()),
        iterations: outcome.iterations_used,
        counters: outcome.counters.clone(),
        failure: None,
    };
    write_json(&dir.join(OUTCOME_FILE), &summary)?;
    if let Some(qa) = &outcome.qa_pairs {
        write_json(
            &dir.join(QA_FILE),
            &QaFile {
                claim_id,
                verdict: &outcome.verdict.label,
                qa_pairs: qa,
            },
        )?;
    }
    Ok(summary)
}

/// Writes whatever a failed fact-check left behind. The partial report is
/// rendered when the error carries one.
pub fn write_failure(dir: &Path, claim_id: &str, error: &Error) -> Result<OutcomeSummary> {
    fs::create_dir_all(dir)?;
    let iterations = match error {
        Error::PipelineFailed { report, .. } => {
            write_report(dir, report)?;
            report.iteration
        }
        _ => 0,
    };
    let summary = OutcomeSummary {
        claim_id: claim_id.to_owned(),
        verdict: None,
        iterations,
        counters: RunCounters::default(),
        failure: Some(error.to_string()),
    };
    write_json(&dir.join(OUTCOME_FILE), &summary)?;
    Ok(summary)
}
