//! Multimodal claim verification: a planning/retrieval/judgement loop over
//! an incrementally built fact-checking report, with record/replay support
//! and benchmark evaluation.

pub mod actions;
pub mod benchmark;
pub mod claim;
pub mod config;
pub mod error;
pub mod llm;
pub mod net;
pub mod pipeline;
pub mod replay;
pub mod report;
pub mod summarize;
pub mod taxonomy;
pub mod testing;
pub mod tools;

pub use claim::{Claim, ContentHash, MediaId, MediaRef, MediaRegistry, Segment, Verdict};
pub use error::{Error, Result};
pub use report::{EvidenceBlock, Report, ReportBlock, TokenEstimator};
pub use taxonomy::{Benchmark, Label, LabelTaxonomy};
