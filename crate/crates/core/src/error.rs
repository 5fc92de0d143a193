use std::path::PathBuf;

use crate::report::Report;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("payload is not a supported image ({0})")]
    NotAnImage(String),
    #[error("image reference <image:{0}> does not resolve in the media registry")]
    UnknownImageRef(u32),
    #[error("invalid claim: {0}")]
    InvalidClaim(String),
    #[error("invalid taxonomy: {0}")]
    InvalidTaxonomy(String),

    #[error("report is finalized; cannot append {0}")]
    AlreadyFinalized(&'static str),
    #[error("image <image:{0}> cannot be resolved while rendering")]
    UnresolvedImage(u32),
    #[error("token budget {budget} is smaller than the claim block ({needed} tokens)")]
    BudgetTooSmall { budget: usize, needed: usize },

    #[error("missing binding for placeholder [{0}]")]
    MissingPlaceholder(String),
    #[error("template {name}: {reason}")]
    InvalidTemplate { name: String, reason: String },
    #[error("model endpoint unavailable after {attempts} attempt(s): {reason}")]
    EndpointUnavailable { attempts: u32, reason: String },
    #[error("prompt needs ~{needed} tokens but the context window holds {limit}")]
    ContextOverflow { needed: usize, limit: usize },
    #[error("no decision option found in model output")]
    NoChoiceFound,

    #[error("search API unavailable: {0}")]
    SearchUnavailable(String),
    #[error("vision API unavailable: {0}")]
    VisionApiUnavailable(String),
    #[error("geolocation service unavailable: {0}")]
    GeoServiceUnavailable(String),
    #[error("scraping {url} failed: {reason}")]
    ScrapeFailed { url: String, reason: String },
    #[error("embedding endpoint unavailable: {0}")]
    EmbedderUnavailable(String),
    #[error("knowledge base: {0}")]
    KnowledgeBase(String),

    #[error("claim could not be judged: no decision option was extracted and the taxonomy has no NEI label")]
    UnjudgeableClaim,
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("pipeline failed: {source}")]
    PipelineFailed {
        report: Box<Report>,
        #[source]
        source: Box<Error>,
    },

    #[error("dataset not found at {0}")]
    DatasetNotFound(PathBuf),
    #[error("dataset schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("prediction and gold lists differ in length ({preds} vs {golds})")]
    LengthMismatch { preds: usize, golds: usize },
    #[error("unknown label {0:?}")]
    UnknownLabel(String),

    #[error("cassette has no recorded interaction for {kind} request {fingerprint}")]
    MissingInteraction { kind: String, fingerprint: String },
    #[error("cassette: {0}")]
    Cassette(String),
    #[error("network access denied by guard ({0})")]
    NetworkDenied(String),

    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Failures that end a fact-check instead of degrading one tool call.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            Error::EndpointUnavailable { .. }
                | Error::ContextOverflow { .. }
                | Error::MissingInteraction { .. }
                | Error::NetworkDenied(_)
                | Error::Cassette(_)
        )
    }
}
