//! Prompt templating, the chat-completion gateway and output extraction.

mod extract;
mod openai;
mod template;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::claim::{MediaId, MediaRegistry, Segment};
use crate::error::{Error, Result};
use crate::net::HttpFailure;
use crate::replay::{Cassette, InteractionKind, Payload};
use crate::report::TokenEstimator;

pub use extract::{classify_none, detect_none, extract_choice, extract_code_block, CodeBlock, NoneDetection};
pub use openai::OpenAiChat;
pub use template::{fill_template, scan_placeholders, Binding, PromptTemplate, TemplateName, TemplateSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub endpoint: String,
    pub model_id: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_context: usize,
    pub max_output: usize,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model_id: "gpt-4o-2024-08-06".into(),
            temperature: 0.01,
            top_p: 0.9,
            max_context: 128_000,
            max_output: 2_048,
            api_key: None,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(Error::Config(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p {} outside (0, 1]", self.top_p)));
        }
        if self.max_output >= self.max_context {
            return Err(Error::Config("max_output must be smaller than max_context".into()));
        }
        Ok(())
    }

    /// Tokens left for the prompt once the output allowance is reserved.
    pub fn prompt_budget(&self) -> usize {
        self.max_context.saturating_sub(self.max_output)
    }
}

/// Interleaved text and image segments; adjacent text is always merged.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatContent {
    segments: Vec<Segment>,
}

impl ChatContent {
    pub fn text(text: impl Into<String>) -> Self {
        let mut c = Self::default();
        c.push_text(&text.into());
        c
    }

    pub fn push_text(&mut self, text: &str) {
        if text.is_empty() {
            return;
        }
        if let Some(Segment::Text(last)) = self.segments.last_mut() {
            last.push_str(text);
        } else {
            self.segments.push(Segment::Text(text.to_owned()));
        }
    }

    pub fn push_image(&mut self, id: MediaId) {
        self.segments.push(Segment::Image(id));
    }

    pub fn push_segment(&mut self, seg: Segment) {
        match seg {
            Segment::Text(t) => self.push_text(&t),
            Segment::Image(id) => self.push_image(id),
        }
    }

    pub fn extend(&mut self, other: ChatContent) {
        for seg in other.segments {
            self.push_segment(seg);
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Image ids in order of appearance, without duplicates.
    pub fn image_ids(&self) -> Vec<MediaId> {
        let mut out = Vec::new();
        for seg in &self.segments {
            if let Segment::Image(id) = seg {
                if !out.contains(id) {
                    out.push(*id);
                }
            }
        }
        out
    }

    /// Flat text with images written as `<image:k>`.
    pub fn to_prompt_text(&self) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Text(t) => out.push_str(t),
                Segment::Image(id) => out.push_str(&id.to_string()),
            }
        }
        out
    }

    /// Drops all image segments, keeping text in order.
    pub fn without_images(&self) -> ChatContent {
        let mut out = ChatContent::default();
        for seg in &self.segments {
            if let Segment::Text(t) = seg {
                out.push_text(t);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub task: TemplateName,
    pub content: ChatContent,
}

/// A chat-completion endpoint. Implementations must not retry; the gateway does.
pub trait ChatBackend: Send + Sync {
    fn complete(
        &self,
        config: &ModelConfig,
        request: &ChatRequest,
        registry: &MediaRegistry,
    ) -> Result<String, HttpFailure>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Waits before each retry; the number of retries is its length.
    pub backoff: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            backoff: vec![Duration::from_secs(1), Duration::from_secs(4), Duration::from_secs(16)],
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self { backoff: Vec::new() }
    }

    /// Same number of retries, no waiting.
    pub fn immediate(retries: usize) -> Self {
        Self {
            backoff: vec![Duration::ZERO; retries],
        }
    }

    /// Runs `call`, retrying transient failures. Returns the attempt count on failure.
    pub fn run<T>(&self, mut call: impl FnMut() -> Result<T, HttpFailure>) -> Result<T, (u32, HttpFailure)> {
        let mut attempts = 0u32;
        loop {
            attempts += 1;
            match call() {
                Ok(v) => return Ok(v),
                Err(e) if e.is_transient() && (attempts as usize) <= self.backoff.len() => {
                    let wait = self.backoff[attempts as usize - 1];
                    tracing::debug!(attempt = attempts, ?wait, error = %e, "retrying");
                    if !wait.is_zero() {
                        std::thread::sleep(wait);
                    }
                }
                Err(e) => return Err((attempts, e)),
            }
        }
    }
}

/// Spaces calls at least `60 / rpm` seconds apart across all threads.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Option<Duration>,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(requests_per_minute: Option<u32>) -> Self {
        Self {
            interval: requests_per_minute
                .filter(|r| *r > 0)
                .map(|r| Duration::from_secs_f64(60.0 / r as f64)),
            next: Mutex::new(None),
        }
    }

    pub fn acquire(&self) {
        let Some(interval) = self.interval else {
            return;
        };
        let wait = {
            let mut next = self.next.lock().expect("rate limiter poisoned");
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + interval);
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

/// Shared entry point for all model calls.
pub struct Gateway {
    backend: Arc<dyn ChatBackend>,
    config: ModelConfig,
    retry: RetryPolicy,
    limiter: Arc<RateLimiter>,
    estimator: TokenEstimator,
    cassette: Option<Arc<Cassette>>,
    usage: Usage,
}

/// Estimated model usage of one gateway (or fork).
#[derive(Debug, Default)]
pub struct Usage {
    calls: AtomicUsize,
    prompt_tokens: AtomicUsize,
    completion_tokens: AtomicUsize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageSnapshot {
    pub calls: usize,
    pub prompt_tokens: usize,
    pub completion_tokens: usize,
}

impl Usage {
    pub fn snapshot(&self) -> UsageSnapshot {
        UsageSnapshot {
            calls: self.calls.load(Ordering::SeqCst),
            prompt_tokens: self.prompt_tokens.load(Ordering::SeqCst),
            completion_tokens: self.completion_tokens.load(Ordering::SeqCst),
        }
    }
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("model", &self.config.model_id)
            .field("cassette", &self.cassette)
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn ChatBackend>, config: ModelConfig) -> Self {
        Self {
            backend,
            config,
            retry: RetryPolicy::default(),
            limiter: Arc::new(RateLimiter::new(None)),
            estimator: TokenEstimator::default(),
            cassette: None,
            usage: Usage::default(),
        }
    }

    /// Same backend, limiter and cassette with fresh usage counters.
    pub fn fork(&self) -> Gateway {
        Gateway {
            backend: self.backend.clone(),
            config: self.config.clone(),
            retry: self.retry.clone(),
            limiter: self.limiter.clone(),
            estimator: self.estimator,
            cassette: self.cassette.clone(),
            usage: Usage::default(),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_rate_limit(mut self, requests_per_minute: Option<u32>) -> Self {
        self.limiter = Arc::new(RateLimiter::new(requests_per_minute));
        self
    }

    pub fn with_estimator(mut self, estimator: TokenEstimator) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn with_cassette(mut self, cassette: Option<Arc<Cassette>>) -> Self {
        self.cassette = cassette;
        self
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn estimator(&self) -> &TokenEstimator {
        &self.estimator
    }

    /// Completions requested so far, replayed ones included.
    pub fn usage(&self) -> UsageSnapshot {
        self.usage.snapshot()
    }

    /// The request identity used for cassette fingerprints.
    pub fn fingerprint_request(&self, request: &ChatRequest, registry: &MediaRegistry) -> Result<Value> {
        let mut parts = Vec::new();
        for seg in request.content.segments() {
            match seg {
                Segment::Text(t) => parts.push(json!({ "text": t })),
                Segment::Image(id) => {
                    let media = registry.resolve(*id)?;
                    parts.push(json!({ "image": id.0, "sha256": media.content_hash.to_hex() }));
                }
            }
        }
        Ok(json!({
            "model": self.config.model_id,
            "temperature": self.config.temperature,
            "top_p": self.config.top_p,
            "max_tokens": self.config.max_output,
            "task": request.task.as_str(),
            "content": parts,
        }))
    }

    pub fn complete(&self, task: TemplateName, content: ChatContent, registry: &MediaRegistry) -> Result<String> {
        let needed = self.estimator.text(&content.to_prompt_text());
        let limit = self.config.prompt_budget();
        if needed > limit {
            return Err(Error::ContextOverflow { needed, limit });
        }
        let request = ChatRequest { task, content };
        self.usage.calls.fetch_add(1, Ordering::SeqCst);
        self.usage.prompt_tokens.fetch_add(needed, Ordering::SeqCst);
        let live = || -> Result<Payload> {
            self.limiter.acquire();
            let text = self
                .retry
                .run(|| self.backend.complete(&self.config, &request, registry))
                .map_err(|(attempts, failure)| match failure {
                    HttpFailure::Denied(url) => Error::NetworkDenied(url),
                    other => Error::EndpointUnavailable {
                        attempts,
                        reason: other.to_string(),
                    },
                })?;
            Ok(Payload::Json(Value::String(text)))
        };
        let payload = match &self.cassette {
            Some(cassette) => {
                let fp_request = self.fingerprint_request(&request, registry)?;
                cassette.intercept(InteractionKind::Llm, &fp_request, live)?
            }
            None => live()?,
        };
        match payload.into_json()? {
            Value::String(s) => {
                self.usage
                    .completion_tokens
                    .fetch_add(self.estimator.text(&s), Ordering::SeqCst);
                Ok(s)
            }
            other => Err(Error::Cassette(format!("LLM response must be a string, found {other}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;

    struct Flaky {
        failures: u32,
        seen: AtomicU32,
        failure: HttpFailure,
    }

    impl ChatBackend for Flaky {
        fn complete(&self, _: &ModelConfig, req: &ChatRequest, _: &MediaRegistry) -> Result<String, HttpFailure> {
            let n = self.seen.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(self.failure.clone())
            } else {
                Ok(format!("ok:{}", req.task))
            }
        }
    }

    fn flaky(failures: u32, failure: HttpFailure) -> Arc<Flaky> {
        Arc::new(Flaky {
            failures,
            seen: AtomicU32::new(0),
            failure,
        })
    }

    #[test]
    fn defaults_match_documented_sampling() {
        let c = ModelConfig::default();
        assert_eq!(c.temperature, 0.01);
        assert_eq!(c.top_p, 0.9);
        c.validate().unwrap();
        assert!(ModelConfig {
            top_p: 0.0,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(ModelConfig { temperature: 2.5, ..c }.validate().is_err());
    }

    #[test]
    fn transient_failures_are_retried() {
        let backend = flaky(3, HttpFailure::Transient("503".into()));
        let gw = Gateway::new(backend.clone(), ModelConfig::default()).with_retry(RetryPolicy::immediate(3));
        let out = gw
            .complete(TemplateName::Judge, ChatContent::text("x"), &MediaRegistry::new())
            .unwrap();
        assert_eq!(out, "ok:judge");
        assert_eq!(backend.seen.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn exhausted_retries_report_endpoint_unavailable() {
        let backend = flaky(10, HttpFailure::Transient("down".into()));
        let gw = Gateway::new(backend.clone(), ModelConfig::default()).with_retry(RetryPolicy::immediate(3));
        let err = gw
            .complete(TemplateName::Plan, ChatContent::text("x"), &MediaRegistry::new())
            .unwrap_err();
        assert!(matches!(err, Error::EndpointUnavailable { attempts: 4, .. }), "{err:?}");
    }

    #[test]
    fn client_errors_are_not_retried() {
        let backend = flaky(10, HttpFailure::Status(401, "bad key".into()));
        let gw = Gateway::new(backend.clone(), ModelConfig::default()).with_retry(RetryPolicy::immediate(3));
        let err = gw
            .complete(TemplateName::Plan, ChatContent::text("x"), &MediaRegistry::new())
            .unwrap_err();
        assert!(matches!(err, Error::EndpointUnavailable { attempts: 1, .. }));
    }

    #[test]
    fn oversized_content_overflows() {
        let backend = flaky(0, HttpFailure::Other(String::new()));
        let config = ModelConfig {
            max_context: 100,
            max_output: 50,
            ..ModelConfig::default()
        };
        let gw = Gateway::new(backend.clone(), config);
        let err = gw
            .complete(
                TemplateName::Plan,
                ChatContent::text("y".repeat(201)),
                &MediaRegistry::new(),
            )
            .unwrap_err();
        assert!(matches!(err, Error::ContextOverflow { needed: 51, limit: 50 }));
        assert_eq!(backend.seen.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn content_merges_adjacent_text() {
        let mut c = ChatContent::text("a");
        c.push_text("b");
        c.push_image(MediaId(2));
        c.push_text("");
        c.push_text("c");
        assert_eq!(c.segments().len(), 3);
        assert_eq!(c.to_prompt_text(), "ab<image:2>c");
        assert_eq!(c.without_images().to_prompt_text(), "abc");
    }

    #[test]
    fn rate_limiter_spaces_calls() {
        let limiter = RateLimiter::new(Some(1200));
        let start = Instant::now();
        for _ in 0..3 {
            limiter.acquire();
        }
        assert!(start.elapsed() >= Duration::from_millis(95));
    }
}
