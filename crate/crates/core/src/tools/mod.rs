//! Evidence retrieval: search, reverse image search, geolocation, scraping
//! and knowledge-base lookup, plus URL and date filtering.
//!
//! Every external call goes through [`Exchange`], which retries transient
//! failures, caches responses for the lifetime of the [`Tools`] value and
//! routes through the cassette when one is attached.

mod geo;
pub mod http;
pub mod kb;
mod policy;

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use chrono::NaiveDate;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::actions::{Action, ActionKind};
use crate::claim::{sniff_image_mime, MediaId, MediaRef, MediaRegistry};
use crate::error::{Error, Result};
use crate::llm::RetryPolicy;
use crate::net::HttpFailure;
use crate::replay::{fingerprint, Cassette, InteractionKind, Payload};

pub use geo::{GeoDistribution, GeoEntry, GeoScore};
pub use kb::{KbDocument, KnowledgeBase};
pub use policy::{filter_urls, parse_list, DomainPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchKind {
    Web,
    Image,
}

/// A ranked hit from a search or reverse-image-search API, before scraping.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub url: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub snippet: String,
    #[serde(default)]
    pub date: Option<String>,
    /// Direct image link for image-search hits.
    #[serde(default)]
    pub image_url: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScrapedPage {
    pub markdown: String,
    #[serde(default)]
    pub title: Option<String>,
    #[serde(default)]
    pub published: Option<String>,
    /// Image URLs discovered outside the markdown body.
    #[serde(default)]
    pub image_urls: Vec<String>,
}

/// A retrieved and scraped source. `content` carries `<image:k>` references
/// where the page showed images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub url: String,
    pub title: String,
    pub content: String,
    pub images: Vec<MediaId>,
    pub published: Option<NaiveDate>,
    pub tool: String,
}

pub trait SearchBackend: Send + Sync {
    fn search(&self, query: &str, kind: SearchKind, limit: usize) -> Result<Vec<SearchHit>, HttpFailure>;
}

pub trait VisionBackend: Send + Sync {
    fn matching_pages(&self, image: &MediaRef, limit: usize) -> Result<Vec<SearchHit>, HttpFailure>;
}

pub trait GeoBackend: Send + Sync {
    fn locate(&self, image: &MediaRef, top_k: usize) -> Result<Vec<GeoScore>, HttpFailure>;
}

pub trait ScrapeBackend: Send + Sync {
    fn scrape(&self, url: &str) -> Result<ScrapedPage, HttpFailure>;
}

pub trait FetchBackend: Send + Sync {
    fn fetch(&self, url: &str) -> Result<Vec<u8>, HttpFailure>;
}

pub trait EmbedBackend: Send + Sync {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, HttpFailure>;
}

/// Parses the date formats seen in search APIs and page metadata.
/// Relative dates ("3 days ago") are treated as unknown.
pub fn parse_date(raw: &str) -> Option<NaiveDate> {
    let s = raw.trim();
    if s.len() >= 10 {
        if let Ok(d) = NaiveDate::parse_from_str(&s[..10], "%Y-%m-%d") {
            return Some(d);
        }
    }
    let cleaned = s.replace(',', "");
    for fmt in ["%b %d %Y", "%B %d %Y", "%d %b %Y", "%d %B %Y", "%Y/%m/%d", "%m/%d/%Y"] {
        if let Ok(d) = NaiveDate::parse_from_str(&cleaned, fmt) {
            return Some(d);
        }
    }
    None
}

/// Keeps results with an unknown date or a date on or before `before`.
pub fn temporal_filter(results: Vec<SearchResult>, before: Option<NaiveDate>) -> Vec<SearchResult> {
    match before {
        None => results,
        Some(cutoff) => results
            .into_iter()
            .filter(|r| r.published.is_none_or(|d| d <= cutoff))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolConfig {
    pub web_results: usize,
    pub image_results: usize,
    pub reverse_results: usize,
    pub kb_results: usize,
    pub geo_top_k: usize,
    /// Hits requested from a search API before filtering.
    pub search_candidates: usize,
    pub max_images_per_page: usize,
    pub max_images_per_run: usize,
    pub temporal_filtering: bool,
    /// Max concurrent scrapes within one batch.
    pub scrape_parallelism: usize,
}

impl Default for ToolConfig {
    fn default() -> Self {
        Self {
            web_results: 3,
            image_results: 3,
            reverse_results: 3,
            kb_results: 5,
            geo_top_k: 5,
            search_candidates: 10,
            max_images_per_page: 32,
            max_images_per_run: 96,
            temporal_filtering: true,
            scrape_parallelism: 3,
        }
    }
}

/// Retry, per-run cache and cassette routing for tool calls.
pub struct Exchange {
    retry: RetryPolicy,
    cassette: Option<Arc<Cassette>>,
    cache: Arc<Mutex<HashMap<String, Payload>>>,
    calls: Mutex<HashMap<InteractionKind, usize>>,
}

impl std::fmt::Debug for Exchange {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Exchange").field("cassette", &self.cassette).finish()
    }
}

impl Exchange {
    pub fn new(retry: RetryPolicy, cassette: Option<Arc<Cassette>>) -> Self {
        Self {
            retry,
            cassette,
            cache: Arc::new(Mutex::new(HashMap::new())),
            calls: Mutex::new(HashMap::new()),
        }
    }

    /// Shares retry policy, cassette and cache; counts calls separately.
    pub fn fork(&self) -> Exchange {
        Exchange {
            retry: self.retry.clone(),
            cassette: self.cassette.clone(),
            cache: self.cache.clone(),
            calls: Mutex::new(HashMap::new()),
        }
    }

    /// Requests issued per interaction kind, cache hits excluded.
    pub fn call_counts(&self) -> HashMap<InteractionKind, usize> {
        self.calls.lock().expect("exchange poisoned").clone()
    }

    pub fn call<F>(
        &self,
        kind: InteractionKind,
        request: &Value,
        live: F,
        unavailable: fn(String) -> Error,
    ) -> Result<Payload>
    where
        F: Fn() -> Result<Payload, HttpFailure>,
    {
        let fp = fingerprint(kind, request);
        if let Some(hit) = self.cache.lock().expect("exchange poisoned").get(&fp) {
            return Ok(hit.clone());
        }
        *self.calls.lock().expect("exchange poisoned").entry(kind).or_default() += 1;
        let guarded = || {
            self.retry.run(&live).map_err(|(attempts, failure)| match failure {
                HttpFailure::Denied(url) => Error::NetworkDenied(url),
                other => unavailable(format!("{other} (after {attempts} attempt(s))")),
            })
        };
        let payload = match &self.cassette {
            Some(c) => c.intercept(kind, request, guarded)?,
            None => guarded()?,
        };
        if matches!(payload, Payload::Json(_)) {
            self.cache
                .lock()
                .expect("exchange poisoned")
                .insert(fp, payload.clone());
        }
        Ok(payload)
    }

    pub fn call_json<T, F>(
        &self,
        kind: InteractionKind,
        request: &Value,
        live: F,
        unavailable: fn(String) -> Error,
    ) -> Result<T>
    where
        T: Serialize + serde::de::DeserializeOwned,
        F: Fn() -> Result<T, HttpFailure>,
    {
        let payload = self.call(
            kind,
            request,
            || {
                let v = live()?;
                serde_json::to_value(v)
                    .map(Payload::Json)
                    .map_err(|e| HttpFailure::Other(e.to_string()))
            },
            unavailable,
        )?;
        Ok(serde_json::from_value(payload.into_json()?)?)
    }
}

/// Per-fact-check state shared by all tool calls of one claim.
#[derive(Debug)]
pub struct ToolContext {
    pub registry: Arc<MediaRegistry>,
    pub before: Option<NaiveDate>,
    pub kb: Option<Arc<KnowledgeBase>>,
    images_registered: AtomicUsize,
    warnings: Mutex<Vec<String>>,
}

impl ToolContext {
    pub fn new(registry: Arc<MediaRegistry>) -> Self {
        Self {
            registry,
            before: None,
            kb: None,
            images_registered: AtomicUsize::new(0),
            warnings: Mutex::new(Vec::new()),
        }
    }

    pub fn with_cutoff(mut self, before: Option<NaiveDate>) -> Self {
        self.before = before;
        self
    }

    pub fn with_kb(mut self, kb: Option<Arc<KnowledgeBase>>) -> Self {
        self.kb = kb;
        self
    }

    pub fn warn(&self, msg: impl Into<String>) {
        let msg = msg.into();
        tracing::warn!("{msg}");
        self.warnings.lock().expect("tool context poisoned").push(msg);
    }

    pub fn take_warnings(&self) -> Vec<String> {
        std::mem::take(&mut *self.warnings.lock().expect("tool context poisoned"))
    }

    pub fn images_registered(&self) -> usize {
        self.images_registered.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ToolOutput {
    Results(Vec<SearchResult>),
    Geo {
        image: MediaId,
        distribution: GeoDistribution,
    },
}

#[derive(Default, Clone)]
pub struct Backends {
    pub search: Option<Arc<dyn SearchBackend>>,
    pub vision: Option<Arc<dyn VisionBackend>>,
    pub geo: Option<Arc<dyn GeoBackend>>,
    pub scrape: Option<Arc<dyn ScrapeBackend>>,
    pub fetch: Option<Arc<dyn FetchBackend>>,
    pub embed: Option<Arc<dyn EmbedBackend>>,
}

pub struct Tools {
    pub config: ToolConfig,
    policy: DomainPolicy,
    backends: Backends,
    exchange: Exchange,
}

impl std::fmt::Debug for Tools {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tools").field("config", &self.config).finish()
    }
}

fn image_link_regex() -> &'static Regex {
    static RE: std::sync::OnceLock<Regex> = std::sync::OnceLock::new();
    RE.get_or_init(|| Regex::new(r#"!\[[^\]]*\]\(\s*<?([^)\s>]+)>?(?:\s+"[^"]*")?\s*\)"#).expect("static regex"))
}

/// Absolute form of `href` relative to `base`; `None` for data URIs and
/// anything that is not http(s).
pub fn resolve_url(base: &str, href: &str) -> Option<String> {
    let href = href.trim();
    if href.starts_with("http://") || href.starts_with("https://") {
        return Some(href.to_owned());
    }
    if href.starts_with("data:") || href.is_empty() {
        return None;
    }
    let (scheme, rest) = base.split_once("://")?;
    if let Some(stripped) = href.strip_prefix("//") {
        return Some(format!("{scheme}://{stripped}"));
    }
    let host_end = rest.find('/').unwrap_or(rest.len());
    let origin = format!("{scheme}://{}", &rest[..host_end]);
    if href.starts_with('/') {
        return Some(format!("{origin}{href}"));
    }
    let path = &rest[host_end..];
    let dir = &path[..path.rfind('/').map_or(0, |i| i + 1)];
    let dir = if dir.is_empty() { "/" } else { dir };
    Some(format!("{origin}{dir}{href}"))
}

struct Fetched {
    hit: SearchHit,
    page: Result<ScrapedPage>,
    /// Downloaded image candidates in document order, already sniffed.
    images: Vec<(String, Vec<u8>)>,
}

impl Tools {
    pub fn new(config: ToolConfig, policy: DomainPolicy, backends: Backends, exchange: Exchange) -> Self {
        Self {
            config,
            policy,
            backends,
            exchange,
        }
    }

    /// Same services and cache with fresh call counters.
    pub fn fork(&self) -> Tools {
        Tools {
            config: self.config.clone(),
            policy: self.policy.clone(),
            backends: self.backends.clone(),
            exchange: self.exchange.fork(),
        }
    }

    pub fn policy(&self) -> &DomainPolicy {
        &self.policy
    }

    pub fn exchange(&self) -> &Exchange {
        &self.exchange
    }

    /// Action kinds backed by a configured service in this context.
    pub fn supported_kinds(&self, ctx: &ToolContext) -> Vec<ActionKind> {
        let b = &self.backends;
        ActionKind::ALL
            .into_iter()
            .filter(|k| match k {
                ActionKind::WebSearch => ctx.kb.is_some() || b.search.is_some(),
                ActionKind::ImageSearch => ctx.kb.is_none() && b.search.is_some(),
                ActionKind::ReverseSearch => ctx.kb.is_none() && b.vision.is_some(),
                ActionKind::Geolocate => b.geo.is_some(),
            })
            .collect()
    }

    pub fn execute(&self, action: &Action, ctx: &ToolContext) -> Result<ToolOutput> {
        match action {
            Action::WebSearch { query } => match &ctx.kb {
                Some(kb) => self
                    .kb_search(kb, query, self.config.kb_results)
                    .map(ToolOutput::Results),
                None => self.web_search(query, ctx).map(ToolOutput::Results),
            },
            Action::ImageSearch { query } => self.image_search(query, ctx).map(ToolOutput::Results),
            Action::ReverseImageSearch { image } => {
                let media = ctx.registry.resolve(*image)?;
                self.reverse_image_search(&media, ctx).map(ToolOutput::Results)
            }
            Action::Geolocate { image } => {
                let media = ctx.registry.resolve(*image)?;
                Ok(ToolOutput::Geo {
                    image: *image,
                    distribution: self.geolocate(&media)?,
                })
            }
        }
    }

    fn cutoff(&self, ctx: &ToolContext) -> Option<NaiveDate> {
        ctx.before.filter(|_| self.config.temporal_filtering)
    }

    fn search_hits(&self, query: &str, kind: SearchKind) -> Result<Vec<SearchHit>> {
        if query.trim().is_empty() {
            return Err(Error::Precondition("search query is empty".into()));
        }
        let backend = self
            .backends
            .search
            .as_ref()
            .ok_or_else(|| Error::SearchUnavailable("no search service configured".into()))?;
        let limit = self.config.search_candidates;
        let ikind = match kind {
            SearchKind::Web => InteractionKind::WebSearch,
            SearchKind::Image => InteractionKind::ImageSearch,
        };
        self.exchange.call_json(
            ikind,
            &json!({ "query": query, "num": limit }),
            || backend.search(query, kind, limit),
            Error::SearchUnavailable,
        )
    }

    pub fn web_search(&self, query: &str, ctx: &ToolContext) -> Result<Vec<SearchResult>> {
        let hits = self.search_hits(query, SearchKind::Web)?;
        Ok(self.collect(hits, self.config.web_results, "web_search", false, ctx))
    }

    pub fn image_search(&self, query: &str, ctx: &ToolContext) -> Result<Vec<SearchResult>> {
        let hits = self.search_hits(query, SearchKind::Image)?;
        Ok(self.collect(hits, self.config.image_results, "image_search", true, ctx))
    }

    pub fn reverse_image_search(&self, image: &MediaRef, ctx: &ToolContext) -> Result<Vec<SearchResult>> {
        let backend = self
            .backends
            .vision
            .as_ref()
            .ok_or_else(|| Error::VisionApiUnavailable("no vision service configured".into()))?;
        let limit = self.config.search_candidates;
        let hits: Vec<SearchHit> = self.exchange.call_json(
            InteractionKind::ReverseImageSearch,
            &json!({ "image": image.content_hash.to_hex(), "num": limit }),
            || backend.matching_pages(image, limit),
            Error::VisionApiUnavailable,
        )?;
        Ok(self.collect(hits, self.config.reverse_results, "reverse_search", false, ctx))
    }

    pub fn geolocate(&self, image: &MediaRef) -> Result<GeoDistribution> {
        let backend = self
            .backends
            .geo
            .as_ref()
            .ok_or_else(|| Error::GeoServiceUnavailable("no geolocation service configured".into()))?;
        let k = self.config.geo_top_k;
        let scores: Vec<GeoScore> = self.exchange.call_json(
            InteractionKind::Geolocate,
            &json!({ "image": image.content_hash.to_hex(), "top_k": k }),
            || backend.locate(image, k),
            Error::GeoServiceUnavailable,
        )?;
        GeoDistribution::from_scores(scores, k)
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let backend = self
            .backends
            .embed
            .as_ref()
            .ok_or_else(|| Error::EmbedderUnavailable("no embedding service configured".into()))?;
        self.exchange.call_json(
            InteractionKind::Embed,
            &json!({ "texts": texts }),
            || backend.embed(texts),
            Error::EmbedderUnavailable,
        )
    }

    pub fn kb_search(&self, kb: &KnowledgeBase, query: &str, k: usize) -> Result<Vec<SearchResult>> {
        let k = k.min(kb.len());
        let vector = self
            .embed(&[query.to_owned()])?
            .into_iter()
            .next()
            .ok_or_else(|| Error::EmbedderUnavailable("no vector returned".into()))?;
        Ok(kb
            .search(&vector, k)?
            .into_iter()
            .map(|(doc, _)| SearchResult {
                url: doc.url.clone(),
                title: String::new(),
                content: doc.text.clone(),
                images: Vec::new(),
                published: None,
                tool: "kb_search".into(),
            })
            .collect())
    }

    /// Page text and up to `max_images_per_page` image ids for `url`.
    pub fn scrape(&self, url: &str, ctx: &ToolContext) -> Result<(String, Vec<MediaId>)> {
        let hit = SearchHit {
            url: url.to_owned(),
            title: String::new(),
            snippet: String::new(),
            date: None,
            image_url: None,
        };
        let fetched = self.fetch_page(hit);
        let page = fetched.page?;
        Ok(self.register_page(&fetched.hit.url, &page, fetched.images, ctx))
    }

    fn scrape_page(&self, url: &str) -> Result<ScrapedPage> {
        let backend = self.backends.scrape.as_ref().ok_or_else(|| Error::ScrapeFailed {
            url: url.to_owned(),
            reason: "no scraping service configured".into(),
        })?;
        self.exchange
            .call_json(
                InteractionKind::Scrape,
                &json!({ "url": url }),
                || backend.scrape(url),
                |reason| Error::ScrapeFailed {
                    url: String::new(),
                    reason,
                },
            )
            .map_err(|e| match e {
                Error::ScrapeFailed { reason, .. } => Error::ScrapeFailed {
                    url: url.to_owned(),
                    reason,
                },
                other => other,
            })
    }

    fn download(&self, url: &str) -> Result<Vec<u8>> {
        let backend = self
            .backends
            .fetch
            .as_ref()
            .ok_or_else(|| Error::Config("no image downloader configured".into()))?;
        self.exchange
            .call(
                InteractionKind::Download,
                &json!({ "url": url }),
                || backend.fetch(url).map(Payload::Bytes),
                |reason| Error::ScrapeFailed {
                    url: String::new(),
                    reason,
                },
            )?
            .into_bytes()
    }

    fn image_candidates(page_url: &str, page: &ScrapedPage, lead: Option<&str>) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut push = |u: Option<String>| {
            if let Some(u) = u {
                if !out.contains(&u) {
                    out.push(u);
                }
            }
        };
        push(lead.and_then(|l| resolve_url(page_url, l)));
        for cap in image_link_regex().captures_iter(&page.markdown) {
            push(resolve_url(page_url, &cap[1]));
        }
        for u in &page.image_urls {
            push(resolve_url(page_url, u));
        }
        out
    }

    fn fetch_page(&self, hit: SearchHit) -> Fetched {
        let page = self.scrape_page(&hit.url);
        let mut images = Vec::new();
        if let Ok(p) = &page {
            for url in Self::image_candidates(&hit.url, p, hit.image_url.as_deref()) {
                if images.len() >= self.config.max_images_per_page {
                    break;
                }
                match self.download(&url) {
                    Ok(bytes) if sniff_image_mime(&bytes).is_some() => images.push((url, bytes)),
                    Ok(_) => tracing::debug!(%url, "skipping non-image download"),
                    Err(e) if e.is_fatal() => break,
                    Err(e) => tracing::debug!(%url, error = %e, "image download failed"),
                }
            }
        }
        Fetched { hit, page, images }
    }

    /// Registers downloaded images in order and rewrites markdown image links
    /// to `<image:k>` (or removes them when the image was not kept).
    fn register_page(
        &self,
        page_url: &str,
        page: &ScrapedPage,
        images: Vec<(String, Vec<u8>)>,
        ctx: &ToolContext,
    ) -> (String, Vec<MediaId>) {
        let mut by_url: HashMap<String, MediaId> = HashMap::new();
        let mut ids = Vec::new();
        for (url, bytes) in images {
            if ctx.images_registered.load(Ordering::SeqCst) >= self.config.max_images_per_run {
                ctx.warn(format!(
                    "image cap of {} per fact-check reached",
                    self.config.max_images_per_run
                ));
                break;
            }
            match ctx.registry.register_image(&bytes, Some(&url)) {
                Ok(m) => {
                    ctx.images_registered.fetch_add(1, Ordering::SeqCst);
                    by_url.insert(url, m.id);
                    if !ids.contains(&m.id) {
                        ids.push(m.id);
                    }
                }
                Err(e) => tracing::debug!(%url, error = %e, "image rejected"),
            }
        }
        let content = image_link_regex()
            .replace_all(&page.markdown, |cap: &regex::Captures<'_>| {
                resolve_url(page_url, &cap[1])
                    .and_then(|u| by_url.get(&u))
                    .map(|id| id.to_string())
                    .unwrap_or_default()
            })
            .into_owned();
        (content, ids)
    }

    /// Filters hits, scrapes them in ranking order and keeps up to `limit`.
    fn collect(
        &self,
        hits: Vec<SearchHit>,
        limit: usize,
        tool: &str,
        require_image: bool,
        ctx: &ToolContext,
    ) -> Vec<SearchResult> {
        let cutoff = self.cutoff(ctx);
        let mut candidates: Vec<SearchHit> = hits
            .into_iter()
            .filter(|h| {
                let ok = self.policy.allows(&h.url);
                if !ok {
                    tracing::debug!(url = %h.url, "excluded by domain policy");
                }
                ok
            })
            .filter(|h| {
                let date = h.date.as_deref().and_then(parse_date);
                !matches!((date, cutoff), (Some(d), Some(c)) if d > c)
            })
            .collect::<Vec<_>>();
        candidates.reverse();

        let mut results = Vec::new();
        while results.len() < limit && !candidates.is_empty() {
            let want = (limit - results.len()).min(self.config.scrape_parallelism.max(1));
            let batch: Vec<SearchHit> = (0..want).filter_map(|_| candidates.pop()).collect();
            let fetched: Vec<Fetched> = std::thread::scope(|s| {
                let handles: Vec<_> = batch
                    .into_iter()
                    .map(|hit| s.spawn(move || self.fetch_page(hit)))
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("scrape worker panicked"))
                    .collect()
            });
            for f in fetched {
                let page = match f.page {
                    Ok(p) => p,
                    Err(e) => {
                        ctx.warn(format!("dropping {}: {e}", f.hit.url));
                        continue;
                    }
                };
                let published = f
                    .hit
                    .date
                    .as_deref()
                    .and_then(parse_date)
                    .or_else(|| page.published.as_deref().and_then(parse_date));
                if let (Some(d), Some(c)) = (published, cutoff) {
                    if d > c {
                        tracing::debug!(url = %f.hit.url, "published after the claim date");
                        continue;
                    }
                }
                let (content, images) = self.register_page(&f.hit.url, &page, f.images, ctx);
                if require_image && images.is_empty() {
                    tracing::debug!(url = %f.hit.url, "image result without images");
                    continue;
                }
                let title = page
                    .title
                    .clone()
                    .filter(|t| !t.is_empty())
                    .unwrap_or(f.hit.title.clone());
                results.push(SearchResult {
                    url: f.hit.url,
                    title,
                    content,
                    images,
                    published,
                    tool: tool.to_owned(),
                });
                if results.len() == limit {
                    break;
                }
            }
        }
        results
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn date_formats() {
        let d = NaiveDate::from_ymd_opt(2024, 3, 5).unwrap();
        for s in [
            "2024-03-05",
            "2024-03-05T10:00:00Z",
            "Mar 5, 2024",
            "March 5, 2024",
            "5 Mar 2024",
        ] {
            assert_eq!(parse_date(s), Some(d), "{s}");
        }
        assert_eq!(parse_date("3 days ago"), None);
    }

    #[test]
    fn temporal_rule() {
        let mk = |d: Option<&str>| SearchResult {
            url: "u".into(),
            title: String::new(),
            content: String::new(),
            images: vec![],
            published: d.and_then(parse_date),
            tool: "web_search".into(),
        };
        let cutoff = NaiveDate::from_ymd_opt(2024, 5, 15);
        let kept = temporal_filter(vec![mk(Some("2025-01-01")), mk(None), mk(Some("2024-05-15"))], cutoff);
        assert_eq!(kept.len(), 2);
        assert!(kept[0].published.is_none());
    }

    #[test]
    fn relative_urls() {
        let base = "https://news.example.com/world/story.html";
        assert_eq!(
            resolve_url(base, "/img/a.png").unwrap(),
            "https://news.example.com/img/a.png"
        );
        assert_eq!(
            resolve_url(base, "b.jpg").unwrap(),
            "https://news.example.com/world/b.jpg"
        );
        assert_eq!(
            resolve_url(base, "//cdn.example.com/c.gif").unwrap(),
            "https://cdn.example.com/c.gif"
        );
        assert_eq!(resolve_url(base, "data:image/png;base64,xx"), None);
    }
}
