//! In-process doubles for the model and tool backends. Used by the test
//! suites, the benches and offline demos; none of them touch the network.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};

use crate::claim::{MediaRef, MediaRegistry};
use crate::llm::{ChatBackend, ChatRequest, Gateway, ModelConfig, RetryPolicy, TemplateName, TemplateSet};
use crate::net::HttpFailure;
use crate::pipeline::{FactChecker, PipelineConfig};
use crate::tools::{
    Backends, DomainPolicy, EmbedBackend, Exchange, FetchBackend, GeoBackend, GeoScore, ScrapeBackend, ScrapedPage,
    SearchBackend, SearchHit, SearchKind, ToolConfig, Tools, VisionBackend,
};

/// Bytes that pass image sniffing; distinct seeds give distinct hashes.
pub fn fake_png(seed: u32) -> Vec<u8> {
    let mut b = vec![0x89, b'P', b'N', b'G', 0x0D, 0x0A, 0x1A, 0x0A];
    b.extend_from_slice(&seed.to_le_bytes());
    b
}

type Responder = dyn Fn(&ChatRequest) -> Result<String, HttpFailure> + Send + Sync;

/// A chat backend driven by a closure; every request is kept for inspection.
pub struct ScriptedChat {
    responder: Box<Responder>,
    requests: Mutex<Vec<ChatRequest>>,
}

impl ScriptedChat {
    pub fn new(f: impl Fn(&ChatRequest) -> Result<String, HttpFailure> + Send + Sync + 'static) -> Self {
        Self {
            responder: Box::new(f),
            requests: Mutex::new(Vec::new()),
        }
    }

    /// Per-task response queues. The last response of a queue repeats;
    /// a task with no queue answers `NONE`.
    pub fn by_task(script: impl IntoIterator<Item = (TemplateName, Vec<String>)>) -> Self {
        let queues: Mutex<HashMap<TemplateName, VecDeque<String>>> =
            Mutex::new(script.into_iter().map(|(k, v)| (k, v.into())).collect());
        Self::new(move |req| {
            let mut q = queues.lock().expect("script poisoned");
            let Some(queue) = q.get_mut(&req.task) else {
                return Ok("NONE".into());
            };
            Ok(match queue.len() {
                0 => "NONE".into(),
                1 => queue[0].clone(),
                _ => queue.pop_front().expect("non-empty"),
            })
        })
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().expect("requests poisoned").clone()
    }

    pub fn requests_for(&self, task: TemplateName) -> Vec<ChatRequest> {
        self.requests().into_iter().filter(|r| r.task == task).collect()
    }
}

impl ChatBackend for ScriptedChat {
    fn complete(&self, _: &ModelConfig, req: &ChatRequest, _: &MediaRegistry) -> Result<String, HttpFailure> {
        self.requests.lock().expect("requests poisoned").push(req.clone());
        (self.responder)(req)
    }
}

/// Search results keyed by exact query; other queries return `fallback`.
#[derive(Default)]
pub struct StaticSearch {
    pub web: BTreeMap<String, Vec<SearchHit>>,
    pub images: BTreeMap<String, Vec<SearchHit>>,
    pub fallback: Vec<SearchHit>,
    pub calls: AtomicUsize,
}

impl SearchBackend for StaticSearch {
    fn search(&self, query: &str, kind: SearchKind, limit: usize) -> Result<Vec<SearchHit>, HttpFailure> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let table = match kind {
            SearchKind::Web => &self.web,
            SearchKind::Image => &self.images,
        };
        let mut hits = table.get(query).cloned().unwrap_or_else(|| self.fallback.clone());
        hits.truncate(limit);
        Ok(hits)
    }
}

/// Reverse-search pages keyed by image content hash (hex); others get `fallback`.
#[derive(Default)]
pub struct StaticVision {
    pub pages: BTreeMap<String, Vec<SearchHit>>,
    pub fallback: Vec<SearchHit>,
}

impl VisionBackend for StaticVision {
    fn matching_pages(&self, image: &MediaRef, limit: usize) -> Result<Vec<SearchHit>, HttpFailure> {
        let mut hits = self
            .pages
            .get(&image.content_hash.to_hex())
            .cloned()
            .unwrap_or_else(|| self.fallback.clone());
        hits.truncate(limit);
        Ok(hits)
    }
}

/// The same country scores for every image.
pub struct StaticGeo(pub Vec<GeoScore>);

impl GeoBackend for StaticGeo {
    fn locate(&self, _: &MediaRef, _: usize) -> Result<Vec<GeoScore>, HttpFailure> {
        Ok(self.0.clone())
    }
}

/// Pages keyed by URL; unknown URLs fail with 404.
#[derive(Default)]
pub struct StaticScrape(pub BTreeMap<String, ScrapedPage>);

impl ScrapeBackend for StaticScrape {
    fn scrape(&self, url: &str) -> Result<ScrapedPage, HttpFailure> {
        self.0
            .get(url)
            .cloned()
            .ok_or_else(|| HttpFailure::Status(404, format!("no page for {url}")))
    }
}

/// Downloads keyed by URL; unknown URLs fail with 404.
#[derive(Default)]
pub struct StaticFetch(pub BTreeMap<String, Vec<u8>>);

impl FetchBackend for StaticFetch {
    fn fetch(&self, url: &str) -> Result<Vec<u8>, HttpFailure> {
        self.0
            .get(url)
            .cloned()
            .ok_or_else(|| HttpFailure::Status(404, format!("no bytes for {url}")))
    }
}

/// Bag-of-words hashing embedder: texts sharing words get similar vectors.
pub struct HashEmbedder {
    pub dim: usize,
}

impl HashEmbedder {
    pub fn vector(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dim.max(1)];
        for word in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
        {
            let d = Sha256::digest(word.as_bytes());
            let h = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
            let bucket = (h % v.len() as u64) as usize;
            v[bucket] += 1.0;
        }
        v
    }
}

impl EmbedBackend for HashEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, HttpFailure> {
        Ok(texts.iter().map(|t| self.vector(t)).collect())
    }
}

/// A search hit with only a URL and title.
pub fn hit(url: &str, title: &str) -> SearchHit {
    SearchHit {
        url: url.into(),
        title: title.into(),
        snippet: String::new(),
        date: None,
        image_url: None,
    }
}

/// A scraped page with markdown and no metadata.
pub fn page(markdown: &str) -> ScrapedPage {
    ScrapedPage {
        markdown: markdown.into(),
        title: None,
        published: None,
        image_urls: Vec::new(),
    }
}

/// A fact-checker over doubles: no retries, default caps and policy, built-in templates.
pub fn offline_checker(chat: Arc<dyn ChatBackend>, backends: Backends, config: PipelineConfig) -> FactChecker {
    let gateway = Gateway::new(chat, ModelConfig::default()).with_retry(RetryPolicy::none());
    let tools = Tools::new(
        ToolConfig::default(),
        DomainPolicy::default(),
        backends,
        Exchange::new(RetryPolicy::none(), None),
    );
    FactChecker::new(
        Arc::new(gateway),
        Arc::new(tools),
        Arc::new(TemplateSet::default()),
        config,
    )
}
