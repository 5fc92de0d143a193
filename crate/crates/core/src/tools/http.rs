//! HTTP clients for the external retrieval services.

use base64::Engine;
use serde_json::{json, Value};

use crate::claim::MediaRef;
use crate::net::{HttpClient, HttpFailure};
use crate::tools::{
    EmbedBackend, FetchBackend, GeoBackend, GeoScore, ScrapeBackend, ScrapedPage, SearchBackend, SearchHit, SearchKind,
    VisionBackend,
};

fn str_at(v: &Value, key: &str) -> String {
    v.get(key).and_then(Value::as_str).unwrap_or_default().to_owned()
}

fn opt_str(v: &Value, key: &str) -> Option<String> {
    v.get(key)
        .and_then(Value::as_str)
        .filter(|s| !s.is_empty())
        .map(str::to_owned)
}

fn b64(bytes: &[u8]) -> String {
    base64::engine::general_purpose::STANDARD.encode(bytes)
}

fn strip_tags(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut in_tag = false;
    for c in s.chars() {
        match c {
            '<' => in_tag = true,
            '>' if in_tag => in_tag = false,
            c if !in_tag => out.push(c),
            _ => {}
        }
    }
    out
}

/// Serper-style Google search: `POST {base}/search` and `POST {base}/images`.
#[derive(Debug, Clone)]
pub struct SerperSearch {
    pub client: HttpClient,
    pub base_url: String,
    pub api_key: String,
}

impl SerperSearch {
    pub fn parse(kind: SearchKind, resp: &Value) -> Vec<SearchHit> {
        let key = match kind {
            SearchKind::Web => "organic",
            SearchKind::Image => "images",
        };
        resp.get(key)
            .and_then(Value::as_array)
            .map(|items| {
                items
                    .iter()
                    .filter_map(|it| {
                        let url = opt_str(it, "link")?;
                        Some(SearchHit {
                            url,
                            title: str_at(it, "title"),
                            snippet: str_at(it, "snippet"),
                            date: opt_str(it, "date"),
                            image_url: opt_str(it, "imageUrl"),
                        })
                    })
                    .collect()
            })
            .unwrap_or_default()
    }
}

impl SearchBackend for SerperSearch {
    fn search(&self, query: &str, kind: SearchKind, limit: usize) -> Result<Vec<SearchHit>, HttpFailure> {
        let path = match kind {
            SearchKind::Web => "search",
            SearchKind::Image => "images",
        };
        let url = format!("{}/{path}", self.base_url.trim_end_matches('/'));
        let resp = self.client.post_json(
            &url,
            &[("X-API-KEY", &self.api_key)],
            &json!({ "q": query, "num": limit }),
        )?;
        Ok(Self::parse(kind, &resp))
    }
}

/// Google Cloud Vision web detection (`images:annotate`, WEB_DETECTION).
#[derive(Debug, Clone)]
pub struct GoogleVision {
    pub client: HttpClient,
    pub endpoint: String,
    pub api_key: String,
}

impl GoogleVision {
    pub fn parse(resp: &Value, limit: usize) -> Vec<SearchHit> {
        resp.pointer("/responses/0/webDetection/pagesWithMatchingImages")
            .and_then(Value::as_array)
            .map(|pages| {
                pages
                    .iter()
                    .filter_map(|p| {
                        Some(SearchHit {
                            url: opt_str(p, "url")?,
                            title: strip_tags(&str_at(p, "pageTitle")),
                            snippet: String::new(),
                            date: None,
                            image_url: None,
                        })
                    })
                    .take(limit)
                    .collect()
            })
            .unwrap_or_default()
    }
}

impl VisionBackend for GoogleVision {
    fn matching_pages(&self, image: &MediaRef, limit: usize) -> Result<Vec<SearchHit>, HttpFailure> {
        let body = json!({
            "requests": [{
                "image": { "content": b64(&image.bytes) },
                "features": [{ "type": "WEB_DETECTION", "maxResults": limit }],
            }]
        });
        let url = format!("{}?key={}", self.endpoint, self.api_key);
        let resp = self.client.post_json(&url, &[], &body)?;
        Ok(Self::parse(&resp, limit))
    }
}

/// A geolocation service taking `{"image": base64, "top_k": k}` and
/// answering `{"countries": [{"code", "name", "score"}]}`.
#[derive(Debug, Clone)]
pub struct GeoService {
    pub client: HttpClient,
    pub endpoint: String,
}

impl GeoBackend for GeoService {
    fn locate(&self, image: &MediaRef, top_k: usize) -> Result<Vec<GeoScore>, HttpFailure> {
        let resp = self.client.post_json(
            &self.endpoint,
            &[],
            &json!({ "image": b64(&image.bytes), "top_k": top_k }),
        )?;
        let countries = resp
            .get("countries")
            .cloned()
            .ok_or_else(|| HttpFailure::Other("geolocation response has no countries".into()))?;
        serde_json::from_value(countries).map_err(|e| HttpFailure::Other(e.to_string()))
    }
}

/// Firecrawl-style scraper: `POST {endpoint}` with `{"url", "formats": ["markdown"]}`.
#[derive(Debug, Clone)]
pub struct FirecrawlScraper {
    pub client: HttpClient,
    pub endpoint: String,
    pub api_key: Option<String>,
}

impl FirecrawlScraper {
    pub fn parse(resp: &Value) -> Result<ScrapedPage, HttpFailure> {
        if resp.get("success").and_then(Value::as_bool) == Some(false) {
            return Err(HttpFailure::Other(format!(
                "scraper reported failure: {}",
                str_at(resp, "error")
            )));
        }
        let data = resp
            .get("data")
            .ok_or_else(|| HttpFailure::Other("scrape response has no data".into()))?;
        let meta = data.get("metadata").cloned().unwrap_or(Value::Null);
        if let Some(code) = meta.get("statusCode").and_then(Value::as_u64) {
            if code >= 400 {
                return Err(HttpFailure::Status(code as u16, "page returned an error".into()));
            }
        }
        let published = [
            "publishedTime",
            "article:published_time",
            "og:article:published_time",
            "datePublished",
        ]
        .iter()
        .find_map(|k| opt_str(&meta, k));
        let image_urls = data
            .get("images")
            .and_then(Value::as_array)
            .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_owned)).collect())
            .unwrap_or_default();
        Ok(ScrapedPage {
            markdown: str_at(data, "markdown"),
            title: opt_str(&meta, "title"),
            published,
            image_urls,
        })
    }
}

impl ScrapeBackend for FirecrawlScraper {
    fn scrape(&self, url: &str) -> Result<ScrapedPage, HttpFailure> {
        let auth = self.api_key.as_ref().map(|k| format!("Bearer {k}"));
        let headers: Vec<(&str, &str)> = auth.iter().map(|a| ("Authorization", a.as_str())).collect();
        let resp = self.client.post_json(
            &self.endpoint,
            &headers,
            &json!({ "url": url, "formats": ["markdown"] }),
        )?;
        Self::parse(&resp)
    }
}

#[derive(Debug, Clone, Default)]
pub struct HttpFetch {
    pub client: HttpClient,
}

impl FetchBackend for HttpFetch {
    fn fetch(&self, url: &str) -> Result<Vec<u8>, HttpFailure> {
        self.client.get_bytes(url)
    }
}

/// OpenAI-style embeddings: `{"model", "input": [..]}` → `data[i].embedding`.
#[derive(Debug, Clone)]
pub struct OpenAiEmbed {
    pub client: HttpClient,
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
}

impl OpenAiEmbed {
    pub fn parse(resp: &Value, expected: usize) -> Result<Vec<Vec<f32>>, HttpFailure> {
        let data = resp
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| HttpFailure::Other("embedding response has no data".into()))?;
        let mut rows: Vec<(usize, Vec<f32>)> = data
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let idx = d.get("index").and_then(Value::as_u64).map_or(i, |x| x as usize);
                let v = d
                    .get("embedding")
                    .and_then(Value::as_array)
                    .map(|a| a.iter().filter_map(Value::as_f64).map(|x| x as f32).collect())
                    .unwrap_or_default();
                (idx, v)
            })
            .collect();
        rows.sort_by_key(|r| r.0);
        if rows.len() != expected {
            return Err(HttpFailure::Other(format!(
                "{} embeddings for {expected} inputs",
                rows.len()
            )));
        }
        Ok(rows.into_iter().map(|r| r.1).collect())
    }
}

impl EmbedBackend for OpenAiEmbed {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, HttpFailure> {
        let auth = self.api_key.as_ref().map(|k| format!("Bearer {k}"));
        let headers: Vec<(&str, &str)> = auth.iter().map(|a| ("Authorization", a.as_str())).collect();
        let resp = self.client.post_json(
            &self.endpoint,
            &headers,
            &json!({ "model": self.model, "input": texts }),
        )?;
        Self::parse(&resp, texts.len())
    }
}
