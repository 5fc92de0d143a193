//! Declarative run configuration.
//!
//! Sources, later ones winning: the TOML file, `FACTCHECK_*` environment
//! variables, then command-line overrides. Environment names map to dotted
//! keys with `__` between the section and field: `FACTCHECK_MODEL__MODEL_ID`
//! sets `model.model_id`, `FACTCHECK_PIPELINE__MAX_ITERATIONS` sets
//! `pipeline.max_iterations`. Values parse as TOML scalars and fall back to
//! plain strings. Secrets are read from the environment variable named by
//! each section's `api_key_env`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::actions::ActionKind;
use crate::error::{Error, Result};
use crate::llm::{Gateway, ModelConfig, OpenAiChat, RetryPolicy, TemplateSet};
use crate::net::HttpClient;
use crate::pipeline::{Ablation, FactChecker, Mode, PipelineConfig};
use crate::replay::Cassette;
use crate::taxonomy::Benchmark;
use crate::tools::http::{FirecrawlScraper, GeoService, GoogleVision, HttpFetch, OpenAiEmbed, SerperSearch};
use crate::tools::{Backends, DomainPolicy, Exchange, ToolConfig, Tools};

pub const ENV_PREFIX: &str = "FACTCHECK_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub endpoint: String,
    pub model_id: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_context: usize,
    pub max_output: usize,
    pub api_key_env: String,
    pub requests_per_minute: Option<u32>,
    pub timeout_secs: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            endpoint: m.endpoint,
            model_id: m.model_id,
            temperature: m.temperature,
            top_p: m.top_p,
            max_context: m.max_context,
            max_output: m.max_output,
            api_key_env: "OPENAI_API_KEY".into(),
            requests_per_minute: None,
            timeout_secs: 120,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceSection {
    /// Empty disables the service.
    pub endpoint: String,
    pub api_key_env: String,
    /// Embedding model name; ignored by other services.
    pub model: String,
}

impl ServiceSection {
    fn new(endpoint: &str, key_env: &str) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key_env: key_env.into(),
            model: String::new(),
        }
    }

    fn enabled(&self) -> bool {
        !self.endpoint.trim().is_empty()
    }
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self::new("", "")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServicesSection {
    pub search: ServiceSection,
    pub vision: ServiceSection,
    pub geolocation: ServiceSection,
    pub scrape: ServiceSection,
    pub embed: ServiceSection,
    /// Plain HTTP image downloads.
    pub fetch_images: bool,
    pub timeout_secs: u64,
}

impl Default for ServicesSection {
    fn default() -> Self {
        Self {
            search: ServiceSection::new("https://google.serper.dev", "SERPER_API_KEY"),
            vision: ServiceSection::new(
                "https://vision.googleapis.com/v1/images:annotate",
                "GOOGLE_VISION_API_KEY",
            ),
            geolocation: ServiceSection::new("", ""),
            scrape: ServiceSection::new("https://api.firecrawl.dev/v1/scrape", "FIRECRAWL_API_KEY"),
            embed: ServiceSection {
                endpoint: "https://api.openai.com/v1/embeddings".into(),
                api_key_env: "OPENAI_API_KEY".into(),
                model: "text-embedding-3-small".into(),
            },
            fetch_images: true,
            timeout_secs: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub benchmark: Benchmark,
    pub max_iterations: usize,
    pub max_actions_per_iteration: usize,
    pub enabled_actions: BTreeSet<ActionKind>,
    pub temporal_filtering: bool,
    pub mode: Mode,
    pub ablation: Ablation,
    pub summary_parallelism: usize,
    pub max_result_chars: usize,
    /// Replaces the benchmark's plan rules when set.
    pub plan_rules_file: Option<PathBuf>,
    /// Replaces the benchmark's judge rules when set.
    pub judge_rules_file: Option<PathBuf>,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let p = PipelineConfig::for_benchmark(Benchmark::Averitec);
        Self {
            benchmark: Benchmark::Averitec,
            max_iterations: p.max_iterations,
            max_actions_per_iteration: p.max_actions_per_iteration,
            enabled_actions: p.enabled_actions,
            temporal_filtering: p.temporal_filtering,
            mode: p.mode,
            ablation: p.ablation,
            summary_parallelism: p.summary_parallelism,
            max_result_chars: p.max_result_chars,
            plan_rules_file: None,
            judge_rules_file: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub excluded_domains: Option<PathBuf>,
    pub unsupported_domains: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    pub model: ModelSection,
    pub services: ServicesSection,
    pub tools: ToolConfig,
    pub pipeline: PipelineSection,
    pub policy: PolicySection,
    pub templates_dir: Option<PathBuf>,
}

fn parse_scalar(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_owned())),
        Err(_) => toml::Value::String(raw.to_owned()),
    }
}

fn set_path(root: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').filter(|p| !p.is_empty()).collect();
    let Some((last, parents)) = parts.split_last() else {
        return Err(Error::Config(format!("empty override key {key:?}")));
    };
    let mut table = root;
    for p in parents {
        let entry = table
            .entry((*p).to_owned())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {key}: {p} is not a section")))?;
    }
    table.insert((*last).to_owned(), value);
    Ok(())
}

/// `FACTCHECK_MODEL__MODEL_ID` → `model.model_id`.
pub fn env_key(var: &str) -> Option<String> {
    let rest = var.strip_prefix(ENV_PREFIX)?;
    if !rest.contains("__") {
        return None;
    }
    Some(rest.split("__").map(str::to_lowercase).collect::<Vec<_>>().join("."))
}

impl AppConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// File (optional), then environment, then flag overrides `key=value`.
    pub fn resolve(
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        overrides: &[(String, String)],
    ) -> Result<Self> {
        let mut table: toml::Table = match file {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| Error::Config(format!("reading {}: {e}", p.display())))?;
                text.parse()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        let mut from_env: Vec<(String, String)> = env
            .into_iter()
            .filter_map(|(k, v)| env_key(&k).map(|key| (key, v)))
            .collect();
        from_env.sort();
        for (key, raw) in from_env.iter().chain(overrides) {
            set_path(&mut table, key, parse_scalar(raw))?;
        }
        let mut config: AppConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        if let (Some(dir), Some(file)) = (&config.templates_dir, file) {
            if dir.is_relative() {
                config.templates_dir = Some(file.parent().unwrap_or(Path::new(".")).join(dir));
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config(None).validate()?;
        self.pipeline_config()?.validate()
    }

    pub fn model_config(&self, api_key: Option<String>) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            endpoint: m.endpoint.clone(),
            model_id: m.model_id.clone(),
            temperature: m.temperature,
            top_p: m.top_p,
            max_context: m.max_context,
            max_output: m.max_output,
            api_key,
        }
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        let p = &self.pipeline;
        let mut c = PipelineConfig::for_benchmark(p.benchmark);
        c.max_iterations = p.max_iterations;
        c.max_actions_per_iteration = p.max_actions_per_iteration;
        c.enabled_actions = p.enabled_actions.clone();
        c.temporal_filtering = p.temporal_filtering;
        c.mode = p.mode;
        c.ablation = p.ablation;
        c.summary_parallelism = p.summary_parallelism;
        c.max_result_chars = p.max_result_chars;
        if let Some(f) = &p.plan_rules_file {
            c.plan_rules = std::fs::read_to_string(f)?;
        }
        if let Some(f) = &p.judge_rules_file {
            c.judge_rules = std::fs::read_to_string(f)?;
        }
        Ok(c)
    }

    pub fn templates(&self) -> Result<TemplateSet> {
        match &self.templates_dir {
            Some(dir) => TemplateSet::load_dir(dir),
            None => Ok(TemplateSet::default()),
        }
    }

    pub fn policy(&self) -> Result<DomainPolicy> {
        match (&self.policy.excluded_domains, &self.policy.unsupported_domains) {
            (None, None) => Ok(DomainPolicy::default()),
            (e, u) => {
                let default = DomainPolicy::default();
                let read = |p: &Option<PathBuf>, fallback: &[String]| -> Result<Vec<String>> {
                    match p {
                        Some(p) => Ok(crate::tools::parse_list(&std::fs::read_to_string(p)?)),
                        None => Ok(fallback.to_vec()),
                    }
                };
                Ok(DomainPolicy::new(
                    read(e, &default.excluded_factcheckers)?,
                    read(u, &default.unsupported)?,
                ))
            }
        }
    }

    /// The model gateway. The API key is looked up through `lookup`
    /// (normally the process environment).
    pub fn gateway(&self, cassette: Option<Arc<Cassette>>, lookup: &dyn Fn(&str) -> Option<String>) -> Gateway {
        let key = Some(self.model.api_key_env.as_str())
            .filter(|k| !k.is_empty())
            .and_then(lookup);
        let client = HttpClient::new(Duration::from_secs(self.model.timeout_secs));
        Gateway::new(Arc::new(OpenAiChat::new(client)), self.model_config(key))
            .with_rate_limit(self.model.requests_per_minute)
            .with_cassette(cassette)
    }

    /// HTTP tool backends for every configured service.
    pub fn backends(&self, lookup: &dyn Fn(&str) -> Option<String>) -> Backends {
        let s = &self.services;
        let client = HttpClient::new(Duration::from_secs(s.timeout_secs));
        let key = |sec: &ServiceSection| {
            Some(sec.api_key_env.as_str())
                .filter(|k| !k.is_empty())
                .and_then(lookup)
        };
        let mut b = Backends::default();
        if s.search.enabled() {
            b.search = Some(Arc::new(SerperSearch {
                client: client.clone(),
                base_url: s.search.endpoint.clone(),
                api_key: key(&s.search).unwrap_or_default(),
            }));
        }
        if s.vision.enabled() {
            b.vision = Some(Arc::new(GoogleVision {
                client: client.clone(),
                endpoint: s.vision.endpoint.clone(),
                api_key: key(&s.vision).unwrap_or_default(),
            }));
        }
        if s.geolocation.enabled() {
            b.geo = Some(Arc::new(GeoService {
                client: client.clone(),
                endpoint: s.geolocation.endpoint.clone(),
            }));
        }
        if s.scrape.enabled() {
            b.scrape = Some(Arc::new(FirecrawlScraper {
                client: client.clone(),
                endpoint: s.scrape.endpoint.clone(),
                api_key: key(&s.scrape),
            }));
        }
        if s.embed.enabled() {
            b.embed = Some(Arc::new(OpenAiEmbed {
                client: client.clone(),
                endpoint: s.embed.endpoint.clone(),
                model: s.embed.model.clone(),
                api_key: key(&s.embed),
            }));
        }
        if s.fetch_images {
            b.fetch = Some(Arc::new(HttpFetch { client }));
        }
        b
    }

    pub fn tools(&self, backends: Backends, cassette: Option<Arc<Cassette>>) -> Result<Tools> {
        let mut tc = self.tools.clone();
        tc.temporal_filtering = tc.temporal_filtering && self.pipeline.temporal_filtering;
        Ok(Tools::new(
            tc,
            self.policy()?,
            backends,
            Exchange::new(RetryPolicy::default(), cassette),
        ))
    }

    /// A checker with live HTTP backends, optionally behind a cassette.
    pub fn fact_checker(
        &self,
        cassette: Option<Arc<Cassette>>,
        lookup: &dyn Fn(&str) -> Option<String>,
    ) -> Result<FactChecker> {
        let gateway = self.gateway(cassette.clone(), lookup);
        let tools = self.tools(self.backends(lookup), cassette)?;
        Ok(FactChecker::new(
            Arc::new(gateway),
            Arc::new(tools),
            Arc::new(self.templates()?),
            self.pipeline_config()?,
        ))
    }
}

/// Reads a process environment variable.
pub fn process_env(name: &str) -> Option<String> {
    std::env::var(name).ok().filter(|v| !v.is_empty())
}
