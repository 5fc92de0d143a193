//! `factcheck`: verify single claims, run benchmark sweeps, build knowledge
//! bases and inspect cassettes.
//!
//! Exit codes: 0 on a completed run (whatever the verdict), 1 when the
//! pipeline failed part-way (the partial report is still written), 2 on
//! usage, configuration and I/O errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use factcheck_core::benchmark::{load_dataset_with, run_benchmark, LoadOptions, MetricsReport, RunOptions, Subset};
use factcheck_core::claim::split_image_refs;
use factcheck_core::config::{process_env, AppConfig};
use factcheck_core::net::NetworkGuard;
use factcheck_core::pipeline::{write_failure, write_outcome, RunLog, RUN_LOG_FILE};
use factcheck_core::replay::{Cassette, CassetteMode};
use factcheck_core::tools::kb::{build_index, read_corpus};
use factcheck_core::tools::KnowledgeBase;
use factcheck_core::{Benchmark, Claim, ContentHash, Error, MediaId, MediaRegistry, Segment};

#[derive(Parser, Debug)]
#[command(name = "factcheck", version, about = "Multimodal claim verification")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = "FACTCHECK_CONFIG")]
    config: Option<PathBuf>,
    /// Cassette directory; without --replay every interaction is recorded into it.
    #[arg(long, global = true)]
    cassette: Option<PathBuf>,
    /// Replay the cassette: `strict` (no network) or `fallthrough` (missing interactions go live).
    #[arg(long, global = true, value_name = "MODE", requires = "cassette", value_parser = ["strict", "fallthrough"])]
    replay: Option<String>,
    /// Config override `section.key=value`; wins over file and environment.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fact-check one claim and write its report.
    Verify(VerifyArgs),
    /// Evaluate on a benchmark dataset.
    Bench(BenchArgs),
    /// Knowledge-base indexes.
    Kb {
        #[command(subcommand)]
        command: KbCommand,
    },
    /// Cassette maintenance.
    Cassette {
        #[command(subcommand)]
        command: CassetteCommand,
    },
}

#[derive(Args, Debug, Default)]
struct PipelineFlags {
    /// Label taxonomy and benchmark-specific rules.
    #[arg(long, value_parser = parse_benchmark)]
    benchmark: Option<Benchmark>,
    #[arg(long)]
    max_iterations: Option<usize>,
    /// One iteration only.
    #[arg(long)]
    single_turn: bool,
    /// Static action schedule instead of the planner.
    #[arg(long)]
    no_planning: bool,
    /// Skip the develop stage.
    #[arg(long)]
    no_develop: bool,
    /// Strip images from the develop prompt.
    #[arg(long)]
    unimodal_develop: bool,
    /// Question-answering mode (averitec only).
    #[arg(long)]
    infact: bool,
    /// Keep results published after the claim date.
    #[arg(long)]
    no_temporal_filter: bool,
}

impl PipelineFlags {
    fn overrides(&self) -> Vec<(String, String)> {
        let mut o = Vec::new();
        let mut set = |k: &str, v: String| o.push((k.to_owned(), v));
        if let Some(b) = self.benchmark {
            set("pipeline.benchmark", format!("\"{}\"", b.name()));
        }
        if let Some(n) = self.max_iterations {
            set("pipeline.max_iterations", n.to_string());
        }
        if self.single_turn {
            set("pipeline.max_iterations", "1".into());
        }
        for (flag, key) in [
            (self.no_planning, "no_planning"),
            (self.no_develop, "no_develop"),
            (self.unimodal_develop, "unimodal_develop"),
        ] {
            if flag {
                set(&format!("pipeline.ablation.{key}"), "true".into());
            }
        }
        if self.infact {
            set("pipeline.mode", "\"in_fact\"".into());
        }
        if self.no_temporal_filter {
            set("pipeline.temporal_filtering", "false".into());
        }
        o
    }
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Claim text; `<image:k>` places the k-th --image inline, otherwise images go first.
    #[arg(long)]
    text: String,
    #[arg(long = "image")]
    images: Vec<PathBuf>,
    #[arg(long)]
    claimant: Option<String>,
    /// Claim date (YYYY-MM-DD); evidence published later is dropped.
    #[arg(long)]
    date: Option<NaiveDate>,
    /// Output directory for report, assets, run log and outcome summary.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    claim_id: Option<String>,
    /// Knowledge-base index directory; replaces web search.
    #[arg(long)]
    kb: Option<PathBuf>,
    #[command(flatten)]
    flags: PipelineFlags,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, value_parser = parse_benchmark)]
    dataset: Benchmark,
    /// Dataset file or the directory containing it.
    #[arg(long)]
    path: PathBuf,
    #[arg(long, default_value_t = 1)]
    runs: usize,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    /// Evaluate a seeded random subset of this size.
    #[arg(long)]
    subset: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    kb: Option<PathBuf>,
    /// MOCHEG claim ids to keep, one per line.
    #[arg(long)]
    mocheg_ids: Option<PathBuf>,
    #[command(flatten)]
    flags: PipelineFlags,
}

#[derive(Subcommand, Debug)]
enum KbCommand {
    /// Embed a JSONL corpus (`{url, text}` per line) into an index directory. Resumable.
    Build {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 64)]
        batch: usize,
    },
    /// Nearest documents for a query.
    Search {
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(short, default_value_t = 5)]
        k: usize,
    },
}

#[derive(Subcommand, Debug)]
enum CassetteCommand {
    /// Summarize recorded interactions.
    Inspect { dir: PathBuf },
}

fn parse_benchmark(s: &str) -> Result<Benchmark, String> {
    Benchmark::ALL
        .into_iter()
        .find(|b| b.name().eq_ignore_ascii_case(s))
        .or_else(|| {
            ["crplus", "claimreview2024+"]
                .contains(&s.to_lowercase().as_str())
                .then_some(Benchmark::Claimreview)
        })
        .ok_or_else(|| {
            let names: Vec<&str> = Benchmark::ALL.iter().map(|b| b.name()).collect();
            format!("unknown dataset {s:?}; expected one of {}", names.join(", "))
        })
}

/// A run that reached the pipeline but did not complete.
#[derive(Debug)]
struct PipelineFailure(Error);

impl std::fmt::Display for PipelineFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

impl std::error::Error for PipelineFailure {}

struct Session {
    config: AppConfig,
    cassette: Option<Arc<Cassette>>,
    _guard: Option<NetworkGuard>,
}

impl Cli {
    fn session(&self, extra: Vec<(String, String)>) -> anyhow::Result<Session> {
        let mut overrides = extra;
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {o:?}"))?;
            overrides.push((k.trim().to_owned(), v.trim().to_owned()));
        }
        let config = AppConfig::resolve(self.config.as_deref(), std::env::vars(), &overrides)?;
        let mode = match self.replay.as_deref() {
            None => CassetteMode::Record,
            Some("strict") => CassetteMode::ReplayStrict,
            Some(_) => CassetteMode::ReplayFallthrough,
        };
        let cassette = match &self.cassette {
            Some(dir) => Some(Arc::new(Cassette::open(dir, mode)?)),
            None => None,
        };
        let guard = (cassette.is_some() && mode == CassetteMode::ReplayStrict).then(NetworkGuard::deny);
        Ok(Session {
            config,
            cassette,
            _guard: guard,
        })
    }
}

fn build_claim(args: &VerifyArgs) -> anyhow::Result<(Claim, Arc<MediaRegistry>)> {
    let mut payloads = Vec::with_capacity(args.images.len());
    for p in &args.images {
        payloads.push(std::fs::read(p).with_context(|| format!("reading image {}", p.display()))?);
    }
    let registry = MediaRegistry::new();
    let mut ids = Vec::with_capacity(payloads.len());
    for (p, bytes) in args.images.iter().zip(&payloads) {
        let media = registry
            .register_image(bytes, None)
            .with_context(|| format!("image {}", p.display()))?;
        ids.push(media.id);
    }
    let segments = split_image_refs(&args.text);
    let inline = segments.iter().any(|s| matches!(s, Segment::Image(_)));
    let mut content = Vec::new();
    if inline {
        for seg in segments {
            content.push(match seg {
                Segment::Image(MediaId(k)) => {
                    let id = ids
                        .get((k as usize).wrapping_sub(1))
                        .copied()
                        .with_context(|| format!("<image:{k}> has no matching --image"))?;
                    Segment::Image(id)
                }
                text => text,
            });
        }
    } else {
        content.extend(ids.iter().map(|&id| Segment::Image(id)));
        let sep = if ids.is_empty() { "" } else { " " };
        content.push(Segment::Text(format!("{sep}{}", args.text)));
    }
    let mut claim = Claim::new(content)?;
    if let Some(c) = &args.claimant {
        claim = claim.with_claimant(c);
    }
    if let Some(d) = args.date {
        claim = claim.with_date(d);
    }
    let registry = Arc::new(registry);
    claim.validate(&registry)?;
    Ok((claim, registry))
}

fn load_kb(path: Option<&Path>) -> anyhow::Result<Option<Arc<KnowledgeBase>>> {
    match path {
        Some(p) => Ok(Some(Arc::new(
            KnowledgeBase::load(p).with_context(|| format!("loading knowledge base {}", p.display()))?,
        ))),
        None => Ok(None),
    }
}

fn cmd_verify(cli: &Cli, args: &VerifyArgs) -> anyhow::Result<()> {
    let session = cli.session(args.flags.overrides())?;
    let (claim, registry) = build_claim(args)?;
    let kb = load_kb(args.kb.as_deref())?;
    let checker = session.config.fact_checker(session.cassette.clone(), &process_env)?;
    let claim_id = args
        .claim_id
        .clone()
        .unwrap_or_else(|| format!("claim-{}", &ContentHash::of(args.text.as_bytes()).to_hex()[..12]));

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let log = RunLog::to_file(&args.out.join(RUN_LOG_FILE))?;
    let result = checker.run(claim, registry, kb, &log);
    if let Some(c) = &session.cassette {
        tracing::debug!(stats = ?c.stats(), "cassette");
    }
    match result {
        Ok(outcome) => {
            let summary = write_outcome(&args.out, &claim_id, &outcome)?;
            for w in &outcome.warnings {
                tracing::warn!("{w}");
            }
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(())
        }
        Err(e @ Error::PipelineFailed { .. }) => {
            write_failure(&args.out, &claim_id, &e)?;
            Err(PipelineFailure(e).into())
        }
        Err(e) => Err(e.into()),
    }
}

fn print_metrics(m: &MetricsReport) {
    println!("benchmark   {}", m.benchmark.name());
    println!("instances   {}", m.n);
    println!("failures    {}", m.failures);
    let runs: Vec<String> = m.per_run.iter().map(|a| format!("{:.1}", a * 100.0)).collect();
    println!(
        "accuracy    {:.1} ± {:.1}  (runs: {})",
        m.mean * 100.0,
        m.std * 100.0,
        runs.join(", ")
    );
    if let Some(p) = &m.verite_pairwise {
        println!(
            "true/ooc    {:.1}\ntrue/mc     {:.1}\ntrue/false  {:.1}",
            p.t_ooc * 100.0,
            p.t_mc * 100.0,
            p.t_f * 100.0
        );
    }
    println!("llm calls   {}", m.totals.llm.calls);
    println!("\n{}", m.confusion.to_table());
}

fn cmd_bench(cli: &Cli, args: &BenchArgs) -> anyhow::Result<()> {
    let mut overrides = args.flags.overrides();
    overrides.insert(0, ("pipeline.benchmark".into(), format!("\"{}\"", args.dataset.name())));
    let session = cli.session(overrides)?;
    let dataset = load_dataset_with(
        args.dataset,
        &args.path,
        &LoadOptions {
            mocheg_ids: args.mocheg_ids.clone(),
            rating_rules: None,
        },
    )?;
    if !dataset.skipped.is_empty() {
        eprintln!("skipped {} malformed rows", dataset.skipped.len());
    }
    let checker = session.config.fact_checker(session.cassette.clone(), &process_env)?;
    let opts = RunOptions {
        runs: args.runs,
        workers: args.workers,
        subset: args.subset.map(|size| Subset { size, seed: args.seed }),
        out_dir: Some(args.out.clone()),
        kb: load_kb(args.kb.as_deref())?,
    };
    let metrics = run_benchmark(&checker, &dataset, &opts)?;
    print_metrics(&metrics);
    Ok(())
}

fn cmd_kb(cli: &Cli, command: &KbCommand) -> anyhow::Result<()> {
    let session = cli.session(Vec::new())?;
    let tools = session
        .config
        .tools(session.config.backends(&process_env), session.cassette.clone())?;
    match command {
        KbCommand::Build { corpus, out, batch } => {
            let docs = read_corpus(corpus)?;
            let stats = build_index(&docs, out, (*batch).max(1), |texts| tools.embed(texts))?;
            println!(
                "indexed {} documents into {} ({} embedded now, resumed from {})",
                stats.documents,
                out.display(),
                stats.embedded_now,
                stats.resumed_from
            );
        }
        KbCommand::Search { index, query, k } => {
            let kb = KnowledgeBase::load(index)?;
            for r in tools.kb_search(&kb, query, *k)? {
                println!("{}", serde_json::json!({"url": r.url, "text": r.content}));
            }
        }
    }
    Ok(())
}

fn cmd_cassette(command: &CassetteCommand) -> anyhow::Result<()> {
    match command {
        CassetteCommand::Inspect { dir } => {
            if !dir.is_dir() {
                bail!("no cassette at {}", dir.display());
            }
            let cassette = Cassette::open(dir, CassetteMode::ReplayStrict)?;
            let mut by_kind: BTreeMap<&str, usize> = BTreeMap::new();
            let interactions = cassette.interactions();
            for i in &interactions {
                *by_kind.entry(i.kind.as_str()).or_default() += 1;
            }
            let assets = std::fs::read_dir(dir.join("assets")).map(|d| d.count()).unwrap_or(0);
            let summary = serde_json::json!({
                "dir": dir,
                "interactions": interactions.len(),
                "by_kind": by_kind,
                "assets": assets,
            });
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level)),
        )
        .with_writer(std::io::stderr)
        .init();

    let result = match &cli.command {
        Command::Verify(args) => cmd_verify(&cli, args),
        Command::Bench(args) => cmd_bench(&cli, args),
        Command::Kb { command } => cmd_kb(&cli, command),
        Command::Cassette { command } => cmd_cassette(command),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<PipelineFailure>() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
