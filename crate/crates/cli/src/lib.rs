//! `fashionrec` command-line tool.
//!
//! Every subcommand prints one JSON summary to standard output. Exit codes:
//! 0 success, 1 validation failure, 2 I/O, config or usage error.

mod config;

use std::collections::{BTreeMap, HashMap};
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use fashionrec_core::catalog::{self, Catalog, CatalogError, FeatureStore};
use fashionrec_core::dialogue::{
    generate_all, validate_dialogue, DialogueBackend, DialogueRecord, FallbackBackend, RemoteChatBackend,
    RemoteChatConfig,
};
use fashionrec_core::embedding::{Backend, CachedEmbedder, Embedder, EmbedderConfig, MockEmbedder, RemoteEmbedder};
use fashionrec_core::history::FilterConfig;
use fashionrec_core::metrics::{evaluate_run, EvalPair};
use fashionrec_core::samples::{build_dataset, read_samples, write_dataset, BuildConfig, TaskKind, DEFAULT_RATIOS};
use fashionrec_core::synth::{self, SynthConfig};
use fashionrec_server::{Orchestrator, OrchestratorConfig, SystemClock};
use serde_json::{json, Value};

pub use config::Settings;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Io(String),
    Validation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            _ => EXIT_ERROR,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Validation(m) => write!(f, "validation failed: {m}"),
        }
    }
}

impl From<CatalogError> for CliError {
    fn from(e: CatalogError) -> Self {
        match e {
            CatalogError::Io { .. } | CatalogError::Malformed { .. } => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

fn io<E: std::fmt::Display>(ctx: impl std::fmt::Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Io(format!("{ctx}: {e}"))
}

type CliResult<T> = Result<T, CliError>;

/// What a subcommand hands back: its summary and exit code.
struct Outcome {
    summary: Value,
    code: i32,
}

impl Outcome {
    fn ok(summary: Value) -> Self {
        Self { summary, code: EXIT_OK }
    }
}

#[derive(Parser, Debug)]
#[command(name = "fashionrec", version, about = "Outfit recommendation data pipeline and assistant server")]
pub struct Cli {
    /// JSON config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct EmbedArgs {
    /// mock or remote
    #[arg(long)]
    embed_backend: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    embed_endpoint: Option<String>,
    /// Persistent JSONL embedding cache.
    #[arg(long)]
    embed_cache: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a seeded synthetic catalog (items, outfits, users, swatch images).
    SynthFixture {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        outfits: Option<usize>,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        items_per_category: Option<usize>,
    },
    /// Validate the three catalog files and optionally write a self-contained copy.
    Ingest {
        #[arg(long)]
        items: Option<PathBuf>,
        #[arg(long)]
        outfits: Option<PathBuf>,
        #[arg(long)]
        users: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build task samples and split manifests.
    BuildDataset {
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// basic, personalized, alternative or all
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// train,valid,test
        #[arg(long, value_delimiter = ',')]
        ratios: Option<Vec<f64>>,
        #[arg(long)]
        m_u: Option<usize>,
        #[arg(long)]
        m_i: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
        #[command(flatten)]
        embed: EmbedArgs,
    },
    /// Generate a dialogue per sample.
    GenDialogues {
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// fallback or remote
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        temperature: Option<f64>,
        /// Environment variable holding the API key.
        #[arg(long)]
        api_key_env: Option<String>,
        #[arg(long)]
        max_in_flight: Option<usize>,
    },
    /// Check stored dialogues against the structural rules.
    ValidateDialogues {
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        dialogues: Option<PathBuf>,
    },
    /// Score a predictions file.
    Evaluate {
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Also write the JSON report here, plus a .txt table beside it.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Directory image locators resolve against (remote embedder).
        #[arg(long)]
        image_root: Option<PathBuf>,
        #[command(flatten)]
        embed: EmbedArgs,
    },
    /// Run the assistant HTTP server.
    Serve {
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        allow_anonymous: Option<bool>,
        #[arg(long)]
        token_budget: Option<usize>,
        #[arg(long)]
        similar_k: Option<usize>,
        /// NAME=URL, repeatable.
        #[arg(long)]
        tool_endpoint: Vec<String>,
        #[command(flatten)]
        embed: EmbedArgs,
    },
    /// Precompute item embeddings into a cache file.
    EmbedCache {
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        /// mock or remote
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        endpoint: Option<String>,
        #[arg(long)]
        dim: Option<usize>,
    },
    /// Nearest catalog items to a text or image query.
    Retrieve {
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        query_text: Option<String>,
        #[arg(long)]
        query_image: Option<String>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        category: Option<String>,
        #[command(flatten)]
        embed: EmbedArgs,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SynthFixture { .. } => "synth-fixture",
            Command::Ingest { .. } => "ingest",
            Command::BuildDataset { .. } => "build-dataset",
            Command::GenDialogues { .. } => "gen-dialogues",
            Command::ValidateDialogues { .. } => "validate-dialogues",
            Command::Evaluate { .. } => "evaluate",
            Command::Serve { .. } => "serve",
            Command::EmbedCache { .. } => "embed-cache",
            Command::Retrieve { .. } => "retrieve",
        }
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// exit code. The summary goes to `out`, diagnostics to stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let result = Settings::load(cli.config.as_deref(), cli.command.name()).and_then(|s| dispatch(cli.command, &s, out));
    match result {
        Ok(outcome) => {
            let _ = writeln!(out, "{}", serde_json::to_string_pretty(&outcome.summary).expect("summary serialises"));
            outcome.code
        }
        Err(e) => {
            eprintln!("fashionrec: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, s: &Settings, out: &mut dyn Write) -> CliResult<Outcome> {
    match cmd {
        Command::SynthFixture { out: dir, seed, outfits, users, items_per_category } => {
            let d = SynthConfig::default();
            let config = SynthConfig {
                seed: s.or(seed, "seed", d.seed)?,
                n_outfits: s.or(outfits, "outfits", d.n_outfits)?,
                n_users: s.or(users, "users", d.n_users)?,
                items_per_category: s.or(items_per_category, "items_per_category", d.items_per_category)?,
                ..d
            };
            let dir: PathBuf = s.require(dir, "out")?;
            let corpus = synth::generate(&config);
            corpus.write(&dir).map_err(io(dir.display()))?;
            Ok(Outcome::ok(json!({
                "out": dir,
                "seed": config.seed,
                "items": corpus.items.len(),
                "outfits": corpus.outfits.len(),
                "users": corpus.users.len(),
            })))
        }
        Command::Ingest { items, outfits, users, out: dir } => {
            let items: PathBuf = s.require(items, "items")?;
            let outfits: PathBuf = s.require(outfits, "outfits")?;
            let users: PathBuf = s.require(users, "users")?;
            let catalog = Catalog::ingest(&items, &outfits, &users)?;
            let mut summary = json!({ "stats": catalog.stats(), "categories": catalog.categories() });
            if let Some(dir) = s.get(dir, "out")? {
                let (copied, missing) = write_catalog_copy(&catalog, &dir)?;
                summary["out"] = json!(dir);
                summary["images_copied"] = json!(copied);
                summary["images_missing"] = json!(missing);
            }
            Ok(Outcome::ok(summary))
        }
        Command::BuildDataset { catalog, out: dir, task, seed, ratios, m_u, m_i, alpha, beta, k, embed } => {
            let catalog = open_catalog(s, catalog)?;
            let dir: PathBuf = s.require(dir, "out")?;
            let tasks = parse_tasks(&s.or(task, "task", "all".to_string())?)?;
            let d = FilterConfig::default();
            let filter = FilterConfig {
                min_user_history: s.or(m_u, "m_u", d.min_user_history)?,
                min_compatible: s.or(m_i, "m_i", d.min_compatible)?,
                alpha: s.or(alpha, "alpha", d.alpha)?,
                beta: s.or(beta, "beta", d.beta)?,
                top_k: s.or(k, "k", d.top_k)?,
            };
            let ratios = s.or(ratios, "ratios", DEFAULT_RATIOS.to_vec())?;
            let ratios: [f64; 3] = ratios
                .try_into()
                .map_err(|_| CliError::Usage("--ratios takes exactly three values".into()))?;
            let config = BuildConfig { seed: s.or(seed, "seed", 42)?, ratios, filter };
            let features = feature_store(s, embed, Some(catalog.root()))?;
            let data = build_dataset(&catalog, &features, &tasks, &config).map_err(|e| CliError::Config(e.to_string()))?;
            let splits = write_dataset(&dir, &data, &tasks, &config).map_err(io(dir.display()))?;
            let mut counts = BTreeMap::new();
            let mut warnings = Vec::new();
            for t in &tasks {
                counts.insert(t.as_str(), data.len(*t));
                if data.len(*t) == 0 {
                    let w = format!("no {t} samples produced");
                    log::warn!("{w}");
                    warnings.push(w);
                }
            }
            Ok(Outcome::ok(json!({
                "out": dir,
                "seed": config.seed,
                "samples": counts,
                "personalized_skipped": data.personalized_skipped,
                "alternative_pairs": data.alternative_pairs,
                "splits": splits.iter().map(|sp| json!({"task": sp.task, "sizes": sp.sizes()})).collect::<Vec<_>>(),
                "warnings": warnings,
            })))
        }
        Command::GenDialogues { catalog, dataset, out: file, backend, endpoint, model, temperature, api_key_env, max_in_flight } => {
            let catalog = open_catalog(s, catalog)?;
            let dataset: PathBuf = s.require(dataset, "dataset")?;
            let file = s.or(file, "out", dataset.join("dialogues.jsonl"))?;
            let samples = read_samples(&dataset).map_err(io(dataset.display()))?;
            let backend_name = s.or(backend, "backend", "fallback".to_string())?;
            let backend: Box<dyn DialogueBackend> = match backend_name.as_str() {
                "fallback" => Box::new(FallbackBackend),
                "remote" => {
                    let d = RemoteChatConfig::default();
                    let key_var = s.or(api_key_env, "api_key_env", "FASHIONREC_API_KEY".to_string())?;
                    Box::new(RemoteChatBackend::new(RemoteChatConfig {
                        endpoint: s.or(endpoint, "endpoint", d.endpoint)?,
                        model: s.or(model, "model", d.model)?,
                        temperature: s.or(temperature, "temperature", d.temperature)?,
                        api_key: std::env::var(key_var).ok(),
                    }))
                }
                other => return Err(CliError::Usage(format!("unknown dialogue backend {other:?}"))),
            };
            let in_flight = s.or(max_in_flight, "max_in_flight", 8)?;
            let results = generate_all(&catalog, &samples, backend.as_ref(), in_flight);
            let mut records = Vec::new();
            let mut failures = Vec::new();
            for (sample, r) in samples.iter().zip(results) {
                match r {
                    Ok(d) => records.push(DialogueRecord::new(sample.id(), d)),
                    Err(e) => failures.push(json!({ "sample_id": sample.id(), "error": e.to_string() })),
                }
            }
            catalog::write_jsonl(&file, &records).map_err(io(file.display()))?;
            let failed_path = file.with_extension("failed.jsonl");
            if failures.is_empty() {
                if failed_path.exists() {
                    fs::remove_file(&failed_path).map_err(io(failed_path.display()))?;
                }
            } else {
                catalog::write_jsonl(&failed_path, &failures).map_err(io(failed_path.display()))?;
            }
            Ok(Outcome {
                code: if failures.is_empty() { EXIT_OK } else { EXIT_VALIDATION },
                summary: json!({
                    "backend": backend.name(),
                    "out": file,
                    "samples": samples.len(),
                    "dialogues": records.len(),
                    "failed": failures.len(),
                }),
            })
        }
        Command::ValidateDialogues { catalog, dataset, dialogues } => {
            let catalog = open_catalog(s, catalog)?;
            let dataset: PathBuf = s.require(dataset, "dataset")?;
            let file = s.or(dialogues, "dialogues", dataset.join("dialogues.jsonl"))?;
            let samples = read_samples(&dataset).map_err(io(dataset.display()))?;
            let by_id: HashMap<&str, _> = samples.iter().map(|x| (x.id(), x)).collect();
            let records: Vec<DialogueRecord> = read_jsonl(&file)?;
            let mut by_rule: BTreeMap<String, usize> = BTreeMap::new();
            let (mut violating, mut unknown) = (0, Vec::new());
            let mut examples = Vec::new();
            for r in &records {
                let Some(sample) = by_id.get(r.sample_id.as_str()) else {
                    unknown.push(r.sample_id.clone());
                    continue;
                };
                let v = validate_dialogue(&catalog, sample, &r.dialogue()).map_err(|e| CliError::Validation(e.to_string()))?;
                if !v.is_empty() {
                    violating += 1;
                }
                for violation in v {
                    *by_rule.entry(format!("{:?}", violation.rule)).or_default() += 1;
                    if examples.len() < 20 {
                        examples.push(json!({ "sample_id": r.sample_id, "violation": violation }));
                    }
                }
            }
            let covered: std::collections::HashSet<&str> = records.iter().map(|r| r.sample_id.as_str()).collect();
            let missing = samples.iter().filter(|x| !covered.contains(x.id())).count();
            if missing > 0 {
                log::warn!("{missing} samples have no dialogue");
            }
            Ok(Outcome {
                code: if violating == 0 && unknown.is_empty() { EXIT_OK } else { EXIT_VALIDATION },
                summary: json!({
                    "checked": records.len(),
                    "clean": records.len() - violating - unknown.len(),
                    "violating": violating,
                    "by_rule": by_rule,
                    "unknown_samples": unknown,
                    "missing_dialogues": missing,
                    "examples": examples,
                }),
            })
        }
        Command::Evaluate { predictions, report, image_root, embed } => {
            let path: PathBuf = s.require(predictions, "predictions")?;
            let pairs: Vec<EvalPair> = read_jsonl(&path)?;
            let image_root: Option<PathBuf> = s.get(image_root, "image_root")?;
            let embedder = embedder(s, embed, image_root.as_deref())?;
            let result = evaluate_run(&pairs, embedder.as_ref());
            let table = result.to_table();
            eprint!("{table}");
            if let Some(report) = s.get::<PathBuf>(report, "report")? {
                let body = serde_json::to_string_pretty(&result).expect("report serialises") + "\n";
                fs::write(&report, body).map_err(io(report.display()))?;
                let txt = report.with_extension("txt");
                fs::write(&txt, &table).map_err(io(txt.display()))?;
            }
            Ok(Outcome::ok(json!(result)))
        }
        Command::Serve { catalog, host, port, data_dir, allow_anonymous, token_budget, similar_k, tool_endpoint, embed } => {
            let catalog = open_catalog(s, catalog)?;
            let d = OrchestratorConfig::default();
            let mut endpoints: BTreeMap<String, String> = s.or(None, "tool_endpoints", BTreeMap::new())?;
            let flags = if tool_endpoint.is_empty() { s.or(None, "tool_endpoint", Vec::<String>::new())? } else { tool_endpoint };
            for spec in flags {
                let (name, url) = spec
                    .split_once('=')
                    .ok_or_else(|| CliError::Usage(format!("--tool-endpoint wants NAME=URL, got {spec:?}")))?;
                endpoints.insert(name.to_string(), url.to_string());
            }
            let config = OrchestratorConfig {
                data_dir: s.or(data_dir, "data_dir", d.data_dir)?,
                allow_anonymous: s.or(allow_anonymous, "allow_anonymous", d.allow_anonymous)?,
                token_budget: s.or(token_budget, "token_budget", d.token_budget)?,
                similar_k: s.or(similar_k, "similar_k", d.similar_k)?,
                tool_endpoints: endpoints,
            };
            let host = s.or(host, "host", "127.0.0.1".to_string())?;
            let port = s.or(port, "port", 8080u16)?;
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| CliError::Usage(format!("bad listen address {host}:{port}: {e}")))?;
            let features = Arc::new(feature_store(s, embed, Some(catalog.root()))?);
            let orch = Orchestrator::new(Arc::new(catalog), features, config, Box::new(SystemClock))
                .map_err(|e| CliError::Io(e.to_string()))?;
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(io("tokio runtime"))?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await.map_err(io(addr))?;
                let bound = listener.local_addr().map_err(io(addr))?;
                // announced before serving so scripts can pick up an ephemeral port
                let line = json!({ "listening": bound.to_string(), "sessions": orch.session_ids().len() });
                writeln!(out, "{line}").and_then(|_| out.flush()).map_err(io("stdout"))?;
                fashionrec_server::http::serve_on(Arc::new(orch), listener).await.map_err(io(bound))?;
                Ok(Outcome::ok(json!({ "stopped": bound.to_string() })))
            })
        }
        Command::EmbedCache { catalog, cache, backend, endpoint, dim } => {
            let catalog = open_catalog(s, catalog)?;
            let cache: PathBuf = s.require(cache, "cache")?;
            let config = EmbedderConfig {
                dim: s.or(dim, "dim", EmbedderConfig::default().dim)?,
                backend: parse_backend(&s.or(backend, "backend", "mock".to_string())?)?,
                endpoint: s.get(endpoint, "endpoint")?,
                cache_path: None,
            };
            config.validate().map_err(|e| CliError::Config(e.to_string()))?;
            let inner: Box<dyn Embedder> = match config.backend {
                Backend::Mock => Box::new(MockEmbedder::new(config.dim).map_err(|e| CliError::Config(e.to_string()))?),
                Backend::Remote => Box::new(
                    RemoteEmbedder::new(config.endpoint.as_deref().unwrap_or_default(), config.dim)
                        .with_image_root(catalog.root()),
                ),
            };
            let cached = Arc::new(CachedEmbedder::with_file(inner, &cache).map_err(io(cache.display()))?);
            let before = cached.len();
            let store = FeatureStore::new(cached.clone());
            store.warm(&catalog).map_err(|e| CliError::Io(e.to_string()))?;
            Ok(Outcome::ok(json!({
                "cache": cache,
                "items": catalog.items().len(),
                "entries": cached.len(),
                "added": cached.len() - before,
            })))
        }
        Command::Retrieve { catalog, query_text, query_image, k, category, embed } => {
            let catalog = open_catalog(s, catalog)?;
            let features = feature_store(s, embed, Some(catalog.root()))?;
            let text: Option<String> = s.get(query_text, "query_text")?;
            let image: Option<String> = s.get(query_image, "query_image")?;
            let embed_err = |e: fashionrec_core::EmbeddingError| CliError::Io(e.to_string());
            let query = match (&text, &image) {
                (Some(t), None) => features.embedder().embed_text(t).map_err(embed_err)?,
                (None, Some(i)) => features.embedder().embed_image(i).map_err(embed_err)?,
                _ => return Err(CliError::Usage("give exactly one of --query-text, --query-image".into())),
            };
            let k = s.or(k, "k", 5)?;
            let category: Option<String> = s.get(category, "category")?;
            let hits = catalog.nearest_items(&features, &query, category.as_deref(), k)?;
            let results: Vec<Value> = hits
                .iter()
                .map(|n| {
                    let item = catalog.item(&n.id).expect("hit comes from the catalog");
                    json!({ "id": n.id, "category": item.category, "similarity": n.similarity, "description": item.description })
                })
                .collect();
            Ok(Outcome::ok(json!({ "query": text.or(image), "k": k, "results": results })))
        }
    }
}

fn open_catalog(s: &Settings, flag: Option<PathBuf>) -> CliResult<Catalog> {
    let dir: PathBuf = s.require(flag, "catalog")?;
    Ok(Catalog::open_dir(&dir)?)
}

fn parse_backend(name: &str) -> CliResult<Backend> {
    serde_json::from_value(json!(name)).map_err(|_| CliError::Usage(format!("unknown embedder backend {name:?}")))
}

fn embedder(s: &Settings, args: EmbedArgs, image_root: Option<&Path>) -> CliResult<Box<dyn Embedder>> {
    let d = EmbedderConfig::default();
    let config = EmbedderConfig {
        dim: s.or(args.dim, "dim", d.dim)?,
        backend: parse_backend(&s.or(args.embed_backend, "embed_backend", "mock".to_string())?)?,
        endpoint: s.get(args.embed_endpoint, "embed_endpoint")?,
        cache_path: s.get(args.embed_cache, "embed_cache")?,
    };
    config.build(image_root).map_err(|e| CliError::Config(e.to_string()))
}

fn feature_store(s: &Settings, args: EmbedArgs, image_root: Option<&Path>) -> CliResult<FeatureStore> {
    Ok(FeatureStore::new(Arc::from(embedder(s, args, image_root)?)))
}

fn parse_tasks(spec: &str) -> CliResult<Vec<TaskKind>> {
    if spec == "all" {
        return Ok(TaskKind::ALL.to_vec());
    }
    let mut tasks = Vec::new();
    for part in spec.split(',') {
        let t: TaskKind = part.trim().parse().map_err(CliError::Usage)?;
        if !tasks.contains(&t) {
            tasks.push(t);
        }
    }
    tasks.sort_by_key(|t| TaskKind::ALL.iter().position(|x| x == t));
    Ok(tasks)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<Vec<T>> {
    let raw = fs::read_to_string(path).map_err(io(path.display()))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| CliError::Io(format!("{}:{}: {e}", path.display(), n + 1))))
        .collect()
}

/// Writes the catalog files to `dir` and copies every relative image the
/// catalog references. Returns (copied, missing).
fn write_catalog_copy(catalog: &Catalog, dir: &Path) -> CliResult<(usize, usize)> {
    catalog.write_dir(dir).map_err(io(dir.display()))?;
    let (mut copied, mut missing) = (0, 0);
    for item in catalog.items() {
        if Path::new(&item.image_ref).is_absolute() {
            continue;
        }
        let src = catalog.resolve_path(&item.image_ref);
        let dst = dir.join(&item.image_ref);
        if src == dst {
            copied += 1;
            continue;
        }
        if !src.is_file() {
            log::warn!("image {} for {} not found", src.display(), item.id);
            missing += 1;
            continue;
        }
        if let Some(parent) = dst.parent() {
            fs::create_dir_all(parent).map_err(io(parent.display()))?;
        }
        fs::copy(&src, &dst).map_err(io(src.display()))?;
        copied += 1;
    }
    Ok((copied, missing))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_lists() {
        assert_eq!(parse_tasks("all").unwrap(), TaskKind::ALL);
        assert_eq!(parse_tasks("alternative,basic,basic").unwrap(), [TaskKind::Basic, TaskKind::Alternative]);
        assert!(parse_tasks("fancy").is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        let mut out = Vec::new();
        assert_eq!(run(["fashionrec", "ingest", "--bogus"], &mut out), EXIT_ERROR);
        assert_eq!(run(["fashionrec", "frobnicate"], &mut out), EXIT_ERROR);
        assert_eq!(run(["fashionrec", "retrieve"], &mut out), EXIT_ERROR);
        assert!(out.is_empty());
        assert_eq!(run(["fashionrec", "--help"], &mut out), EXIT_OK);
    }
}
