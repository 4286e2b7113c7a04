//! Multi-turn session handling.
//!
//! Each user message is resolved (uploaded images are stored and matched
//! against the catalog), routed to tools by keyword, and answered with the
//! tool outcomes folded into one reply. Sessions are kept in memory and
//! appended to `sessions/{id}.jsonl` under the data directory, so a restart
//! picks them back up.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use base64::Engine;
use fashionrec_core::catalog::{Catalog, FeatureStore};
use fashionrec_core::text::{preference_summary, truncate_tokens};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::tools::{
    categories_in_text, sha256_hex, HttpTool, Tool, ToolContext, ToolError, ToolRegistry, GENERATE_IMAGE, RECOMMEND,
    RETRIEVE_SIMILAR, TRY_ON, UPLOADS_DIR,
};

pub const SESSIONS_DIR: &str = "sessions";
/// Whitespace-token budget for the assembled model context.
pub const DEFAULT_TOKEN_BUDGET: usize = 381;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown user {0}")]
    UnknownUser(String),
    #[error("anonymous sessions are disabled")]
    AnonymousNotAllowed,
    #[error("message has neither text nor images")]
    EmptyMessage,
    #[error("bad image {0}: {1}")]
    BadImage(String, String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: corrupt session log: {message}")]
    CorruptLog { path: PathBuf, message: String },
}

pub type Result<T, E = OrchestratorError> = std::result::Result<T, E>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OrchestratorError + '_ {
    move |source| OrchestratorError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OrchestratorConfig {
    pub data_dir: PathBuf,
    pub allow_anonymous: bool,
    pub token_budget: usize,
    pub similar_k: usize,
    /// Tool name to remote endpoint. Tools not listed use the built-in stub.
    pub tool_endpoints: BTreeMap<String, String>,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            allow_anonymous: true,
            token_budget: DEFAULT_TOKEN_BUDGET,
            similar_k: 3,
            tool_endpoints: BTreeMap::new(),
        }
    }
}

pub trait Clock: Send + Sync {
    /// Seconds since the Unix epoch.
    fn now(&self) -> u64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> u64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
    }
}

/// Always reports the same instant. Used for reproducible transcripts.
pub struct FixedClock(pub u64);

impl Clock for FixedClock {
    fn now(&self) -> u64 {
        self.0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UserMessage {
    #[serde(default)]
    pub text: String,
    /// Item ids, catalog image locators, upload locators, data URLs or raw
    /// base64 image bytes. Stored resolved.
    #[serde(default, alias = "images")]
    pub image_refs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub tool: String,
    pub args: Value,
    pub args_digest: String,
    pub outcome_digest: Option<String>,
    pub status: String,
    pub error: Option<String>,
    pub image_refs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssistantReply {
    pub text: String,
    pub image_refs: Vec<String>,
    pub tool_trace: Vec<ToolCall>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTurn {
    pub index: usize,
    pub user: UserMessage,
    /// Model context after truncation to the token budget.
    pub context: String,
    pub reply: AssistantReply,
    /// Outfit after this turn: catalog item ids or upload locators.
    pub outfit: Vec<String>,
    pub recommended: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub user_id: Option<String>,
    pub created_at: u64,
    #[serde(default)]
    pub turns: Vec<SessionTurn>,
}

#[derive(Serialize, Deserialize)]
struct SessionHeader {
    id: String,
    user_id: Option<String>,
    created_at: u64,
}

/// Which tools a message asks for.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Intents {
    pub recommend: bool,
    pub replace: bool,
    pub generate: bool,
    pub similar: bool,
    pub try_on: bool,
}

const REPLACE_WORDS: &[&str] = &["change", "replace", "swap", "switch", "instead", "alternative", "alternatives"];
const GENERATE_WORDS: &[&str] = &["generate", "show", "visualize", "draw", "render"];
const SIMILAR_WORDS: &[&str] = &["similar", "alike", "resemble", "resembles", "comparable"];
const RECOMMEND_WORDS: &[&str] = &["suggest", "recommend", "pair", "match", "complete", "need", "want", "what", "which"];

/// Keyword router. A message with no recognised intent gets a recommendation.
pub fn route(text: &str) -> Intents {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower.split(|c: char| !c.is_alphanumeric()).filter(|w| !w.is_empty()).collect();
    let any = |set: &[&str]| words.iter().any(|w| set.contains(w));
    let try_on = words.windows(2).any(|w| w == ["try", "on"]) || words.contains(&"tryon");
    let mut intents = Intents {
        recommend: any(RECOMMEND_WORDS),
        replace: any(REPLACE_WORDS),
        generate: any(GENERATE_WORDS),
        similar: any(SIMILAR_WORDS),
        try_on,
    };
    if intents.replace {
        intents.recommend = false;
    }
    if intents == Intents::default() {
        intents.recommend = true;
    }
    intents
}

/// Serialises `value` and returns the first 16 hex chars of its SHA-256.
pub fn digest(value: &Value) -> String {
    sha256_hex(value.to_string().as_bytes())[..16].to_string()
}

pub struct Orchestrator {
    ctx: Arc<ToolContext>,
    registry: ToolRegistry,
    config: OrchestratorConfig,
    clock: Box<dyn Clock>,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<Session>>>>,
    next_id: AtomicU64,
    /// SHA-256 of each catalog image file, for matching uploads.
    image_hashes: OnceLock<HashMap<String, String>>,
}

impl Orchestrator {
    pub fn new(
        catalog: Arc<Catalog>,
        features: Arc<FeatureStore>,
        config: OrchestratorConfig,
        clock: Box<dyn Clock>,
    ) -> Result<Self> {
        let ctx = Arc::new(ToolContext {
            catalog,
            features,
            data_dir: config.data_dir.clone(),
        });
        let mut registry = ToolRegistry::with_stubs(ctx.clone());
        for (name, url) in &config.tool_endpoints {
            match registry.list().into_iter().find(|d| d.name == *name) {
                Some(desc) => {
                    registry.register(Box::new(HttpTool::new(desc, url)));
                }
                None => log::warn!("ignoring endpoint for unknown tool {name}"),
            }
        }
        let orch = Self {
            ctx,
            registry,
            config,
            clock,
            sessions: RwLock::new(BTreeMap::new()),
            next_id: AtomicU64::new(1),
            image_hashes: OnceLock::new(),
        };
        orch.load_sessions()?;
        Ok(orch)
    }

    /// Swaps in a tool implementation, e.g. a remote one or a test double.
    pub fn register_tool(&mut self, tool: Box<dyn Tool>) {
        self.registry.register(tool);
    }

    pub fn registry(&self) -> &ToolRegistry {
        &self.registry
    }

    pub fn catalog(&self) -> &Catalog {
        &self.ctx.catalog
    }

    pub fn context(&self) -> &Arc<ToolContext> {
        &self.ctx
    }

    pub fn config(&self) -> &OrchestratorConfig {
        &self.config
    }

    fn sessions_dir(&self) -> PathBuf {
        self.config.data_dir.join(SESSIONS_DIR)
    }

    fn load_sessions(&self) -> Result<()> {
        let dir = self.sessions_dir();
        if !dir.exists() {
            return Ok(());
        }
        let mut max_n = 0;
        let mut loaded = BTreeMap::new();
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
            .collect();
        paths.sort();
        for path in paths {
            let session = read_session(&path)?;
            if let Some(n) = session.id.strip_prefix("sess-").and_then(|n| n.parse::<u64>().ok()) {
                max_n = max_n.max(n);
            }
            loaded.insert(session.id.clone(), Arc::new(Mutex::new(session)));
        }
        self.next_id.store(max_n + 1, Ordering::SeqCst);
        *self.sessions.write().expect("session map poisoned") = loaded;
        Ok(())
    }

    pub fn create_session(&self, user_id: Option<&str>) -> Result<Session> {
        match user_id {
            Some(u) if !self.ctx.catalog.has_user(u) => return Err(OrchestratorError::UnknownUser(u.to_string())),
            None if !self.config.allow_anonymous => return Err(OrchestratorError::AnonymousNotAllowed),
            _ => {}
        }
        let n = self.next_id.fetch_add(1, Ordering::SeqCst);
        let session = Session {
            id: format!("sess-{n}"),
            user_id: user_id.map(str::to_string),
            created_at: self.clock.now(),
            turns: Vec::new(),
        };
        let header = SessionHeader {
            id: session.id.clone(),
            user_id: session.user_id.clone(),
            created_at: session.created_at,
        };
        let dir = self.sessions_dir();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let path = dir.join(format!("{}.jsonl", session.id));
        fs::write(&path, format!("{}\n", serde_json::to_string(&header).expect("header serialises")))
            .map_err(io_err(&path))?;
        self.sessions
            .write()
            .expect("session map poisoned")
            .insert(session.id.clone(), Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    pub fn session(&self, id: &str) -> Result<Session> {
        let handle = self.handle(id)?;
        let s = handle.lock().expect("session poisoned").clone();
        Ok(s)
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().expect("session map poisoned").keys().cloned().collect()
    }

    fn handle(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| OrchestratorError::UnknownSession(id.to_string()))
    }

    /// Handles one user message and returns the recorded turn. Turns within
    /// one session are serialised; different sessions run concurrently.
    pub fn handle_message(&self, session_id: &str, message: UserMessage) -> Result<SessionTurn> {
        let handle = self.handle(session_id)?;
        let mut session = handle.lock().expect("session poisoned");
        if message.text.trim().is_empty() && message.image_refs.is_empty() {
            return Err(OrchestratorError::EmptyMessage);
        }
        let images = message
            .image_refs
            .iter()
            .map(|r| self.resolve_image(r))
            .collect::<Result<Vec<_>>>()?;

        let catalog = &self.ctx.catalog;
        let mut outfit: Vec<String> = session.turns.last().map(|t| t.outfit.clone()).unwrap_or_default();
        for img in &images {
            if !outfit.contains(img) {
                outfit.push(img.clone());
            }
        }
        let preference = match &session.user_id {
            Some(u) => {
                let items = catalog.user_items(u).map_err(|_| OrchestratorError::UnknownUser(u.clone()))?;
                Some(preference_summary(&items, 5)).filter(|s| !s.is_empty())
            }
            None => None,
        };
        let context = self.build_context(&session, &message.text, preference.as_deref());
        let intents = route(&message.text);
        let mentioned = categories_in_text(catalog, &message.text);
        let last_recommended = session.turns.iter().rev().find_map(|t| t.recommended.clone());

        let mut trace = Vec::new();
        let mut texts = Vec::new();
        let mut reply_images = Vec::new();
        let mut recommended: Option<String> = None;

        if intents.recommend || intents.replace {
            let mut args = json!({ "context_items": outfit, "prompt": context });
            if !message.text.trim().is_empty() {
                args["text"] = json!(message.text.trim());
            }
            if let Some(p) = &preference {
                args["preference"] = json!(p);
            }
            let mut replaced = None;
            if intents.replace {
                replaced = mentioned
                    .iter()
                    .find_map(|c| {
                        outfit
                            .iter()
                            .find(|o| catalog.item(o).is_ok_and(|i| i.category == *c))
                            .cloned()
                    })
                    .or_else(|| last_recommended.clone().filter(|r| outfit.contains(r)));
                match &replaced {
                    Some(r) => args["replace"] = json!(r),
                    None => {
                        if let Some(c) = mentioned.first() {
                            args["category"] = json!(c);
                        }
                    }
                }
            } else if let Some(c) = mentioned.iter().find(|c| !outfit.iter().any(|o| catalog.category_of(o).is_ok_and(|oc| oc == c.as_str()))) {
                args["category"] = json!(c);
            }
            if let Some(out) = self.run_tool(RECOMMEND, args, &mut trace, &mut texts) {
                if let Some(id) = out["item_id"].as_str() {
                    recommended = Some(id.to_string());
                    match &replaced {
                        Some(r) => {
                            for o in outfit.iter_mut() {
                                if o == r {
                                    *o = id.to_string();
                                }
                            }
                        }
                        None => outfit.push(id.to_string()),
                    }
                }
                texts.push(out["text"].as_str().unwrap_or_default().to_string());
                if let Some(img) = out["image_ref"].as_str() {
                    reply_images.push(img.to_string());
                }
            }
        }

        let subject = recommended
            .clone()
            .or(last_recommended)
            .or_else(|| outfit.iter().rev().find(|o| catalog.item(o).is_ok()).cloned());

        if intents.generate {
            let args = match &subject {
                Some(id) => json!({ "item_id": id }),
                None => json!({ "prompt": message.text.trim() }),
            };
            if let Some(out) = self.run_tool(GENERATE_IMAGE, args, &mut trace, &mut texts) {
                if let Some(img) = out["image_ref"].as_str() {
                    texts.push(format!("Here is an image of {}.", describe(catalog, out["item_id"].as_str())));
                    push_unique(&mut reply_images, img);
                }
            }
        }

        if intents.similar {
            let mut args = json!({ "k": self.config.similar_k });
            let upload = images.iter().find(|i| catalog.item(i).is_err());
            match (&subject, upload) {
                (_, Some(u)) => args["image"] = json!(u),
                (Some(id), None) => args["item_id"] = json!(id),
                (None, None) => args["text"] = json!(message.text.trim()),
            }
            let category = mentioned
                .first()
                .cloned()
                .or_else(|| subject.as_deref().and_then(|s| catalog.category_of(s).ok()).map(str::to_string));
            if let Some(c) = category {
                args["category"] = json!(c);
            }
            let mut exclude: Vec<String> = outfit.iter().filter(|o| catalog.item(o).is_ok()).cloned().collect();
            if let Some(s) = &subject {
                if !exclude.contains(s) {
                    exclude.push(s.clone());
                }
            }
            args["exclude"] = json!(exclude);
            if let Some(out) = self.run_tool(RETRIEVE_SIMILAR, args, &mut trace, &mut texts) {
                let results = out["results"].as_array().cloned().unwrap_or_default();
                if results.is_empty() {
                    texts.push("I couldn't find anything similar in the catalog.".into());
                } else {
                    let listed: Vec<String> = results
                        .iter()
                        .map(|r| format!("{} ({})", r["description"].as_str().unwrap_or("?"), r["item_id"].as_str().unwrap_or("?")))
                        .collect();
                    texts.push(format!("Similar picks: {}.", listed.join("; ")));
                    for r in &results {
                        if let Some(img) = r["image_ref"].as_str() {
                            push_unique(&mut reply_images, img);
                        }
                    }
                }
            }
        }

        if intents.try_on {
            if outfit.is_empty() {
                texts.push("There is nothing to try on yet. Send a photo of an item first.".into());
            } else {
                let args = json!({ "image_refs": outfit });
                if let Some(out) = self.run_tool(TRY_ON, args, &mut trace, &mut texts) {
                    if let Some(img) = out["image_ref"].as_str() {
                        texts.push("Here is a preview of the whole outfit.".into());
                        push_unique(&mut reply_images, img);
                    }
                }
            }
        }

        let turn = SessionTurn {
            index: session.turns.len(),
            user: UserMessage {
                text: message.text,
                image_refs: images,
            },
            context,
            reply: AssistantReply {
                text: texts.join(" "),
                image_refs: reply_images,
                tool_trace: trace,
            },
            outfit,
            recommended,
        };
        let path = self.sessions_dir().join(format!("{}.jsonl", session.id));
        let mut f = OpenOptions::new().append(true).open(&path).map_err(io_err(&path))?;
        writeln!(f, "{}", serde_json::to_string(&turn).expect("turn serialises")).map_err(io_err(&path))?;
        session.turns.push(turn.clone());
        Ok(turn)
    }

    /// Current message plus the preference summary, then earlier turns from
    /// newest to oldest, cut to the token budget.
    fn build_context(&self, session: &Session, text: &str, preference: Option<&str>) -> String {
        let mut parts = Vec::new();
        let mut head = text.trim().to_string();
        if let Some(p) = preference {
            head = format!("{head} ({p})").trim().to_string();
        }
        parts.push(head);
        for t in session.turns.iter().rev() {
            parts.push(format!("assistant: {}", t.reply.text));
            parts.push(format!("user: {}", t.user.text));
        }
        truncate_tokens(&parts.join("\n"), self.config.token_budget)
    }

    /// Runs a tool and records it. A failure becomes a note in the reply.
    fn run_tool(&self, name: &str, args: Value, trace: &mut Vec<ToolCall>, texts: &mut Vec<String>) -> Option<Value> {
        let args_digest = digest(&args);
        match self.registry.call(name, &args) {
            Ok(out) => {
                let mut images = Vec::new();
                collect_image_refs(&out, &mut images);
                trace.push(ToolCall {
                    tool: name.into(),
                    args,
                    args_digest,
                    outcome_digest: Some(digest(&out)),
                    status: "ok".into(),
                    error: None,
                    image_refs: images,
                });
                Some(out)
            }
            Err(e) => {
                log::warn!("tool {name} failed: {e}");
                let note = match &e {
                    ToolError::Failed(_) | ToolError::UnknownTool(_) => {
                        format!("(The {} service is unavailable right now, so I skipped that step.)", name.replace('_', " "))
                    }
                    ToolError::InvalidParams(m) => format!("(I couldn't run {}: {m}.)", name.replace('_', " ")),
                };
                texts.push(note);
                trace.push(ToolCall {
                    tool: name.into(),
                    args,
                    args_digest,
                    outcome_digest: None,
                    status: "error".into(),
                    error: Some(e.to_string()),
                    image_refs: Vec::new(),
                });
                None
            }
        }
    }

    /// Maps an incoming image to a catalog item id or an upload locator.
    pub fn resolve_image(&self, raw: &str) -> Result<String> {
        let raw = raw.trim();
        let catalog = &self.ctx.catalog;
        if catalog.item(raw).is_ok() {
            return Ok(raw.to_string());
        }
        if let Some(item) = catalog.items().iter().find(|i| i.image_ref == raw) {
            return Ok(item.id.clone());
        }
        if raw.starts_with(&format!("{UPLOADS_DIR}/")) {
            return match self.ctx.resolve_ref(raw) {
                Some(p) if p.is_file() => {
                    let bytes = fs::read(&p).map_err(io_err(&p))?;
                    Ok(self.match_upload(&bytes).unwrap_or_else(|| raw.to_string()))
                }
                _ => Err(OrchestratorError::BadImage(raw.to_string(), "no such upload".into())),
            };
        }
        let bytes = decode_image_payload(raw).ok_or_else(|| {
            OrchestratorError::BadImage(short(raw), "not an item id, image locator, data URL or base64 image".into())
        })?;
        let format = image::guess_format(&bytes)
            .map_err(|e| OrchestratorError::BadImage(short(raw), e.to_string()))?;
        let ext = format.extensions_str().first().copied().unwrap_or("bin");
        if let Some(id) = self.match_upload(&bytes) {
            return Ok(id);
        }
        let locator = format!("{UPLOADS_DIR}/{}.{ext}", &sha256_hex(&bytes)[..16]);
        let path = self.config.data_dir.join(&locator);
        if !path.exists() {
            let dir = path.parent().expect("locator has a directory");
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            fs::write(&path, &bytes).map_err(io_err(&path))?;
        }
        Ok(locator)
    }

    fn match_upload(&self, bytes: &[u8]) -> Option<String> {
        let hashes = self.image_hashes.get_or_init(|| {
            let mut m = HashMap::new();
            for item in self.ctx.catalog.items() {
                if let Ok(b) = fs::read(self.ctx.catalog.resolve_path(&item.image_ref)) {
                    m.entry(sha256_hex(&b)).or_insert_with(|| item.id.clone());
                }
            }
            m
        });
        hashes.get(&sha256_hex(bytes)).cloned()
    }
}

fn read_session(path: &Path) -> Result<Session> {
    let corrupt = |message: String| OrchestratorError::CorruptLog {
        path: path.to_path_buf(),
        message,
    };
    let f = fs::File::open(path).map_err(io_err(path))?;
    let mut lines = BufReader::new(f).lines();
    let header: SessionHeader = match lines.next() {
        Some(line) => serde_json::from_str(&line.map_err(io_err(path))?).map_err(|e| corrupt(e.to_string()))?,
        None => return Err(corrupt("empty file".into())),
    };
    let mut turns = Vec::new();
    for line in lines {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<SessionTurn>(&line) {
            Ok(t) => turns.push(t),
            // a crash mid-append leaves at most one torn final line
            Err(e) => {
                log::warn!("{}: dropping unreadable turn: {e}", path.display());
                break;
            }
        }
    }
    Ok(Session {
        id: header.id,
        user_id: header.user_id,
        created_at: header.created_at,
        turns,
    })
}

fn decode_image_payload(raw: &str) -> Option<Vec<u8>> {
    let b64 = match raw.strip_prefix("data:") {
        Some(rest) => rest.split_once(";base64,")?.1,
        None => raw,
    };
    let cleaned: String = b64.chars().filter(|c| !c.is_whitespace()).collect();
    base64::engine::general_purpose::STANDARD.decode(cleaned).ok()
}

fn short(raw: &str) -> String {
    raw.chars().take(40).collect()
}

fn describe(catalog: &Catalog, id: Option<&str>) -> String {
    id.and_then(|i| catalog.item(i).ok())
        .map_or_else(|| "the item".into(), |i| format!("the {} ({})", i.description, i.id))
}

fn push_unique(v: &mut Vec<String>, s: &str) {
    if !v.iter().any(|x| x == s) {
        v.push(s.to_string());
    }
}

fn collect_image_refs(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                if k == "image_ref" {
                    if let Some(s) = x.as_str() {
                        push_unique(out, s);
                    }
                } else {
                    collect_image_refs(x, out);
                }
            }
        }
        Value::Array(a) => a.iter().for_each(|x| collect_image_refs(x, out)),
        _ => {}
    }
}
