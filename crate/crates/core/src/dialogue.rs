//! Dialogue generation for constructed samples.
//!
//! A sample is rendered into a system prompt plus a structured user message,
//! sent to a backend (a deterministic template generator or a remote chat
//! completion endpoint), and the resulting conversation is checked against
//! the structural rules the prompts impose.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, CatalogError, Item};
use crate::samples::{AlternativeSample, BasicSample, PersonalizedSample, SampleRecord, TaskKind};
use crate::text;

pub const BASIC_PROMPT: &str = include_str!("../assets/prompts/basic.txt");
pub const PERSONALIZED_PROMPT: &str = include_str!("../assets/prompts/personalized.txt");
pub const ALTERNATIVE_PROMPT: &str = include_str!("../assets/prompts/alternative.txt");

/// A user query leaks when it repeats this many consecutive content words of
/// a protected item description.
pub const LEAK_RUN: usize = 3;

#[derive(Debug, Error)]
pub enum DialogueError {
    #[error("missing slot {slot} for sample {sample}")]
    MissingSlot { sample: String, slot: &'static str },
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error("remote generator failed: {0}")]
    Remote(String),
    #[error("unparseable generator output ({message}); raw: {raw}")]
    Unparseable { message: String, raw: String },
}

pub type Result<T, E = DialogueError> = std::result::Result<T, E>;

pub fn system_prompt(task: TaskKind) -> &'static str {
    match task {
        TaskKind::Basic => BASIC_PROMPT,
        TaskKind::Personalized => PERSONALIZED_PROMPT,
        TaskKind::Alternative => ALTERNATIVE_PROMPT,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub q: String,
    pub a: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dialogue {
    pub task: TaskKind,
    pub turns: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid: Option<u8>,
}

/// One line of `dialogues.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueRecord {
    pub sample_id: String,
    pub task: TaskKind,
    pub turns: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid: Option<u8>,
}

impl DialogueRecord {
    pub fn new(sample_id: &str, dialogue: Dialogue) -> Self {
        Self {
            sample_id: sample_id.to_string(),
            task: dialogue.task,
            turns: dialogue.turns,
            valid: dialogue.valid,
        }
    }

    pub fn dialogue(&self) -> Dialogue {
        Dialogue {
            task: self.task,
            turns: self.turns.clone(),
            valid: self.valid,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptPayload {
    pub task: TaskKind,
    pub system: String,
    pub user: String,
}

fn resolve<'c>(catalog: &'c Catalog, ids: &[String]) -> Result<Vec<&'c Item>> {
    ids.iter()
        .map(|id| catalog.item(id).map_err(DialogueError::from))
        .collect()
}

fn require<'a, T>(items: &'a [T], sample: &str, slot: &'static str) -> Result<&'a [T]> {
    if items.is_empty() {
        return Err(DialogueError::MissingSlot {
            sample: sample.to_string(),
            slot,
        });
    }
    Ok(items)
}

fn item_lines(out: &mut String, heading: &str, items: &[&Item]) {
    let _ = writeln!(out, "{heading}:");
    for item in items {
        let _ = writeln!(out, "- [{}] {}", item.category, item.description);
    }
}

/// Renders the system prompt and the slot-filled user content. Images are
/// referenced through their descriptions.
pub fn render_prompt(catalog: &Catalog, sample: &SampleRecord) -> Result<PromptPayload> {
    let mut user = String::new();
    let id = sample.id();
    match sample {
        SampleRecord::Basic(s) => {
            item_lines(&mut user, "Partial Outfit", &resolve(catalog, require(&s.partial, id, "partial")?)?);
            item_lines(&mut user, "Target Items", &resolve(catalog, require(&s.targets, id, "targets")?)?);
            user.push_str("\nReturn JSON: {\"rounds\": [{\"user\": \"...\", \"assistant\": \"...\"}]}\n");
        }
        SampleRecord::Personalized(s) => {
            item_lines(&mut user, "Partial Outfit", &resolve(catalog, require(&s.partial, id, "partial")?)?);
            item_lines(&mut user, "Target Items", &[catalog.item(&s.target)?]);
            let history = resolve(catalog, require(&s.filtered_history, id, "history")?)?;
            item_lines(&mut user, "User's Historical Interacted Items", &history);
            if s.preference_summary.trim().is_empty() {
                return Err(DialogueError::MissingSlot {
                    sample: id.to_string(),
                    slot: "preference_summary",
                });
            }
            let _ = writeln!(user, "Preference Summary: {}", s.preference_summary);
            user.push_str(
                "\nReturn JSON: {\"rounds\": [{\"user\": \"...\", \"assistant\": \"...\"}], \"valid\": 0 or 1}\n",
            );
        }
        SampleRecord::Alternative(s) => {
            let outfit = catalog.outfit(&s.outfit_a)?;
            item_lines(&mut user, "Outfit A", &resolve(catalog, require(&outfit.item_ids, id, "outfit_a")?)?);
            item_lines(&mut user, "Item A", &[catalog.item(&s.replace)?]);
            item_lines(&mut user, "Item B", &[catalog.item(&s.replacement)?]);
            user.push_str("\nReturn JSON: {\"rounds\": [{\"user\": \"...\", \"assistant\": \"...\"}]}\n");
        }
    }
    Ok(PromptPayload {
        task: sample.kind(),
        system: system_prompt(sample.kind()).to_string(),
        user,
    })
}

pub trait DialogueBackend: Send + Sync {
    fn name(&self) -> &str;

    fn generate(&self, catalog: &Catalog, sample: &SampleRecord, payload: &PromptPayload) -> Result<Dialogue>;
}

/// Offline generator backed by [`template_fallback`].
#[derive(Debug, Default, Clone, Copy)]
pub struct FallbackBackend;

impl DialogueBackend for FallbackBackend {
    fn name(&self) -> &str {
        "fallback"
    }

    fn generate(&self, catalog: &Catalog, sample: &SampleRecord, _payload: &PromptPayload) -> Result<Dialogue> {
        template_fallback(catalog, sample)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteChatConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub api_key: Option<String>,
}

impl Default for RemoteChatConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "default".into(),
            temperature: 0.0,
            api_key: None,
        }
    }
}

/// Single chat-completion call per sample; the reply content must be the
/// `{rounds, valid?}` JSON object.
pub struct RemoteChatBackend {
    config: RemoteChatConfig,
    agent: ureq::Agent,
}

impl RemoteChatBackend {
    pub fn new(config: RemoteChatConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(std::time::Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self { config, agent }
    }
}

impl DialogueBackend for RemoteChatBackend {
    fn name(&self) -> &str {
        "remote"
    }

    fn generate(&self, _catalog: &Catalog, _sample: &SampleRecord, payload: &PromptPayload) -> Result<Dialogue> {
        let body = serde_json::json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "response_format": {"type": "json_object"},
            "messages": [
                {"role": "system", "content": payload.system},
                {"role": "user", "content": payload.user},
            ],
        });
        let mut req = self.agent.post(&self.config.endpoint);
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(&body)
            .map_err(|e| DialogueError::Remote(e.to_string()))?;
        let raw = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| DialogueError::Remote(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(DialogueError::Remote(format!("HTTP {}: {raw}", resp.status())));
        }
        let envelope: serde_json::Value = serde_json::from_str(&raw).map_err(|e| DialogueError::Unparseable {
            message: e.to_string(),
            raw: raw.clone(),
        })?;
        let content = envelope
            .pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .ok_or_else(|| DialogueError::Unparseable {
                message: "missing choices[0].message.content".into(),
                raw: raw.clone(),
            })?;
        parse_generated(payload.task, content)
    }
}

#[derive(Deserialize)]
struct GeneratedRound {
    user: String,
    assistant: String,
}

#[derive(Deserialize)]
struct GeneratedDialogue {
    rounds: Vec<GeneratedRound>,
    #[serde(default)]
    valid: Option<serde_json::Value>,
}

/// Parses `{"rounds":[{"user","assistant"}], "valid"?}`, tolerating a
/// surrounding markdown code fence. The raw text is kept on failure.
pub fn parse_generated(task: TaskKind, raw: &str) -> Result<Dialogue> {
    let trimmed = raw.trim();
    let body = trimmed
        .strip_prefix("```json")
        .or_else(|| trimmed.strip_prefix("```"))
        .and_then(|s| s.strip_suffix("```"))
        .unwrap_or(trimmed);
    let parsed: GeneratedDialogue = serde_json::from_str(body).map_err(|e| DialogueError::Unparseable {
        message: e.to_string(),
        raw: raw.to_string(),
    })?;
    let valid = match parsed.valid {
        None | Some(serde_json::Value::Null) => None,
        Some(v) => Some(
            v.as_u64()
                .or_else(|| v.as_str().and_then(|s| s.trim().parse().ok()))
                .and_then(|n| u8::try_from(n).ok())
                .ok_or_else(|| DialogueError::Unparseable {
                    message: format!("valid flag {v} is not a small integer"),
                    raw: raw.to_string(),
                })?,
        ),
    };
    Ok(Dialogue {
        task,
        turns: parsed
            .rounds
            .into_iter()
            .map(|r| Turn {
                q: r.user,
                a: r.assistant,
            })
            .collect(),
        valid,
    })
}

pub fn generate_dialogue(catalog: &Catalog, sample: &SampleRecord, backend: &dyn DialogueBackend) -> Result<Dialogue> {
    let payload = render_prompt(catalog, sample)?;
    backend.generate(catalog, sample, &payload)
}

/// Generates dialogues for many samples with at most `max_in_flight`
/// concurrent backend calls. Output order follows `samples`.
pub fn generate_all(
    catalog: &Catalog,
    samples: &[SampleRecord],
    backend: &dyn DialogueBackend,
    max_in_flight: usize,
) -> Vec<Result<Dialogue>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        match rayon::ThreadPoolBuilder::new()
            .num_threads(max_in_flight.max(1))
            .build()
        {
            Ok(pool) => {
                return pool.install(|| {
                    samples
                        .par_iter()
                        .map(|s| generate_dialogue(catalog, s, backend))
                        .collect()
                })
            }
            Err(e) => log::warn!("falling back to sequential generation: {e}"),
        }
    }
    let _ = max_in_flight;
    samples
        .iter()
        .map(|s| generate_dialogue(catalog, s, backend))
        .collect()
}

fn categories_phrase(items: &[&Item]) -> String {
    let mut seen = BTreeSet::new();
    let cats: Vec<&str> = items
        .iter()
        .map(|i| i.category.as_str())
        .filter(|c| seen.insert(*c))
        .collect();
    match cats.as_slice() {
        [] => String::new(),
        [one] => one.to_string(),
        [init @ .., last] => format!("{} and {}", init.join(", "), last),
    }
}

/// Deterministic dialogue satisfying every validation rule.
pub fn template_fallback(catalog: &Catalog, sample: &SampleRecord) -> Result<Dialogue> {
    match sample {
        SampleRecord::Basic(s) => fallback_basic(catalog, s),
        SampleRecord::Personalized(s) => fallback_personalized(catalog, s),
        SampleRecord::Alternative(s) => fallback_alternative(catalog, s),
    }
}

fn fallback_basic(catalog: &Catalog, s: &BasicSample) -> Result<Dialogue> {
    let partial = resolve(catalog, require(&s.partial, &s.id, "partial")?)?;
    let targets = resolve(catalog, require(&s.targets, &s.id, "targets")?)?;
    let outfit_cats = categories_phrase(&partial);
    let turns = targets
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let q = if i == 0 {
                format!(
                    "Here's a photo of my outfit with the {outfit_cats}. Which {} would complete this look?",
                    t.category
                )
            } else {
                format!("Thanks! Could you also suggest {} that match the same outfit?", t.category)
            };
            let a = format!(
                "I'd go with the {}. It keeps the {} balanced and ties the whole look together.",
                t.description, outfit_cats
            );
            Turn { q, a }
        })
        .collect();
    Ok(Dialogue {
        task: TaskKind::Basic,
        turns,
        valid: None,
    })
}

fn fallback_personalized(catalog: &Catalog, s: &PersonalizedSample) -> Result<Dialogue> {
    let partial = resolve(catalog, require(&s.partial, &s.id, "partial")?)?;
    let history = resolve(catalog, require(&s.filtered_history, &s.id, "history")?)?;
    let target = catalog.item(&s.target)?;
    if s.preference_summary.trim().is_empty() {
        return Err(DialogueError::MissingSlot {
            sample: s.id.clone(),
            slot: "preference_summary",
        });
    }
    let valid = u8::from(text::attributes_align(target, &history));
    let q = format!(
        "I've uploaded a picture of my {}. Which {} should I pair with it? ({})",
        categories_phrase(&partial),
        target.category,
        s.preference_summary
    );
    let a = if valid == 1 {
        format!(
            "Given what you usually go for, the {} is a natural fit and works well with your {}.",
            target.description,
            categories_phrase(&partial)
        )
    } else {
        format!(
            "The {} would complete the outfit, although it is a bit different from your usual picks, so treat it as a fresh option.",
            target.description
        )
    };
    Ok(Dialogue {
        task: TaskKind::Personalized,
        turns: vec![Turn { q, a }],
        valid: Some(valid),
    })
}

fn fallback_alternative(catalog: &Catalog, s: &AlternativeSample) -> Result<Dialogue> {
    let outfit = catalog.outfit(&s.outfit_a)?;
    let items = resolve(catalog, &outfit.item_ids)?;
    let anchors = resolve(catalog, require(&s.anchors, &s.id, "anchors")?)?;
    let replacement = catalog.item(&s.replacement)?;
    let q = format!(
        "This is my current outfit with the {}. I'd like to swap the {} for something different. Any ideas?",
        categories_phrase(&items),
        s.category
    );
    let a = format!(
        "Try the {} instead. It suits the {} you're keeping and fits the role of your current {}.",
        replacement.description,
        categories_phrase(&anchors),
        s.category
    );
    Ok(Dialogue {
        task: TaskKind::Alternative,
        turns: vec![Turn { q, a }],
        valid: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Rule {
    /// Round count for the task kind.
    R1,
    /// User queries must not reveal protected item descriptions.
    R2,
    /// Personalized queries end with a parenthesized preference suffix.
    R3,
    /// A 0/1 valid flag is present exactly for personalized dialogues.
    R4,
    /// No empty query or response.
    R5,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: Rule,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub turn: Option<usize>,
}

fn violation(rule: Rule, turn: Option<usize>, message: impl Into<String>) -> Violation {
    Violation {
        rule,
        message: message.into(),
        turn,
    }
}

/// Splits a trailing `(...)` suffix off a query. Returns `(body, suffix)`.
pub fn split_preference_suffix(query: &str) -> (&str, Option<&str>) {
    let trimmed = query.trim_end();
    if !trimmed.ends_with(')') {
        return (query, None);
    }
    match trimmed.rfind('(') {
        Some(open) => {
            let inner = trimmed[open + 1..trimmed.len() - 1].trim();
            if inner.is_empty() {
                (query, None)
            } else {
                (&trimmed[..open], Some(inner))
            }
        }
        None => (query, None),
    }
}

fn protected_items<'c>(catalog: &'c Catalog, sample: &SampleRecord) -> Result<Vec<&'c Item>> {
    match sample {
        SampleRecord::Basic(s) => resolve(catalog, &s.targets),
        SampleRecord::Personalized(s) => Ok(vec![catalog.item(&s.target)?]),
        SampleRecord::Alternative(s) => Ok(vec![catalog.item(&s.replacement)?]),
    }
}

/// Checks a dialogue against rules R1–R5. An empty list means it passes.
pub fn validate_dialogue(catalog: &Catalog, sample: &SampleRecord, dialogue: &Dialogue) -> Result<Vec<Violation>> {
    let kind = sample.kind();
    let mut out = Vec::new();
    if dialogue.task != kind {
        out.push(violation(
            Rule::R1,
            None,
            format!("dialogue task {} does not match sample task {kind}", dialogue.task),
        ));
    }

    let rounds = dialogue.turns.len();
    match sample {
        SampleRecord::Basic(s) => {
            if rounds == 0 || rounds > s.targets.len() {
                out.push(violation(
                    Rule::R1,
                    None,
                    format!("{rounds} rounds for {} target items", s.targets.len()),
                ));
            }
        }
        _ => {
            if rounds != 1 {
                out.push(violation(Rule::R1, None, format!("{rounds} rounds, expected exactly 1")));
            }
        }
    }

    let protected: Vec<Vec<String>> = protected_items(catalog, sample)?
        .iter()
        .map(|i| text::content_words(&i.description))
        .collect();
    for (idx, turn) in dialogue.turns.iter().enumerate() {
        let scanned = if kind == TaskKind::Personalized {
            split_preference_suffix(&turn.q).0
        } else {
            turn.q.as_str()
        };
        let words = text::content_words(scanned);
        if protected
            .iter()
            .any(|desc| text::shares_run(&words, desc, LEAK_RUN.min(desc.len())))
        {
            out.push(violation(Rule::R2, Some(idx), "query repeats a target item description"));
        }
    }

    if kind == TaskKind::Personalized {
        for (idx, turn) in dialogue.turns.iter().enumerate() {
            if split_preference_suffix(&turn.q).1.is_none() {
                out.push(violation(Rule::R3, Some(idx), "query lacks a parenthesized preference suffix"));
            }
        }
    }

    match (kind, dialogue.valid) {
        (TaskKind::Personalized, Some(0 | 1)) => {}
        (TaskKind::Personalized, Some(v)) => {
            out.push(violation(Rule::R4, None, format!("valid flag {v} is not 0 or 1")))
        }
        (TaskKind::Personalized, None) => out.push(violation(Rule::R4, None, "valid flag missing")),
        (_, Some(_)) => out.push(violation(Rule::R4, None, "valid flag only applies to personalized samples")),
        (_, None) => {}
    }

    for (idx, turn) in dialogue.turns.iter().enumerate() {
        if turn.q.trim().is_empty() || turn.a.trim().is_empty() {
            out.push(violation(Rule::R5, Some(idx), "empty query or response"));
        }
    }
    Ok(out)
}
