//! The assistant's tools and the registry that dispatches to them.
//!
//! Every tool takes a JSON object and returns one. The built-in
//! implementations are deterministic stand-ins that work off the catalog;
//! any of them can be swapped for an [`HttpTool`] that forwards the same
//! arguments to a remote service.

use std::collections::BTreeMap;
use std::fs;
use std::io::Cursor;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use fashionrec_core::catalog::{Catalog, FeatureStore, Item};
use fashionrec_core::embedding::{cosine, Embedding};
use image::imageops::FilterType;
use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const RECOMMEND: &str = "recommend";
pub const GENERATE_IMAGE: &str = "generate_image";
pub const RETRIEVE_SIMILAR: &str = "retrieve_similar";
pub const TRY_ON: &str = "try_on";

/// Locator prefixes for files the server writes itself.
pub const UPLOADS_DIR: &str = "uploads";
pub const TRYON_DIR: &str = "tryon";

const CANVAS: u32 = 256;
const MARGIN: u32 = 4;

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("unknown tool: {0}")]
    UnknownTool(String),
    #[error("invalid arguments: {0}")]
    InvalidParams(String),
    #[error("{0}")]
    Failed(String),
}

pub type Result<T, E = ToolError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolDescriptor {
    pub name: String,
    pub description: String,
    #[serde(rename = "inputSchema")]
    pub input_schema: Value,
}

pub trait Tool: Send + Sync {
    fn descriptor(&self) -> ToolDescriptor;
    fn call(&self, args: &Value) -> Result<Value>;
}

/// Shared read-only state the built-in tools work against.
pub struct ToolContext {
    pub catalog: Arc<Catalog>,
    pub features: Arc<FeatureStore>,
    /// Where uploads and try-on composites are written.
    pub data_dir: PathBuf,
}

impl ToolContext {
    /// File behind a locator. `uploads/` and `tryon/` live in the data
    /// directory, anything else is resolved against the catalog. Absolute
    /// paths and `..` are refused.
    pub fn resolve_ref(&self, locator: &str) -> Option<PathBuf> {
        let rel = Path::new(locator);
        if !rel.components().all(|c| matches!(c, Component::Normal(_))) {
            return None;
        }
        let first = rel.components().next()?.as_os_str().to_str()?;
        if first == UPLOADS_DIR || first == TRYON_DIR {
            Some(self.data_dir.join(rel))
        } else {
            Some(self.catalog.resolve_path(locator))
        }
    }

    fn item(&self, id: &str) -> Result<&Item> {
        self.catalog
            .item(id)
            .map_err(|e| ToolError::InvalidParams(e.to_string()))
    }

    fn item_feature(&self, item: &Item) -> Result<Arc<Embedding>> {
        self.features
            .feature(item)
            .map_err(|e| ToolError::Failed(e.to_string()))
    }
}

pub struct ToolRegistry {
    tools: BTreeMap<String, Box<dyn Tool>>,
}

impl Default for ToolRegistry {
    fn default() -> Self {
        Self::new()
    }
}

impl ToolRegistry {
    pub fn new() -> Self {
        Self {
            tools: BTreeMap::new(),
        }
    }

    /// Registry with the four built-in stubs.
    pub fn with_stubs(ctx: Arc<ToolContext>) -> Self {
        let mut r = Self::new();
        r.register(Box::new(RecommendStub(ctx.clone())));
        r.register(Box::new(GenerateImageStub(ctx.clone())));
        r.register(Box::new(RetrieveSimilar(ctx.clone())));
        r.register(Box::new(TryOnStub(ctx)));
        r
    }

    /// Adds a tool, returning the one it replaced.
    pub fn register(&mut self, tool: Box<dyn Tool>) -> Option<Box<dyn Tool>> {
        self.tools.insert(tool.descriptor().name, tool)
    }

    /// Descriptors sorted by name.
    pub fn list(&self) -> Vec<ToolDescriptor> {
        self.tools.values().map(|t| t.descriptor()).collect()
    }

    pub fn call(&self, name: &str, args: &Value) -> Result<Value> {
        let tool = self
            .tools
            .get(name)
            .ok_or_else(|| ToolError::UnknownTool(name.to_string()))?;
        validate_args(&tool.descriptor().input_schema, args)?;
        tool.call(args)
    }
}

/// Checks `args` against the small schema subset the tools use: an object
/// with typed properties, a `required` list and no extra keys.
pub fn validate_args(schema: &Value, args: &Value) -> Result<()> {
    let obj = args
        .as_object()
        .ok_or_else(|| ToolError::InvalidParams("arguments must be an object".into()))?;
    let props = schema["properties"].as_object().cloned().unwrap_or_default();
    if let Some(required) = schema["required"].as_array() {
        for key in required.iter().filter_map(Value::as_str) {
            if !obj.contains_key(key) {
                return Err(ToolError::InvalidParams(format!("missing required argument `{key}`")));
            }
        }
    }
    for (key, value) in obj {
        let spec = props
            .get(key)
            .ok_or_else(|| ToolError::InvalidParams(format!("unexpected argument `{key}`")))?;
        let expected = spec["type"].as_str().unwrap_or("any");
        if !type_matches(expected, value) {
            return Err(ToolError::InvalidParams(format!("`{key}` must be of type {expected}")));
        }
        if let (Some(items), Some(list)) = (spec["items"]["type"].as_str(), value.as_array()) {
            if !list.iter().all(|v| type_matches(items, v)) {
                return Err(ToolError::InvalidParams(format!("`{key}` must hold {items} values")));
            }
        }
    }
    Ok(())
}

fn type_matches(expected: &str, value: &Value) -> bool {
    match expected {
        "string" => value.is_string(),
        "integer" => value.is_u64() || value.is_i64(),
        "number" => value.is_number(),
        "boolean" => value.is_boolean(),
        "array" => value.is_array(),
        "object" => value.is_object(),
        _ => true,
    }
}

fn str_arg<'a>(args: &'a Value, key: &str) -> Option<&'a str> {
    args[key].as_str().map(str::trim).filter(|s| !s.is_empty())
}

fn list_arg(args: &Value, key: &str) -> Vec<String> {
    args[key]
        .as_array()
        .map(|a| a.iter().filter_map(Value::as_str).map(str::to_string).collect())
        .unwrap_or_default()
}

fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Catalog categories named in `text`, in order of first mention. A plural
/// `s`/`es` on the last word of a category still counts.
pub fn categories_in_text(catalog: &Catalog, text: &str) -> Vec<String> {
    let tokens = words(text);
    let mut found: Vec<(usize, String)> = Vec::new();
    for cat in catalog.categories() {
        let cw = words(cat);
        if cw.is_empty() || cw.len() > tokens.len() {
            continue;
        }
        let last = cw.len() - 1;
        let hit = (0..=tokens.len() - cw.len()).find(|&start| {
            cw.iter().enumerate().all(|(k, w)| {
                let t = &tokens[start + k];
                t == w || (k == last && (*t == format!("{w}s") || *t == format!("{w}es")))
            })
        });
        if let Some(pos) = hit {
            found.push((pos, cat.to_string()));
        }
    }
    found.sort();
    found.into_iter().map(|(_, c)| c).collect()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn pick_best<'a>(candidates: impl Iterator<Item = (&'a Item, f64)>) -> Option<(&'a Item, f64)> {
    candidates.fold(None, |best, (item, sim)| match best {
        Some((b, bs)) if bs > sim || (bs == sim && b.id < item.id) => Some((b, bs)),
        _ => Some((item, sim)),
    })
}

fn item_json(item: &Item) -> Value {
    json!({
        "item_id": item.id,
        "category": item.category,
        "description": item.description,
        "image_ref": item.image_ref,
    })
}

/// Deterministic stand-in for the recommendation model.
///
/// The query vector is the mean feature of the context (catalog items use
/// their item feature, other locators their image embedding). Candidates
/// are items of categories not yet in the context, or of the requested
/// category, or of the replaced item's category. Best cosine wins, ties by id.
pub struct RecommendStub(pub Arc<ToolContext>);

impl Tool for RecommendStub {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: RECOMMEND.into(),
            description: "Recommend one catalog item that completes the current outfit.".into(),
            input_schema: json!({
                "type": "object",
                "properties": {
                    "context_items": {"type": "array", "items": {"type": "string"}, "description": "catalog item ids or image locators already in the outfit"},
                    "text": {"type": "string"},
                    "preference": {"type": "string"},
                    "prompt": {"type": "string", "description": "assembled model context"},
                    "category": {"type": "string"},
                    "replace": {"type": "string", "description": "item id to swap out"}
                }
            }),
        }
    }

    fn call(&self, args: &Value) -> Result<Value> {
        let ctx = &self.0;
        let catalog = &ctx.catalog;
        if catalog.items().is_empty() {
            return Err(ToolError::Failed("catalog is empty".into()));
        }
        let context = list_arg(args, "context_items");
        let replace = str_arg(args, "replace");
        if let Some(r) = replace {
            ctx.item(r)?;
            if !context.iter().any(|c| c == r) {
                return Err(ToolError::InvalidParams(format!("`replace` item {r} is not in the context")));
            }
        }

        let mut vectors: Vec<Arc<Embedding>> = Vec::new();
        let mut present = Vec::new();
        for entry in context.iter().filter(|c| Some(c.as_str()) != replace) {
            match catalog.item(entry) {
                Ok(item) => {
                    present.push(item.category.clone());
                    vectors.push(ctx.item_feature(item)?);
                }
                Err(_) => vectors.push(Arc::new(
                    ctx.features
                        .embedder()
                        .embed_image(entry)
                        .map_err(|e| ToolError::Failed(e.to_string()))?,
                )),
            }
        }
        let query = if vectors.is_empty() {
            let text = [str_arg(args, "text"), str_arg(args, "preference")]
                .into_iter()
                .flatten()
                .collect::<Vec<_>>()
                .join(" ");
            if text.is_empty() {
                return Err(ToolError::InvalidParams("need context items or text".into()));
            }
            ctx.features
                .embedder()
                .embed_text(&text)
                .map_err(|e| ToolError::Failed(e.to_string()))?
        } else {
            Embedding::mean(vectors.iter().map(|v| v.as_ref())).map_err(|e| ToolError::Failed(e.to_string()))?
        };

        let wanted: Option<String> = match replace {
            Some(r) => Some(ctx.item(r)?.category.clone()),
            None => str_arg(args, "category").map(str::to_string),
        };
        let candidates = catalog.items().iter().filter(|i| {
            !context.contains(&i.id)
                && match &wanted {
                    Some(c) => i.category == *c,
                    None => !present.contains(&i.category),
                }
        });
        let mut scored = Vec::new();
        for item in candidates {
            let f = ctx.item_feature(item)?;
            scored.push((item, cosine(&query, &f).map_err(|e| ToolError::Failed(e.to_string()))?));
        }
        let (item, sim) = pick_best(scored.into_iter())
            .ok_or_else(|| ToolError::Failed("no candidate item for this outfit".into()))?;

        let mut text = match replace {
            Some(r) => format!(
                "Instead of the {}, try the {} ({}).",
                ctx.item(r)?.description,
                item.description,
                item.id
            ),
            None => format!("I'd add the {} ({}) to this outfit.", item.description, item.id),
        };
        if let Some(pref) = str_arg(args, "preference") {
            text.push_str(&format!(" It keeps to your usual style ({pref})."));
        }
        let mut out = item_json(item);
        out["similarity"] = json!(sim);
        out["text"] = json!(text);
        Ok(out)
    }
}

/// Image generation stand-in: returns the catalog image of the item, or of
/// the item whose text is closest to the prompt.
pub struct GenerateImageStub(pub Arc<ToolContext>);

impl Tool for GenerateImageStub {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: GENERATE_IMAGE.into(),
            description: "Produce an image of a recommended item (stub returns its catalog image).".into(),
            input_schema: json!({
                "type": "object",
                "properties": {
                    "item_id": {"type": "string"},
                    "prompt": {"type": "string"}
                }
            }),
        }
    }

    fn call(&self, args: &Value) -> Result<Value> {
        let ctx = &self.0;
        let item = match (str_arg(args, "item_id"), str_arg(args, "prompt")) {
            (Some(id), _) => ctx.item(id)?,
            (None, Some(prompt)) => {
                let q = ctx
                    .features
                    .embedder()
                    .embed_text(prompt)
                    .map_err(|e| ToolError::Failed(e.to_string()))?;
                let hit = ctx
                    .catalog
                    .nearest_items(&ctx.features, &q, None, 1)
                    .map_err(|e| ToolError::Failed(e.to_string()))?;
                let first = hit
                    .first()
                    .ok_or_else(|| ToolError::Failed("catalog is empty".into()))?;
                ctx.item(&first.id)?
            }
            (None, None) => return Err(ToolError::InvalidParams("need `item_id` or `prompt`".into())),
        };
        Ok(json!({ "image_ref": item.image_ref, "item_id": item.id }))
    }
}

/// Nearest catalog items to an item, a text or an image.
pub struct RetrieveSimilar(pub Arc<ToolContext>);

impl Tool for RetrieveSimilar {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: RETRIEVE_SIMILAR.into(),
            description: "Find catalog items similar to an item, a text or an image.".into(),
            input_schema: json!({
                "type": "object",
                "properties": {
                    "item_id": {"type": "string"},
                    "text": {"type": "string"},
                    "image": {"type": "string"},
                    "category": {"type": "string"},
                    "k": {"type": "integer", "minimum": 1},
                    "exclude": {"type": "array", "items": {"type": "string"}}
                }
            }),
        }
    }

    fn call(&self, args: &Value) -> Result<Value> {
        let ctx = &self.0;
        let k = match args.get("k") {
            None => 3,
            Some(v) => v
                .as_u64()
                .filter(|k| *k >= 1)
                .ok_or_else(|| ToolError::InvalidParams("`k` must be >= 1".into()))? as usize,
        };
        let embed_err = |e: fashionrec_core::EmbeddingError| ToolError::Failed(e.to_string());
        let query: Embedding = match (str_arg(args, "item_id"), str_arg(args, "text"), str_arg(args, "image")) {
            (Some(id), None, None) => ctx.item_feature(ctx.item(id)?)?.as_ref().clone(),
            (None, Some(text), None) => ctx.features.embedder().embed_text(text).map_err(embed_err)?,
            (None, None, Some(image)) => ctx.features.embedder().embed_image(image).map_err(embed_err)?,
            _ => {
                return Err(ToolError::InvalidParams(
                    "give exactly one of `item_id`, `text`, `image`".into(),
                ))
            }
        };
        let exclude = list_arg(args, "exclude");
        let hits = ctx
            .catalog
            .nearest_items(&ctx.features, &query, str_arg(args, "category"), k + exclude.len())
            .map_err(|e| ToolError::Failed(e.to_string()))?;
        let results: Vec<Value> = hits
            .into_iter()
            .filter(|n| !exclude.contains(&n.id))
            .take(k)
            .map(|n| {
                let item = ctx.catalog.item(&n.id).expect("nearest items come from the catalog");
                let mut v = item_json(item);
                v["similarity"] = json!(n.similarity);
                v
            })
            .collect();
        Ok(json!({ "results": results }))
    }
}

/// Try-on stand-in: tiles the item images on a fixed white canvas (over the
/// person image when one is given) and stores the PNG under `tryon/`, named
/// by its content hash.
pub struct TryOnStub(pub Arc<ToolContext>);

impl TryOnStub {
    fn load(&self, locator: &str) -> Result<image::DynamicImage> {
        let ctx = &self.0;
        let locator = ctx.catalog.item(locator).map_or(locator, |i| i.image_ref.as_str());
        let path = ctx
            .resolve_ref(locator)
            .ok_or_else(|| ToolError::InvalidParams(format!("bad locator {locator}")))?;
        image::open(&path).map_err(|e| ToolError::Failed(format!("cannot read {locator}: {e}")))
    }
}

impl Tool for TryOnStub {
    fn descriptor(&self) -> ToolDescriptor {
        ToolDescriptor {
            name: TRY_ON.into(),
            description: "Compose a try-on preview of the given items (stub tiles the item images).".into(),
            input_schema: json!({
                "type": "object",
                "properties": {
                    "image_refs": {"type": "array", "items": {"type": "string"}, "description": "item ids or image locators"},
                    "person_ref": {"type": "string"}
                },
                "required": ["image_refs"]
            }),
        }
    }

    fn call(&self, args: &Value) -> Result<Value> {
        let refs = list_arg(args, "image_refs");
        if refs.is_empty() {
            return Err(ToolError::InvalidParams("try-on needs at least one item image".into()));
        }
        let mut canvas = match str_arg(args, "person_ref") {
            Some(p) => self.load(p)?.resize_exact(CANVAS, CANVAS, FilterType::Triangle).to_rgb8(),
            None => RgbImage::from_pixel(CANVAS, CANVAS, Rgb([255, 255, 255])),
        };
        let n = refs.len() as u32;
        let cols = (1..=n).find(|c| c * c >= n).unwrap_or(1);
        let rows = n.div_ceil(cols);
        let (cw, ch) = (CANVAS / cols, CANVAS / rows);
        for (i, r) in refs.iter().enumerate() {
            let tile = self
                .load(r)?
                .resize_exact(cw.saturating_sub(2 * MARGIN).max(1), ch.saturating_sub(2 * MARGIN).max(1), FilterType::Triangle)
                .to_rgb8();
            let (x, y) = ((i as u32 % cols) * cw + MARGIN, (i as u32 / cols) * ch + MARGIN);
            image::imageops::replace(&mut canvas, &tile, i64::from(x), i64::from(y));
        }
        let mut bytes = Vec::new();
        canvas
            .write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
            .map_err(|e| ToolError::Failed(e.to_string()))?;
        let locator = format!("{TRYON_DIR}/{}.png", &sha256_hex(&bytes)[..16]);
        let path = self.0.data_dir.join(&locator);
        if !path.exists() {
            fs::create_dir_all(path.parent().expect("locator has a directory"))
                .and_then(|_| fs::write(&path, &bytes))
                .map_err(|e| ToolError::Failed(e.to_string()))?;
        }
        Ok(json!({ "image_ref": locator, "tiles": n }))
    }
}

/// Forwards calls to a remote service: `POST url` with the arguments as the
/// JSON body, expecting a JSON object back.
pub struct HttpTool {
    descriptor: ToolDescriptor,
    url: String,
    agent: ureq::Agent,
}

impl HttpTool {
    /// Remote backend exposed under `descriptor`, usually the stub's.
    pub fn new(descriptor: ToolDescriptor, url: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self {
            descriptor,
            url: url.to_string(),
            agent,
        }
    }
}

impl Tool for HttpTool {
    fn descriptor(&self) -> ToolDescriptor {
        self.descriptor.clone()
    }

    fn call(&self, args: &Value) -> Result<Value> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(args)
            .map_err(|e| ToolError::Failed(format!("{} unreachable: {e}", self.url)))?;
        if !resp.status().is_success() {
            return Err(ToolError::Failed(format!("{} returned HTTP {}", self.url, resp.status())));
        }
        let value: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| ToolError::Failed(format!("bad response from {}: {e}", self.url)))?;
        if !value.is_object() {
            return Err(ToolError::Failed(format!("{} did not return an object", self.url)));
        }
        Ok(value)
    }
}
