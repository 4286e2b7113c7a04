//! Item, outfit and user store.
//!
//! A [`Catalog`] is ingested once from three JSON Lines files and is immutable
//! afterwards; every query takes `&self` and is safe to share across threads.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{self, cosine, Embedder, Embedding, EmbeddingError};
use crate::par::*;

pub const ITEMS_FILE: &str = "items.jsonl";
pub const OUTFITS_FILE: &str = "outfits.jsonl";
pub const USERS_FILE: &str = "users.jsonl";

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("dangling reference: {owner_kind} {owner} refers to missing {kind} {id:?}")]
    Dangling {
        kind: &'static str,
        id: String,
        owner_kind: &'static str,
        owner: String,
    },
    #[error("duplicate {kind} id {id:?}")]
    Duplicate { kind: &'static str, id: String },
    #[error("invalid {kind} {id:?}: {reason}")]
    Invalid {
        kind: &'static str,
        id: String,
        reason: String,
    },
    #[error("unknown {kind} id {id:?}")]
    Unknown { kind: &'static str, id: String },
    #[error("partial outfit is empty")]
    EmptyPartial,
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

pub type Result<T, E = CatalogError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub category: String,
    pub description: String,
    pub image_ref: String,
    #[serde(default)]
    pub attributes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outfit {
    pub id: String,
    #[serde(rename = "items")]
    pub item_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserRecord {
    pub id: String,
    #[serde(rename = "outfits")]
    pub outfit_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogStats {
    pub n_items: usize,
    pub n_outfits: usize,
    pub n_users: usize,
    pub items_per_outfit: f64,
    pub outfits_per_user: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub similarity: f64,
}

#[derive(Debug, Default)]
pub struct Catalog {
    root: PathBuf,
    items: Vec<Item>,
    item_index: HashMap<String, usize>,
    outfits: Vec<Outfit>,
    outfit_index: HashMap<String, usize>,
    users: Vec<UserRecord>,
    user_index: HashMap<String, usize>,
    // resolved adjacency, ascending indices
    outfit_members: Vec<Vec<usize>>,
    item_outfits: Vec<Vec<usize>>,
    user_outfits: Vec<Vec<usize>>,
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let io = |source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| CatalogError::Malformed {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

impl Catalog {
    /// Reads and validates the three JSONL files. Relative image locators
    /// resolve against the directory holding `items_path`.
    pub fn ingest(items_path: &Path, outfits_path: &Path, users_path: &Path) -> Result<Self> {
        let items = read_jsonl(items_path)?;
        let outfits = read_jsonl(outfits_path)?;
        let users = read_jsonl(users_path)?;
        let root = items_path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        let mut catalog = Self::from_records(items, outfits, users)?;
        catalog.root = root;
        Ok(catalog)
    }

    /// Loads `items.jsonl`, `outfits.jsonl` and `users.jsonl` from `dir`.
    pub fn open_dir(dir: &Path) -> Result<Self> {
        Self::ingest(
            &dir.join(ITEMS_FILE),
            &dir.join(OUTFITS_FILE),
            &dir.join(USERS_FILE),
        )
    }

    pub fn from_records(
        items: Vec<Item>,
        outfits: Vec<Outfit>,
        users: Vec<UserRecord>,
    ) -> Result<Self> {
        let mut item_index = HashMap::with_capacity(items.len());
        for (idx, item) in items.iter().enumerate() {
            for (field, value) in [
                ("id", &item.id),
                ("category", &item.category),
                ("description", &item.description),
            ] {
                if value.trim().is_empty() {
                    return Err(CatalogError::Invalid {
                        kind: "item",
                        id: item.id.clone(),
                        reason: format!("empty {field}"),
                    });
                }
            }
            if item_index.insert(item.id.clone(), idx).is_some() {
                return Err(CatalogError::Duplicate {
                    kind: "item",
                    id: item.id.clone(),
                });
            }
        }

        let mut outfit_index = HashMap::with_capacity(outfits.len());
        let mut outfit_members = Vec::with_capacity(outfits.len());
        let mut item_outfits = vec![Vec::new(); items.len()];
        for (oidx, outfit) in outfits.iter().enumerate() {
            if outfit.id.trim().is_empty() {
                return Err(CatalogError::Invalid {
                    kind: "outfit",
                    id: outfit.id.clone(),
                    reason: "empty id".into(),
                });
            }
            if outfit_index.insert(outfit.id.clone(), oidx).is_some() {
                return Err(CatalogError::Duplicate {
                    kind: "outfit",
                    id: outfit.id.clone(),
                });
            }
            if outfit.item_ids.len() < 2 {
                return Err(CatalogError::Invalid {
                    kind: "outfit",
                    id: outfit.id.clone(),
                    reason: format!("needs at least 2 items, has {}", outfit.item_ids.len()),
                });
            }
            let mut members = Vec::with_capacity(outfit.item_ids.len());
            for item_id in &outfit.item_ids {
                let iidx = *item_index.get(item_id).ok_or_else(|| CatalogError::Dangling {
                    kind: "item",
                    id: item_id.clone(),
                    owner_kind: "outfit",
                    owner: outfit.id.clone(),
                })?;
                members.push(iidx);
            }
            members.sort_unstable();
            if members.windows(2).any(|w| w[0] == w[1]) {
                return Err(CatalogError::Invalid {
                    kind: "outfit",
                    id: outfit.id.clone(),
                    reason: "repeated item id".into(),
                });
            }
            for &iidx in &members {
                item_outfits[iidx].push(oidx);
            }
            outfit_members.push(members);
        }

        let mut user_index = HashMap::with_capacity(users.len());
        let mut user_outfits = Vec::with_capacity(users.len());
        for (uidx, user) in users.iter().enumerate() {
            if user.id.trim().is_empty() {
                return Err(CatalogError::Invalid {
                    kind: "user",
                    id: user.id.clone(),
                    reason: "empty id".into(),
                });
            }
            if user_index.insert(user.id.clone(), uidx).is_some() {
                return Err(CatalogError::Duplicate {
                    kind: "user",
                    id: user.id.clone(),
                });
            }
            let resolved = user
                .outfit_ids
                .iter()
                .map(|oid| {
                    outfit_index
                        .get(oid)
                        .copied()
                        .ok_or_else(|| CatalogError::Dangling {
                            kind: "outfit",
                            id: oid.clone(),
                            owner_kind: "user",
                            owner: user.id.clone(),
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            user_outfits.push(resolved);
        }

        Ok(Self {
            root: PathBuf::new(),
            items,
            item_index,
            outfits,
            outfit_index,
            users,
            user_index,
            outfit_members,
            item_outfits,
            user_outfits,
        })
    }

    pub fn with_root(mut self, root: impl Into<PathBuf>) -> Self {
        self.root = root.into();
        self
    }

    /// Directory that relative image locators resolve against.
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn resolve_path(&self, locator: &str) -> PathBuf {
        let p = Path::new(locator);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn write_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        write_jsonl(&dir.join(ITEMS_FILE), &self.items)?;
        write_jsonl(&dir.join(OUTFITS_FILE), &self.outfits)?;
        write_jsonl(&dir.join(USERS_FILE), &self.users)
    }

    pub fn stats(&self) -> CatalogStats {
        let member_total: usize = self.outfits.iter().map(|o| o.item_ids.len()).sum();
        let history_total: usize = self.users.iter().map(|u| u.outfit_ids.len()).sum();
        let mean = |total: usize, n: usize| if n == 0 { 0.0 } else { total as f64 / n as f64 };
        CatalogStats {
            n_items: self.items.len(),
            n_outfits: self.outfits.len(),
            n_users: self.users.len(),
            items_per_outfit: mean(member_total, self.outfits.len()),
            outfits_per_user: mean(history_total, self.users.len()),
        }
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn outfits(&self) -> &[Outfit] {
        &self.outfits
    }

    pub fn users(&self) -> &[UserRecord] {
        &self.users
    }

    pub fn item(&self, id: &str) -> Result<&Item> {
        self.item_index
            .get(id)
            .map(|&i| &self.items[i])
            .ok_or_else(|| unknown("item", id))
    }

    pub fn outfit(&self, id: &str) -> Result<&Outfit> {
        self.outfit_index
            .get(id)
            .map(|&i| &self.outfits[i])
            .ok_or_else(|| unknown("outfit", id))
    }

    pub fn user(&self, id: &str) -> Result<&UserRecord> {
        self.user_index
            .get(id)
            .map(|&i| &self.users[i])
            .ok_or_else(|| unknown("user", id))
    }

    pub fn has_user(&self, id: &str) -> bool {
        self.user_index.contains_key(id)
    }

    pub fn category_of(&self, item_id: &str) -> Result<&str> {
        self.item(item_id).map(|i| i.category.as_str())
    }

    /// Distinct categories, sorted.
    pub fn categories(&self) -> BTreeSet<&str> {
        self.items.iter().map(|i| i.category.as_str()).collect()
    }

    fn item_idx(&self, id: &str) -> Result<usize> {
        self.item_index
            .get(id)
            .copied()
            .ok_or_else(|| unknown("item", id))
    }

    fn user_idx(&self, id: &str) -> Result<usize> {
        self.user_index
            .get(id)
            .copied()
            .ok_or_else(|| unknown("user", id))
    }

    /// Number of the user's outfit entries that contain the item.
    pub fn item_interaction_count(&self, user_id: &str, item_id: &str) -> Result<usize> {
        let u = self.user_idx(user_id)?;
        let i = self.item_idx(item_id)?;
        Ok(self.user_outfits[u]
            .iter()
            .filter(|&&o| self.outfit_members[o].binary_search(&i).is_ok())
            .count())
    }

    /// Number of stored outfits holding `item_id` together with at least one
    /// member of `partial` other than `item_id` itself.
    pub fn cooccurrence_count<S: AsRef<str>>(&self, item_id: &str, partial: &[S]) -> Result<usize> {
        if partial.is_empty() {
            return Err(CatalogError::EmptyPartial);
        }
        let j = self.item_idx(item_id)?;
        let others = partial
            .iter()
            .map(|p| self.item_idx(p.as_ref()))
            .collect::<Result<HashSet<_>>>()?;
        Ok(self.item_outfits[j]
            .iter()
            .filter(|&&o| {
                self.outfit_members[o]
                    .iter()
                    .any(|m| *m != j && others.contains(m))
            })
            .count())
    }

    /// Category-`category` items sharing at least one outfit with `partial`,
    /// excluding members of `partial`.
    pub fn items_cooccurring_in_category<S: AsRef<str>>(
        &self,
        partial: &[S],
        category: &str,
    ) -> Result<BTreeSet<String>> {
        let members = partial
            .iter()
            .map(|p| self.item_idx(p.as_ref()))
            .collect::<Result<HashSet<_>>>()?;
        let mut out = BTreeSet::new();
        for &p in &members {
            for &o in &self.item_outfits[p] {
                for &m in &self.outfit_members[o] {
                    if !members.contains(&m) && self.items[m].category == category {
                        out.insert(self.items[m].id.clone());
                    }
                }
            }
        }
        Ok(out)
    }

    /// Distinct category-`category` items across the user's outfits.
    pub fn user_items_in_category(&self, user_id: &str, category: &str) -> Result<BTreeSet<String>> {
        let u = self.user_idx(user_id)?;
        Ok(self.user_outfits[u]
            .iter()
            .flat_map(|&o| &self.outfit_members[o])
            .filter(|&&m| self.items[m].category == category)
            .map(|&m| self.items[m].id.clone())
            .collect())
    }

    /// Distinct items across the user's outfits, sorted by id.
    pub fn user_items(&self, user_id: &str) -> Result<Vec<&Item>> {
        let u = self.user_idx(user_id)?;
        let idx: BTreeSet<usize> = self.user_outfits[u]
            .iter()
            .flat_map(|&o| self.outfit_members[o].iter().copied())
            .collect();
        let mut out: Vec<&Item> = idx.into_iter().map(|i| &self.items[i]).collect();
        out.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(out)
    }

    /// Top-`k` items by cosine similarity to `query`, optionally restricted to
    /// one category. Order: similarity descending, then id ascending.
    pub fn nearest_items(
        &self,
        features: &FeatureStore,
        query: &Embedding,
        category: Option<&str>,
        k: usize,
    ) -> Result<Vec<Neighbor>> {
        self.check_query(features, query, k)?;
        let mut scored = self
            .items
            .par_iter()
            .filter(|item| category.is_none_or(|c| item.category == c))
            .map(|item| {
                let f = features.feature(item)?;
                Ok(Neighbor {
                    id: item.id.clone(),
                    similarity: cosine(query, &f)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        scored.par_sort_by(neighbor_order);
        scored.truncate(k);
        Ok(scored)
    }

    /// Single-threaded reference path for [`Catalog::nearest_items`].
    pub fn nearest_items_sequential(
        &self,
        features: &FeatureStore,
        query: &Embedding,
        category: Option<&str>,
        k: usize,
    ) -> Result<Vec<Neighbor>> {
        self.check_query(features, query, k)?;
        let mut scored = Vec::new();
        for item in &self.items {
            if category.is_some_and(|c| item.category != c) {
                continue;
            }
            let f = features.feature(item)?;
            scored.push(Neighbor {
                id: item.id.clone(),
                similarity: cosine(query, &f)?,
            });
        }
        scored.sort_by(neighbor_order);
        scored.truncate(k);
        Ok(scored)
    }

    fn check_query(&self, features: &FeatureStore, query: &Embedding, k: usize) -> Result<()> {
        if k == 0 {
            return Err(CatalogError::ZeroK);
        }
        if query.dim() != features.dim() {
            return Err(EmbeddingError::DimensionMismatch {
                expected: features.dim(),
                actual: query.dim(),
            }
            .into());
        }
        Ok(())
    }
}

fn neighbor_order(a: &Neighbor, b: &Neighbor) -> std::cmp::Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| a.id.cmp(&b.id))
}

fn unknown(kind: &'static str, id: &str) -> CatalogError {
    CatalogError::Unknown {
        kind,
        id: id.to_string(),
    }
}

/// Lazily computed item features `(e_v + e_t) / 2`, memoized by item id.
pub struct FeatureStore {
    embedder: Arc<dyn Embedder>,
    cache: RwLock<HashMap<String, Arc<Embedding>>>,
}

impl FeatureStore {
    pub fn new(embedder: Arc<dyn Embedder>) -> Self {
        Self {
            embedder,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn embedder(&self) -> &Arc<dyn Embedder> {
        &self.embedder
    }

    pub fn dim(&self) -> usize {
        self.embedder.dim()
    }

    pub fn feature(&self, item: &Item) -> Result<Arc<Embedding>, EmbeddingError> {
        if let Some(f) = self.cache.read().expect("feature lock poisoned").get(&item.id) {
            return Ok(Arc::clone(f));
        }
        let f = Arc::new(embedding::item_feature(self.embedder.as_ref(), item)?);
        self.cache
            .write()
            .expect("feature lock poisoned")
            .insert(item.id.clone(), Arc::clone(&f));
        Ok(f)
    }

    /// Computes every catalog feature up front.
    pub fn warm(&self, catalog: &Catalog) -> Result<(), EmbeddingError> {
        let computed = catalog
            .items()
            .par_iter()
            .map(|item| Ok((item.id.clone(), Arc::new(embedding::item_feature(self.embedder.as_ref(), item)?))))
            .collect::<Result<Vec<_>, EmbeddingError>>()?;
        self.cache
            .write()
            .expect("feature lock poisoned")
            .extend(computed);
        Ok(())
    }
}

/// Category → item ids, both sorted.
pub fn items_by_category(catalog: &Catalog) -> BTreeMap<&str, Vec<&str>> {
    let mut map: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for item in catalog.items() {
        map.entry(item.category.as_str()).or_default().push(item.id.as_str());
    }
    map.values_mut().for_each(|v| v.sort_unstable());
    map
}
