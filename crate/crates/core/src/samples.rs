//! Construction of the three recommendation sample types and their
//! train/valid/test splits.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{self, Catalog, CatalogError, FeatureStore, Item, Outfit};
use crate::embedding::{fnv1a64, splitmix64};
use crate::history::{self, FilterConfig, FilterError};
use crate::par::*;
use crate::text;

/// Upper bound on the number of withheld target items per basic sample.
pub const MAX_TARGETS: usize = 3;

pub const DEFAULT_RATIOS: [f64; 3] = [0.9, 0.05, 0.05];

#[derive(Debug, Error)]
pub enum SampleError {
    #[error("outfit {0:?} has fewer than 2 items")]
    OutfitTooSmall(String),
    #[error("shared item set must have at least 2 items, got {0}")]
    TooFewAnchors(usize),
    #[error("invalid split ratios: {0}")]
    Ratios(String),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}

pub type Result<T, E = SampleError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Basic,
    Personalized,
    Alternative,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Basic, TaskKind::Personalized, TaskKind::Alternative];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Basic => "basic",
            TaskKind::Personalized => "personalized",
            TaskKind::Alternative => "alternative",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.jsonl", self.as_str())
    }
}

impl std::fmt::Display for TaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "basic" => Ok(TaskKind::Basic),
            "personalized" => Ok(TaskKind::Personalized),
            "alternative" => Ok(TaskKind::Alternative),
            other => Err(format!("unknown task {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueSlot {
    pub index: usize,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasicSample {
    pub id: String,
    pub outfit_id: String,
    pub partial: Vec<String>,
    /// Sorted by id.
    pub targets: Vec<String>,
    pub slots: Vec<DialogueSlot>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonalizedSample {
    pub id: String,
    pub outfit_id: String,
    pub user_id: String,
    pub partial: Vec<String>,
    pub target: String,
    pub category: String,
    pub filtered_history: Vec<String>,
    pub preference_summary: String,
    pub valid: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlternativeSample {
    pub id: String,
    /// The outfit being edited.
    pub outfit_a: String,
    /// The outfit the replacement comes from.
    pub outfit_b: String,
    pub anchors: Vec<String>,
    pub replace: String,
    pub replacement: String,
    pub category: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AlternativePair {
    pub outfit_a: String,
    pub outfit_b: String,
    pub shared: Vec<String>,
}

/// Any sample, for code that handles all three kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SampleRecord {
    Basic(BasicSample),
    Personalized(PersonalizedSample),
    Alternative(AlternativeSample),
}

impl SampleRecord {
    pub fn id(&self) -> &str {
        match self {
            SampleRecord::Basic(s) => &s.id,
            SampleRecord::Personalized(s) => &s.id,
            SampleRecord::Alternative(s) => &s.id,
        }
    }

    pub fn kind(&self) -> TaskKind {
        match self {
            SampleRecord::Basic(_) => TaskKind::Basic,
            SampleRecord::Personalized(_) => TaskKind::Personalized,
            SampleRecord::Alternative(_) => TaskKind::Alternative,
        }
    }
}

fn outfit_rng(outfit_id: &str, seed: u64) -> ChaCha8Rng {
    let mut state = fnv1a64(outfit_id.as_bytes()) ^ seed;
    ChaCha8Rng::seed_from_u64(splitmix64(&mut state))
}

/// Splits an outfit into a partial outfit (outfit order) and 1..=3 targets
/// (sorted by id). Deterministic in `(outfit.id, seed)`.
pub fn split_outfit(outfit: &Outfit, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    let n = outfit.item_ids.len();
    if n < 2 {
        return Err(SampleError::OutfitTooSmall(outfit.id.clone()));
    }
    let mut rng = outfit_rng(&outfit.id, seed);
    let n_targets = rng.random_range(1..=MAX_TARGETS.min(n - 1));
    let picked: BTreeSet<usize> = index::sample(&mut rng, n, n_targets).into_iter().collect();
    let mut targets = Vec::with_capacity(n_targets);
    let mut partial = Vec::with_capacity(n - n_targets);
    for (i, id) in outfit.item_ids.iter().enumerate() {
        if picked.contains(&i) {
            targets.push(id.clone());
        } else {
            partial.push(id.clone());
        }
    }
    targets.sort();
    Ok((partial, targets))
}

pub fn build_basic(outfit: &Outfit, seed: u64) -> Result<BasicSample> {
    let (partial, targets) = split_outfit(outfit, seed)?;
    let slots = targets
        .iter()
        .enumerate()
        .map(|(index, t)| DialogueSlot {
            index,
            target: t.clone(),
        })
        .collect();
    Ok(BasicSample {
        id: format!("basic:{}", outfit.id),
        outfit_id: outfit.id.clone(),
        partial,
        targets,
        slots,
    })
}

pub fn build_personalized(
    catalog: &Catalog,
    features: &FeatureStore,
    outfit_id: &str,
    user_id: &str,
    config: &FilterConfig,
) -> Result<Option<PersonalizedSample>> {
    let Some(outcome) = history::filter_user_history(catalog, features, outfit_id, user_id, config)?
    else {
        return Ok(None);
    };
    let history_items = outcome
        .filtered_history
        .iter()
        .map(|id| catalog.item(id))
        .collect::<Result<Vec<&Item>, _>>()?;
    let target = catalog.item(&outcome.target)?;
    Ok(Some(PersonalizedSample {
        id: format!("personalized:{outfit_id}:{user_id}"),
        outfit_id: outfit_id.to_string(),
        user_id: user_id.to_string(),
        preference_summary: text::preference_summary(&history_items, history_items.len()),
        valid: u8::from(text::attributes_align(target, &history_items)),
        partial: outcome.partial,
        target: outcome.target,
        category: outcome.category,
        filtered_history: outcome.filtered_history,
    }))
}

/// Every `(user, outfit)` pair from the users' own histories, deduplicated
/// and sorted, as `(outfit, user)`.
pub fn personalized_pairs(catalog: &Catalog) -> Vec<(String, String)> {
    let mut pairs: BTreeSet<(String, String)> = BTreeSet::new();
    for user in catalog.users() {
        for o in &user.outfit_ids {
            pairs.insert((o.clone(), user.id.clone()));
        }
    }
    pairs.into_iter().collect()
}

/// All unordered outfit pairs sharing at least two items, `outfit_a < outfit_b`
/// by id, sorted.
pub fn find_alternative_pairs(catalog: &Catalog) -> Vec<AlternativePair> {
    let index = OverlapIndex::new(catalog);
    let nested: Vec<Vec<AlternativePair>> = (0..index.sets.len())
        .into_par_iter()
        .map(|a| index.pairs_from(a))
        .collect();
    let mut pairs: Vec<AlternativePair> = nested.into_iter().flatten().collect();
    pairs.sort();
    pairs
}

/// Single-threaded reference path for [`find_alternative_pairs`].
pub fn find_alternative_pairs_sequential(catalog: &Catalog) -> Vec<AlternativePair> {
    let index = OverlapIndex::new(catalog);
    let mut pairs: Vec<AlternativePair> =
        (0..index.sets.len()).flat_map(|a| index.pairs_from(a)).collect();
    pairs.sort();
    pairs
}

struct OverlapIndex<'a> {
    outfits: Vec<&'a Outfit>,
    sets: Vec<BTreeSet<&'a str>>,
    by_item: HashMap<&'a str, Vec<usize>>,
}

impl<'a> OverlapIndex<'a> {
    fn new(catalog: &'a Catalog) -> Self {
        let mut outfits: Vec<&Outfit> = catalog.outfits().iter().collect();
        outfits.sort_by(|a, b| a.id.cmp(&b.id));
        let sets: Vec<BTreeSet<&str>> = outfits
            .iter()
            .map(|o| o.item_ids.iter().map(String::as_str).collect())
            .collect();
        let mut by_item: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, set) in sets.iter().enumerate() {
            for item in set {
                by_item.entry(item).or_default().push(i);
            }
        }
        Self {
            outfits,
            sets,
            by_item,
        }
    }

    fn pairs_from(&self, a: usize) -> Vec<AlternativePair> {
        let mut shared_counts: HashMap<usize, usize> = HashMap::new();
        for item in &self.sets[a] {
            for &b in &self.by_item[item] {
                if b > a {
                    *shared_counts.entry(b).or_default() += 1;
                }
            }
        }
        shared_counts
            .into_iter()
            .filter(|&(_, n)| n >= 2)
            .map(|(b, _)| AlternativePair {
                outfit_a: self.outfits[a].id.clone(),
                outfit_b: self.outfits[b].id.clone(),
                shared: self.sets[a]
                    .intersection(&self.sets[b])
                    .map(|s| s.to_string())
                    .collect(),
            })
            .collect()
    }
}

/// Same-category swaps between the non-shared items of a pair, in both
/// directions, sorted by sample id.
pub fn build_alternative(catalog: &Catalog, pair: &AlternativePair) -> Result<Vec<AlternativeSample>> {
    if pair.shared.len() < 2 {
        return Err(SampleError::TooFewAnchors(pair.shared.len()));
    }
    let shared: BTreeSet<&str> = pair.shared.iter().map(String::as_str).collect();
    let rest = |id: &str| -> Result<Vec<&Item>> {
        catalog
            .outfit(id)?
            .item_ids
            .iter()
            .filter(|i| !shared.contains(i.as_str()))
            .map(|i| catalog.item(i).map_err(SampleError::from))
            .collect()
    };
    let a_rest = rest(&pair.outfit_a)?;
    let b_rest = rest(&pair.outfit_b)?;
    let mut out = Vec::new();
    for ia in &a_rest {
        for ib in &b_rest {
            if ia.category != ib.category {
                continue;
            }
            for (edited, source, replace, replacement) in [
                (&pair.outfit_a, &pair.outfit_b, ia, ib),
                (&pair.outfit_b, &pair.outfit_a, ib, ia),
            ] {
                out.push(AlternativeSample {
                    id: format!("alternative:{edited}:{source}:{}>{}", replace.id, replacement.id),
                    outfit_a: edited.clone(),
                    outfit_b: source.clone(),
                    anchors: pair.shared.clone(),
                    replace: replace.id.clone(),
                    replacement: replacement.id.clone(),
                    category: replace.category.clone(),
                });
            }
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub valid: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub task: TaskKind,
    pub seed: u64,
    pub ratios: [f64; 3],
    pub ids: SplitIds,
}

impl DatasetSplit {
    pub fn sizes(&self) -> [usize; 3] {
        [self.ids.train.len(), self.ids.valid.len(), self.ids.test.len()]
    }
}

/// `floor(ratio * n)` per split, then the remainder handed out one at a time
/// in train, valid, test order.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> Result<[usize; 3]> {
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(SampleError::Ratios(format!("{ratios:?} must all be positive")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(SampleError::Ratios(format!("{ratios:?} sum to {sum}, not 1")));
    }
    // the epsilon absorbs products like 0.29 * 100 = 28.999999999999996
    let mut sizes = ratios.map(|r| ((r * n as f64) + 1e-9).floor() as usize);
    let mut assigned: usize = sizes.iter().sum();
    let mut slot = 0;
    while assigned < n {
        sizes[slot % 3] += 1;
        assigned += 1;
        slot += 1;
    }
    Ok(sizes)
}

/// Seeded shuffle of `ids` (sorted first, so input order does not matter)
/// followed by a contiguous cut.
pub fn emit_split(task: TaskKind, ids: &[String], ratios: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    let sizes = split_sizes(ids.len(), ratios)?;
    if sizes.contains(&0) {
        log::warn!(
            "{task}: {} samples cannot fill three non-empty splits ({sizes:?})",
            ids.len()
        );
    }
    let mut shuffled = ids.to_vec();
    shuffled.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(task.as_str().as_bytes()));
    shuffled.shuffle(&mut rng);
    let test = shuffled.split_off(sizes[0] + sizes[1]);
    let valid = shuffled.split_off(sizes[0]);
    Ok(DatasetSplit {
        task,
        seed,
        ratios,
        ids: SplitIds {
            train: shuffled,
            valid,
            test,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildConfig {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub filter: FilterConfig,
}

impl Default for BuildConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            ratios: DEFAULT_RATIOS,
            filter: FilterConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuiltDataset {
    pub basic: Vec<BasicSample>,
    pub personalized: Vec<PersonalizedSample>,
    pub alternative: Vec<AlternativeSample>,
    /// `(outfit, user)` pairs the filter rejected.
    pub personalized_skipped: usize,
    pub alternative_pairs: usize,
}

impl BuiltDataset {
    pub fn ids(&self, task: TaskKind) -> Vec<String> {
        match task {
            TaskKind::Basic => self.basic.iter().map(|s| s.id.clone()).collect(),
            TaskKind::Personalized => self.personalized.iter().map(|s| s.id.clone()).collect(),
            TaskKind::Alternative => self.alternative.iter().map(|s| s.id.clone()).collect(),
        }
    }

    pub fn len(&self, task: TaskKind) -> usize {
        match task {
            TaskKind::Basic => self.basic.len(),
            TaskKind::Personalized => self.personalized.len(),
            TaskKind::Alternative => self.alternative.len(),
        }
    }
}

/// Builds the requested task kinds over the whole catalog.
pub fn build_dataset(
    catalog: &Catalog,
    features: &FeatureStore,
    tasks: &[TaskKind],
    config: &BuildConfig,
) -> Result<BuiltDataset> {
    config.filter.validate()?;
    let mut out = BuiltDataset::default();
    if tasks.contains(&TaskKind::Basic) {
        let mut outfits: Vec<&Outfit> = catalog.outfits().iter().collect();
        outfits.sort_by(|a, b| a.id.cmp(&b.id));
        out.basic = outfits
            .into_iter()
            .map(|o| build_basic(o, config.seed))
            .collect::<Result<_>>()?;
    }
    if tasks.contains(&TaskKind::Personalized) {
        let pairs = personalized_pairs(catalog);
        let built = pairs
            .par_iter()
            .map(|(o, u)| build_personalized(catalog, features, o, u, &config.filter))
            .collect::<Result<Vec<_>>>()?;
        out.personalized_skipped = built.iter().filter(|s| s.is_none()).count();
        out.personalized = built.into_iter().flatten().collect();
    }
    if tasks.contains(&TaskKind::Alternative) {
        let pairs = find_alternative_pairs(catalog);
        out.alternative_pairs = pairs.len();
        let nested = pairs
            .par_iter()
            .map(|p| build_alternative(catalog, p))
            .collect::<Result<Vec<_>>>()?;
        out.alternative = nested.into_iter().flatten().collect();
        out.alternative.sort_by(|a, b| a.id.cmp(&b.id));
    }
    Ok(out)
}

/// Writes `<task>.jsonl` for each requested task plus `split.json`, an array
/// with one split manifest per task. Returns the manifests.
pub fn write_dataset(
    dir: &Path,
    dataset: &BuiltDataset,
    tasks: &[TaskKind],
    config: &BuildConfig,
) -> Result<Vec<DatasetSplit>> {
    fs::create_dir_all(dir)?;
    let mut splits = Vec::new();
    for &task in tasks {
        let path = dir.join(task.file_name());
        match task {
            TaskKind::Basic => catalog::write_jsonl(&path, &dataset.basic)?,
            TaskKind::Personalized => catalog::write_jsonl(&path, &dataset.personalized)?,
            TaskKind::Alternative => catalog::write_jsonl(&path, &dataset.alternative)?,
        }
        splits.push(emit_split(task, &dataset.ids(task), config.ratios, config.seed)?);
    }
    let mut manifest = serde_json::to_string_pretty(&splits).expect("split manifest serializes");
    manifest.push('\n');
    fs::write(dir.join("split.json"), manifest)?;
    Ok(splits)
}

/// Reads whichever `<task>.jsonl` files exist in `dir`, in task order.
pub fn read_samples(dir: &Path) -> Result<Vec<SampleRecord>> {
    let mut out = Vec::new();
    for task in TaskKind::ALL {
        let path = dir.join(task.file_name());
        if !path.exists() {
            continue;
        }
        let raw = fs::read_to_string(&path)?;
        for (idx, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let err = |e: serde_json::Error| SampleError::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                message: e.to_string(),
            };
            let record = match task {
                TaskKind::Basic => SampleRecord::Basic(serde_json::from_str(line).map_err(err)?),
                TaskKind::Personalized => {
                    SampleRecord::Personalized(serde_json::from_str(line).map_err(err)?)
                }
                TaskKind::Alternative => {
                    SampleRecord::Alternative(serde_json::from_str(line).map_err(err)?)
                }
            };
            out.push(record);
        }
    }
    Ok(out)
}
