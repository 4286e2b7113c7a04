//! User history filtering.
//!
//! Given an outfit and a user, every item of the outfit is tried as the
//! target with the rest as the partial outfit. Candidates whose category
//! history (`U_c`) and compatible set (`H_c`) are large enough compete on
//! `alpha * |H_c| + |U_c|`; the winner's `U_c` is then scored against the
//! co-occurrence weighted mean feature of `H_c` and cut to the top `k`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, CatalogError, FeatureStore};
use crate::embedding::{cosine, Embedding, EmbeddingError};
use crate::par::*;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
    #[error("candidate set is empty")]
    NoCandidates,
    #[error("compatible items have zero total co-occurrence with the partial outfit")]
    ZeroCooccurrence,
    #[error("invalid filter config: {0}")]
    Config(String),
}

pub type Result<T, E = FilterError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    /// Minimum `|U_c|`.
    #[serde(rename = "m_u")]
    pub min_user_history: usize,
    /// Minimum `|H_c|`.
    #[serde(rename = "m_i")]
    pub min_compatible: usize,
    pub alpha: f64,
    pub beta: f64,
    #[serde(rename = "k")]
    pub top_k: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_user_history: 10,
            min_compatible: 3,
            alpha: 3.0,
            beta: 2.0,
            top_k: 5,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(FilterError::Config(m.to_string()));
        if self.min_user_history < 1 {
            return bad("m_u must be >= 1");
        }
        if self.min_compatible < 1 {
            return bad("m_i must be >= 1");
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be > 0");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad("beta must be >= 0");
        }
        if self.top_k < 1 {
            return bad("k must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidatePair {
    /// Outfit items other than the target, in outfit order.
    pub partial: Vec<String>,
    pub target: String,
    pub category: String,
    /// `H_c`
    pub compatible: BTreeSet<String>,
    /// `U_c`
    pub history: BTreeSet<String>,
}

impl CandidatePair {
    pub fn objective(&self, alpha: f64) -> f64 {
        alpha * self.compatible.len() as f64 + self.history.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompatibilityProfile {
    pub vector: Embedding,
    pub weights: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHistoryItem {
    pub item_id: String,
    pub sim: f64,
    pub count: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub partial: Vec<String>,
    pub target: String,
    pub category: String,
    /// `U_c'`, best first.
    pub filtered_history: Vec<String>,
    /// Scores of `filtered_history`, same order.
    pub scores: Vec<ScoredHistoryItem>,
}

/// Builds the admitted candidate set `R` in outfit order.
pub fn enumerate_candidates(
    catalog: &Catalog,
    outfit_id: &str,
    user_id: &str,
    config: &FilterConfig,
) -> Result<Vec<CandidatePair>> {
    let outfit = catalog.outfit(outfit_id)?;
    catalog.user(user_id)?;
    let mut admitted = Vec::new();
    for target in &outfit.item_ids {
        let partial: Vec<String> = outfit
            .item_ids
            .iter()
            .filter(|id| *id != target)
            .cloned()
            .collect();
        let category = catalog.category_of(target)?.to_string();
        let history = catalog.user_items_in_category(user_id, &category)?;
        let compatible = catalog.items_cooccurring_in_category(&partial, &category)?;
        if history.len() >= config.min_user_history && compatible.len() >= config.min_compatible {
            admitted.push(CandidatePair {
                partial,
                target: target.clone(),
                category,
                compatible,
                history,
            });
        }
    }
    Ok(admitted)
}

/// Argmax of `alpha * |H_c| + |U_c|`; ties go to the smaller target id.
pub fn select_optimal(candidates: &[CandidatePair], alpha: f64) -> Result<&CandidatePair> {
    let mut best: Option<(&CandidatePair, f64)> = None;
    for c in candidates {
        let obj = c.objective(alpha);
        best = match best {
            Some((b, bo)) if bo > obj || (bo == obj && b.target <= c.target) => Some((b, bo)),
            _ => Some((c, obj)),
        };
    }
    best.map(|(c, _)| c).ok_or(FilterError::NoCandidates)
}

/// Co-occurrence weighted mean feature of the compatible items.
pub fn compatibility_profile<S: AsRef<str>>(
    catalog: &Catalog,
    features: &FeatureStore,
    compatible: &BTreeSet<String>,
    partial: &[S],
) -> Result<CompatibilityProfile> {
    if compatible.is_empty() {
        return Err(FilterError::ZeroCooccurrence);
    }
    let mut counts = Vec::with_capacity(compatible.len());
    for id in compatible {
        counts.push((id, catalog.cooccurrence_count(id, partial)?));
    }
    let total: usize = counts.iter().map(|(_, c)| c).sum();
    if total == 0 {
        return Err(FilterError::ZeroCooccurrence);
    }
    let mut weights = BTreeMap::new();
    let mut terms = Vec::with_capacity(counts.len());
    for (id, count) in counts {
        let w = count as f64 / total as f64;
        weights.insert(id.clone(), w);
        terms.push((w, features.feature(catalog.item(id)?)?));
    }
    let refs: Vec<(f64, &Embedding)> = terms.iter().map(|(w, f)| (*w, f.as_ref())).collect();
    Ok(CompatibilityProfile {
        vector: Embedding::weighted_sum(&refs)?,
        weights,
    })
}

/// `(beta * count / max_count + 1) * sim`
pub fn history_score(count: usize, max_count: usize, sim: f64, beta: f64) -> f64 {
    assert!(max_count >= 1, "max_count must be positive");
    (beta * count as f64 / max_count as f64 + 1.0) * sim
}

pub fn score_history_item(
    catalog: &Catalog,
    features: &FeatureStore,
    item_id: &str,
    profile: &CompatibilityProfile,
    user_id: &str,
    beta: f64,
    max_count: usize,
) -> Result<ScoredHistoryItem> {
    let f = features.feature(catalog.item(item_id)?)?;
    let sim = cosine(&f, &profile.vector)?;
    let count = catalog.item_interaction_count(user_id, item_id)?;
    Ok(ScoredHistoryItem {
        item_id: item_id.to_string(),
        sim,
        count,
        score: history_score(count, max_count, sim, beta),
    })
}

/// Score descending, then item id ascending.
pub fn ranking_order(a: &ScoredHistoryItem, b: &ScoredHistoryItem) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.item_id.cmp(&b.item_id))
}

/// Runs the whole filter. `Ok(None)` means no candidate passed the thresholds.
pub fn filter_user_history(
    catalog: &Catalog,
    features: &FeatureStore,
    outfit_id: &str,
    user_id: &str,
    config: &FilterConfig,
) -> Result<Option<FilterOutcome>> {
    config.validate()?;
    let candidates = enumerate_candidates(catalog, outfit_id, user_id, config)?;
    let chosen = match select_optimal(&candidates, config.alpha) {
        Ok(c) => c,
        Err(FilterError::NoCandidates) => return Ok(None),
        Err(e) => return Err(e),
    };
    let profile = compatibility_profile(catalog, features, &chosen.compatible, &chosen.partial)?;

    let counts = chosen
        .history
        .iter()
        .map(|id| catalog.item_interaction_count(user_id, id))
        .collect::<Result<Vec<_>, _>>()?;
    let max_count = counts.iter().copied().max().unwrap_or(0);
    assert!(max_count >= 1, "history items always appear in a user outfit");

    let mut scored = chosen
        .history
        .iter()
        .map(|id| score_history_item(catalog, features, id, &profile, user_id, config.beta, max_count))
        .collect::<Result<Vec<_>>>()?;
    scored.sort_by(ranking_order);
    scored.truncate(config.top_k);

    Ok(Some(FilterOutcome {
        partial: chosen.partial.clone(),
        target: chosen.target.clone(),
        category: chosen.category.clone(),
        filtered_history: scored.iter().map(|s| s.item_id.clone()).collect(),
        scores: scored,
    }))
}

/// Filters many `(outfit, user)` pairs on the rayon pool. Output order
/// follows `pairs`.
pub fn filter_batch(
    catalog: &Catalog,
    features: &FeatureStore,
    pairs: &[(String, String)],
    config: &FilterConfig,
) -> Vec<Result<Option<FilterOutcome>>> {
    pairs
        .par_iter()
        .map(|(o, u)| filter_user_history(catalog, features, o, u, config))
        .collect()
}

pub fn filter_batch_sequential(
    catalog: &Catalog,
    features: &FeatureStore,
    pairs: &[(String, String)],
    config: &FilterConfig,
) -> Vec<Result<Option<FilterOutcome>>> {
    pairs
        .iter()
        .map(|(o, u)| filter_user_history(catalog, features, o, u, config))
        .collect()
}
