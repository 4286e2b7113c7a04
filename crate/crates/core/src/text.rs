//! Small text helpers shared by sample building, dialogue generation and the
//! assistant: content-word tokenization and preference summaries.

use std::collections::{BTreeMap, BTreeSet};

use crate::catalog::Item;

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "all", "also", "am", "an", "and", "any", "are",
    "as", "at", "be", "because", "been", "before", "being", "below", "between", "both", "but",
    "by", "can", "could", "d", "did", "do", "does", "doing", "down", "during", "each", "few",
    "for", "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers",
    "him", "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just", "ll",
    "m", "me", "more", "most", "my", "myself", "no", "nor", "not", "now", "of", "off", "on",
    "once", "only", "or", "other", "our", "ours", "out", "over", "own", "re", "s", "same",
    "she", "should", "so", "some", "such", "t", "than", "that", "the", "their", "them", "then",
    "there", "these", "they", "this", "those", "through", "to", "too", "under", "until", "up",
    "ve", "very", "was", "we", "were", "what", "when", "where", "which", "while", "who", "whom",
    "why", "will", "with", "would", "you", "your", "yours", "yourself",
];

pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.binary_search(&word).is_ok()
}

/// Lowercased alphanumeric tokens with stopwords removed, in text order.
pub fn content_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !is_stopword(t))
        .collect()
}

/// True when `haystack` contains `needle_len` consecutive content words of
/// `needle` as a contiguous run.
pub fn shares_run(haystack: &[String], needle: &[String], needle_len: usize) -> bool {
    if needle_len == 0 || needle.len() < needle_len || haystack.len() < needle_len {
        return false;
    }
    needle
        .windows(needle_len)
        .any(|w| haystack.windows(needle_len).any(|h| h == w))
}

fn normalized_tags(item: &Item) -> BTreeSet<String> {
    item.attributes
        .iter()
        .map(|a| a.trim().to_lowercase())
        .filter(|a| !a.is_empty() && *a != item.category.to_lowercase())
        .collect()
}

/// Terms describing an item's style: its attribute tags, or the content words
/// of its description (minus category words) when it has none.
pub fn style_terms(item: &Item) -> BTreeSet<String> {
    let tags = normalized_tags(item);
    if !tags.is_empty() {
        return tags;
    }
    let category: BTreeSet<String> = content_words(&item.category).into_iter().collect();
    content_words(&item.description)
        .into_iter()
        .filter(|w| !category.contains(w))
        .collect()
}

/// Most frequent style terms over `items`, ties by term, at most `limit`.
pub fn top_style_terms(items: &[&Item], limit: usize) -> Vec<String> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for item in items {
        for term in style_terms(item) {
            *counts.entry(term).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.into_iter().take(limit).map(|(t, _)| t).collect()
}

/// `"prefers: a, b, c"`. Falls back to category names when no style term
/// exists so the summary is never empty for a non-empty history.
pub fn preference_summary(items: &[&Item], limit: usize) -> String {
    let mut terms = top_style_terms(items, limit);
    if terms.is_empty() {
        let cats: BTreeSet<String> = items.iter().map(|i| i.category.to_lowercase()).collect();
        terms = cats.into_iter().take(limit.max(1)).collect();
    }
    if terms.is_empty() {
        return String::new();
    }
    format!("prefers: {}", terms.join(", "))
}

/// Whether any history item shares at least one attribute tag with the target.
/// Items without tags never align.
pub fn attributes_align(target: &Item, history: &[&Item]) -> bool {
    let target_tags = normalized_tags(target);
    !target_tags.is_empty()
        && history
            .iter()
            .any(|h| !normalized_tags(h).is_disjoint(&target_tags))
}

/// Whitespace-token truncation. Returns the input unchanged when it fits.
pub fn truncate_tokens(text: &str, budget: usize) -> String {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() <= budget {
        return text.to_string();
    }
    tokens[..budget].join(" ")
}
