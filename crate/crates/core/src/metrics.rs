//! Evaluation metrics and training-loss formulas.
//!
//! The similarity metrics are cosines scaled by 100. The two losses are pure
//! functions over a caller-supplied table of logits, so they can be checked
//! without a model.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine, Embedder, Embedding, EmbeddingError};
use crate::par::*;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("empty text operand")]
    EmptyText,
    #[error("empty image reference")]
    EmptyImageRef,
    #[error("personalization needs at least one history image")]
    EmptyHistory,
    #[error(transparent)]
    Embedding(#[from] EmbeddingError),
}

pub fn sbert_similarity(gen_text: &str, gt_text: &str, embedder: &dyn Embedder) -> Result<f64, MetricError> {
    if gen_text.trim().is_empty() || gt_text.trim().is_empty() {
        return Err(MetricError::EmptyText);
    }
    let a = embedder.embed_text(gen_text)?;
    let b = embedder.embed_text(gt_text)?;
    Ok(100.0 * cosine(&a, &b)?)
}

/// Text-to-image alignment.
pub fn cts(gen_text: &str, gt_image_ref: &str, embedder: &dyn Embedder) -> Result<f64, MetricError> {
    if gen_text.trim().is_empty() {
        return Err(MetricError::EmptyText);
    }
    if gt_image_ref.trim().is_empty() {
        return Err(MetricError::EmptyImageRef);
    }
    let t = embedder.embed_text(gen_text)?;
    let v = embedder.embed_image(gt_image_ref)?;
    Ok(100.0 * cosine(&t, &v)?)
}

/// Image-to-image similarity.
pub fn cis(gen_image_ref: &str, gt_image_ref: &str, embedder: &dyn Embedder) -> Result<f64, MetricError> {
    if gen_image_ref.trim().is_empty() || gt_image_ref.trim().is_empty() {
        return Err(MetricError::EmptyImageRef);
    }
    let a = embedder.embed_image(gen_image_ref)?;
    let b = embedder.embed_image(gt_image_ref)?;
    Ok(100.0 * cosine(&a, &b)?)
}

/// Cosine between the generated image and the unweighted mean of the user's
/// history image embeddings.
pub fn personalization<S: AsRef<str>>(
    gen_image_ref: &str,
    history_image_refs: &[S],
    embedder: &dyn Embedder,
) -> Result<f64, MetricError> {
    if history_image_refs.is_empty() {
        return Err(MetricError::EmptyHistory);
    }
    if gen_image_ref.trim().is_empty() {
        return Err(MetricError::EmptyImageRef);
    }
    let history = history_image_refs
        .iter()
        .map(|r| embedder.embed_image(r.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    let preference = Embedding::mean(&history)?;
    let generated = embedder.embed_image(gen_image_ref)?;
    Ok(100.0 * cosine(&preference, &generated)?)
}

/// One line of `predictions.jsonl`. Absent operands skip the metrics that
/// need them.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPair {
    pub id: String,
    #[serde(default)]
    pub gen_text: Option<String>,
    #[serde(default)]
    pub gt_text: Option<String>,
    #[serde(default)]
    pub gen_image: Option<String>,
    #[serde(default)]
    pub gt_image: Option<String>,
    #[serde(default)]
    pub history_images: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    /// Mean over scored pairs, `None` when no pair had the operands.
    pub mean: Option<f64>,
    pub n: usize,
    /// Pairs whose operands were present but could not be scored.
    pub errors: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    pub sbert: MetricSummary,
    pub cts: MetricSummary,
    pub cis: MetricSummary,
    pub per: MetricSummary,
}

type Score = Option<Result<f64, MetricError>>;

#[derive(Debug)]
struct PairScores {
    sbert: Score,
    cts: Score,
    cis: Score,
    per: Score,
}

fn score_pair(pair: &EvalPair, embedder: &dyn Embedder) -> PairScores {
    let gen_text = pair.gen_text.as_deref();
    let gen_image = pair.gen_image.as_deref();
    PairScores {
        sbert: gen_text
            .zip(pair.gt_text.as_deref())
            .map(|(g, t)| sbert_similarity(g, t, embedder)),
        cts: gen_text
            .zip(pair.gt_image.as_deref())
            .map(|(g, i)| cts(g, i, embedder)),
        cis: gen_image
            .zip(pair.gt_image.as_deref())
            .map(|(g, i)| cis(g, i, embedder)),
        per: gen_image
            .filter(|_| !pair.history_images.is_empty())
            .map(|g| personalization(g, &pair.history_images, embedder)),
    }
}

fn summarize<'a>(scores: impl Iterator<Item = &'a Score>) -> MetricSummary {
    let mut values = Vec::new();
    let mut errors = 0;
    for s in scores.flatten() {
        match s {
            Ok(v) => values.push(*v),
            Err(e) => {
                log::debug!("metric skipped: {e}");
                errors += 1;
            }
        }
    }
    // sorted summation keeps the mean independent of pair order
    values.sort_by(f64::total_cmp);
    let n = values.len();
    MetricSummary {
        mean: (n > 0).then(|| values.iter().sum::<f64>() / n as f64),
        n,
        errors,
    }
}

pub fn evaluate_run(pairs: &[EvalPair], embedder: &dyn Embedder) -> MetricReport {
    let scored: Vec<PairScores> = pairs.par_iter().map(|p| score_pair(p, embedder)).collect();
    MetricReport {
        n: pairs.len(),
        sbert: summarize(scored.iter().map(|s| &s.sbert)),
        cts: summarize(scored.iter().map(|s| &s.cts)),
        cis: summarize(scored.iter().map(|s| &s.cis)),
        per: summarize(scored.iter().map(|s| &s.per)),
    }
}

pub fn evaluate_run_sequential(pairs: &[EvalPair], embedder: &dyn Embedder) -> MetricReport {
    let scored: Vec<PairScores> = pairs.iter().map(|p| score_pair(p, embedder)).collect();
    MetricReport {
        n: pairs.len(),
        sbert: summarize(scored.iter().map(|s| &s.sbert)),
        cts: summarize(scored.iter().map(|s| &s.cts)),
        cis: summarize(scored.iter().map(|s| &s.cis)),
        per: summarize(scored.iter().map(|s| &s.per)),
    }
}

impl MetricReport {
    /// Aligned plain-text table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:>9} {:>6} {:>6}", "metric", "score", "n", "errors");
        for (name, m) in [("S-BERT", &self.sbert), ("CTS", &self.cts), ("CIS", &self.cis), ("Per.", &self.per)] {
            let score = m.mean.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
            let _ = writeln!(out, "{:<8} {:>9} {:>6} {:>6}", name, score, m.n, m.errors);
        }
        let _ = writeln!(out, "pairs: {}", self.n);
        out
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("logit table has no steps")]
    EmptyTable,
    #[error("step {step} has {got} logits, expected {expected}")]
    VocabMismatch { step: usize, expected: usize, got: usize },
    #[error("non-finite logit at step {step}, index {index}")]
    NonFinite { step: usize, index: usize },
    #[error("position {position} outside the table of {len} steps")]
    PositionOutOfRange { position: usize, len: usize },
    #[error("token {token} outside vocabulary of size {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("masked position {position} outside sequence of length {len}")]
    MaskOutOfRange { position: usize, len: usize },
}

/// Unnormalized log-scores, one vector over the vocabulary per position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitTable {
    steps: Vec<Vec<f64>>,
}

impl LogitTable {
    pub fn new(steps: Vec<Vec<f64>>) -> Result<Self, LossError> {
        let vocab = steps.first().ok_or(LossError::EmptyTable)?.len();
        if vocab == 0 {
            return Err(LossError::VocabMismatch { step: 0, expected: 1, got: 0 });
        }
        for (step, row) in steps.iter().enumerate() {
            if row.len() != vocab {
                return Err(LossError::VocabMismatch {
                    step,
                    expected: vocab,
                    got: row.len(),
                });
            }
            if let Some(index) = row.iter().position(|v| !v.is_finite()) {
                return Err(LossError::NonFinite { step, index });
            }
        }
        Ok(Self { steps })
    }

    pub fn uniform(len: usize, vocab: usize) -> Self {
        Self {
            steps: vec![vec![0.0; vocab]; len],
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn vocab(&self) -> usize {
        self.steps[0].len()
    }

    pub fn steps(&self) -> &[Vec<f64>] {
        &self.steps
    }

    /// Adds `delta` to every logit of one step.
    pub fn shifted(&self, step: usize, delta: f64) -> Self {
        let mut steps = self.steps.clone();
        steps[step].iter_mut().for_each(|v| *v += delta);
        Self { steps }
    }

    /// `-log softmax(step)[token]`, always >= 0.
    pub fn token_nll(&self, position: usize, token: usize) -> Result<f64, LossError> {
        let row = self.steps.get(position).ok_or(LossError::PositionOutOfRange {
            position,
            len: self.steps.len(),
        })?;
        if token >= row.len() {
            return Err(LossError::TokenOutOfRange {
                token,
                vocab: row.len(),
            });
        }
        let (arg, max) = row
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
        // log-sum-exp with the max term pulled out so ln_1p keeps precision
        let rest: f64 = row
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != arg)
            .map(|(_, v)| (v - max).exp())
            .sum();
        Ok(max + rest.ln_1p() - row[token])
    }
}

/// Next-token loss summed over the response only. Row
/// `response_start + i` of the table holds the scores for response token `i`.
pub fn mmr_loss(logits: &LogitTable, response_tokens: &[usize], response_start: usize) -> Result<f64, LossError> {
    response_tokens
        .iter()
        .enumerate()
        .map(|(i, &tok)| logits.token_nll(response_start + i, tok))
        .sum()
}

/// Masked positions of an image-token sequence with their original tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSpec {
    seq_len: usize,
    masked: BTreeMap<usize, usize>,
}

impl MaskSpec {
    /// `masked` maps 0-based positions to the original token there.
    pub fn new(seq_len: usize, masked: BTreeMap<usize, usize>) -> Result<Self, LossError> {
        if let Some((&position, _)) = masked.iter().find(|(&p, _)| p >= seq_len) {
            return Err(LossError::MaskOutOfRange { position, len: seq_len });
        }
        Ok(Self { seq_len, masked })
    }

    /// Masks `positions` of `tokens`.
    pub fn from_tokens(tokens: &[usize], positions: impl IntoIterator<Item = usize>) -> Result<Self, LossError> {
        let mut masked = BTreeMap::new();
        for p in positions {
            let tok = *tokens.get(p).ok_or(LossError::MaskOutOfRange {
                position: p,
                len: tokens.len(),
            })?;
            masked.insert(p, tok);
        }
        Self::new(tokens.len(), masked)
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    pub fn masked(&self) -> &BTreeMap<usize, usize> {
        &self.masked
    }
}

/// Per-position contributions of the masked-token loss, in position order.
pub fn t2i_loss_terms(logits: &LogitTable, mask: &MaskSpec) -> Result<Vec<(usize, f64)>, LossError> {
    if logits.len() < mask.seq_len {
        return Err(LossError::PositionOutOfRange {
            position: mask.seq_len - 1,
            len: logits.len(),
        });
    }
    mask.masked
        .iter()
        .map(|(&p, &tok)| Ok((p, logits.token_nll(p, tok)?)))
        .collect()
}

/// Masked-token loss; unmasked positions contribute nothing and an empty
/// mask gives 0.
pub fn t2i_loss(logits: &LogitTable, mask: &MaskSpec) -> Result<f64, LossError> {
    if mask.masked.is_empty() {
        log::warn!("t2i loss over an empty mask is defined as 0");
    }
    Ok(t2i_loss_terms(logits, mask)?.iter().map(|(_, v)| v).sum())
}
