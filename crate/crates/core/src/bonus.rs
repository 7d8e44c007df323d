//! Bonus values and rescoring.
//!
//! A recommended word's bonus is the sum, over its origins, of the phrase's
//! translation probability weighted by the attention mass the current step
//! puts on the phrase's source span (averaged over the span's tokens). The
//! bonus then scales the word's pre-softmax score:
//!
//! ```text
//! p(w) = softmax((1 + lambda * V(w)) * score(w))
//! ```
//!
//! The scaling is applied to signed scores as written, so a positive bonus
//! pushes a negative score further down. [`StepDiagnostics`] counts how often
//! that happens.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::candidate_index::{CandidateIndex, SourceSpan};
use crate::error::{Error, Result};
use crate::recommender::{recommend, recommend_all_words, MatcherState, Recommendation};
use crate::vocab::Vocabulary;

pub const DEFAULT_LAMBDA: f64 = 0.5;
const ATTENTION_TOLERANCE: f64 = 1e-6;

/// Attention weights over source positions for one decoding step.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionVector {
    weights: Vec<f64>,
}

impl AttentionVector {
    /// Weights must be finite, nonnegative and sum to 1 within 1e-6.
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::contract("attention vector is empty"));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::contract(format!("invalid attention weight {w}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > ATTENTION_TOLERANCE {
            return Err(Error::contract(format!("attention sums to {total}")));
        }
        Ok(Self { weights })
    }

    pub fn uniform(len: usize) -> Self {
        assert!(len > 0);
        Self {
            weights: vec![1.0 / len as f64; len],
        }
    }

    pub fn one_hot(len: usize, position: usize) -> Self {
        assert!(position < len);
        let mut weights = vec![0.0; len];
        weights[position] = 1.0;
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Mean attention over the positions of `span`.
pub fn phrase_attention(attn: &AttentionVector, span: &SourceSpan) -> Result<f64> {
    if span.start >= span.end || span.end > attn.len() {
        return Err(Error::contract(format!(
            "span [{}, {}) outside attention of length {}",
            span.start,
            span.end,
            attn.len()
        )));
    }
    let mass: f64 = attn.weights[span.start..span.end].iter().sum();
    Ok(mass / span.len() as f64)
}

/// Which recommendations receive bonuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// Suffix/prefix matching including first words.
    #[default]
    Full,
    /// Every word of every candidate phrase, no matching.
    NoMatching,
    /// Matching, but empty-prefix (first-word) records are dropped.
    NoFirst,
    /// No bonuses at all; the base scorer alone.
    Baseline,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Baseline, Ablation::Full, Ablation::NoMatching, Ablation::NoFirst];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoMatching => "no_matching",
            Ablation::NoFirst => "no_first",
            Ablation::Baseline => "baseline",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Ablation::Full),
            "no_matching" => Ok(Ablation::NoMatching),
            "no_first" => Ok(Ablation::NoFirst),
            "baseline" | "none" => Ok(Ablation::Baseline),
            other => Err(Error::Config(format!("unknown ablation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BonusConfig {
    lambda: f64,
    pub ablation: Ablation,
    /// Collapse repeated (word, origin) records reached through different
    /// prefix lengths before summing.
    pub dedup_origins: bool,
}

impl Default for BonusConfig {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            ablation: Ablation::Full,
            dedup_origins: false,
        }
    }
}

impl BonusConfig {
    /// `lambda` must lie strictly inside (0, 1).
    pub fn new(lambda: f64, ablation: Ablation) -> Result<Self> {
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(Error::Config(format!("lambda must be in (0, 1), got {lambda}")));
        }
        Ok(Self {
            lambda,
            ablation,
            dedup_origins: false,
        })
    }

    /// Bounded weight from an unconstrained parameter.
    pub fn from_logit(x: f64, ablation: Ablation) -> Result<Self> {
        Self::new(1.0 / (1.0 + (-x).exp()), ablation)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn bonuses_enabled(&self) -> bool {
        self.ablation != Ablation::Baseline
    }
}

/// The recommendation set for `state` under the configured ablation.
pub fn select_recommendations(cfg: &BonusConfig, state: &MatcherState, index: &CandidateIndex) -> Vec<Recommendation> {
    let mut recs = match cfg.ablation {
        Ablation::Baseline => Vec::new(),
        Ablation::Full => recommend(state, index),
        Ablation::NoMatching => recommend_all_words(index),
        Ablation::NoFirst => recommend(state, index)
            .into_iter()
            .filter_map(|mut r| {
                r.origins.retain(|o| o.prefix_len > 0);
                (!r.origins.is_empty()).then_some(r)
            })
            .collect(),
    };
    if cfg.dedup_origins {
        for r in &mut recs {
            r.origins.dedup_by_key(|o| o.origin);
        }
    }
    recs
}

/// Bonus value per recommended word.
pub type BonusMap = BTreeMap<String, f64>;

pub fn bonus_values(index: &CandidateIndex, recs: &[Recommendation], attn: &AttentionVector) -> Result<BonusMap> {
    let mut map = BonusMap::new();
    for rec in recs {
        let mut v = 0.0;
        for o in &rec.origins {
            let origin = index.origin(o.origin);
            v += phrase_attention(attn, &origin.span)? * origin.p_pht();
        }
        *map.entry(rec.word.clone()).or_insert(0.0) += v;
    }
    Ok(map)
}

/// Per-step counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub recommendations: usize,
    pub nonzero_bonus: usize,
    pub max_bonus: f64,
    pub dropped_oov: usize,
    pub negative_logit_bonus: usize,
}

impl StepDiagnostics {
    pub fn merge(&mut self, other: &StepDiagnostics) {
        self.recommendations += other.recommendations;
        self.nonzero_bonus += other.nonzero_bonus;
        self.max_bonus = self.max_bonus.max(other.max_bonus);
        self.dropped_oov += other.dropped_oov;
        self.negative_logit_bonus += other.negative_logit_bonus;
    }
}

/// Rescored next-word distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Rescored {
    pub log_probs: Vec<f64>,
    pub diagnostics: StepDiagnostics,
}

impl Rescored {
    pub fn probs(&self) -> Vec<f64> {
        self.log_probs.iter().map(|lp| lp.exp()).collect()
    }
}

/// Log-softmax of `logits`.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let lse = max + sum.ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Rescores with bonuses already resolved to vocabulary ids. Repeated ids
/// accumulate.
pub fn rescore_ids(base_scores: &[f64], bonuses: &[(usize, f64)], lambda: f64) -> Result<Rescored> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::contract(format!("invalid lambda {lambda}")));
    }
    if let Some((i, s)) = base_scores.iter().enumerate().find(|(_, s)| !s.is_finite()) {
        return Err(Error::contract(format!("non-finite base score {s} at id {i}")));
    }
    let mut diagnostics = StepDiagnostics {
        recommendations: bonuses.len(),
        ..StepDiagnostics::default()
    };
    let mut logits = base_scores.to_vec();
    let mut merged: Vec<(usize, f64)> = bonuses.to_vec();
    merged.sort_by_key(|&(id, _)| id);
    merged.dedup_by(|b, a| {
        if a.0 == b.0 {
            a.1 += b.1;
            true
        } else {
            false
        }
    });
    for (id, v) in merged {
        if id >= logits.len() {
            return Err(Error::contract(format!("bonus for id {id} outside the vocabulary")));
        }
        if v > 0.0 {
            diagnostics.nonzero_bonus += 1;
            diagnostics.max_bonus = diagnostics.max_bonus.max(v);
            if base_scores[id] < 0.0 {
                diagnostics.negative_logit_bonus += 1;
            }
        }
        logits[id] *= 1.0 + lambda * v;
    }
    Ok(Rescored {
        log_probs: log_softmax(&logits),
        diagnostics,
    })
}

/// Rescores `base_scores` (indexed by `vocab` id). Bonuses for words outside
/// `vocab` are dropped and counted.
pub fn rescore(base_scores: &[f64], vocab: &Vocabulary, bonuses: &BonusMap, lambda: f64) -> Result<Rescored> {
    if base_scores.len() != vocab.len() {
        return Err(Error::contract(format!(
            "{} scores for a vocabulary of {}",
            base_scores.len(),
            vocab.len()
        )));
    }
    let mut resolved = Vec::with_capacity(bonuses.len());
    let mut dropped = 0;
    for (word, &v) in bonuses {
        match vocab.id(word) {
            Some(id) => resolved.push((id, v)),
            None => dropped += 1,
        }
    }
    let mut out = rescore_ids(base_scores, &resolved, lambda)?;
    out.diagnostics.dropped_oov = dropped;
    out.diagnostics.recommendations = bonuses.len();
    Ok(out)
}
