//! Beam search with phrase-table recommendations.
//!
//! Each step asks the base [`Scorer`] for next-word scores and attention,
//! derives the recommendation set from the hypothesis' matcher state, turns
//! it into bonuses and rescored log-probabilities, and expands the beam.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::bonus::{phrase_attention, rescore_ids, Ablation, AttentionVector, BonusConfig, StepDiagnostics};
use crate::candidate_index::{build_index, match_source, CandidateIndex, TokenId, DEFAULT_MAX_PHRASE_LEN, DEFAULT_TOP_N};
use crate::error::{Error, Result};
use crate::phrase_table::PhraseTable;
use crate::recommender::{all_word_matches, recommend, recommend_brute, Match, MatcherState};
use crate::vocab::Vocabulary;

pub const DEFAULT_BEAM_WIDTH: usize = 12;
pub const EOS: &str = "</s>";

/// Output of one scorer call.
#[derive(Debug, Clone, PartialEq)]
pub struct StepScores {
    /// Pre-softmax score per vocabulary id.
    pub scores: Vec<f64>,
    pub attention: AttentionVector,
}

/// Base next-word model. `history` holds vocabulary ids of the tokens
/// emitted so far.
pub trait Scorer: Sync {
    fn vocab(&self) -> &Vocabulary;

    fn eos_id(&self) -> usize;

    fn score(&self, source: &[String], history: &[usize]) -> Result<StepScores>;

    /// Whether hypotheses of one step may be scored from several threads.
    fn concurrent(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeConfig {
    pub beam_width: usize,
    pub bonus: BonusConfig,
    pub top_n: usize,
    pub max_phrase_len: usize,
    /// `max_len = ceil(max_len_factor * source_len) + max_len_offset`
    pub max_len_factor: f64,
    pub max_len_offset: usize,
    pub length_normalize: bool,
    /// Cross-check the incremental matcher against brute-force matching at
    /// every step.
    pub verify_matcher: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            beam_width: DEFAULT_BEAM_WIDTH,
            bonus: BonusConfig::default(),
            top_n: DEFAULT_TOP_N,
            max_phrase_len: DEFAULT_MAX_PHRASE_LEN,
            max_len_factor: 2.0,
            max_len_offset: 5,
            length_normalize: false,
            verify_matcher: cfg!(debug_assertions),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: bad value `{value}` for `{key}`")))
}

impl DecodeConfig {
    pub fn max_len(&self, source_len: usize) -> usize {
        ((self.max_len_factor * source_len as f64).ceil() as usize + self.max_len_offset).max(1)
    }

    /// Parses `key = value` lines. Blank lines and `#` comments are ignored;
    /// unset keys keep their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut lambda = cfg.bonus.lambda();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {line_no}: expected `key = value`")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "beam_width" => cfg.beam_width = parse_value(key, value, line_no)?,
                "lambda" => lambda = parse_value(key, value, line_no)?,
                "top_n" => cfg.top_n = parse_value(key, value, line_no)?,
                "max_phrase_len" => cfg.max_phrase_len = parse_value(key, value, line_no)?,
                "ablation" => cfg.bonus.ablation = value.parse()?,
                "max_len_factor" => cfg.max_len_factor = parse_value(key, value, line_no)?,
                "max_len_offset" => cfg.max_len_offset = parse_value(key, value, line_no)?,
                "length_normalize" => cfg.length_normalize = parse_value(key, value, line_no)?,
                "dedup_origins" => cfg.bonus.dedup_origins = parse_value(key, value, line_no)?,
                "verify_matcher" => cfg.verify_matcher = parse_value(key, value, line_no)?,
                other => return Err(Error::Config(format!("line {line_no}: unknown key `{other}`"))),
            }
        }
        let mut bonus = BonusConfig::new(lambda, cfg.bonus.ablation)?;
        bonus.dedup_origins = cfg.bonus.dedup_origins;
        cfg.bonus = bonus;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Serializes to the `key = value` form accepted by [`parse`](Self::parse).
    pub fn to_kv_string(&self) -> String {
        format!(
            "beam_width = {}\nlambda = {}\ntop_n = {}\nmax_phrase_len = {}\nablation = {}\nmax_len_factor = {}\nmax_len_offset = {}\nlength_normalize = {}\ndedup_origins = {}\nverify_matcher = {}\n",
            self.beam_width,
            self.bonus.lambda(),
            self.top_n,
            self.max_phrase_len,
            self.bonus.ablation,
            self.max_len_factor,
            self.max_len_offset,
            self.length_normalize,
            self.bonus.dedup_origins,
            self.verify_matcher,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 || self.top_n == 0 || self.max_phrase_len == 0 {
            return Err(Error::Config("beam_width, top_n and max_phrase_len must be positive".into()));
        }
        if !(self.max_len_factor.is_finite() && self.max_len_factor >= 0.0) {
            return Err(Error::Config(format!("bad max_len_factor {}", self.max_len_factor)));
        }
        Ok(())
    }
}

/// A finished (or length-capped) translation.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedHypothesis {
    /// Output tokens without the end-of-sentence marker.
    pub tokens: Vec<String>,
    /// Sum of `step_log_probs`.
    pub log_prob: f64,
    /// Log-probability of each chosen token, end-of-sentence included.
    pub step_log_probs: Vec<f64>,
    /// Ranking score: `log_prob`, or `log_prob / steps` when length
    /// normalization is on.
    pub score: f64,
    pub length_capped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    /// Sorted by `score`, best first.
    pub hypotheses: Vec<DecodedHypothesis>,
    /// Counters summed over the beam, one entry per step.
    pub diagnostics: Vec<StepDiagnostics>,
    /// Number of candidate phrase instances indexed for the sentence.
    pub candidate_phrases: usize,
}

impl DecodeOutput {
    pub fn best(&self) -> &DecodedHypothesis {
        &self.hypotheses[0]
    }
}

#[derive(Debug, Clone)]
struct Hypothesis {
    tokens: Vec<usize>,
    log_prob: f64,
    step_log_probs: Vec<f64>,
    matcher: MatcherState,
}

struct Expansion {
    parent: usize,
    token: usize,
    log_prob: f64,
}

/// Per-sentence state shared by all hypotheses.
struct SentenceContext<'a, S: Scorer + ?Sized> {
    source: &'a [String],
    scorer: &'a S,
    cfg: &'a DecodeConfig,
    index: CandidateIndex,
    // scorer vocab id -> index token
    vocab_to_index: Vec<Option<TokenId>>,
    // index token -> scorer vocab id
    index_to_vocab: Vec<Option<usize>>,
    all_words: Vec<Match>,
}

impl<'a, S: Scorer + ?Sized> SentenceContext<'a, S> {
    fn new(source: &'a [String], scorer: &'a S, table: &PhraseTable, cfg: &'a DecodeConfig) -> Self {
        let index = build_index(match_source(source, table, cfg.max_phrase_len), cfg.top_n);
        let vocab = scorer.vocab();
        let vocab_to_index = vocab.iter().map(|w| index.token_id(w)).collect();
        let index_to_vocab = index.tokens().iter().map(|t| vocab.id(t)).collect();
        let all_words = if cfg.bonus.ablation == Ablation::NoMatching {
            all_word_matches(&index)
        } else {
            Vec::new()
        };
        Self {
            source,
            scorer,
            cfg,
            index,
            vocab_to_index,
            index_to_vocab,
            all_words,
        }
    }

    fn step_scores(&self, hyp: &Hypothesis) -> Result<StepScores> {
        let out = self.scorer.score(self.source, &hyp.tokens)?;
        let vocab_len = self.scorer.vocab().len();
        if out.scores.len() != vocab_len {
            return Err(Error::contract(format!(
                "scorer returned {} scores for a vocabulary of {vocab_len}",
                out.scores.len()
            )));
        }
        if out.attention.len() != self.source.len() {
            return Err(Error::contract(format!(
                "attention over {} positions for a source of {}",
                out.attention.len(),
                self.source.len()
            )));
        }
        Ok(out)
    }

    fn verify(&self, hyp: &Hypothesis) -> Result<()> {
        let vocab = self.scorer.vocab();
        let words: Vec<&str> = hyp.tokens.iter().map(|&t| vocab.token(t).unwrap_or("")).collect();
        if recommend(&hyp.matcher, &self.index) != recommend_brute(&self.index, &words) {
            return Err(Error::contract(format!("matcher state diverged after {words:?}")));
        }
        Ok(())
    }

    /// Rescored next-token log-probabilities for `hyp`.
    fn distribution(&self, hyp: &Hypothesis) -> Result<(Vec<f64>, StepDiagnostics)> {
        if self.cfg.verify_matcher {
            self.verify(hyp)?;
        }
        let step = self.step_scores(hyp)?;
        let bonus_cfg = &self.cfg.bonus;

        let mut matches = Vec::new();
        match bonus_cfg.ablation {
            Ablation::Baseline => {}
            Ablation::Full => hyp.matcher.collect_matches(&self.index, &mut matches),
            Ablation::NoFirst => {
                hyp.matcher.collect_matches(&self.index, &mut matches);
                matches.retain(|m| m.prefix_len > 0);
            }
            Ablation::NoMatching => matches.extend_from_slice(&self.all_words),
        }
        if bonus_cfg.dedup_origins {
            matches.sort_unstable();
            matches.dedup_by_key(|m| (m.word, m.origin));
        }

        let mut by_word = vec![0.0f64; self.index.tokens().len()];
        let mut seen = vec![false; by_word.len()];
        let mut span_attention: Vec<Option<f64>> = vec![None; self.index.phrase_count()];
        for m in &matches {
            let origin = self.index.origin(m.origin);
            let a = match span_attention[m.origin.index()] {
                Some(a) => a,
                None => {
                    let a = phrase_attention(&step.attention, &origin.span)?;
                    span_attention[m.origin.index()] = Some(a);
                    a
                }
            };
            by_word[m.word.index()] += a * origin.p_pht();
            seen[m.word.index()] = true;
        }

        let eos = self.scorer.eos_id();
        let mut recommended = 0;
        let mut dropped = 0;
        let mut resolved: Vec<(usize, f64)> = Vec::new();
        for (word, &v) in by_word.iter().enumerate() {
            if !seen[word] {
                continue;
            }
            recommended += 1;
            match self.index_to_vocab[word] {
                Some(id) if id != eos => resolved.push((id, v)),
                Some(_) => {}
                None => dropped += 1,
            }
        }

        let mut out = rescore_ids(&step.scores, &resolved, bonus_cfg.lambda())?;
        out.diagnostics.recommendations = recommended;
        out.diagnostics.dropped_oov = dropped;
        Ok((out.log_probs, out.diagnostics))
    }

    fn expand(&self, parent: usize, hyp: &Hypothesis) -> Result<(Vec<Expansion>, StepDiagnostics)> {
        let (log_probs, diag) = self.distribution(hyp)?;
        let mut ids: Vec<usize> = (0..log_probs.len()).collect();
        let k = self.cfg.beam_width.min(ids.len());
        let order = |a: &usize, b: &usize| log_probs[*b].total_cmp(&log_probs[*a]).then(a.cmp(b));
        if k < ids.len() {
            ids.select_nth_unstable_by(k, order);
            ids.truncate(k);
        }
        ids.sort_unstable_by(order);
        let expansions = ids
            .into_iter()
            .map(|token| Expansion {
                parent,
                token,
                log_prob: log_probs[token],
            })
            .collect();
        Ok((expansions, diag))
    }

    fn finish(&self, hyp: Hypothesis, length_capped: bool) -> DecodedHypothesis {
        let vocab = self.scorer.vocab();
        let eos = self.scorer.eos_id();
        let tokens = hyp
            .tokens
            .iter()
            .filter(|&&t| t != eos)
            .map(|&t| vocab.token(t).unwrap_or_default().to_string())
            .collect();
        let score = if self.cfg.length_normalize {
            hyp.log_prob / hyp.step_log_probs.len().max(1) as f64
        } else {
            hyp.log_prob
        };
        DecodedHypothesis {
            tokens,
            log_prob: hyp.log_prob,
            step_log_probs: hyp.step_log_probs,
            score,
            length_capped,
        }
    }

    fn run(self) -> Result<DecodeOutput> {
        let beam_width = self.cfg.beam_width;
        let eos = self.scorer.eos_id();
        let max_len = self.cfg.max_len(self.source.len());
        let mut live = vec![Hypothesis {
            tokens: Vec::new(),
            log_prob: 0.0,
            step_log_probs: Vec::new(),
            matcher: MatcherState::new(),
        }];
        let mut finished: Vec<DecodedHypothesis> = Vec::new();
        let mut diagnostics = Vec::new();

        for step in 0..max_len {
            let expanded: Vec<Result<(Vec<Expansion>, StepDiagnostics)>> = if self.scorer.concurrent() && live.len() > 1 {
                live.par_iter().enumerate().map(|(i, h)| self.expand(i, h)).collect()
            } else {
                live.iter().enumerate().map(|(i, h)| self.expand(i, h)).collect()
            };
            let mut step_diag = StepDiagnostics::default();
            let mut candidates = Vec::new();
            for result in expanded {
                let (exp, diag) = result?;
                step_diag.merge(&diag);
                candidates.extend(exp);
            }
            diagnostics.push(step_diag);

            candidates.sort_by(|a, b| {
                let sa = live[a.parent].log_prob + a.log_prob;
                let sb = live[b.parent].log_prob + b.log_prob;
                sb.total_cmp(&sa)
                    .then(a.parent.cmp(&b.parent))
                    .then(a.token.cmp(&b.token))
            });
            candidates.truncate(beam_width);

            let last_step = step + 1 == max_len;
            let mut next = Vec::with_capacity(candidates.len());
            for c in candidates {
                let parent = &live[c.parent];
                let mut tokens = parent.tokens.clone();
                tokens.push(c.token);
                let mut step_log_probs = parent.step_log_probs.clone();
                step_log_probs.push(c.log_prob);
                let hyp = Hypothesis {
                    tokens,
                    log_prob: parent.log_prob + c.log_prob,
                    step_log_probs,
                    matcher: if c.token == eos {
                        parent.matcher.clone()
                    } else {
                        parent.matcher.advance_id(&self.index, self.vocab_to_index[c.token])
                    },
                };
                if c.token == eos {
                    finished.push(self.finish(hyp, false));
                } else if last_step {
                    finished.push(self.finish(hyp, true));
                } else {
                    next.push(hyp);
                }
            }
            live = next;

            if live.is_empty() || finished.len() >= beam_width {
                break;
            }
            if !self.cfg.length_normalize {
                // scores only decrease, so no live hypothesis can overtake
                let best_finished = finished.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
                let best_live = live.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
                if best_finished >= best_live {
                    break;
                }
            }
        }

        finished.sort_by(|a, b| b.score.total_cmp(&a.score));
        Ok(DecodeOutput {
            hypotheses: finished,
            diagnostics,
            candidate_phrases: self.index.phrase_count(),
        })
    }
}

/// Beam-search decode of one sentence.
pub fn decode<S: Scorer + ?Sized>(source: &[String], scorer: &S, table: &PhraseTable, cfg: &DecodeConfig) -> Result<DecodeOutput> {
    if source.is_empty() {
        return Err(Error::contract("empty source sentence"));
    }
    cfg.validate()?;
    if scorer.eos_id() >= scorer.vocab().len() {
        return Err(Error::contract("end-of-sentence id outside the vocabulary"));
    }
    SentenceContext::new(source, scorer, table, cfg).run()
}

/// Decodes every sentence; output order follows input order. Sentences are
/// decoded on the rayon pool when `parallel` is set.
pub fn decode_corpus<S: Scorer + ?Sized>(
    sources: &[Vec<String>],
    scorer: &S,
    table: &PhraseTable,
    cfg: &DecodeConfig,
    parallel: bool,
) -> Vec<Result<DecodeOutput>> {
    if parallel {
        sources.par_iter().map(|s| decode(s, scorer, table, cfg)).collect()
    } else {
        sources.iter().map(|s| decode(s, scorer, table, cfg)).collect()
    }
}

/// Deterministic reference scorer backed by a word translation lexicon.
///
/// Attention is one-hot and monotone: step `i` attends source position
/// `floor(i * n / expected_len)` where `expected_len = round(length_ratio * n)`.
/// The score of target word `t` is `ln(max(w, floor) / floor)` for the
/// lexicon weight `w` of (attended source word, `t`), so unlisted words score
/// 0 and listed ones score positive. End-of-sentence is strongly penalized
/// before `expected_len` steps and strongly preferred afterwards.
#[derive(Debug, Clone)]
pub struct LexiconScorer {
    vocab: Vocabulary,
    lexicon: HashMap<String, Vec<(usize, f64)>>,
    floor: f64,
    length_ratio: f64,
}

impl LexiconScorer {
    pub const DEFAULT_FLOOR: f64 = 1e-4;

    /// Builds from (source word, target word, weight) triples. Id 0 is the
    /// end-of-sentence marker.
    pub fn new<I, S, T>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, T, f64)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut vocab = Vocabulary::from_tokens([EOS]);
        let mut lexicon: HashMap<String, Vec<(usize, f64)>> = HashMap::new();
        for (src, tgt, w) in entries {
            let id = vocab.insert(tgt);
            let row = lexicon.entry(src.into()).or_default();
            match row.iter_mut().find(|(t, _)| *t == id) {
                Some(slot) => slot.1 = w,
                None => row.push((id, w)),
            }
        }
        Self {
            vocab,
            lexicon,
            floor: Self::DEFAULT_FLOOR,
            length_ratio: 1.0,
        }
    }

    /// Reads `src tgt weight` lines.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                [] => continue,
                [src, tgt, w] => {
                    let w: f64 = w
                        .parse()
                        .map_err(|_| Error::parse(i + 1, format!("bad lexicon weight `{w}`")))?;
                    if !(w.is_finite() && w > 0.0) {
                        return Err(Error::parse(i + 1, format!("lexicon weight must be positive, got {w}")));
                    }
                    entries.push((src.to_string(), tgt.to_string(), w));
                }
                _ => return Err(Error::parse(i + 1, "expected `src tgt weight`")),
            }
        }
        Ok(Self::new(entries))
    }

    /// Adds target words the lexicon never produces (they score 0).
    pub fn with_extra_vocab<I: IntoIterator<Item = S>, S: Into<String>>(mut self, words: I) -> Self {
        for w in words {
            self.vocab.insert(w);
        }
        self
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        assert!(floor > 0.0 && floor.is_finite());
        self.floor = floor;
        self
    }

    pub fn with_length_ratio(mut self, ratio: f64) -> Self {
        assert!(ratio > 0.0 && ratio.is_finite());
        self.length_ratio = ratio;
        self
    }

    pub fn expected_len(&self, source_len: usize) -> usize {
        ((self.length_ratio * source_len as f64).round() as usize).max(1)
    }

    /// Source position attended at `step`.
    pub fn attended_position(&self, step: usize, source_len: usize) -> usize {
        (step * source_len / self.expected_len(source_len)).min(source_len - 1)
    }

    /// Score the lexicon assigns to weight `w`.
    pub fn weight_score(&self, w: f64) -> f64 {
        (w.max(self.floor) / self.floor).ln()
    }
}

impl Scorer for LexiconScorer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn eos_id(&self) -> usize {
        0
    }

    fn score(&self, source: &[String], history: &[usize]) -> Result<StepScores> {
        if source.is_empty() {
            return Err(Error::contract("empty source sentence"));
        }
        let step = history.len();
        let n = source.len();
        let pos = self.attended_position(step, n);
        let eos_strength = self.weight_score(1.0);
        let mut scores = vec![0.0; self.vocab.len()];
        if step < self.expected_len(n) {
            if let Some(row) = self.lexicon.get(&source[pos]) {
                for &(id, w) in row {
                    scores[id] = self.weight_score(w);
                }
            }
            scores[0] = -eos_strength;
        } else {
            scores[0] = eos_strength;
        }
        Ok(StepScores {
            scores,
            attention: AttentionVector::one_hot(n, pos),
        })
    }
}
