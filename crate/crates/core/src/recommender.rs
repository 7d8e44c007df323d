//! Word recommendation by suffix/prefix matching.
//!
//! At decoding step `i`, a word is recommended when some suffix of the
//! partial translation (the empty suffix included) equals a prefix of a
//! candidate phrase (the empty prefix included) and the word is the phrase's
//! next token after that prefix. The empty/empty match is what recommends the
//! first word of every candidate phrase.
//!
//! [`recommend_brute`] is the literal double loop over suffixes and prefixes.
//! [`MatcherState`] keeps one trie cursor per live suffix so that each step
//! costs one child lookup per cursor instead of re-enumerating suffixes.

use std::collections::BTreeMap;

use crate::candidate_index::{CandidateIndex, NodeId, OriginId, TokenId};

/// One reason a word is recommended: the phrase instance and the length of
/// its prefix that matched the partial translation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OriginMatch {
    pub origin: OriginId,
    pub prefix_len: usize,
}

/// A recommended word with every origin that produced it at this step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Recommendation {
    pub word: String,
    /// Sorted by (origin, prefix_len); never empty.
    pub origins: Vec<OriginMatch>,
}

/// Flat (word, origin, prefix_len) record, the decoder's working form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Match {
    pub word: TokenId,
    pub origin: OriginId,
    pub prefix_len: u32,
}

/// Groups matches by word. Output is sorted by word; origins within a word
/// are sorted by (origin, prefix_len).
pub fn merge_matches(index: &CandidateIndex, mut matches: Vec<Match>) -> Vec<Recommendation> {
    matches.sort_unstable();
    let mut out: Vec<Recommendation> = Vec::new();
    for m in matches {
        let record = OriginMatch {
            origin: m.origin,
            prefix_len: m.prefix_len as usize,
        };
        match out.last_mut() {
            Some(last) if last.word == index.token(m.word) => last.origins.push(record),
            _ => out.push(Recommendation {
                word: index.token(m.word).to_string(),
                origins: vec![record],
            }),
        }
    }
    out
}

/// Literal suffix × prefix enumeration.
pub fn recommend_brute<S: AsRef<str>>(index: &CandidateIndex, partial: &[S]) -> Vec<Recommendation> {
    let mut found: BTreeMap<&str, Vec<OriginMatch>> = BTreeMap::new();
    for start in 0..=partial.len() {
        let suffix = &partial[start..];
        for origin in index.origin_ids() {
            let phrase = index.origin(origin).target();
            // prefixes that still have a next word
            for prefix_len in 0..phrase.len() {
                let prefix = &phrase[..prefix_len];
                if suffix.len() == prefix.len() && suffix.iter().zip(prefix).all(|(s, p)| s.as_ref() == p) {
                    found
                        .entry(phrase[prefix_len].as_str())
                        .or_default()
                        .push(OriginMatch { origin, prefix_len });
                }
            }
        }
    }
    found
        .into_iter()
        .map(|(word, mut origins)| {
            origins.sort_unstable();
            Recommendation {
                word: word.to_string(),
                origins,
            }
        })
        .collect()
}

/// Trie cursors for every suffix of the partial translation that spells a
/// path in the index. The root (empty suffix) is always present.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatcherState {
    // ascending depth; cursors[0] is the root
    cursors: Vec<NodeId>,
}

impl Default for MatcherState {
    fn default() -> Self {
        Self::new()
    }
}

impl MatcherState {
    /// State for the empty partial translation.
    pub fn new() -> Self {
        Self {
            cursors: vec![NodeId::ROOT],
        }
    }

    /// State for an arbitrary partial translation.
    pub fn from_partial<S: AsRef<str>>(index: &CandidateIndex, partial: &[S]) -> Self {
        partial
            .iter()
            .fold(Self::new(), |state, token| state.advance(index, token.as_ref()))
    }

    pub fn cursors(&self) -> &[NodeId] {
        &self.cursors
    }

    /// State after appending `token` to the partial translation.
    pub fn advance(&self, index: &CandidateIndex, token: &str) -> Self {
        self.advance_id(index, index.token_id(token))
    }

    /// Same as [`advance`](Self::advance) with the token already resolved;
    /// `None` means the token does not occur in any candidate phrase.
    pub fn advance_id(&self, index: &CandidateIndex, token: Option<TokenId>) -> Self {
        let mut cursors = Vec::with_capacity(self.cursors.len() + 1);
        cursors.push(NodeId::ROOT);
        if let Some(token) = token {
            cursors.extend(self.cursors.iter().filter_map(|&node| index.child(node, token)));
        }
        Self { cursors }
    }

    /// Appends every (word, origin, prefix_len) record reachable from the
    /// cursors to `out`.
    pub fn collect_matches(&self, index: &CandidateIndex, out: &mut Vec<Match>) {
        for &cursor in &self.cursors {
            let node = index.node(cursor);
            let prefix_len = node.depth() as u32;
            out.extend(node.continuations().iter().map(|c| Match {
                word: c.next,
                origin: c.origin,
                prefix_len,
            }));
        }
    }
}

/// Recommendation set for the state's partial translation.
pub fn recommend(state: &MatcherState, index: &CandidateIndex) -> Vec<Recommendation> {
    let mut matches = Vec::new();
    state.collect_matches(index, &mut matches);
    merge_matches(index, matches)
}

/// Every word of every candidate phrase, each with all phrase instances that
/// contain it; `prefix_len` is the word's first position in the phrase. Used
/// by the no-matching ablation.
pub fn all_word_matches(index: &CandidateIndex) -> Vec<Match> {
    let mut out = Vec::new();
    for origin in index.origin_ids() {
        let phrase = index.origin(origin).target();
        for (pos, word) in phrase.iter().enumerate() {
            if phrase[..pos].contains(word) {
                continue;
            }
            let word = index.token_id(word).expect("indexed token");
            out.push(Match {
                word,
                origin,
                prefix_len: pos as u32,
            });
        }
    }
    out
}

pub fn recommend_all_words(index: &CandidateIndex) -> Vec<Recommendation> {
    merge_matches(index, all_word_matches(index))
}
