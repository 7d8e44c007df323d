//! Phrase translation tables as a recommendation memory for beam-search
//! translation decoders.
//!
//! Pipeline per source sentence:
//!
//! 1. [`phrase_table`] loads and filters a Moses phrase table.
//! 2. [`candidate_index`] collects the phrase pairs matching the sentence and
//!    indexes their target sides in a prefix trie.
//! 3. [`recommender`] matches suffixes of the partial translation against
//!    trie prefixes at each step to find recommended next words.
//! 4. [`bonus`] weighs each recommendation by attention and phrase
//!    probability and rescales the base scorer's logits.
//! 5. [`decoder`] runs beam search around a pluggable [`decoder::Scorer`].
//!
//! [`eval`] provides corpus BLEU and ablation helpers.

pub mod bonus;
pub mod candidate_index;
pub mod decoder;
pub mod error;
pub mod eval;
pub mod phrase_table;
pub mod recommender;
pub mod synthetic;
pub mod vocab;

pub use bonus::{Ablation, AttentionVector, BonusConfig, BonusMap};
pub use candidate_index::{build_index, match_source, CandidateIndex, Origin, SourceSpan};
pub use decoder::{decode, decode_corpus, DecodeConfig, LexiconScorer, Scorer, StepScores};
pub use error::{Error, Result};
pub use eval::{bleu, BleuOptions, BleuReport};
pub use phrase_table::{ParseMode, PhraseEntry, PhraseTable, TableFilter};
pub use recommender::{recommend, recommend_brute, MatcherState, Recommendation};
pub use vocab::Vocabulary;
