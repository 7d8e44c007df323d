//! Seeded synthetic translation tasks with planted phrase-pair signal.
//!
//! The generated world has a one-to-one literal word translation, a set of
//! idiomatic source n-grams whose translation differs from the literal one,
//! and a lexicon-based base model with two systematic weaknesses:
//!
//! * "hard" words, where a distractor outweighs the literal translation;
//! * idiom positions, where the literal translation outweighs the idiomatic
//!   word and the *next* idiomatic word (an anticipation error) sits between
//!   them.
//!
//! Some idioms keep the literal translation as their first word. The phrase
//! table lists every literal single-word pair with a modest probability,
//! every idiom with a high one, and low-probability noise pairs.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::decoder::LexiconScorer;
use crate::error::{Error, Result};
use crate::phrase_table::{PhraseEntry, PhraseTable, TableFilter};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub sentences: usize,
    pub source_vocab: usize,
    pub idioms: usize,
    /// Probability that the next chunk of a sentence is an idiom.
    pub idiom_rate: f64,
    pub hard_fraction: f64,
    /// Fraction of idioms whose first word is the literal translation.
    pub literal_first_fraction: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub noise_entries: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sentences: 200,
            source_vocab: 150,
            idioms: 25,
            idiom_rate: 0.3,
            hard_fraction: 0.15,
            literal_first_fraction: 0.4,
            min_len: 6,
            max_len: 14,
            noise_entries: 400,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub table_entries: Vec<PhraseEntry>,
    /// (source word, target word, weight)
    pub lexicon: Vec<(String, String, f64)>,
    pub sources: Vec<Vec<String>>,
    pub references: Vec<Vec<String>>,
}

struct Idiom {
    source: Vec<usize>,
    target: Vec<String>,
}

fn literal(s: usize) -> String {
    format!("t{s}")
}

fn source_word(s: usize) -> String {
    format!("s{s}")
}

/// Four scores with mean exactly `p` (up to rounding).
fn scores_with_mean<R: Rng>(rng: &mut R, p: f64) -> [f64; 4] {
    let room = p.min(1.0 - p) * 0.5;
    let d1 = rng.random_range(0.0..=room);
    let d2 = rng.random_range(0.0..=room);
    [p + d1, p - d1, p + d2, p - d2]
}

impl SyntheticCorpus {
    pub fn generate(cfg: &SynthConfig) -> Self {
        assert!(cfg.min_len >= 1 && cfg.min_len <= cfg.max_len);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let vocab = cfg.source_vocab;

        // idiom source words are disjoint so each word has one idiomatic role
        let mut pool: Vec<usize> = (0..vocab).collect();
        pool.shuffle(&mut rng);
        let mut idioms = Vec::new();
        let mut role: Vec<Option<(usize, usize)>> = vec![None; vocab];
        for k in 0..cfg.idioms {
            let n = rng.random_range(2..=3);
            if pool.len() < n {
                break;
            }
            let source: Vec<usize> = pool.split_off(pool.len() - n);
            let literal_first = rng.random_bool(cfg.literal_first_fraction);
            let target = (0..n)
                .map(|j| {
                    if j == 0 && literal_first {
                        literal(source[0])
                    } else {
                        format!("i{k}_{j}")
                    }
                })
                .collect();
            for (j, &s) in source.iter().enumerate() {
                role[s] = Some((k, j));
            }
            idioms.push(Idiom { source, target });
        }

        let mut table_entries = Vec::new();
        let mut lexicon = Vec::new();
        for s in 0..vocab {
            let p_single = rng.random_range(0.1..0.2);
            let scores = scores_with_mean(&mut rng, p_single);
            table_entries.push(PhraseEntry::new(vec![source_word(s)], vec![literal(s)], scores));

            let w_lit = rng.random_range(0.45..0.55);
            lexicon.push((source_word(s), literal(s), w_lit));
            if rng.random_bool(cfg.hard_fraction) {
                let mut d = rng.random_range(0..vocab);
                if d == s {
                    d = (d + 1) % vocab;
                }
                lexicon.push((source_word(s), literal(d), w_lit * rng.random_range(1.04..1.10)));
            }
            if let Some((k, j)) = role[s] {
                let target = &idioms[k].target;
                if target[j] != literal(s) {
                    lexicon.push((source_word(s), target[j].clone(), w_lit * rng.random_range(0.78..0.84)));
                }
                if let Some(next) = target.get(j + 1) {
                    lexicon.push((source_word(s), next.clone(), w_lit * rng.random_range(0.88..0.94)));
                }
            }
        }
        for idiom in &idioms {
            let p = rng.random_range(0.85..0.95);
            let scores = scores_with_mean(&mut rng, p);
            let source = idiom.source.iter().map(|&s| source_word(s)).collect();
            table_entries.push(PhraseEntry::new(source, idiom.target.clone(), scores));
        }
        for _ in 0..cfg.noise_entries {
            let n_src = rng.random_range(1..=3);
            let n_tgt = rng.random_range(1..=3);
            let source = (0..n_src).map(|_| source_word(rng.random_range(0..vocab))).collect();
            let target = (0..n_tgt).map(|_| literal(rng.random_range(0..vocab))).collect();
            let p = rng.random_range(0.01..0.05);
            let scores = scores_with_mean(&mut rng, p);
            table_entries.push(PhraseEntry::new(source, target, scores));
        }

        let mut sources = Vec::with_capacity(cfg.sentences);
        let mut references = Vec::with_capacity(cfg.sentences);
        for _ in 0..cfg.sentences {
            let len = rng.random_range(cfg.min_len..=cfg.max_len);
            let mut src = Vec::new();
            while src.len() < len {
                if !idioms.is_empty() && rng.random_bool(cfg.idiom_rate) {
                    let idiom = idioms.choose(&mut rng).expect("nonempty");
                    src.extend(idiom.source.iter().copied());
                } else {
                    src.push(rng.random_range(0..vocab));
                }
            }
            references.push(reference(&src, &idioms, &role));
            sources.push(src.into_iter().map(source_word).collect());
        }

        Self {
            table_entries,
            lexicon,
            sources,
            references,
        }
    }

    pub fn table(&self) -> PhraseTable {
        PhraseTable::from_entries(self.table_entries.iter().cloned(), 10, TableFilter::default())
    }

    pub fn scorer(&self) -> LexiconScorer {
        LexiconScorer::new(self.lexicon.iter().cloned())
    }

    /// Single-reference form expected by [`crate::eval::bleu`].
    pub fn reference_sets(&self) -> Vec<Vec<Vec<String>>> {
        self.references.iter().map(|r| vec![r.clone()]).collect()
    }

    /// Writes `table.txt`, `lexicon.txt`, `src.txt` and `ref0.txt` into `dir`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| -> Result<()> {
            let path = dir.join(name);
            let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            f.write_all(body.as_bytes()).map_err(|e| Error::io(&path, e))
        };
        write("table.txt", self.table_entries.iter().map(|e| e.to_line() + "\n").collect())?;
        write(
            "lexicon.txt",
            self.lexicon.iter().map(|(s, t, w)| format!("{s} {t} {w}\n")).collect(),
        )?;
        write("src.txt", self.sources.iter().map(|s| s.join(" ") + "\n").collect())?;
        write("ref0.txt", self.references.iter().map(|r| r.join(" ") + "\n").collect())?;
        Ok(())
    }
}

/// Left-to-right translation: a complete idiom occurrence translates
/// idiomatically, everything else literally.
fn reference(src: &[usize], idioms: &[Idiom], role: &[Option<(usize, usize)>]) -> Vec<String> {
    let mut out = Vec::with_capacity(src.len());
    let mut i = 0;
    while i < src.len() {
        if let Some((k, 0)) = role[src[i]] {
            let idiom = &idioms[k];
            if src[i..].starts_with(&idiom.source) {
                out.extend(idiom.target.iter().cloned());
                i += idiom.source.len();
                continue;
            }
        }
        out.push(literal(src[i]));
        i += 1;
    }
    out
}
