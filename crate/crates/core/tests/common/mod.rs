#![allow(dead_code)]

use std::collections::BTreeSet;

use phrasemem::candidate_index::{build_index, match_source, CandidateIndex};
use phrasemem::phrase_table::{PhraseEntry, PhraseTable, TableFilter};
use phrasemem::LexiconScorer;
use rand::seq::IndexedRandom;
use rand::Rng;

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

pub fn entry(src: &str, tgt: &str, p: f64) -> PhraseEntry {
    PhraseEntry::new(toks(src), toks(tgt), [p; 4])
}

pub fn table(entries: Vec<PhraseEntry>) -> PhraseTable {
    PhraseTable::from_entries(entries, 10, TableFilter::default())
}

/// The example of the settled/Milwaukee sentence: four candidate phrases.
pub const SETTLED_SENTENCE: &str = "ta dingju zai meiguo mierwoji jiaoqu";

pub fn settled_table() -> PhraseTable {
    table(vec![
        entry("ta dingju zai", "he settled in", 0.6),
        entry("ta dingju zai", "he settled down", 0.4),
        entry("meiguo", "the US", 0.7),
        entry("mierwoji jiaoqu", "suburb of Milwaukee", 0.8),
    ])
}

pub fn settled_index() -> CandidateIndex {
    build_index(match_source(&toks(SETTLED_SENTENCE), &settled_table(), 7), 10)
}

/// Two-word source where the lexicon prefers `wrong` at step 0 but the table
/// holds `c1 c2` with p near 1.
pub const FLIP_SOURCE: &str = "s1 s2";

pub fn flip_table() -> PhraseTable {
    table(vec![entry("s1 s2", "c1 c2", 0.99)])
}

pub fn flip_scorer() -> LexiconScorer {
    LexiconScorer::new([("s1", "wrong", 0.6), ("s1", "c1", 0.5), ("s2", "c2", 0.9)])
}

/// Random phrase table over a tiny vocabulary so that overlaps and repeated
/// targets are frequent.
pub fn random_table<R: Rng>(rng: &mut R, src_vocab: usize, tgt_vocab: usize, entries: usize) -> PhraseTable {
    let mut out = Vec::new();
    for _ in 0..entries {
        let sl = rng.random_range(1..=3);
        let tl = rng.random_range(1..=4);
        let src: Vec<String> = (0..sl).map(|_| format!("a{}", rng.random_range(0..src_vocab))).collect();
        let tgt: Vec<String> = (0..tl).map(|_| format!("b{}", rng.random_range(0..tgt_vocab))).collect();
        let p = rng.random_range(0.01..1.0);
        out.push(PhraseEntry::new(src, tgt, [p; 4]));
    }
    PhraseTable::from_entries(out, 10, TableFilter::default())
}

pub fn random_sentence<R: Rng>(rng: &mut R, src_vocab: usize, len: usize) -> Vec<String> {
    (0..len).map(|_| format!("a{}", rng.random_range(0..src_vocab))).collect()
}

/// Hypothesis tokens that mostly follow candidate phrases, with occasional
/// words outside the index.
pub fn random_hypothesis<R: Rng>(rng: &mut R, index: &CandidateIndex, len: usize) -> Vec<String> {
    let phrases: Vec<&[String]> = index.origins().iter().map(|o| o.target()).collect();
    let mut out = Vec::new();
    while out.len() < len {
        match rng.random_range(0..10) {
            0 => out.push("zz".to_string()),
            1..=3 if !index.tokens().is_empty() => out.push(index.tokens().choose(rng).unwrap().clone()),
            _ if !phrases.is_empty() => {
                let p = phrases.choose(rng).unwrap();
                let cut = rng.random_range(1..=p.len());
                out.extend(p[..cut].iter().cloned());
            }
            _ => out.push(format!("b{}", rng.random_range(0..4))),
        }
    }
    out.truncate(len);
    out
}

/// Independent corpus BLEU: n-grams are counted by direct slice comparison.
pub fn oracle_bleu(hyps: &[Vec<String>], refs: &[Vec<Vec<String>>], smoothing: bool) -> f64 {
    let lower = |s: &[String]| s.iter().map(|t| t.to_lowercase()).collect::<Vec<_>>();
    let mut matched = [0.0f64; 4];
    let mut total = [0.0f64; 4];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rs) in hyps.iter().zip(refs) {
        let h = lower(h);
        let rs: Vec<Vec<String>> = rs.iter().map(|x| lower(x)).collect();
        c += h.len();
        let mut best = rs[0].len();
        for x in &rs {
            let (d, bd) = (x.len().abs_diff(h.len()), best.abs_diff(h.len()));
            if d < bd || (d == bd && x.len() < best) {
                best = x.len();
            }
        }
        r += best;
        for n in 1..=4 {
            if h.len() < n {
                continue;
            }
            let grams: Vec<&[String]> = (0..=h.len() - n).map(|i| &h[i..i + n]).collect();
            total[n - 1] += grams.len() as f64;
            let distinct: BTreeSet<&[String]> = grams.iter().copied().collect();
            for g in distinct {
                let in_hyp = grams.iter().filter(|x| **x == g).count();
                let in_ref = rs
                    .iter()
                    .map(|x| if x.len() < n { 0 } else { (0..=x.len() - n).filter(|&i| &x[i..i + n] == g).count() })
                    .max()
                    .unwrap_or(0);
                matched[n - 1] += in_hyp.min(in_ref) as f64;
            }
        }
    }
    if c == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        let (m, t) = if smoothing && n > 0 { (matched[n] + 1.0, total[n] + 1.0) } else { (matched[n], total[n]) };
        let p = if t == 0.0 { 1.0 } else { m / t };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln() / 4.0;
    }
    let bp = if c >= r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    100.0 * bp * log_sum.exp()
}
