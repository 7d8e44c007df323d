//! Corpus BLEU (case-insensitive, up to 4-grams) and corpus-level experiment
//! helpers: ablation comparison and lambda grid search.

use std::collections::HashMap;

use serde::Serialize;

use crate::bonus::{Ablation, BonusConfig};
use crate::decoder::{decode_corpus, DecodeConfig, Scorer};
use crate::error::{Error, Result};
use crate::phrase_table::PhraseTable;

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuOptions {
    /// Add-one smoothing of the 2- to 4-gram precisions.
    pub smoothing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuReport {
    /// In [0, 100].
    pub bleu: f64,
    pub ngram_precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for gram in tokens.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

fn lowercase(tokens: &[String]) -> Vec<String> {
    tokens.iter().map(|t| t.to_lowercase()).collect()
}

/// Corpus BLEU over pre-tokenized sentences. `references[i]` holds every
/// reference for `hypotheses[i]`.
pub fn bleu(hypotheses: &[Vec<String>], references: &[Vec<Vec<String>>], opts: BleuOptions) -> Result<BleuReport> {
    if hypotheses.len() != references.len() {
        return Err(Error::Usage(format!(
            "{} hypotheses but {} reference sets",
            hypotheses.len(),
            references.len()
        )));
    }
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let mut hyp_len = 0;
    let mut ref_len = 0;

    for (i, (hyp, refs)) in hypotheses.iter().zip(references).enumerate() {
        if refs.is_empty() {
            return Err(Error::Usage(format!("sentence {} has no reference", i + 1)));
        }
        let hyp = lowercase(hyp);
        let refs: Vec<Vec<String>> = refs.iter().map(|r| lowercase(r)).collect();
        hyp_len += hyp.len();
        // closest reference length, shorter on ties
        ref_len += refs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(hyp.len()), l))
            .unwrap_or(0);

        for n in 1..=MAX_ORDER {
            let hyp_counts = ngram_counts(&hyp, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in &refs {
                for (gram, c) in ngram_counts(r, n) {
                    let slot = max_ref.entry(gram).or_insert(0);
                    *slot = (*slot).max(c);
                }
            }
            for (gram, c) in hyp_counts {
                matches[n - 1] += c.min(max_ref.get(gram).copied().unwrap_or(0));
                totals[n - 1] += c;
            }
        }
    }

    Ok(finish(matches, totals, hyp_len, ref_len, opts))
}

fn finish(matches: [usize; MAX_ORDER], totals: [usize; MAX_ORDER], hyp_len: usize, ref_len: usize, opts: BleuOptions) -> BleuReport {
    let mut precisions = [0.0; MAX_ORDER];
    for n in 0..MAX_ORDER {
        precisions[n] = if opts.smoothing && n > 0 {
            (matches[n] + 1) as f64 / (totals[n] + 1) as f64
        } else if totals[n] == 0 {
            // no n-grams of this order in the hypotheses: vacuous
            1.0
        } else {
            matches[n] as f64 / totals[n] as f64
        };
    }
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let bleu = if brevity_penalty == 0.0 || precisions.contains(&0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / MAX_ORDER as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };
    BleuReport {
        bleu,
        ngram_precisions: precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
        matches,
        totals,
    }
}

/// Splits each line on whitespace.
pub fn tokenize_lines<S: AsRef<str>>(lines: &[S]) -> Vec<Vec<String>> {
    lines
        .iter()
        .map(|l| l.as_ref().split_whitespace().map(str::to_string).collect())
        .collect()
}

/// BLEU from one hypothesis file and several parallel reference files, all
/// given as lines.
pub fn bleu_lines<S: AsRef<str>>(hypotheses: &[S], reference_files: &[Vec<S>], opts: BleuOptions) -> Result<BleuReport> {
    if reference_files.is_empty() {
        return Err(Error::Usage("at least one reference file is required".into()));
    }
    for (k, r) in reference_files.iter().enumerate() {
        if r.len() != hypotheses.len() {
            return Err(Error::Usage(format!(
                "reference file {k} has {} lines, hypotheses have {}",
                r.len(),
                hypotheses.len()
            )));
        }
    }
    let hyps = tokenize_lines(hypotheses);
    let refs: Vec<Vec<Vec<String>>> = (0..hypotheses.len())
        .map(|i| tokenize_lines(&reference_files.iter().map(|f| f[i].as_ref()).collect::<Vec<_>>()))
        .collect();
    bleu(&hyps, &refs, opts)
}

/// Best hypothesis per sentence; failed sentences become empty output.
pub fn translate_corpus<S: Scorer + ?Sized>(
    sources: &[Vec<String>],
    scorer: &S,
    table: &PhraseTable,
    cfg: &DecodeConfig,
) -> Result<Vec<Vec<String>>> {
    decode_corpus(sources, scorer, table, cfg, true)
        .into_iter()
        .map(|r| r.map(|out| out.best().tokens.clone()))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub report: BleuReport,
}

/// Decodes the corpus under every ablation with otherwise identical settings.
pub fn run_ablations<S: Scorer + ?Sized>(
    sources: &[Vec<String>],
    references: &[Vec<Vec<String>>],
    scorer: &S,
    table: &PhraseTable,
    cfg: &DecodeConfig,
) -> Result<Vec<AblationRow>> {
    Ablation::ALL
        .iter()
        .map(|&ablation| {
            let mut cfg = cfg.clone();
            cfg.bonus.ablation = ablation;
            let hyps = translate_corpus(sources, scorer, table, &cfg)?;
            Ok(AblationRow {
                ablation,
                report: bleu(&hyps, references, BleuOptions::default())?,
            })
        })
        .collect()
}

pub const LAMBDA_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Picks the lambda from `grid` with the highest dev BLEU (smallest lambda
/// on ties). Returns the winner and every (lambda, BLEU) pair.
pub fn tune_lambda<S: Scorer + ?Sized>(
    sources: &[Vec<String>],
    references: &[Vec<Vec<String>>],
    scorer: &S,
    table: &PhraseTable,
    cfg: &DecodeConfig,
    grid: &[f64],
) -> Result<(f64, Vec<(f64, f64)>)> {
    let mut results = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let mut cfg = cfg.clone();
        let mut bonus = BonusConfig::new(lambda, cfg.bonus.ablation)?;
        bonus.dedup_origins = cfg.bonus.dedup_origins;
        cfg.bonus = bonus;
        let hyps = translate_corpus(sources, scorer, table, &cfg)?;
        results.push((lambda, bleu(&hyps, references, BleuOptions::default())?.bleu));
    }
    let best = results
        .iter()
        .fold(None::<(f64, f64)>, |best, &(l, b)| match best {
            Some((_, bb)) if bb >= b => best,
            _ => Some((l, b)),
        })
        .ok_or_else(|| Error::Usage("empty lambda grid".into()))?;
    Ok((best.0, results))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn identity_is_exactly_100() {
        let hyps = vec![toks("the cat sat on the mat"), toks("a b c d e")];
        let refs: Vec<_> = hyps.iter().map(|h| vec![h.clone()]).collect();
        let r = bleu(&hyps, &refs, BleuOptions::default()).unwrap();
        assert_eq!(r.bleu, 100.0);
        assert_eq!(r.brevity_penalty, 1.0);
    }

    #[test]
    fn clipped_unigram_precision() {
        let r = bleu(&[toks("the the the")], &[vec![toks("the cat")]], BleuOptions::default()).unwrap();
        assert!((r.ngram_precisions[0] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.ngram_precisions[1], 0.0);
        assert_eq!(r.bleu, 0.0);
    }

    #[test]
    fn case_is_folded() {
        let r = bleu(&[toks("The Cat Sat On The Mat")], &[vec![toks("the cat sat on the mat")]], BleuOptions::default()).unwrap();
        assert_eq!(r.bleu, 100.0);
    }

    #[test]
    fn brevity_penalty_uses_closest_reference() {
        let hyp = toks("a b c d e f");
        let refs = vec![toks("a b c d e f g h"), toks("a b c d e f g h i j k l")];
        let r = bleu(&[hyp], &[refs], BleuOptions::default()).unwrap();
        assert_eq!(r.ref_len, 8);
        assert!((r.brevity_penalty - (1.0f64 - 8.0 / 6.0).exp()).abs() < 1e-15);
    }

    #[test]
    fn count_mismatch_is_usage_error() {
        let err = bleu(&[toks("a")], &[], BleuOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
        assert!(bleu(&[toks("a")], &[vec![]], BleuOptions::default()).is_err());
    }

    #[test]
    fn smoothing_rescues_missing_higher_orders() {
        let hyp = [toks("a b x c d")];
        let refs = [vec![toks("a b y c d")]];
        let plain = bleu(&hyp, &refs, BleuOptions::default()).unwrap();
        assert_eq!(plain.bleu, 0.0);
        let smoothed = bleu(&hyp, &refs, BleuOptions { smoothing: true }).unwrap();
        assert!(smoothed.bleu > 0.0);
    }

    #[test]
    fn empty_hypothesis_scores_zero() {
        let r = bleu(&[vec![]], &[vec![toks("a b")]], BleuOptions::default()).unwrap();
        assert_eq!(r.bleu, 0.0);
        assert_eq!(r.brevity_penalty, 0.0);
    }

    #[test]
    fn bleu_lines_pairs_reference_files() {
        let hyps = ["a b c d", "e f g h"];
        let r0 = vec!["a b c d", "x y z w"];
        let r1 = vec!["q q q q", "e f g h"];
        let r = bleu_lines(&hyps, &[r0, r1], BleuOptions::default()).unwrap();
        assert_eq!(r.bleu, 100.0);
        assert!(bleu_lines(&hyps, &[vec!["a"]], BleuOptions::default()).is_err());
    }
}
