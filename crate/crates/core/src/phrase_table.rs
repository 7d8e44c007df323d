//! Moses phrase-table loading.
//!
//! Records look like `src tokens ||| tgt tokens ||| s1 s2 s3 s4 [...]`. The
//! first four scores are the bidirectional phrase probabilities and lexical
//! weights; their mean is the aggregated phrase translation probability
//! (`p_pht`) used everywhere downstream. Loading applies three filters:
//!
//! 1. out-of-vocabulary tokens become the UNK symbol,
//! 2. pairs where either side is nothing but punctuation and UNK are dropped,
//! 3. each source phrase keeps at most `max_targets_per_source` targets.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use log::warn;
use unicode_general_category::{get_general_category, GeneralCategory};

use crate::error::{Error, Result};
use crate::vocab::Vocabulary;

pub const DEFAULT_UNK: &str = "UNK";
pub const DEFAULT_MAX_TARGETS: usize = 10;
pub const FIELD_SEPARATOR: &str = " ||| ";

/// One filtered phrase pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PhraseEntry {
    pub source_phrase: Vec<String>,
    pub target_phrase: Vec<String>,
    /// Mean of `raw_scores`.
    pub p_pht: f64,
    pub raw_scores: [f64; 4],
}

impl PhraseEntry {
    pub fn new(source_phrase: Vec<String>, target_phrase: Vec<String>, raw_scores: [f64; 4]) -> Self {
        let p_pht = raw_scores.iter().sum::<f64>() / 4.0;
        Self {
            source_phrase,
            target_phrase,
            p_pht,
            raw_scores,
        }
    }

    /// Serializes back to the four-score Moses form.
    pub fn to_line(&self) -> String {
        let scores: Vec<String> = self.raw_scores.iter().map(f64::to_string).collect();
        format!(
            "{}{sep}{}{sep}{}",
            self.source_phrase.join(" "),
            self.target_phrase.join(" "),
            scores.join(" "),
            sep = FIELD_SEPARATOR
        )
    }
}

/// Ranking used for every top-k cut: `p_pht` descending, then target phrase
/// in lexicographic order.
pub(crate) fn rank_order(a: &PhraseEntry, b: &PhraseEntry) -> Ordering {
    b.p_pht
        .total_cmp(&a.p_pht)
        .then_with(|| a.target_phrase.cmp(&b.target_phrase))
}

/// True when every character of `token` is Unicode punctuation (P*).
pub fn is_punctuation(token: &str) -> bool {
    !token.is_empty()
        && token.chars().all(|c| {
            matches!(
                get_general_category(c),
                GeneralCategory::ConnectorPunctuation
                    | GeneralCategory::DashPunctuation
                    | GeneralCategory::OpenPunctuation
                    | GeneralCategory::ClosePunctuation
                    | GeneralCategory::InitialPunctuation
                    | GeneralCategory::FinalPunctuation
                    | GeneralCategory::OtherPunctuation
            )
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Any malformed record or out-of-range score aborts loading.
    #[default]
    Strict,
    /// Malformed records are skipped and counted; scores are clamped to [0, 1].
    Lenient,
}

/// Vocabulary-based token filtering. A `None` vocabulary accepts every token.
#[derive(Debug, Clone)]
pub struct TableFilter {
    pub src_vocab: Option<Vocabulary>,
    pub tgt_vocab: Option<Vocabulary>,
    pub unk: String,
}

impl Default for TableFilter {
    fn default() -> Self {
        Self {
            src_vocab: None,
            tgt_vocab: None,
            unk: DEFAULT_UNK.to_string(),
        }
    }
}

impl TableFilter {
    pub fn with_vocabularies(src_vocab: Option<Vocabulary>, tgt_vocab: Option<Vocabulary>) -> Self {
        Self {
            src_vocab,
            tgt_vocab,
            ..Self::default()
        }
    }

    fn map_side(&self, field: &str, vocab: Option<&Vocabulary>) -> Vec<String> {
        field
            .split_whitespace()
            .map(|tok| match vocab {
                Some(v) if !v.contains(tok) => self.unk.clone(),
                _ => tok.to_string(),
            })
            .collect()
    }

    fn is_noise(&self, side: &[String]) -> bool {
        side.iter().all(|t| *t == self.unk || is_punctuation(t))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum LineOutcome {
    Entry(PhraseEntry),
    Noise,
    ZeroProbability,
}

fn parse_record(line: &str, line_no: usize, filter: &TableFilter, mode: ParseMode) -> Result<(LineOutcome, bool)> {
    let fields: Vec<&str> = line.split("|||").map(str::trim).collect();
    if fields.len() < 3 {
        return Err(Error::parse(line_no, format!("expected at least 3 `|||` fields, found {}", fields.len())));
    }
    let source = filter.map_side(fields[0], filter.src_vocab.as_ref());
    let target = filter.map_side(fields[1], filter.tgt_vocab.as_ref());
    if source.is_empty() || target.is_empty() {
        return Err(Error::parse(line_no, "empty phrase"));
    }

    let mut scores = [0.0f64; 4];
    let mut count = 0;
    let mut clamped = false;
    for (i, raw) in fields[2].split_whitespace().enumerate() {
        let value: f64 = raw
            .parse()
            .map_err(|_| Error::parse(line_no, format!("non-numeric score `{raw}`")))?;
        if !value.is_finite() {
            return Err(Error::parse(line_no, format!("non-finite score `{raw}`")));
        }
        count += 1;
        if i >= 4 {
            continue;
        }
        scores[i] = if (0.0..=1.0).contains(&value) {
            value
        } else {
            match mode {
                ParseMode::Strict => {
                    return Err(Error::parse(line_no, format!("score {value} outside [0, 1]")));
                }
                ParseMode::Lenient => {
                    warn!("line {line_no}: clamping score {value} into [0, 1]");
                    clamped = true;
                    value.clamp(0.0, 1.0)
                }
            }
        };
    }
    if count < 4 {
        return Err(Error::parse(line_no, format!("expected at least 4 scores, found {count}")));
    }

    if filter.is_noise(&source) || filter.is_noise(&target) {
        return Ok((LineOutcome::Noise, clamped));
    }
    let entry = PhraseEntry::new(source, target, scores);
    if entry.p_pht <= 0.0 {
        return Ok((LineOutcome::ZeroProbability, clamped));
    }
    Ok((LineOutcome::Entry(entry), clamped))
}

/// Parses one record. `Ok(None)` means the pair was filtered out.
pub fn parse_line(line: &str, line_no: usize, filter: &TableFilter, mode: ParseMode) -> Result<Option<PhraseEntry>> {
    Ok(match parse_record(line, line_no, filter, mode)?.0 {
        LineOutcome::Entry(e) => Some(e),
        _ => None,
    })
}

/// Counters collected while loading a table.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub lines: usize,
    pub kept: usize,
    pub filtered_noise: usize,
    pub filtered_zero: usize,
    pub truncated: usize,
    pub skipped_malformed: usize,
    pub clamped: usize,
}

/// Filtered phrase table keyed by source phrase.
#[derive(Debug, Clone, Default)]
pub struct PhraseTable {
    entries: BTreeMap<Vec<String>, Vec<Arc<PhraseEntry>>>,
    filter: TableFilter,
    max_targets_per_source: usize,
    max_source_len: usize,
    stats: LoadStats,
}

impl PhraseTable {
    /// Groups `entries` by source phrase, ranks each group and keeps the top
    /// `max_targets_per_source`.
    pub fn from_entries<I>(entries: I, max_targets_per_source: usize, filter: TableFilter) -> Self
    where
        I: IntoIterator<Item = PhraseEntry>,
    {
        assert!(max_targets_per_source > 0, "max_targets_per_source must be positive");
        let mut grouped: BTreeMap<Vec<String>, Vec<PhraseEntry>> = BTreeMap::new();
        for entry in entries {
            grouped.entry(entry.source_phrase.clone()).or_default().push(entry);
        }

        let mut stats = LoadStats::default();
        let mut max_source_len = 0;
        let entries = grouped
            .into_iter()
            .map(|(key, mut group)| {
                group.sort_by(rank_order);
                stats.truncated += group.len().saturating_sub(max_targets_per_source);
                group.truncate(max_targets_per_source);
                stats.kept += group.len();
                max_source_len = max_source_len.max(key.len());
                (key, group.into_iter().map(Arc::new).collect())
            })
            .collect();

        Self {
            entries,
            filter,
            max_targets_per_source,
            max_source_len,
            stats,
        }
    }

    pub fn load(path: impl AsRef<Path>, filter: TableFilter, max_targets_per_source: usize, mode: ParseMode) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file), filter, max_targets_per_source, mode).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    pub fn read<R: BufRead>(reader: R, filter: TableFilter, max_targets_per_source: usize, mode: ParseMode) -> Result<Self> {
        let mut stats = LoadStats::default();
        let mut parsed = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<reader>", e))?;
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            stats.lines += 1;
            match parse_record(&line, line_no, &filter, mode) {
                Ok((outcome, clamped)) => {
                    stats.clamped += usize::from(clamped);
                    match outcome {
                        LineOutcome::Entry(e) => parsed.push(e),
                        LineOutcome::Noise => stats.filtered_noise += 1,
                        LineOutcome::ZeroProbability => stats.filtered_zero += 1,
                    }
                }
                Err(e) if mode == ParseMode::Lenient => {
                    warn!("skipping malformed record: {e}");
                    stats.skipped_malformed += 1;
                }
                Err(e) => return Err(e),
            }
        }
        let mut table = Self::from_entries(parsed, max_targets_per_source, filter);
        table.stats = LoadStats {
            kept: table.stats.kept,
            truncated: table.stats.truncated,
            ..stats
        };
        Ok(table)
    }

    pub fn get(&self, source: &[String]) -> Option<&[Arc<PhraseEntry>]> {
        self.entries.get(source).map(Vec::as_slice)
    }

    /// Source phrases in lexicographic order with their ranked targets.
    pub fn iter(&self) -> impl Iterator<Item = (&[String], &[Arc<PhraseEntry>])> {
        self.entries.iter().map(|(k, v)| (k.as_slice(), v.as_slice()))
    }

    pub fn num_sources(&self) -> usize {
        self.entries.len()
    }

    pub fn num_entries(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Longest source phrase in the table.
    pub fn max_source_len(&self) -> usize {
        self.max_source_len
    }

    pub fn max_targets_per_source(&self) -> usize {
        self.max_targets_per_source
    }

    pub fn filter(&self) -> &TableFilter {
        &self.filter
    }

    pub fn stats(&self) -> &LoadStats {
        &self.stats
    }

    /// Writes every retained entry, one record per line, in iteration order.
    pub fn write_to<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (_, group) in self.iter() {
            for entry in group {
                writeln!(out, "{}", entry.to_line())?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn open() -> TableFilter {
        TableFilter::default()
    }

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn mean_of_four_scores() {
        let e = parse_line("ta dingju zai ||| he settled in ||| 0.6 0.6 0.6 0.6", 1, &open(), ParseMode::Strict)
            .unwrap()
            .unwrap();
        assert_eq!(e.source_phrase, toks("ta dingju zai"));
        assert_eq!(e.target_phrase, toks("he settled in"));
        assert!((e.p_pht - 0.6).abs() < 1e-12);
    }

    #[test]
    fn extra_scores_are_ignored() {
        let e = parse_line("a ||| b ||| 0.1 0.2 0.3 0.4 2.718 ||| 0-0 ||| 3 4 1", 1, &open(), ParseMode::Strict)
            .unwrap()
            .unwrap();
        assert_eq!(e.raw_scores, [0.1, 0.2, 0.3, 0.4]);
        assert!((e.p_pht - 0.25).abs() < 1e-12);
    }

    #[test]
    fn all_punctuation_is_filtered() {
        assert_eq!(parse_line(", . ||| , ||| 0.9 0.9 0.9 0.9", 1, &open(), ParseMode::Strict).unwrap(), None);
        // target side alone is enough
        assert_eq!(parse_line("ni hao ||| 。 ||| 0.9 0.9 0.9 0.9", 1, &open(), ParseMode::Strict).unwrap(), None);
    }

    #[test]
    fn oov_becomes_unk() {
        let filter = TableFilter::with_vocabularies(Some(Vocabulary::from_tokens(["foo"])), None);
        let e = parse_line("foo RAREWORD ||| bar ||| 0.5 0.5 0.5 0.5", 1, &filter, ParseMode::Strict)
            .unwrap()
            .unwrap();
        assert_eq!(e.source_phrase, toks("foo UNK"));
        assert_eq!(e.target_phrase, toks("bar"));
    }

    #[test]
    fn unk_and_punctuation_only_side_is_filtered() {
        let filter = TableFilter::with_vocabularies(Some(Vocabulary::from_tokens(["x"])), None);
        assert_eq!(parse_line("rare , ||| y ||| 0.5 0.5 0.5 0.5", 1, &filter, ParseMode::Strict).unwrap(), None);
    }

    #[test]
    fn symbols_are_not_punctuation() {
        assert!(is_punctuation(","));
        assert!(is_punctuation("..."));
        assert!(is_punctuation("「"));
        assert!(!is_punctuation("$"));
        assert!(!is_punctuation("+"));
        assert!(!is_punctuation("a."));
        assert!(!is_punctuation(""));
    }

    #[test]
    fn malformed_lines_carry_line_number() {
        let cases = [
            "a ||| b",
            "a ||| b ||| 0.1 0.2 0.3",
            "a ||| b ||| 0.1 x 0.3 0.4",
            " ||| b ||| 0.1 0.2 0.3 0.4",
            "a ||| b ||| 0.1 NaN 0.3 0.4",
        ];
        for case in cases {
            match parse_line(case, 7, &open(), ParseMode::Strict) {
                Err(Error::Parse { line: 7, .. }) => {}
                other => panic!("{case:?} gave {other:?}"),
            }
        }
    }

    #[test]
    fn out_of_range_scores_strict_vs_lenient() {
        let line = "a ||| b ||| 1.5 0.5 0.5 0.5";
        assert!(parse_line(line, 1, &open(), ParseMode::Strict).is_err());
        let e = parse_line(line, 1, &open(), ParseMode::Lenient).unwrap().unwrap();
        assert_eq!(e.raw_scores, [1.0, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn scientific_notation() {
        let e = parse_line("a ||| b ||| 1e-3 2.5E-1 0.5 1", 1, &open(), ParseMode::Strict)
            .unwrap()
            .unwrap();
        assert_eq!(e.raw_scores, [0.001, 0.25, 0.5, 1.0]);
    }

    #[test]
    fn keeps_top_ten_largest() {
        let text: String = (0..12)
            .map(|i| {
                let p = 0.05 + 0.07 * i as f64;
                format!("s ||| t{i} ||| {p} {p} {p} {p}\n")
            })
            .collect();
        let table = PhraseTable::read(text.as_bytes(), open(), DEFAULT_MAX_TARGETS, ParseMode::Strict).unwrap();
        let group = table.get(&toks("s")).unwrap();
        assert_eq!(group.len(), 10);
        let kept: Vec<_> = group.iter().map(|e| e.target_phrase[0].clone()).collect();
        let expected: Vec<_> = (2..12).rev().map(|i| format!("t{i}")).collect();
        assert_eq!(kept, expected);
        assert_eq!(table.stats().truncated, 2);
    }

    #[test]
    fn tie_at_cutoff_prefers_lexicographic_target() {
        let text = "s ||| b ||| 0.5 0.5 0.5 0.5\ns ||| c ||| 0.9 0.9 0.9 0.9\ns ||| a ||| 0.5 0.5 0.5 0.5\n";
        let table = PhraseTable::read(text.as_bytes(), open(), 2, ParseMode::Strict).unwrap();
        let kept: Vec<_> = table.get(&toks("s")).unwrap().iter().map(|e| e.target_phrase.join(" ")).collect();
        assert_eq!(kept, ["c", "a"]);
    }

    #[test]
    fn empty_input_gives_empty_table() {
        let table = PhraseTable::read(&b""[..], open(), 10, ParseMode::Strict).unwrap();
        assert!(table.is_empty());
        assert_eq!(table.num_entries(), 0);
    }

    #[test]
    fn lenient_mode_counts_skipped_lines() {
        let text = "a ||| b ||| 0.5 0.5 0.5 0.5\nbroken\na ||| c ||| 0.1 0.1\n";
        assert!(PhraseTable::read(text.as_bytes(), open(), 10, ParseMode::Strict).is_err());
        let table = PhraseTable::read(text.as_bytes(), open(), 10, ParseMode::Lenient).unwrap();
        assert_eq!(table.num_entries(), 1);
        assert_eq!(table.stats().skipped_malformed, 2);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = PhraseTable::load("/nonexistent/table.txt", open(), 10, ParseMode::Strict).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
