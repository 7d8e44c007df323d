use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use phrasemem::bonus::{bonus_values, select_recommendations, Ablation, AttentionVector, BonusConfig};
use phrasemem::candidate_index::{build_index, match_source, DEFAULT_MAX_PHRASE_LEN, DEFAULT_TOP_N};
use phrasemem::decoder::{decode_corpus, DecodeConfig, LexiconScorer};
use phrasemem::error::{Error, Result};
use phrasemem::eval::{bleu, bleu_lines, run_ablations, tune_lambda, BleuOptions, LAMBDA_GRID};
use phrasemem::phrase_table::{ParseMode, PhraseTable, TableFilter, DEFAULT_MAX_TARGETS, DEFAULT_UNK};
use phrasemem::recommender::MatcherState;
use phrasemem::synthetic::{SynthConfig, SyntheticCorpus};
use phrasemem::vocab::Vocabulary;

#[derive(Parser)]
#[command(name = "phrasemem", version, about = "Phrase-table recommendations for beam-search translation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the candidate phrase trie for a source sentence
    BuildIndex(BuildIndexArgs),
    /// Print the recommendation set for a partial translation as JSON lines
    Recommend(RecommendArgs),
    /// Beam-search decode a corpus with the lexicon reference scorer
    Decode(DecodeArgs),
    /// Case-insensitive 4-gram corpus BLEU
    Eval(EvalArgs),
    /// Compare baseline, full, no_matching and no_first on a corpus
    Ablate(CorpusArgs),
    /// Grid-search the bonus weight on a dev corpus
    Tune(CorpusArgs),
    /// Write a synthetic task (table, lexicon, source, reference)
    Synth(SynthArgs),
}

#[derive(Args)]
struct TableArgs {
    /// Moses phrase table
    #[arg(long)]
    table: PathBuf,
    /// Source vocabulary, one token per line; OOV tokens become UNK
    #[arg(long)]
    src_vocab: Option<PathBuf>,
    /// Target vocabulary, one token per line
    #[arg(long)]
    tgt_vocab: Option<PathBuf>,
    /// Keep only the first N vocabulary entries
    #[arg(long, default_value_t = 30_000)]
    vocab_limit: usize,
    #[arg(long, default_value = DEFAULT_UNK)]
    unk: String,
    #[arg(long, default_value_t = DEFAULT_MAX_TARGETS)]
    max_targets: usize,
    /// Skip malformed records instead of failing
    #[arg(long)]
    lenient: bool,
}

impl TableArgs {
    fn load(&self) -> Result<PhraseTable> {
        let vocab = |p: &Option<PathBuf>| p.as_ref().map(|p| Vocabulary::load(p, Some(self.vocab_limit))).transpose();
        let filter = TableFilter {
            src_vocab: vocab(&self.src_vocab)?,
            tgt_vocab: vocab(&self.tgt_vocab)?,
            unk: self.unk.clone(),
        };
        let mode = if self.lenient { ParseMode::Lenient } else { ParseMode::Strict };
        let table = PhraseTable::load(&self.table, filter, self.max_targets, mode)?;
        log::info!("loaded phrase table: {:?}", table.stats());
        Ok(table)
    }
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long, default_value_t = DEFAULT_TOP_N)]
    top_n: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_PHRASE_LEN)]
    max_phrase_len: usize,
}

#[derive(Args)]
struct BuildIndexArgs {
    #[command(flatten)]
    table: TableArgs,
    #[command(flatten)]
    index: IndexArgs,
    /// Space-tokenized source sentence
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    sentence: Option<String>,
    /// File of source sentences; one dump per line, separated by blank lines
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Args)]
struct RecommendArgs {
    #[command(flatten)]
    table: TableArgs,
    #[command(flatten)]
    index: IndexArgs,
    #[arg(long)]
    sentence: String,
    /// Space-tokenized partial translation (empty for the first step)
    #[arg(long, default_value = "")]
    partial: String,
    /// File with one attention weight per source token (whitespace separated);
    /// uniform attention when absent
    #[arg(long)]
    attention: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    #[arg(long, default_value = "full")]
    ablation: Ablation,
    #[arg(long)]
    dedup_origins: bool,
}

#[derive(Args)]
struct ModelArgs {
    #[command(flatten)]
    table: TableArgs,
    /// Lexicon for the reference scorer: `src tgt weight` per line
    #[arg(long)]
    lexicon: PathBuf,
    /// Decode config file (`key = value` lines)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's ablation
    #[arg(long)]
    ablation: Option<Ablation>,
    /// Decode sentences one at a time
    #[arg(long)]
    sequential: bool,
}

impl ModelArgs {
    fn load(&self) -> Result<(PhraseTable, LexiconScorer, DecodeConfig)> {
        let table = self.table.load()?;
        let scorer = LexiconScorer::load(&self.lexicon)?;
        let mut cfg = match &self.config {
            Some(p) => DecodeConfig::load(p)?,
            None => DecodeConfig {
                verify_matcher: false,
                ..DecodeConfig::default()
            },
        };
        if let Some(a) = self.ablation {
            cfg.bonus.ablation = a;
        }
        Ok((table, scorer, cfg))
    }
}

#[derive(Args)]
struct DecodeArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Source sentences, one per line
    #[arg(long)]
    input: PathBuf,
    /// Output file (stdout when absent)
    #[arg(long)]
    output: Option<PathBuf>,
    /// Per-sentence diagnostics as JSON lines
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    /// Emit an empty line for sentences that fail instead of aborting
    #[arg(long)]
    keep_going: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    hyp: PathBuf,
    /// Reference file; repeat for multiple references
    #[arg(long = "ref", required = true)]
    refs: Vec<PathBuf>,
    #[arg(long)]
    smooth: bool,
    /// Print the full report as JSON
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct CorpusArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    input: PathBuf,
    #[arg(long = "ref", required = true)]
    refs: Vec<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    sentences: usize,
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(text.lines().map(str::to_string).collect())
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
}

fn output_err(e: io::Error) -> Error {
    Error::Io {
        path: "<output>".into(),
        source: e,
    }
}

fn tokens(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn reference_sets(paths: &[PathBuf], n: usize) -> Result<Vec<Vec<Vec<String>>>> {
    let files = paths.iter().map(|p| read_lines(p)).collect::<Result<Vec<_>>>()?;
    for (p, f) in paths.iter().zip(&files) {
        if f.len() != n {
            return Err(Error::Usage(format!("{} has {} lines, expected {n}", p.display(), f.len())));
        }
    }
    Ok((0..n).map(|i| files.iter().map(|f| tokens(&f[i])).collect()).collect())
}

fn build_index_cmd(args: BuildIndexArgs) -> Result<()> {
    let table = args.table.load()?;
    let sentences = match (&args.sentence, &args.input) {
        (Some(s), _) => vec![s.clone()],
        (None, Some(p)) => read_lines(p)?,
        (None, None) => unreachable!("clap enforces one source"),
    };
    let mut out = io::stdout().lock();
    for (i, sentence) in sentences.iter().enumerate() {
        let sentence = tokens(sentence);
        let index = build_index(match_source(&sentence, &table, args.index.max_phrase_len), args.index.top_n);
        if i > 0 {
            writeln!(out).map_err(output_err)?;
        }
        out.write_all(index.dump().as_bytes()).map_err(output_err)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct OriginJson {
    source: String,
    target: String,
    span: [usize; 2],
    p_pht: f64,
    prefix_len: usize,
}

#[derive(Serialize)]
struct RecommendationJson<'a> {
    word: &'a str,
    bonus: f64,
    origins: Vec<OriginJson>,
}

fn recommend_cmd(args: RecommendArgs) -> Result<()> {
    let table = args.table.load()?;
    let sentence = tokens(&args.sentence);
    if sentence.is_empty() {
        return Err(Error::Usage("--sentence is empty".into()));
    }
    let index = build_index(match_source(&sentence, &table, args.index.max_phrase_len), args.index.top_n);
    let partial = tokens(&args.partial);
    let state = MatcherState::from_partial(&index, &partial);
    let mut cfg = BonusConfig::new(args.lambda, args.ablation)?;
    cfg.dedup_origins = args.dedup_origins;
    let recs = select_recommendations(&cfg, &state, &index);

    let attention = match &args.attention {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Error::Io { path: p.clone(), source: e })?;
            let weights = text
                .split_whitespace()
                .map(|w| w.parse::<f64>().map_err(|_| Error::Usage(format!("bad attention weight `{w}`"))))
                .collect::<Result<Vec<_>>>()?;
            AttentionVector::new(weights)?
        }
        None => AttentionVector::uniform(sentence.len()),
    };
    if attention.len() != sentence.len() {
        return Err(Error::Usage(format!(
            "attention has {} weights for {} source tokens",
            attention.len(),
            sentence.len()
        )));
    }
    let bonuses = bonus_values(&index, &recs, &attention)?;

    let mut out = io::stdout().lock();
    for rec in &recs {
        let origins = rec
            .origins
            .iter()
            .map(|o| {
                let origin = index.origin(o.origin);
                OriginJson {
                    source: origin.entry.source_phrase.join(" "),
                    target: origin.entry.target_phrase.join(" "),
                    span: [origin.span.start, origin.span.end],
                    p_pht: origin.p_pht(),
                    prefix_len: o.prefix_len,
                }
            })
            .collect();
        let line = RecommendationJson {
            word: &rec.word,
            bonus: bonuses[&rec.word],
            origins,
        };
        let json = serde_json::to_string(&line).expect("serializable");
        writeln!(out, "{json}").map_err(output_err)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SentenceDiagnostics {
    sentence: usize,
    candidate_phrases: usize,
    steps: usize,
    recommendations: usize,
    nonzero_bonus: usize,
    max_bonus: f64,
    dropped_oov: usize,
    negative_logit_bonus: usize,
    log_prob: f64,
    length_capped: bool,
}

fn decode_cmd(args: DecodeArgs) -> Result<()> {
    let (table, scorer, cfg) = args.model.load()?;
    let sources: Vec<Vec<String>> = read_lines(&args.input)?.iter().map(|l| tokens(l)).collect();
    let results = decode_corpus(&sources, &scorer, &table, &cfg, !args.model.sequential);

    let mut out: Box<dyn Write> = match &args.output {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    let mut diag_out = args.diagnostics.as_deref().map(create).transpose()?;
    for (i, result) in results.into_iter().enumerate() {
        match result {
            Ok(decoded) => {
                let best = decoded.best();
                writeln!(out, "{}", best.tokens.join(" ")).map_err(output_err)?;
                if let Some(d) = diag_out.as_mut() {
                    let mut total = phrasemem::bonus::StepDiagnostics::default();
                    for step in &decoded.diagnostics {
                        total.merge(step);
                    }
                    let row = SentenceDiagnostics {
                        sentence: i + 1,
                        candidate_phrases: decoded.candidate_phrases,
                        steps: decoded.diagnostics.len(),
                        recommendations: total.recommendations,
                        nonzero_bonus: total.nonzero_bonus,
                        max_bonus: total.max_bonus,
                        dropped_oov: total.dropped_oov,
                        negative_logit_bonus: total.negative_logit_bonus,
                        log_prob: best.log_prob,
                        length_capped: best.length_capped,
                    };
                    writeln!(d, "{}", serde_json::to_string(&row).expect("serializable")).map_err(output_err)?;
                }
            }
            Err(e) if args.keep_going => {
                eprintln!("sentence {}: {e}", i + 1);
                writeln!(out).map_err(output_err)?;
            }
            Err(e) => return Err(e),
        }
    }
    out.flush().map_err(output_err)?;
    Ok(())
}

fn eval_cmd(args: EvalArgs) -> Result<()> {
    let hyps = read_lines(&args.hyp)?;
    let refs = args.refs.iter().map(|p| read_lines(p)).collect::<Result<Vec<_>>>()?;
    let report = bleu_lines(&hyps, &refs, BleuOptions { smoothing: args.smooth })?;
    if args.json {
        println!("{}", serde_json::to_string(&report).expect("serializable"));
    } else {
        let p = report.ngram_precisions.map(|p| format!("{:.1}", 100.0 * p));
        println!(
            "BLEU = {:.2}, {} (BP={:.3}, hyp_len={}, ref_len={})",
            report.bleu,
            p.join("/"),
            report.brevity_penalty,
            report.hyp_len,
            report.ref_len
        );
    }
    Ok(())
}

fn ablate_cmd(args: CorpusArgs) -> Result<()> {
    let (table, scorer, cfg) = args.model.load()?;
    let sources: Vec<Vec<String>> = read_lines(&args.input)?.iter().map(|l| tokens(l)).collect();
    let refs = reference_sets(&args.refs, sources.len())?;
    let rows = run_ablations(&sources, &refs, &scorer, &table, &cfg)?;
    println!("{:<14} {:>8} {:>8}", "system", "BLEU", "delta");
    let baseline = rows.iter().find(|r| r.ablation == Ablation::Baseline).map(|r| r.report.bleu).unwrap_or(0.0);
    for row in &rows {
        println!("{:<14} {:>8.2} {:>+8.2}", row.ablation.as_str(), row.report.bleu, row.report.bleu - baseline);
    }
    Ok(())
}

fn tune_cmd(args: CorpusArgs) -> Result<()> {
    let (table, scorer, cfg) = args.model.load()?;
    let sources: Vec<Vec<String>> = read_lines(&args.input)?.iter().map(|l| tokens(l)).collect();
    let refs = reference_sets(&args.refs, sources.len())?;
    let (best, grid) = tune_lambda(&sources, &refs, &scorer, &table, &cfg, &LAMBDA_GRID)?;
    for (lambda, b) in grid {
        println!("lambda = {lambda:.1}  BLEU = {b:.2}");
    }
    println!("best lambda = {best}");
    Ok(())
}

fn synth_cmd(args: SynthArgs) -> Result<()> {
    let corpus = SyntheticCorpus::generate(&SynthConfig {
        seed: args.seed,
        sentences: args.sentences,
        ..SynthConfig::default()
    });
    corpus.write_dir(&args.out)?;
    let refs = corpus.reference_sets();
    let identity = bleu(&corpus.references, &refs, BleuOptions::default())?;
    eprintln!(
        "wrote {} sentences to {} (reference self-BLEU {:.1})",
        corpus.sources.len(),
        args.out.display(),
        identity.bleu
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::BuildIndex(a) => build_index_cmd(a),
        Command::Recommend(a) => recommend_cmd(a),
        Command::Decode(a) => decode_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Ablate(a) => ablate_cmd(a),
        Command::Tune(a) => tune_cmd(a),
        Command::Synth(a) => synth_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
