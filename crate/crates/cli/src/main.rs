//! Command-line surface for the phrase-composition toolkit.
//!
//! Subcommands are thin wrappers over the library: `train` fits a
//! composition model from two-to-one paraphrases, `compose` prints a phrase
//! vector, `score` rates one phrase (type- or token-level), `eval-sim` and
//! `eval-comp` correlate model scores with human judgments, `dump-params`
//! emits parameter blocks as CSV for external inspection, and
//! `annotate-grammar` appends compositionality features to translation
//! rules.
//!
//! Every run prints a reproducibility header to stderr — the argument
//! vector, the seed where one applies, and a SHA-256 digest of each input
//! file — so artifacts can be traced to their exact inputs. Data goes to
//! stdout; diagnostics go to stderr. Runtime failures exit 1 with a
//! one-line `error: ...` message; usage mistakes exit 2.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use phrasecomp::composition::{CompositionModel, PosPairKey, TaggedWord};
use phrasecomp::embeddings::EmbeddingTable;
use phrasecomp::evalkit::{
    eval_compositionality, eval_similarity, load_compositionality_jsonl, load_similarity_csv,
    Aggregate, CompScoreMode, CorrelationReport,
};
use phrasecomp::grammar::{annotate_grammar, GrammarScorer, TagLexicon, TokenCorpus};
use phrasecomp::model_io::{load_model, save_model};
use phrasecomp::regression::Penalty;
use phrasecomp::scoring::{
    score_occurrence, score_type_level, Summary, TokenScoreConfig,
};
use phrasecomp::training::{load_paraphrases, train_model, ModelVariant, TrainConfig};

#[derive(Parser)]
#[command(
    name = "phrasecomp",
    version,
    about = "Learn, apply, and evaluate phrase-composition functions"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a composition model from two-to-one paraphrase supervision.
    Train(TrainArgs),
    /// Compose a tagged phrase into a vector and print it.
    Compose(ComposeArgs),
    /// Score one phrase for compositionality.
    Score(ScoreArgs),
    /// Correlate model similarities with human phrase-pair ratings.
    EvalSim(EvalSimArgs),
    /// Correlate model compositionality scores with human ratings.
    EvalComp(EvalCompArgs),
    /// Dump model parameter blocks as CSV (key,row,col,value).
    DumpParams(DumpParamsArgs),
    /// Append compositionality features to translation grammar rules.
    AnnotateGrammar(AnnotateArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Tab-separated triples: `word1_TAG word2_TAG <TAB> target <TAB> weight`.
    #[arg(long)]
    paraphrases: PathBuf,
    /// Word vectors in text format (`V N` header, then `word v1..vN`).
    #[arg(long)]
    embeddings: PathBuf,
    /// Composition function to fit.
    #[arg(long)]
    variant: ModelVariant,
    /// Regularizer for the concat/tensor fits.
    #[arg(long, default_value = "l2")]
    penalty: Penalty,
    /// Cross-validation folds for the penalty-weight search.
    #[arg(long, default_value_t = 5)]
    folds: usize,
    /// Seed for the cross-validation shuffle.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Weight rows by the triple confidence (l2 penalty only).
    #[arg(long)]
    weighted: bool,
    /// Comma-separated penalty-weight grid; defaults to eight points from
    /// 1e-4 to 1e2.
    #[arg(long)]
    grid: Option<String>,
    /// Where to write the trained model.
    #[arg(long)]
    model_out: PathBuf,
    /// Where to write the JSON training report; stdout when omitted.
    #[arg(long)]
    report_out: Option<PathBuf>,
}

#[derive(Args)]
struct ComposeArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Tagged phrase, e.g. "stock_NN market_NN".
    #[arg(long)]
    phrase: String,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Context-independent constituent similarity.
    Type,
    /// Context likelihood at one occurrence.
    Token,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Type)]
    mode: Mode,
    /// Tagged phrase to score (type mode).
    #[arg(long)]
    phrase: Option<String>,
    /// Interpolation weight on the left constituent (type mode, two-word
    /// phrases).
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Tagged sentence containing the occurrence (token mode).
    #[arg(long)]
    sentence: Option<String>,
    /// Phrase start index within the sentence (token mode).
    #[arg(long)]
    start: Option<usize>,
    /// Phrase end index, exclusive (token mode).
    #[arg(long)]
    end: Option<usize>,
    /// Context vectors for token scoring.
    #[arg(long)]
    contexts: Option<PathBuf>,
    /// Reuse the word vectors as context vectors instead of requiring
    /// --contexts.
    #[arg(long)]
    allow_word_vectors_as_context: bool,
    /// Context words per occurrence, split across both sides.
    #[arg(long, default_value_t = 6)]
    window: usize,
    /// How the token score is reported: mean context log-likelihood
    /// (higher = more compositional) or its perplexity (lower = more
    /// compositional).
    #[arg(long, default_value = "logprob")]
    summary: Summary,
}

#[derive(Args)]
struct EvalSimArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// CSV with header `annotator,phrase_a,tags_a,phrase_b,tags_b,score`.
    #[arg(long)]
    dataset: PathBuf,
    /// Print the full JSON report instead of the summary lines.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvalCompArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// JSON-lines records with phrase, ratings, and tagged sentences.
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Type)]
    mode: Mode,
    /// Interpolation weight on the left constituent (type mode).
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Context words per occurrence (token mode).
    #[arg(long, default_value_t = 6)]
    window: usize,
    /// Combine per-occurrence scores by mean or max (token mode).
    #[arg(long, default_value = "mean")]
    aggregate: Aggregate,
    /// Context vectors (token mode).
    #[arg(long)]
    contexts: Option<PathBuf>,
    /// Reuse the word vectors as context vectors instead of requiring
    /// --contexts.
    #[arg(long)]
    allow_word_vectors_as_context: bool,
    /// Print the full JSON report instead of the summary lines.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct DumpParamsArgs {
    #[arg(long)]
    model: PathBuf,
    /// Restrict the dump to one POS-pair key (e.g. NN-NN).
    #[arg(long)]
    key: Option<PosPairKey>,
}

#[derive(Args)]
struct AnnotateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Rule file: `LHS ||| source ||| target ||| features` per line.
    #[arg(long)]
    rules: PathBuf,
    /// Most-frequent-tag lexicon: `word TAG` per line; unlisted words tag
    /// as OTHER.
    #[arg(long)]
    lexicon: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Type)]
    mode: Mode,
    /// Interpolation weight on the left constituent (type mode).
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Tagged sentences to locate occurrences in (token mode).
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Context vectors (token mode).
    #[arg(long)]
    contexts: Option<PathBuf>,
    /// Reuse the word vectors as context vectors instead of requiring
    /// --contexts.
    #[arg(long)]
    allow_word_vectors_as_context: bool,
    /// Context words per occurrence (token mode).
    #[arg(long, default_value_t = 6)]
    window: usize,
    /// Annotated rules file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Compose(args) => cmd_compose(args),
        Command::Score(args) => cmd_score(args),
        Command::EvalSim(args) => cmd_eval_sim(args),
        Command::EvalComp(args) => cmd_eval_comp(args),
        Command::DumpParams(args) => cmd_dump_params(args),
        Command::AnnotateGrammar(args) => cmd_annotate(args),
    }
}

/// Prints the reproducibility header: the argument vector, the seed when
/// one applies, and a digest per input file.
fn print_header(inputs: &[&Path], seed: Option<u64>) -> Result<()> {
    let argv: Vec<String> = std::env::args().collect();
    eprintln!("# {}", argv.join(" "));
    if let Some(seed) = seed {
        eprintln!("# seed: {seed}");
    }
    for path in inputs {
        let digest = sha256_file(path)
            .with_context(|| format!("digesting {}", path.display()))?;
        eprintln!("# sha256 {} {}", path.display(), digest);
    }
    Ok(())
}

fn sha256_file(path: &Path) -> Result<String> {
    let mut file = BufReader::new(File::open(path)?);
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn load_words(path: &Path) -> Result<EmbeddingTable> {
    EmbeddingTable::load(path)
        .with_context(|| format!("loading word vectors from {}", path.display()))
}

fn load_model_file(path: &Path) -> Result<CompositionModel> {
    load_model(path).with_context(|| format!("loading model from {}", path.display()))
}

/// Context vectors for token scoring: an explicit table, or the word
/// vectors themselves behind the opt-in flag.
fn resolve_contexts(
    words: &EmbeddingTable,
    contexts: &Option<PathBuf>,
    allow_word_vectors: bool,
) -> Result<EmbeddingTable> {
    match contexts {
        Some(path) => EmbeddingTable::load(path)
            .with_context(|| format!("loading context vectors from {}", path.display())),
        None if allow_word_vectors => Ok(words.clone()),
        None => bail!(
            "token scoring needs context vectors: pass --contexts FILE, or \
             --allow-word-vectors-as-context to reuse the word vectors"
        ),
    }
}

fn parse_grid(grid: &str) -> Result<Vec<f64>> {
    grid.split(',')
        .map(|tok| {
            tok.trim()
                .parse::<f64>()
                .with_context(|| format!("bad grid value {tok:?}"))
        })
        .collect()
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    print_header(&[&args.paraphrases, &args.embeddings], Some(args.seed))?;
    if args.weighted && args.penalty == Penalty::L1 {
        bail!("--weighted is supported for --penalty l2 only");
    }
    let words = load_words(&args.embeddings)?;
    let set = load_paraphrases(&args.paraphrases)
        .with_context(|| format!("loading paraphrases from {}", args.paraphrases.display()))?;
    eprintln!(
        "# paraphrases: {} usable, {} skipped",
        set.len(),
        set.skipped.total()
    );

    let mut cfg = TrainConfig {
        penalty: args.penalty,
        folds: args.folds,
        seed: args.seed,
        weighted: args.weighted,
        ..TrainConfig::default()
    };
    if let Some(grid) = &args.grid {
        cfg.grid = parse_grid(grid)?;
    }

    let outcome = train_model(args.variant, &set, &words, &cfg)?;
    for warning in &outcome.report.warnings {
        eprintln!("# warning: {warning}");
    }
    save_model(&outcome.model, &args.model_out)
        .with_context(|| format!("writing model to {}", args.model_out.display()))?;
    eprintln!("# wrote model to {}", args.model_out.display());

    let report_json = serde_json::to_string_pretty(&outcome.report)?;
    match &args.report_out {
        Some(path) => {
            std::fs::write(path, report_json + "\n")
                .with_context(|| format!("writing report to {}", path.display()))?;
            eprintln!("# wrote report to {}", path.display());
        }
        None => println!("{report_json}"),
    }
    Ok(())
}

fn cmd_compose(args: ComposeArgs) -> Result<()> {
    print_header(&[&args.model, &args.embeddings], None)?;
    let model = load_model_file(&args.model)?;
    let words = load_words(&args.embeddings)?;
    let tokens = TaggedWord::parse_sequence(&args.phrase)?;
    let vector = model.compose_tokens(&tokens, &words)?;
    let rendered: Vec<String> = vector.iter().map(|v| format!("{v:.6}")).collect();
    println!("{}", rendered.join(" "));
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    print_header(&[&args.model, &args.embeddings], None)?;
    let model = load_model_file(&args.model)?;
    let words = load_words(&args.embeddings)?;
    match args.mode {
        Mode::Type => {
            let phrase = args
                .phrase
                .as_deref()
                .context("type mode needs --phrase")?;
            let tokens = TaggedWord::parse_sequence(phrase)?;
            let score = score_type_level(&model, &tokens, args.alpha, &words)?;
            println!("{score:.6}");
        }
        Mode::Token => {
            let sentence = args
                .sentence
                .as_deref()
                .context("token mode needs --sentence")?;
            let (start, end) = match (args.start, args.end) {
                (Some(s), Some(e)) => (s, e),
                _ => bail!("token mode needs --start and --end"),
            };
            let contexts =
                resolve_contexts(&words, &args.contexts, args.allow_word_vectors_as_context)?;
            let tokens = TaggedWord::parse_sequence(sentence)?;
            let cfg = TokenScoreConfig {
                window: args.window,
                summary: args.summary,
            };
            let scored = score_occurrence(&model, &tokens, (start, end), &words, &contexts, &cfg)?;
            eprintln!(
                "# context words used: {}/{}",
                scored.n_context_used, scored.n_context_total
            );
            println!("{:.6}", scored.score);
        }
    }
    Ok(())
}

fn print_correlation(report: &CorrelationReport, json: bool) -> Result<()> {
    if json {
        println!("{}", serde_json::to_string_pretty(report)?);
        return Ok(());
    }
    println!("rho={:.6}", report.rho);
    println!(
        "n_used={} n_total={} n_dropped={} n_excluded_records={}",
        report.n_used, report.n_total, report.n_dropped, report.n_excluded_records
    );
    if !report.excluded_annotators.is_empty() {
        println!(
            "excluded_annotators={}",
            report.excluded_annotators.join(",")
        );
    }
    Ok(())
}

fn cmd_eval_sim(args: EvalSimArgs) -> Result<()> {
    print_header(&[&args.model, &args.embeddings, &args.dataset], None)?;
    let model = load_model_file(&args.model)?;
    let words = load_words(&args.embeddings)?;
    let records = load_similarity_csv(&args.dataset)
        .with_context(|| format!("loading dataset from {}", args.dataset.display()))?;
    let report = eval_similarity(&model, &records, &words)?;
    print_correlation(&report, args.json)
}

fn cmd_eval_comp(args: EvalCompArgs) -> Result<()> {
    print_header(&[&args.model, &args.embeddings, &args.dataset], None)?;
    let model = load_model_file(&args.model)?;
    let words = load_words(&args.embeddings)?;
    let records = load_compositionality_jsonl(&args.dataset)
        .with_context(|| format!("loading dataset from {}", args.dataset.display()))?;
    let (mode, contexts) = match args.mode {
        Mode::Type => (CompScoreMode::Type { alpha: args.alpha }, None),
        Mode::Token => {
            let contexts =
                resolve_contexts(&words, &args.contexts, args.allow_word_vectors_as_context)?;
            (
                CompScoreMode::Token {
                    window: args.window,
                    aggregate: args.aggregate,
                },
                Some(contexts),
            )
        }
    };
    let report = eval_compositionality(&model, &records, &words, contexts.as_ref(), &mode)?;
    print_correlation(&report, args.json)
}

fn cmd_dump_params(args: DumpParamsArgs) -> Result<()> {
    print_header(&[&args.model], None)?;
    let model = load_model_file(&args.model)?;
    let keys: Vec<PosPairKey> = match args.key {
        Some(key) => vec![key],
        None => PosPairKey::ALL.to_vec(),
    };
    let stdout = std::io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    writeln!(out, "key,row,col,value")?;
    match &model {
        CompositionModel::Add | CompositionModel::Mult1 => {
            eprintln!("# model {} has no parameters", model.variant_name());
        }
        CompositionModel::Mult2 { scale } => {
            for (i, v) in scale.iter().enumerate() {
                writeln!(out, "scale,{i},0,{v}")?;
            }
        }
        CompositionModel::Concat(params) => {
            for key in keys {
                let block = params.block(key);
                for ((i, j), v) in block.indexed_iter() {
                    writeln!(out, "{key},{i},{j},{v}")?;
                }
            }
        }
        CompositionModel::Tensor(params) => {
            // Tensor blocks are flattened plane by plane: the CSV column is
            // j*N + k for entry W[i][j][k].
            for key in keys {
                let block = params.block(key);
                let n = block.shape()[1];
                for ((i, j, k), v) in block.indexed_iter() {
                    writeln!(out, "{key},{i},{},{v}", j * n + k)?;
                }
            }
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_annotate(args: AnnotateArgs) -> Result<()> {
    let mut inputs: Vec<&Path> = vec![&args.model, &args.embeddings, &args.rules, &args.lexicon];
    if let Some(corpus) = &args.corpus {
        inputs.push(corpus);
    }
    if let Some(contexts) = &args.contexts {
        inputs.push(contexts);
    }
    print_header(&inputs, None)?;

    let model = load_model_file(&args.model)?;
    let words = load_words(&args.embeddings)?;
    let lexicon = TagLexicon::load(&args.lexicon)
        .with_context(|| format!("loading tag lexicon from {}", args.lexicon.display()))?;
    let rules = BufReader::new(
        File::open(&args.rules)
            .with_context(|| format!("opening rules file {}", args.rules.display()))?,
    );

    // Token mode borrows the corpus and context table, so both live here.
    let token_data = match args.mode {
        Mode::Type => None,
        Mode::Token => {
            let corpus_path = args
                .corpus
                .as_ref()
                .context("token mode needs --corpus with tagged sentences")?;
            let corpus = TokenCorpus::load(corpus_path)
                .with_context(|| format!("loading corpus from {}", corpus_path.display()))?;
            let contexts =
                resolve_contexts(&words, &args.contexts, args.allow_word_vectors_as_context)?;
            Some((corpus, contexts))
        }
    };
    let scorer = match &token_data {
        None => GrammarScorer::Type { alpha: args.alpha },
        Some((corpus, contexts)) => GrammarScorer::Token {
            corpus,
            contexts,
            window: args.window,
        },
    };

    let stats = match &args.out {
        Some(path) => {
            let mut out = BufWriter::new(
                File::create(path)
                    .with_context(|| format!("creating output file {}", path.display()))?,
            );
            let stats = annotate_grammar(rules, &mut out, &model, &words, &lexicon, &scorer)?;
            out.flush()?;
            stats
        }
        None => {
            let stdout = std::io::stdout();
            let mut out = BufWriter::new(stdout.lock());
            let stats = annotate_grammar(rules, &mut out, &model, &words, &lexicon, &scorer)?;
            out.flush()?;
            stats
        }
    };
    eprintln!(
        "# lines={} scored={} unscored={} malformed={}",
        stats.lines, stats.scored, stats.unscored, stats.malformed
    );
    Ok(())
}
