//! The `sessgraph` command line: preprocess, neighbors, graph, train,
//! evaluate and recommend.
//!
//! Settings resolve as CLI flag > `--config` file > built-in default and
//! are written as `run_config.json` into every output directory. Passing
//! that file back through `--config` repeats the run. Reports go to stdout
//! as JSON, diagnostics to stderr. Exit codes: 0 success, 1 usage error,
//! 2 runtime failure.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{
    filter_corpus, ingest_events, load_corpus, read_events, save_corpus, split_by_time, take_recent_fraction, Column,
    ColumnMap, Fraction, ItemIdx, ItemVocab, RowFilter, SessionCorpus,
};
use crate::encoders::{Model, Variant};
use crate::error::Error;
use crate::graphs::{build_inter_graph, build_intra_graph};
use crate::neighbors::{InvertedIndex, LengthNorm};
use crate::trainer::{self, ItemKnn, Popularity, Recommender, TrainConfig};

/// Default corpus directory when neither `--corpus` nor the config names one.
pub const DATA_DIR_ENV: &str = "SESSGRAPH_DATA_DIR";
pub const RUN_CONFIG_FILE: &str = "run_config.json";

#[derive(Debug, Parser)]
#[command(name = "sessgraph", version, about = "Session-based next-item recommendation")]
pub struct Cli {
    /// RNG seed for initialization and shuffling.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// JSON run configuration; see `run_config.json` in any output directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Clean, split and persist a click log.
    Preprocess(PreprocessArgs),
    /// Retrieve the neighbor sessions of a session.
    Neighbors(NeighborsArgs),
    /// Print a session's graphs as JSON.
    Graph(GraphArgs),
    /// Train a model; writes checkpoints and log.jsonl.
    Train(TrainArgs),
    /// Recall@N / MRR@N on the test partition.
    Evaluate(EvaluateArgs),
    /// Top items for a session.
    Recommend(RecommendArgs),
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub min_support: Option<u64>,
    #[arg(long)]
    pub min_len: Option<usize>,
    /// Sessions starting within this many days of the last one are test.
    #[arg(long)]
    pub test_days: Option<u64>,
    /// Keep this most recent share of training sessions, e.g. `1/64`.
    #[arg(long)]
    pub fraction: Option<String>,
    /// Session, timestamp and item columns, by index or header name.
    #[arg(long)]
    pub session_column: Option<String>,
    #[arg(long)]
    pub time_column: Option<String>,
    #[arg(long)]
    pub item_column: Option<String>,
    #[arg(long)]
    pub header: bool,
    #[arg(long)]
    pub delimiter: Option<char>,
    /// Keep only rows where `column=value`.
    #[arg(long)]
    pub keep: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct RetrievalArgs {
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub m: Option<usize>,
    /// Normalize similarity by raw click counts instead of distinct items.
    #[arg(long)]
    pub raw_length: bool,
}

#[derive(Debug, Args)]
pub struct NeighborsArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Comma-separated item keys.
    #[arg(long)]
    pub session: String,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
}

#[derive(Debug, Args)]
pub struct GraphArgs {
    /// Comma-separated item keys.
    #[arg(long)]
    pub session: String,
    /// Also build the inter-session graph; needs a corpus.
    #[arg(long)]
    pub with_neighbors: bool,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Model checkpoint; not needed with `--baseline`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "5,10")]
    pub at: Vec<usize>,
    #[arg(long, value_parser = ["sknn", "pop", "itemknn"])]
    pub baseline: Option<String>,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Comma-separated item keys.
    #[arg(long)]
    pub session: String,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
}

/// Preprocessing settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub min_support: u64,
    pub min_len: usize,
    pub test_days: u64,
    pub fraction: Option<String>,
    pub session_column: String,
    pub time_column: String,
    pub item_column: String,
    pub header: bool,
    pub delimiter: char,
    pub keep: Option<String>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            min_support: 5,
            min_len: 2,
            test_days: 1,
            fraction: None,
            session_column: "0".into(),
            time_column: "1".into(),
            item_column: "2".into(),
            header: false,
            delimiter: ',',
            keep: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub input: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

/// Every setting of a run, fully resolved.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub paths: Paths,
    pub preprocess: PreprocessConfig,
    /// Model, retrieval and optimization settings.
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("--config {}: {e}", path.display())))
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), CliError> {
        fs::create_dir_all(dir).map_err(Error::from)?;
        fs::write(dir.join(RUN_CONFIG_FILE), serde_json::to_string_pretty(self).map_err(Error::from)?).map_err(Error::from)?;
        Ok(())
    }

    fn apply_retrieval(&mut self, a: &RetrievalArgs) {
        let r = &mut self.train.retrieval;
        set(&mut r.k, a.k);
        set(&mut r.threshold, a.threshold);
        set(&mut r.m, a.m);
        if a.raw_length {
            r.length_norm = LengthNorm::Raw;
        }
    }

    fn corpus_dir(&self) -> Result<PathBuf, CliError> {
        self.paths
            .corpus
            .clone()
            .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
            .ok_or_else(|| CliError::Usage(format!("missing required flag --corpus (or set {DATA_DIR_ENV})")))
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Run(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Run(Error::InvalidArgument(_) | Error::InvalidConfig(_)) => 1,
            CliError::Run(_) => 2,
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("reports serialize"));
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command and returns its JSON report.
pub fn dispatch(cli: Cli) -> Result<serde_json::Value, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => implicit_config(&cli.command)?,
    };
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.threads, cli.threads);
    cfg.train.seed = cfg.seed;
    cfg.train.workers = cfg.threads;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    pool.install(|| match cli.command {
        Command::Preprocess(a) => preprocess(cfg, a),
        Command::Neighbors(a) => neighbors(cfg, a),
        Command::Graph(a) => graph(cfg, a),
        Command::Train(a) => train(cfg, a),
        Command::Evaluate(a) => evaluate(cfg, a),
        Command::Recommend(a) => recommend(cfg, a),
    })
}

/// Without `--config`, commands that read a checkpoint pick up the
/// `run_config.json` written next to it.
fn implicit_config(cmd: &Command) -> Result<RunConfig, CliError> {
    let ckpt = match cmd {
        Command::Evaluate(a) => a.checkpoint.as_deref(),
        Command::Recommend(a) => Some(a.checkpoint.as_path()),
        _ => None,
    };
    match ckpt.and_then(Path::parent).map(|d| d.join(RUN_CONFIG_FILE)) {
        Some(p) if p.is_file() => {
            log::info!("using settings from {}", p.display());
            RunConfig::load(&p)
        }
        _ => Ok(RunConfig::default()),
    }
}

fn preprocess(mut cfg: RunConfig, a: PreprocessArgs) -> Result<serde_json::Value, CliError> {
    set(&mut cfg.paths.input, a.input.map(Some));
    set(&mut cfg.paths.out, a.output.map(Some));
    let p = &mut cfg.preprocess;
    set(&mut p.min_support, a.min_support);
    set(&mut p.min_len, a.min_len);
    set(&mut p.test_days, a.test_days);
    set(&mut p.fraction, a.fraction.map(Some));
    set(&mut p.session_column, a.session_column);
    set(&mut p.time_column, a.time_column);
    set(&mut p.item_column, a.item_column);
    set(&mut p.delimiter, a.delimiter);
    set(&mut p.keep, a.keep.map(Some));
    p.header |= a.header;
    let input = cfg.paths.input.clone().ok_or_else(|| CliError::Usage("missing required flag --input".into()))?;
    let out = cfg.paths.out.clone().ok_or_else(|| CliError::Usage("missing required flag --output".into()))?;
    let p = &cfg.preprocess;
    let fraction = p
        .fraction
        .as_deref()
        .map(str::parse::<Fraction>)
        .transpose()
        .map_err(|e| CliError::Usage(format!("--fraction: {e}")))?;
    if !p.delimiter.is_ascii() {
        return Err(CliError::Usage("--delimiter must be a single ASCII character".into()));
    }
    let filter = match &p.keep {
        None => None,
        Some(kv) => {
            let (c, v) = kv.split_once('=').ok_or_else(|| CliError::Usage("--keep expects column=value".into()))?;
            Some(RowFilter {
                column: c.parse().expect("infallible"),
                value: v.to_string(),
            })
        }
    };
    let map = ColumnMap {
        session: p.session_column.parse::<Column>().expect("infallible"),
        timestamp: p.time_column.parse().expect("infallible"),
        item: p.item_column.parse().expect("infallible"),
        has_header: p.header,
        delimiter: p.delimiter as u8,
        filter,
    };
    let file = File::open(&input).map_err(|e| CliError::Usage(format!("--input {}: {e}", input.display())))?;
    let raw = ingest_events(read_events(BufReader::new(file), &map)?)?;
    let filtered = filter_corpus(&raw, p.min_len, p.min_support)?;
    let mut corpus = split_by_time(&filtered, (p.test_days * 86_400) as i64)?;
    if let Some(f) = fraction {
        corpus = take_recent_fraction(&corpus, f);
    }
    save_corpus(&corpus, &out)?;
    cfg.write_to(&out)?;
    Ok(json!({
        "output": out,
        "sessions": corpus.sessions.len(),
        "train_sessions": corpus.train().len(),
        "test_sessions": corpus.test().len(),
        "items": corpus.num_items(),
        "train_examples": corpus.training_examples().len(),
        "test_examples": corpus.test_examples().len(),
    }))
}

/// Maps comma-separated keys through `vocab`, skipping unknown ones.
fn parse_session(raw: &str, vocab: &ItemVocab) -> Result<Vec<ItemIdx>, CliError> {
    let mut items = Vec::new();
    for key in raw.split(',').map(str::trim).filter(|k| !k.is_empty()) {
        match vocab.get(key) {
            Some(i) => items.push(i),
            None => log::warn!("item {key:?} is not in the vocabulary; skipped"),
        }
    }
    if items.is_empty() {
        return Err(CliError::Usage("--session has no known items".into()));
    }
    Ok(items)
}

fn load(cfg: &mut RunConfig, flag: Option<PathBuf>) -> Result<SessionCorpus, CliError> {
    set(&mut cfg.paths.corpus, flag.map(Some));
    Ok(load_corpus(&cfg.corpus_dir()?)?)
}

fn neighbors(mut cfg: RunConfig, a: NeighborsArgs) -> Result<serde_json::Value, CliError> {
    cfg.apply_retrieval(&a.retrieval);
    let corpus = load(&mut cfg, a.corpus)?;
    let prefix = parse_session(&a.session, &corpus.vocab)?;
    let set = InvertedIndex::build(&corpus).neighbors(&prefix, i64::MAX, &cfg.train.retrieval);
    Ok(json!(set
        .iter()
        .map(|n| json!({"session": n.session, "similarity": n.similarity}))
        .collect::<Vec<_>>()))
}

fn graph(mut cfg: RunConfig, a: GraphArgs) -> Result<serde_json::Value, CliError> {
    cfg.apply_retrieval(&a.retrieval);
    let corpus = if a.with_neighbors || a.corpus.is_some() || cfg.paths.corpus.is_some() {
        Some(load(&mut cfg, a.corpus)?)
    } else {
        None
    };
    let (prefix, vocab) = match &corpus {
        Some(c) => (parse_session(&a.session, &c.vocab)?, c.vocab.clone()),
        None => {
            let mut v = ItemVocab::new();
            let items: Vec<ItemIdx> = a.session.split(',').map(str::trim).filter(|k| !k.is_empty()).map(|k| v.intern(k)).collect();
            if items.is_empty() {
                return Err(CliError::Usage("--session is empty".into()));
            }
            (items, v)
        }
    };
    let keys = |items: &[ItemIdx]| items.iter().map(|&i| vocab.key(i).to_string()).collect::<Vec<_>>();
    let rows = |t: &gradkit::Tensor| (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect::<Vec<_>>();
    let g = build_intra_graph(&prefix);
    let mut report = json!({
        "intra": {
            "nodes": keys(&g.node_items),
            "alias": g.alias,
            "a_out": rows(&g.a_out),
            "a_in": rows(&g.a_in),
        }
    });
    if a.with_neighbors {
        let c = corpus.as_ref().expect("loaded above");
        let set = InvertedIndex::build(c).neighbors(&prefix, i64::MAX, &cfg.train.retrieval);
        let seqs: Vec<&[ItemIdx]> = set.iter().map(|n| c.session(n.session).items.as_slice()).collect();
        let ig = build_inter_graph(&prefix, &seqs);
        let edges: Vec<[usize; 2]> = ig
            .adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, adj)| adj.iter().filter(move |&&j| i < j).map(move |&j| [i, j]))
            .collect();
        report["inter"] = json!({
            "nodes": keys(&ig.node_items),
            "edges": edges,
            "session_slots": ig.session_slots,
            "neighbors": set.iter().map(|n| json!({"session": n.session, "similarity": n.similarity})).collect::<Vec<_>>(),
        });
    }
    Ok(report)
}

fn train(mut cfg: RunConfig, a: TrainArgs) -> Result<serde_json::Value, CliError> {
    cfg.apply_retrieval(&a.retrieval);
    set(&mut cfg.paths.out, a.out.map(Some));
    let t = &mut cfg.train;
    set(&mut t.epochs, a.epochs);
    set(&mut t.batch_size, a.batch_size);
    set(&mut t.lr, a.lr);
    set(&mut t.patience, a.patience);
    set(&mut t.model.d, a.d);
    set(&mut t.model.heads, a.heads);
    set(&mut t.model.variant, a.variant);
    let corpus = load(&mut cfg, a.corpus)?;
    let out = cfg.paths.out.clone().ok_or_else(|| CliError::Usage("missing required flag --out".into()))?;
    cfg.train.validate()?;
    cfg.train.model.num_items = corpus.num_items();
    cfg.write_to(&out)?;
    let outcome = trainer::train(&corpus, &cfg.train, Some(&out))?;
    let best = out.join("model.ckpt");
    outcome.model.save(&best)?;
    Ok(json!({
        "out": out,
        "epochs_run": outcome.log.len(),
        "best_epoch": outcome.best_epoch,
        "checkpoint": best,
        "log": outcome.log,
    }))
}

fn evaluate(mut cfg: RunConfig, a: EvaluateArgs) -> Result<serde_json::Value, CliError> {
    cfg.apply_retrieval(&a.retrieval);
    set(&mut cfg.paths.checkpoint, a.checkpoint.map(Some));
    let corpus = load(&mut cfg, a.corpus)?;
    let model;
    let rec = match a.baseline.as_deref() {
        Some("pop") => Recommender::Pop(Popularity::fit(&corpus)),
        Some("sknn") => Recommender::Sknn,
        Some("itemknn") => Recommender::ItemKnn(ItemKnn::fit(&corpus)),
        _ => {
            let path = cfg.paths.checkpoint.clone().ok_or_else(|| CliError::Usage("missing required flag --checkpoint (or --baseline)".into()))?;
            model = load_model(&path, &corpus)?;
            Recommender::Model(&model)
        }
    };
    let report = trainer::evaluate(&rec, &corpus, &cfg.train.retrieval, &a.at)?;
    Ok(serde_json::to_value(report).map_err(Error::from)?)
}

fn load_model(path: &Path, corpus: &SessionCorpus) -> Result<Model, CliError> {
    let model = Model::load(path)?;
    if model.config().num_items != corpus.num_items() {
        return Err(CliError::Usage(format!(
            "checkpoint has {} items but the corpus has {}",
            model.config().num_items,
            corpus.num_items()
        )));
    }
    Ok(model)
}

fn recommend(mut cfg: RunConfig, a: RecommendArgs) -> Result<serde_json::Value, CliError> {
    cfg.apply_retrieval(&a.retrieval);
    let corpus = load(&mut cfg, a.corpus)?;
    let model = load_model(&a.checkpoint, &corpus)?;
    let prefix = parse_session(&a.session, &corpus.vocab)?;
    let index = InvertedIndex::build(&corpus);
    let top = trainer::recommend(&Recommender::Model(&model), &corpus, &index, &cfg.train.retrieval, &prefix, a.top)?;
    Ok(json!(top
        .into_iter()
        .map(|(i, s)| json!({"item": corpus.vocab.key(i), "score": s}))
        .collect::<Vec<_>>()))
}
