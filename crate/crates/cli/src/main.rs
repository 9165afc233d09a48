//! `lcerank` command-line driver.
//!
//! Every subcommand writes its data artifact to the declared path and a
//! `<output>.config` sidecar listing the effective settings and the SHA-256
//! of each input and output. Diagnostics go to stderr.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use lcerank::corpus_io::{
    load_corpus, load_qrels, load_queries, read_run, write_corpus, write_qrels, write_queries, write_run, CorpusFormat,
};
use lcerank::evaluation::{mrr_at_k, paired_t_test, rerank_all, EvalReport};
use lcerank::experiments::{
    crosspair_experiment, generate_synth, group_size_sweep, parse_profiles, Benchmark, Manifest, PipelineConfig,
    SynthConfig,
};
use lcerank::inverted_index::InvertedIndex;
use lcerank::reranker::{load_model, save_model};
use lcerank::retrieval::{retrieve_all, RetrieverConfig, RetrieverKind, DEFAULT_TOP_K};
use lcerank::text_analysis::AnalyzerConfig;
use lcerank::training::{train, Objective, SamplerConfig, TrainConfig};

#[derive(Parser)]
#[command(name = "lcerank", version, about = "Two-stage retrieval with trainable rerankers")]
struct Cli {
    /// Worker threads. Outputs do not depend on this.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an inverted index from a `doc_id<TAB>title<TAB>url<TAB>body` corpus.
    Index(IndexArgs),
    /// Run a first-stage retriever over a query file.
    Retrieve(RetrieveArgs),
    /// Train a reranker on a first-stage run.
    Train(TrainArgs),
    /// Rescore a run with a trained reranker.
    Rerank(RerankArgs),
    /// Score a run with MRR@k.
    Eval(EvalArgs),
    /// Paired t-test between two evaluation reports.
    Ttest(TtestArgs),
    /// Generate a synthetic benchmark.
    Synth(SynthArgs),
    /// LCE group-size sweep on a synthetic benchmark.
    Sweep(SweepArgs),
    /// Train/test retriever cross-pairing on a synthetic benchmark.
    Crosspair(CrosspairArgs),
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value = "tsv4")]
    corpus_format: String,
    /// Keep case instead of lowercasing.
    #[arg(long)]
    keep_case: bool,
    /// File with one stopword per line.
    #[arg(long)]
    stopwords: Option<PathBuf>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value = "bm25")]
    retriever: RetrieverKind,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Required by `oracle_mix`.
    #[arg(long)]
    qrels: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    /// Model file; the training log goes to `<output>.log.csv`.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value = "lce")]
    objective: Objective,
    #[command(flatten)]
    train: TrainFlags,
    /// Seeds both parameter initialization and negative sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    warmup_portion: Option<f64>,
    #[arg(long)]
    batch_queries: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    group_size: Option<usize>,
    /// Depth of the candidate pool negatives come from.
    #[arg(long)]
    pool_depth: Option<usize>,
    /// Draw negatives once instead of every epoch.
    #[arg(long)]
    fixed_negatives: bool,
}

impl TrainFlags {
    fn apply(&self, train: &mut TrainConfig, sampler: &mut SamplerConfig) {
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(train.epochs, self.epochs);
        set!(train.learning_rate, self.learning_rate);
        set!(train.warmup_portion, self.warmup_portion);
        set!(train.batch_queries, self.batch_queries);
        set!(train.hidden, self.hidden);
        set!(sampler.group_size, self.group_size);
        set!(sampler.m, self.pool_depth);
        if self.fixed_negatives {
            sampler.resample_each_epoch = false;
        }
    }
}

#[derive(Args)]
struct RerankArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    depth: usize,
    #[arg(long, default_value = "rerank")]
    tag: String,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Per-query report CSV.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    k: usize,
}

#[derive(Args)]
struct TtestArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    /// Optional `t,p,n,mean_difference` CSV.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SynthFlags {
    #[arg(long)]
    n_queries: Option<usize>,
    #[arg(long)]
    n_docs: Option<usize>,
    #[arg(long)]
    min_query_terms: Option<usize>,
    #[arg(long)]
    max_query_terms: Option<usize>,
    #[arg(long)]
    background_vocab: Option<usize>,
    #[arg(long)]
    confounder_strength: Option<f64>,
    #[arg(long)]
    relevant_per_query: Option<usize>,
    #[arg(long)]
    min_doc_length: Option<usize>,
    #[arg(long)]
    max_doc_length: Option<usize>,
    #[arg(long)]
    length_spread: Option<f64>,
    #[arg(long)]
    relevance_noise: Option<f64>,
    #[arg(long)]
    max_term_rate: Option<f64>,
    #[arg(long)]
    relevant_rate: Option<f64>,
    /// `name:weight:rate:length:all|subset` entries separated by `;`.
    #[arg(long)]
    confounders: Option<String>,
}

impl SynthFlags {
    fn apply(&self, cfg: &mut SynthConfig) -> Result<()> {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field {
                    cfg.$field = v;
                })*
            };
        }
        set!(
            n_queries,
            n_docs,
            min_query_terms,
            max_query_terms,
            background_vocab,
            confounder_strength,
            relevant_per_query,
            min_doc_length,
            max_doc_length,
            length_spread,
            relevance_noise,
            max_term_rate,
            relevant_rate
        );
        if let Some(text) = &self.confounders {
            cfg.confounders = parse_profiles(text)?;
        }
        Ok(())
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Directory receiving corpus.tsv, queries.tsv and qrels.txt.
    #[arg(long)]
    output: PathBuf,
    #[command(flatten)]
    synth: SynthFlags,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchFlags {
    #[command(flatten)]
    synth: SynthFlags,
    #[command(flatten)]
    train: TrainFlags,
    /// Benchmark generation seed. Training seeds come from `--seeds`.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    /// Leading queries used for training; the rest are dev.
    #[arg(long)]
    train_queries: Option<usize>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    depth: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
}

impl BenchFlags {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        self.synth.apply(&mut cfg.synth)?;
        cfg.synth.seed = self.seed;
        self.train.apply(&mut cfg.train, &mut cfg.sampler);
        if let Some(v) = self.train_queries {
            cfg.train_queries = v;
        }
        if let Some(v) = self.top_k {
            cfg.retriever_top_k = v;
        }
        if let Some(v) = self.alpha {
            cfg.oracle_alpha = v;
        }
        if let Some(v) = self.depth {
            cfg.rerank_depth = v;
        }
        if let Some(v) = self.k {
            cfg.eval_k = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SweepArgs {
    /// `group_size,seed,mrr` CSV.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value = "bm25_tuned")]
    retriever: RetrieverKind,
    #[arg(long, value_delimiter = ',', default_value = "2,4,8")]
    sizes: Vec<usize>,
    #[command(flatten)]
    bench: BenchFlags,
}

#[derive(Args)]
struct CrosspairArgs {
    /// `objective,train_retriever,test_retriever,mrr,p_vs_diagonal` CSV.
    #[arg(long)]
    output: PathBuf,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "ql_dirichlet,bm25,bm25_tuned,oracle_mix"
    )]
    retrievers: Vec<RetrieverKind>,
    #[arg(long, value_delimiter = ',', default_value = "vanilla,lce")]
    objectives: Vec<Objective>,
    #[command(flatten)]
    bench: BenchFlags,
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Records the hash of each file under its role name.
fn hash_files(manifest: &mut Manifest, files: &[(&str, &Path)]) -> Result<()> {
    for (name, path) in files {
        manifest.hash(name, &read_bytes(path)?);
    }
    Ok(())
}

fn finish(manifest: &Manifest, output: &Path) -> Result<()> {
    let path = sidecar(output, ".config");
    manifest.write(&path)?;
    log::info!("wrote {} and {}", output.display(), path.display());
    Ok(())
}

fn command_manifest(name: &str) -> Manifest {
    let mut m = Manifest::new();
    m.set("command", name);
    m
}

fn cmd_index(a: &IndexArgs) -> Result<()> {
    let format: CorpusFormat = a.corpus_format.parse()?;
    let corpus = load_corpus(&a.corpus, format)?;
    let stopwords: Vec<String> = match &a.stopwords {
        Some(p) => std::fs::read_to_string(p)
            .with_context(|| format!("cannot read {}", p.display()))?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_owned)
            .collect(),
        None => Vec::new(),
    };
    let analyzer = AnalyzerConfig::new(!a.keep_case, &stopwords, None);
    let index = InvertedIndex::build(&corpus, &analyzer)?;
    index.save(&a.output)?;
    log::info!("indexed {} documents, {} terms", index.num_docs(), index.num_terms());

    let mut m = command_manifest("index");
    m.set("corpus_format", &a.corpus_format)
        .set("lowercase", !a.keep_case)
        .set("stopwords", stopwords.len())
        .set("num_docs", index.num_docs())
        .set("num_terms", index.num_terms());
    let mut files = vec![("corpus", a.corpus.as_path())];
    if let Some(p) = &a.stopwords {
        files.push(("stopwords", p.as_path()));
    }
    files.push(("output", a.output.as_path()));
    hash_files(&mut m, &files)?;
    finish(&m, &a.output)
}

fn cmd_retrieve(a: &RetrieveArgs) -> Result<()> {
    let index = InvertedIndex::load(&a.index)?;
    let queries = load_queries(&a.queries)?;
    let qrels = a.qrels.as_deref().map(load_qrels).transpose()?;
    let mut cfg = RetrieverConfig::new(a.retriever).with_top_k(a.top_k);
    if let Some(v) = a.k1 {
        cfg.bm25_k1 = v;
    }
    if let Some(v) = a.b {
        cfg.bm25_b = v;
    }
    if let Some(v) = a.mu {
        cfg.ql_mu = v;
    }
    if let Some(v) = a.alpha {
        cfg.oracle_alpha = v;
    }
    let run = retrieve_all(&index, &queries, &cfg, qrels.as_ref())?;
    write_run(&run, a.retriever.name(), &a.output)?;

    let mut m = command_manifest("retrieve");
    m.set("retriever", cfg.kind)
        .set("top_k", cfg.top_k)
        .set("k1", cfg.bm25_k1)
        .set("b", cfg.bm25_b)
        .set("mu", cfg.ql_mu)
        .set("alpha", cfg.oracle_alpha);
    let mut files = vec![("index", a.index.as_path()), ("queries", a.queries.as_path())];
    if let Some(p) = &a.qrels {
        files.push(("qrels", p.as_path()));
    }
    files.push(("output", a.output.as_path()));
    hash_files(&mut m, &files)?;
    finish(&m, &a.output)
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let index = InvertedIndex::load(&a.index)?;
    let run = read_run(&a.run)?;
    let qrels = load_qrels(&a.qrels)?;
    let queries = load_queries(&a.queries)?;
    let mut train_cfg = TrainConfig {
        objective: a.objective,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let mut sampler_cfg = SamplerConfig {
        seed: a.seed,
        ..SamplerConfig::default()
    };
    a.train.apply(&mut train_cfg, &mut sampler_cfg);
    let (params, log) = train(&index, &run, &qrels, &queries, &train_cfg, &sampler_cfg)?;
    save_model(&params, &a.output)?;
    let log_path = sidecar(&a.output, ".log.csv");
    log.write_csv(&log_path)?;

    let mut m = command_manifest("train");
    m.set("objective", train_cfg.objective)
        .set("epochs", train_cfg.epochs)
        .set("learning_rate", train_cfg.learning_rate)
        .set("warmup_portion", train_cfg.warmup_portion)
        .set("batch_queries", train_cfg.batch_queries)
        .set("adam_beta1", train_cfg.adam_beta1)
        .set("adam_beta2", train_cfg.adam_beta2)
        .set("adam_epsilon", train_cfg.adam_epsilon)
        .set("hidden", train_cfg.hidden)
        .set("group_size", sampler_cfg.group_size)
        .set("pool_depth", sampler_cfg.m)
        .set("resample_each_epoch", sampler_cfg.resample_each_epoch)
        .set("seed", a.seed);
    hash_files(
        &mut m,
        &[
            ("index", &a.index),
            ("run", &a.run),
            ("qrels", &a.qrels),
            ("queries", &a.queries),
            ("output", &a.output),
            ("log", &log_path),
        ],
    )?;
    finish(&m, &a.output)
}

fn cmd_rerank(a: &RerankArgs) -> Result<()> {
    let params = load_model(&a.model)?;
    let index = InvertedIndex::load(&a.index)?;
    let queries = load_queries(&a.queries)?;
    let run = read_run(&a.run)?;
    let reranked = rerank_all(&params, &index, &queries, &run, a.depth, &a.tag)?;
    let tag = reranked.first().map_or(a.tag.clone(), |r| r.tag.clone());
    write_run(&reranked, &tag, &a.output)?;

    let mut m = command_manifest("rerank");
    m.set("depth", a.depth).set("tag", &a.tag);
    hash_files(
        &mut m,
        &[
            ("model", &a.model),
            ("index", &a.index),
            ("queries", &a.queries),
            ("run", &a.run),
            ("output", &a.output),
        ],
    )?;
    finish(&m, &a.output)
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let run = read_run(&a.run)?;
    let qrels = load_qrels(&a.qrels)?;
    let tag = run.first().map_or("run", |r| r.tag.as_str());
    let report = mrr_at_k(&run, &qrels, a.k, tag);
    report.write_csv(&a.output)?;
    println!("MRR@{} {:.6}", a.k, report.mrr);

    let mut m = command_manifest("eval");
    m.set("k", a.k).set("num_queries", report.num_queries());
    hash_files(&mut m, &[("run", &a.run), ("qrels", &a.qrels), ("output", &a.output)])?;
    finish(&m, &a.output)
}

fn cmd_ttest(a: &TtestArgs) -> Result<()> {
    let ra = EvalReport::read_csv(&a.a)?;
    let rb = EvalReport::read_csv(&a.b)?;
    let t = paired_t_test(&ra, &rb)?;
    println!("t {} p {}", t.t, t.p);
    if let Some(out) = &a.output {
        let text = format!("t,p,n,mean_difference\n{},{},{},{}\n", t.t, t.p, t.n, t.mean_difference);
        write_bytes(out, text.as_bytes())?;
        let mut m = command_manifest("ttest");
        hash_files(&mut m, &[("a", &a.a), ("b", &a.b), ("output", out)])?;
        finish(&m, out)?;
    }
    Ok(())
}

fn synth_manifest(m: &mut Manifest, cfg: &PipelineConfig) {
    m.extend(cfg.describe());
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let mut cfg = PipelineConfig::default();
    a.synth.apply(&mut cfg.synth)?;
    cfg.synth.seed = a.seed;
    let data = generate_synth(&cfg.synth)?;
    std::fs::create_dir_all(&a.output).with_context(|| format!("cannot create {}", a.output.display()))?;
    let corpus = a.output.join("corpus.tsv");
    let queries = a.output.join("queries.tsv");
    let qrels = a.output.join("qrels.txt");
    write_corpus(&data.corpus, &corpus)?;
    write_queries(&data.queries, &queries)?;
    write_qrels(&data.qrels, &qrels)?;

    let mut m = command_manifest("synth");
    m.extend(cfg.describe().into_iter().filter(|(k, _)| k.starts_with("synth.")));
    hash_files(&mut m, &[("corpus", &corpus), ("queries", &queries), ("qrels", &qrels)])?;
    finish(&m, &a.output)
}

fn cmd_sweep(a: &SweepArgs) -> Result<()> {
    let cfg = a.bench.config()?;
    let bench = Benchmark::prepare(&cfg, &[a.retriever])?;
    let result = group_size_sweep(&bench, a.retriever, &a.sizes, &a.bench.seeds)?;
    write_bytes(&a.output, result.to_csv().as_bytes())?;
    for (g, (mean, std)) in result.summary() {
        eprintln!("group size {g}: MRR@{} mean {mean:.6} std {std:.6}", cfg.eval_k);
    }

    let mut m = command_manifest("sweep");
    synth_manifest(&mut m, &cfg);
    m.set("retriever", a.retriever)
        .set("sizes", join(&a.sizes))
        .set("seeds", join(&a.bench.seeds));
    hash_files(&mut m, &[("output", &a.output)])?;
    finish(&m, &a.output)
}

fn cmd_crosspair(a: &CrosspairArgs) -> Result<()> {
    let cfg = a.bench.config()?;
    let bench = Benchmark::prepare(&cfg, &a.retrievers)?;
    let result = crosspair_experiment(&bench, &a.retrievers, &a.objectives, &a.bench.seeds)?;
    write_bytes(&a.output, result.to_csv().as_bytes())?;
    for &o in &a.objectives {
        eprintln!("{o}: rows train, columns test");
        for &tr in &a.retrievers {
            let row: Vec<String> = a
                .retrievers
                .iter()
                .map(|&te| format!("{:.4}", result.cell(o, tr, te).map_or(f64::NAN, |c| c.mrr)))
                .collect();
            eprintln!("  {:>12} {}", tr.name(), row.join(" "));
        }
    }

    let mut m = command_manifest("crosspair");
    synth_manifest(&mut m, &cfg);
    m.set("retrievers", join(&a.retrievers))
        .set("objectives", join(&a.objectives))
        .set("seeds", join(&a.bench.seeds));
    hash_files(&mut m, &[("output", &a.output)])?;
    finish(&m, &a.output)
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn run(cli: &Cli) -> Result<()> {
    if cli.threads == 0 {
        bail!("--threads must be at least 1");
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build()
        .context("cannot start thread pool")?;
    pool.install(|| match &cli.command {
        Command::Index(a) => cmd_index(a),
        Command::Retrieve(a) => cmd_retrieve(a),
        Command::Train(a) => cmd_train(a),
        Command::Rerank(a) => cmd_rerank(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ttest(a) => cmd_ttest(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Crosspair(a) => cmd_crosspair(a),
    })
}

/// Joins the cause chain, skipping causes a parent already quoted.
fn describe_error(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe_error(&e));
            ExitCode::FAILURE
        }
    }
}
