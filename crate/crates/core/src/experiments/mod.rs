//! Benchmark pipeline and the two reranker analyses built on it: the LCE
//! group-size sweep and the train/test retriever cross-pairing matrix.

mod synth;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

pub use synth::{generate_synth, ConfounderProfile, Coverage, SynthConfig, SynthData};

use crate::corpus_io::{QrelSet, Query};
use crate::error::{Error, Result};
use crate::evaluation::{mrr_at_k, paired_t_test_differences, rerank_all, EvalReport};
use crate::inverted_index::InvertedIndex;
use crate::reranker::ScorerParams;
use crate::retrieval::{retrieve_all, Ranking, RetrieverConfig, RetrieverKind, DEFAULT_TOP_K};
use crate::text_analysis::AnalyzerConfig;
use crate::training::{train, Objective, SamplerConfig, TrainConfig, TrainingLog};

/// Everything that determines a benchmark cell apart from the cell's own
/// objective, retrievers, group size and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub synth: SynthConfig,
    /// The first `train_queries` queries train; the rest form the dev split.
    pub train_queries: usize,
    pub retriever_top_k: usize,
    pub oracle_alpha: f64,
    pub sampler: SamplerConfig,
    pub train: TrainConfig,
    pub rerank_depth: usize,
    pub eval_k: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let train = TrainConfig {
            epochs: 20,
            learning_rate: 5e-3,
            ..TrainConfig::default()
        };
        PipelineConfig {
            synth: SynthConfig::default(),
            train_queries: 250,
            retriever_top_k: DEFAULT_TOP_K,
            oracle_alpha: 10.0,
            sampler: SamplerConfig::default(),
            train,
            rerank_depth: DEFAULT_TOP_K,
            eval_k: DEFAULT_TOP_K,
        }
    }
}

impl PipelineConfig {
    pub fn retriever(&self, kind: RetrieverKind) -> RetrieverConfig {
        let mut cfg = RetrieverConfig::new(kind).with_top_k(self.retriever_top_k);
        cfg.oracle_alpha = self.oracle_alpha;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        if self.train_queries == 0 || self.train_queries >= self.synth.n_queries {
            return Err(Error::Config(format!(
                "train split of {} leaves no dev queries out of {}",
                self.train_queries, self.synth.n_queries
            )));
        }
        if self.rerank_depth == 0 || self.eval_k == 0 {
            return Err(Error::Config("rerank depth and eval cutoff must be positive".into()));
        }
        self.sampler.validate()?;
        self.train.validate()?;
        for kind in RetrieverKind::ALL {
            self.retriever(kind).validate()?;
        }
        Ok(())
    }

    /// Flat `key=value` lines describing every setting.
    pub fn describe(&self) -> Vec<(String, String)> {
        let s = &self.synth;
        let t = &self.train;
        let kv = |k: &str, v: String| (k.to_owned(), v);
        vec![
            kv("synth.n_queries", s.n_queries.to_string()),
            kv("synth.n_docs", s.n_docs.to_string()),
            kv("synth.min_query_terms", s.min_query_terms.to_string()),
            kv("synth.max_query_terms", s.max_query_terms.to_string()),
            kv("synth.background_vocab", s.background_vocab.to_string()),
            kv("synth.confounder_strength", s.confounder_strength.to_string()),
            kv("synth.relevant_per_query", s.relevant_per_query.to_string()),
            kv("synth.min_doc_length", s.min_doc_length.to_string()),
            kv("synth.max_doc_length", s.max_doc_length.to_string()),
            kv("synth.length_spread", s.length_spread.to_string()),
            kv("synth.relevance_noise", s.relevance_noise.to_string()),
            kv("synth.max_term_rate", s.max_term_rate.to_string()),
            kv("synth.relevant_rate", s.relevant_rate.to_string()),
            kv("synth.confounders", describe_profiles(&s.confounders)),
            kv("synth.seed", s.seed.to_string()),
            kv("train_queries", self.train_queries.to_string()),
            kv("retriever.top_k", self.retriever_top_k.to_string()),
            kv("retriever.oracle_alpha", self.oracle_alpha.to_string()),
            kv("sampler.m", self.sampler.m.to_string()),
            kv("sampler.group_size", self.sampler.group_size.to_string()),
            kv(
                "sampler.resample_each_epoch",
                self.sampler.resample_each_epoch.to_string(),
            ),
            kv("train.epochs", t.epochs.to_string()),
            kv("train.learning_rate", t.learning_rate.to_string()),
            kv("train.warmup_portion", t.warmup_portion.to_string()),
            kv("train.batch_queries", t.batch_queries.to_string()),
            kv("train.adam_beta1", t.adam_beta1.to_string()),
            kv("train.adam_beta2", t.adam_beta2.to_string()),
            kv("train.adam_epsilon", t.adam_epsilon.to_string()),
            kv("train.hidden", t.hidden.to_string()),
            kv("rerank_depth", self.rerank_depth.to_string()),
            kv("eval_k", self.eval_k.to_string()),
        ]
    }
}

/// `name:weight:rate:length:coverage` entries joined by `;`.
pub fn describe_profiles(profiles: &[ConfounderProfile]) -> String {
    profiles
        .iter()
        .map(|p| {
            let coverage = match p.coverage {
                Coverage::All => "all",
                Coverage::StrictSubset => "subset",
            };
            format!("{}:{}:{}:{}:{coverage}", p.name, p.weight, p.rate, p.length)
        })
        .collect::<Vec<_>>()
        .join(";")
}

/// Parses the format written by [`describe_profiles`].
pub fn parse_profiles(text: &str) -> Result<Vec<ConfounderProfile>> {
    let bad = |entry: &str, why: &str| Error::Config(format!("confounder profile `{entry}`: {why}"));
    text.split(';')
        .filter(|e| !e.trim().is_empty())
        .map(|entry| {
            let parts: Vec<&str> = entry.trim().split(':').collect();
            let [name, weight, rate, length, coverage] = parts[..] else {
                return Err(bad(entry, "expected name:weight:rate:length:coverage"));
            };
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(entry, "non-numeric field"));
            let coverage = match coverage {
                "all" => Coverage::All,
                "subset" => Coverage::StrictSubset,
                _ => return Err(bad(entry, "coverage must be `all` or `subset`")),
            };
            Ok(ConfounderProfile::new(
                name,
                num(weight)?,
                num(rate)?,
                num(length)?,
                coverage,
            ))
        })
        .collect()
}

/// One trained-and-evaluated configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellSpec {
    pub objective: Objective,
    pub train_retriever: RetrieverKind,
    pub group_size: usize,
    pub seed: u64,
}

/// Generated data, its index and first-stage runs for every retriever.
pub struct Benchmark {
    pub config: PipelineConfig,
    pub data: SynthData,
    pub index: InvertedIndex,
    pub train_queries: Vec<Query>,
    pub dev_queries: Vec<Query>,
    runs: BTreeMap<RetrieverKind, Vec<Ranking>>,
}

impl Benchmark {
    /// Generates, indexes and retrieves with `retrievers` (all queries).
    pub fn prepare(config: &PipelineConfig, retrievers: &[RetrieverKind]) -> Result<Self> {
        config.validate()?;
        let data = generate_synth(&config.synth)?;
        let index = InvertedIndex::build(&data.corpus, &AnalyzerConfig::default())?;
        let (train_queries, dev_queries) = data.queries.split_at(config.train_queries);
        let mut runs = BTreeMap::new();
        for &kind in retrievers {
            let run = retrieve_all(&index, &data.queries, &config.retriever(kind), Some(&data.qrels))?;
            runs.insert(kind, run);
        }
        log::info!(
            "benchmark: {} docs, {} train / {} dev queries",
            index.num_docs(),
            train_queries.len(),
            dev_queries.len()
        );
        Ok(Benchmark {
            config: config.clone(),
            train_queries: train_queries.to_vec(),
            dev_queries: dev_queries.to_vec(),
            data,
            index,
            runs,
        })
    }

    pub fn qrels(&self) -> &QrelSet {
        &self.data.qrels
    }

    /// First-stage run of `kind` over all queries.
    pub fn run(&self, kind: RetrieverKind) -> Result<&[Ranking]> {
        self.runs
            .get(&kind)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config(format!("benchmark has no `{kind}` run")))
    }

    /// First-stage run of `kind` restricted to the dev split.
    pub fn dev_run(&self, kind: RetrieverKind) -> Result<Vec<Ranking>> {
        let n = self.config.train_queries;
        Ok(self.run(kind)?[n..].to_vec())
    }

    pub fn train_configs(&self, cell: &CellSpec) -> (TrainConfig, SamplerConfig) {
        let train = TrainConfig {
            objective: cell.objective,
            seed: cell.seed,
            ..self.config.train.clone()
        };
        let sampler = SamplerConfig {
            group_size: cell.group_size,
            seed: cell.seed,
            ..self.config.sampler.clone()
        };
        (train, sampler)
    }

    pub fn train_cell(&self, cell: &CellSpec) -> Result<(ScorerParams, TrainingLog)> {
        let (train_cfg, sampler_cfg) = self.train_configs(cell);
        let n = self.config.train_queries;
        let rankings = &self.run(cell.train_retriever)?[..n];
        train(
            &self.index,
            rankings,
            self.qrels(),
            &self.train_queries,
            &train_cfg,
            &sampler_cfg,
        )
    }

    /// Reranks the dev candidates of `test` and scores MRR.
    pub fn evaluate(&self, params: &ScorerParams, test: RetrieverKind, model_tag: &str) -> Result<EvalReport> {
        let reranked = rerank_all(
            params,
            &self.index,
            &self.dev_queries,
            &self.dev_run(test)?,
            self.config.rerank_depth,
            model_tag,
        )?;
        Ok(mrr_at_k(&reranked, &self.dev_qrels(), self.config.eval_k, model_tag))
    }

    /// First-stage MRR on the dev split.
    pub fn evaluate_first_stage(&self, kind: RetrieverKind) -> Result<EvalReport> {
        Ok(mrr_at_k(
            &self.dev_run(kind)?,
            &self.dev_qrels(),
            self.config.eval_k,
            kind.name(),
        ))
    }

    fn dev_qrels(&self) -> QrelSet {
        let mut out = QrelSet::new();
        for q in &self.dev_queries {
            for d in self.qrels().relevant_docs(&q.query_id) {
                out.insert(&q.query_id, d, self.qrels().grade(&q.query_id, d));
            }
        }
        out
    }
}

/// Trains every cell in parallel and evaluates each on every retriever in
/// `tests`. Output order follows `cells`.
fn run_cells(bench: &Benchmark, cells: &[CellSpec], tests: &[RetrieverKind]) -> Result<Vec<Vec<EvalReport>>> {
    cells
        .par_iter()
        .map(|cell| {
            let (params, _) = bench.train_cell(cell)?;
            let tag = format!("{}-{}", cell.objective, cell.train_retriever);
            tests.iter().map(|&t| bench.evaluate(&params, t, &tag)).collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub group_size: usize,
    pub seed: u64,
    pub mrr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub train_retriever: RetrieverKind,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Mean and sample standard deviation of MRR per group size.
    pub fn summary(&self) -> BTreeMap<usize, (f64, f64)> {
        let mut by_size: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in &self.rows {
            by_size.entry(r.group_size).or_default().push(r.mrr);
        }
        by_size
            .into_iter()
            .map(|(g, v)| {
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let std = if v.len() > 1 {
                    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                (g, (mean, std))
            })
            .collect()
    }

    pub fn mrr(&self, group_size: usize, seed: u64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.group_size == group_size && r.seed == seed)
            .map(|r| r.mrr)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("group_size,seed,mrr\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{}", r.group_size, r.seed, r.mrr);
        }
        out
    }
}

/// Trains one LCE reranker per (size, seed) on localized negatives from
/// `retriever` and evaluates it on the same retriever's dev candidates.
pub fn group_size_sweep(
    bench: &Benchmark,
    retriever: RetrieverKind,
    sizes: &[usize],
    seeds: &[u64],
) -> Result<SweepResult> {
    if sizes.is_empty() || seeds.is_empty() {
        return Err(Error::Config("sweep needs at least one size and one seed".into()));
    }
    let cells: Vec<CellSpec> = sizes
        .iter()
        .flat_map(|&group_size| {
            seeds.iter().map(move |&seed| CellSpec {
                objective: Objective::Lce,
                train_retriever: retriever,
                group_size,
                seed,
            })
        })
        .collect();
    for c in &cells {
        bench.train_configs(c).1.validate()?;
    }
    let reports = run_cells(bench, &cells, &[retriever])?;
    let rows = cells
        .iter()
        .zip(reports)
        .map(|(c, r)| SweepRow {
            group_size: c.group_size,
            seed: c.seed,
            mrr: r[0].mrr,
        })
        .collect();
    Ok(SweepResult {
        train_retriever: retriever,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrosspairCell {
    /// Mean over seeds of the per-seed MRR.
    pub mrr: f64,
    /// Reciprocal ranks pooled over seeds, ordered by (seed, query).
    pub pooled: Vec<f64>,
    /// Paired t-test p-value against the cell sharing this test retriever
    /// whose train retriever matches it; 1 on the diagonal.
    pub p_vs_diagonal: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrosspairResult {
    pub retrievers: Vec<RetrieverKind>,
    pub objectives: Vec<Objective>,
    pub seeds: Vec<u64>,
    /// Keyed by (objective, train retriever, test retriever).
    pub cells: BTreeMap<(Objective, RetrieverKind, RetrieverKind), CrosspairCell>,
}

impl CrosspairResult {
    pub fn cell(&self, objective: Objective, train: RetrieverKind, test: RetrieverKind) -> Option<&CrosspairCell> {
        self.cells.get(&(objective, train, test))
    }

    /// Diagonal MRR minus the off-diagonal MRR for one test retriever.
    pub fn gap(&self, objective: Objective, train: RetrieverKind, test: RetrieverKind) -> Option<f64> {
        Some(self.cell(objective, test, test)?.mrr - self.cell(objective, train, test)?.mrr)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("objective,train_retriever,test_retriever,mrr,p_vs_diagonal\n");
        for &o in &self.objectives {
            for &tr in &self.retrievers {
                for &te in &self.retrievers {
                    let c = &self.cells[&(o, tr, te)];
                    let _ = writeln!(out, "{o},{tr},{te},{},{}", c.mrr, c.p_vs_diagonal);
                }
            }
        }
        out
    }
}

/// Trains one reranker per (objective, train retriever, seed) and evaluates
/// it on every retriever's dev candidates.
pub fn crosspair_experiment(
    bench: &Benchmark,
    retrievers: &[RetrieverKind],
    objectives: &[Objective],
    seeds: &[u64],
) -> Result<CrosspairResult> {
    if retrievers.is_empty() || objectives.is_empty() || seeds.is_empty() {
        return Err(Error::Config("crosspair needs retrievers, objectives and seeds".into()));
    }
    let group_size = bench.config.sampler.group_size;
    let mut cells = Vec::new();
    for &objective in objectives {
        for &train_retriever in retrievers {
            for &seed in seeds {
                cells.push(CellSpec {
                    objective,
                    train_retriever,
                    group_size,
                    seed,
                });
            }
        }
    }
    let reports = run_cells(bench, &cells, retrievers)?;

    // (objective, train, test) -> (per-seed MRR, pooled reciprocal ranks)
    type Gathered = BTreeMap<(Objective, RetrieverKind, RetrieverKind), (Vec<f64>, Vec<f64>)>;
    let mut gathered = Gathered::new();
    for (cell, per_test) in cells.iter().zip(&reports) {
        for (&test, report) in retrievers.iter().zip(per_test) {
            let entry = gathered
                .entry((cell.objective, cell.train_retriever, test))
                .or_default();
            entry.0.push(report.mrr);
            entry.1.extend(report.per_query.values());
        }
    }
    let mut out = BTreeMap::new();
    for (&(o, tr, te), (mrrs, pooled)) in &gathered {
        let diagonal = &gathered[&(o, te, te)].1;
        let p_vs_diagonal = if tr == te {
            1.0
        } else {
            let diffs: Vec<f64> = pooled.iter().zip(diagonal).map(|(a, b)| a - b).collect();
            paired_t_test_differences(&diffs)?.p
        };
        out.insert(
            (o, tr, te),
            CrosspairCell {
                mrr: mrrs.iter().sum::<f64>() / mrrs.len() as f64,
                pooled: pooled.clone(),
                p_vs_diagonal,
            },
        );
    }
    Ok(CrosspairResult {
        retrievers: retrievers.to_vec(),
        objectives: objectives.to_vec(),
        seeds: seeds.to_vec(),
        cells: out,
    })
}

/// Lowercase hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
}

/// Flat `key=value` provenance record.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new() -> Self {
        Manifest::default()
    }

    pub fn set(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    pub fn extend(&mut self, pairs: impl IntoIterator<Item = (String, String)>) -> &mut Self {
        self.entries.extend(pairs);
        self
    }

    /// Records the hash of an artifact under `hash.<name>`.
    pub fn hash(&mut self, name: &str, bytes: &[u8]) -> &mut Self {
        self.set(format!("hash.{name}"), sha256_hex(bytes))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.entries.iter().fold(String::new(), |mut out, (k, v)| {
            let _ = writeln!(out, "{k}={v}");
            out
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_a_published_test_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_renders_in_insertion_order() {
        let mut m = Manifest::new();
        m.set("b", 2).set("a", "x").hash("out", b"");
        assert_eq!(m.get("a"), Some("x"));
        assert_eq!(
            m.render(),
            "b=2\na=x\nhash.out=e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855\n"
        );
    }

    #[test]
    fn describe_lists_every_key_once() {
        let pairs = PipelineConfig::default().describe();
        let mut keys: Vec<&str> = pairs.iter().map(|(k, _)| k.as_str()).collect();
        let n = keys.len();
        keys.sort();
        keys.dedup();
        assert_eq!(keys.len(), n);
        assert!(keys.contains(&"synth.confounders"));
    }

    #[test]
    fn default_pipeline_is_valid() {
        PipelineConfig::default().validate().unwrap();
    }
}
