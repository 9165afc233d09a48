//! First-stage retrievers.
//!
//! Four scorers of increasing strength stand in for a weak-to-strong
//! production lineup: Dirichlet-smoothed query likelihood, BM25 with default
//! parameters, BM25 with tuned parameters, and `oracle_mix`, which adds scaled
//! ground-truth relevance to BM25 so its recall can be dialed up.
//!
//! Every retriever scores documents through the same per-document kernels used
//! by the pointwise `*_score` functions, so index-accelerated retrieval is
//! bit-identical to scoring every document one at a time.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::corpus_io::{QrelSet, Query};
use crate::error::{Error, Result};
use crate::inverted_index::InvertedIndex;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDoc {
    pub doc_id: String,
    pub score: f64,
}

/// Ordered candidate list for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranking {
    pub query_id: String,
    pub docs: Vec<ScoredDoc>,
    pub tag: String,
}

/// Score descending, then doc_id ascending.
pub fn rank_order(a: &ScoredDoc, b: &ScoredDoc) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id))
}

impl Ranking {
    /// Sorts `docs` into ranking order and keeps the first `top_k`.
    pub fn from_scored(
        query_id: impl Into<String>,
        tag: impl Into<String>,
        mut docs: Vec<ScoredDoc>,
        top_k: usize,
    ) -> Self {
        if docs.len() > top_k && top_k > 0 {
            docs.select_nth_unstable_by(top_k - 1, rank_order);
        }
        docs.truncate(top_k);
        docs.sort_by(rank_order);
        Ranking {
            query_id: query_id.into(),
            docs,
            tag: tag.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.docs.iter().map(|d| d.doc_id.as_str())
    }

    /// Checks finite, non-increasing scores, ascending doc_id on ties and no
    /// repeated documents.
    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| Error::InvalidRanking {
            query_id: self.query_id.clone(),
            message,
        };
        if let Some(d) = self.docs.iter().find(|d| !d.score.is_finite()) {
            return Err(fail(format!("non-finite score for `{}`", d.doc_id)));
        }
        for w in self.docs.windows(2) {
            if rank_order(&w[0], &w[1]) != Ordering::Less {
                return Err(fail(format!(
                    "`{}` ({}) may not precede `{}` ({})",
                    w[0].doc_id, w[0].score, w[1].doc_id, w[1].score
                )));
            }
        }
        let mut seen = HashSet::with_capacity(self.docs.len());
        if let Some(d) = self.docs.iter().find(|d| !seen.insert(d.doc_id.as_str())) {
            return Err(fail(format!("document `{}` repeated", d.doc_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RetrieverKind {
    Bm25,
    Bm25Tuned,
    QlDirichlet,
    OracleMix,
}

impl RetrieverKind {
    pub const ALL: [RetrieverKind; 4] = [
        RetrieverKind::QlDirichlet,
        RetrieverKind::Bm25,
        RetrieverKind::Bm25Tuned,
        RetrieverKind::OracleMix,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RetrieverKind::Bm25 => "bm25",
            RetrieverKind::Bm25Tuned => "bm25_tuned",
            RetrieverKind::QlDirichlet => "ql_dirichlet",
            RetrieverKind::OracleMix => "oracle_mix",
        }
    }
}

impl fmt::Display for RetrieverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RetrieverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RetrieverKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::UnknownVariant {
                kind: "retriever kind",
                value: s.to_owned(),
            })
    }
}

pub const BM25_DEFAULT_K1: f64 = 0.9;
pub const BM25_DEFAULT_B: f64 = 0.4;
pub const BM25_TUNED_K1: f64 = 3.8;
pub const BM25_TUNED_B: f64 = 0.9;
pub const QL_DEFAULT_MU: f64 = 2500.0;
pub const ORACLE_DEFAULT_ALPHA: f64 = 1.0;
pub const DEFAULT_TOP_K: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct RetrieverConfig {
    pub kind: RetrieverKind,
    pub bm25_k1: f64,
    pub bm25_b: f64,
    pub ql_mu: f64,
    pub oracle_alpha: f64,
    pub top_k: usize,
}

impl RetrieverConfig {
    /// Defaults for `kind`. `oracle_mix` builds on untuned BM25.
    pub fn new(kind: RetrieverKind) -> Self {
        let (bm25_k1, bm25_b) = match kind {
            RetrieverKind::Bm25Tuned => (BM25_TUNED_K1, BM25_TUNED_B),
            _ => (BM25_DEFAULT_K1, BM25_DEFAULT_B),
        };
        RetrieverConfig {
            kind,
            bm25_k1,
            bm25_b,
            ql_mu: QL_DEFAULT_MU,
            oracle_alpha: ORACLE_DEFAULT_ALPHA,
            top_k: DEFAULT_TOP_K,
        }
    }

    pub fn with_top_k(mut self, top_k: usize) -> Self {
        self.top_k = top_k;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("{}: {m}", self.kind)));
        if self.top_k == 0 {
            return bad("top_k must be positive");
        }
        match self.kind {
            RetrieverKind::QlDirichlet => {
                if !(self.ql_mu > 0.0 && self.ql_mu.is_finite()) {
                    return bad("mu must be positive");
                }
            }
            _ => {
                if !(self.bm25_k1 > 0.0 && self.bm25_k1.is_finite()) {
                    return bad("k1 must be positive");
                }
                if !(0.0..=1.0).contains(&self.bm25_b) {
                    return bad("b must lie in [0, 1]");
                }
                if self.kind == RetrieverKind::OracleMix && !(self.oracle_alpha >= 0.0 && self.oracle_alpha.is_finite())
                {
                    return bad("alpha must be non-negative");
                }
            }
        }
        Ok(())
    }
}

/// Robertson-Sparck Jones idf with the +1 inside the log, which keeps it
/// positive for terms in more than half the collection.
pub fn bm25_idf(num_docs: usize, document_frequency: usize) -> f64 {
    let n = num_docs as f64;
    let df = document_frequency as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

fn bm25_term_weight(idf: f64, tf: u32, dl: f64, avgdl: f64, k1: f64, b: f64) -> f64 {
    let tf = f64::from(tf);
    idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl))
}

/// Per-query-token statistics that do not depend on the document.
struct QueryStats {
    term_ids: Vec<Option<u32>>,
    idf: Vec<f64>,
    /// `cf / total_tokens`; zero for out-of-vocabulary tokens.
    collection_prob: Vec<f64>,
}

impl QueryStats {
    fn new(index: &InvertedIndex, query_tokens: &[String]) -> Self {
        let term_ids: Vec<Option<u32>> = query_tokens.iter().map(|t| index.term_id(t)).collect();
        let idf = term_ids
            .iter()
            .map(|id| {
                let df = id.map_or(0, |id| index.postings_by_id(id).len());
                bm25_idf(index.num_docs(), df)
            })
            .collect();
        let total = index.total_tokens() as f64;
        let collection_prob = term_ids
            .iter()
            .map(|id| id.map_or(0.0, |id| index.collection_frequency_by_id(id) as f64 / total))
            .collect();
        QueryStats {
            term_ids,
            idf,
            collection_prob,
        }
    }

    fn bm25(&self, tfs: &[u32], dl: u32, avgdl: f64, k1: f64, b: f64) -> f64 {
        let mut score = 0.0;
        for (i, &tf) in tfs.iter().enumerate() {
            if tf > 0 {
                score += bm25_term_weight(self.idf[i], tf, f64::from(dl), avgdl, k1, b);
            }
        }
        score
    }

    fn ql_dirichlet(&self, tfs: &[u32], dl: u32, mu: f64) -> f64 {
        let denom = f64::from(dl) + mu;
        let mut score = 0.0;
        for (i, &tf) in tfs.iter().enumerate() {
            let p = self.collection_prob[i];
            if p > 0.0 {
                score += ((f64::from(tf) + mu * p) / denom).ln();
            }
        }
        score
    }
}

fn pointwise_tfs(index: &InvertedIndex, stats: &QueryStats, doc_ordinal: u32) -> Vec<u32> {
    stats
        .term_ids
        .iter()
        .map(|id| {
            id.map_or(0, |id| {
                let list = index.postings_by_id(id);
                list.binary_search_by_key(&doc_ordinal, |p| p.doc_ordinal)
                    .map(|i| list[i].term_frequency)
                    .unwrap_or(0)
            })
        })
        .collect()
}

/// BM25 of one document. Repeated query tokens contribute once per
/// occurrence; tokens absent from the document contribute nothing.
pub fn bm25_score(index: &InvertedIndex, query_tokens: &[String], doc_ordinal: u32, k1: f64, b: f64) -> f64 {
    let stats = QueryStats::new(index, query_tokens);
    let tfs = pointwise_tfs(index, &stats, doc_ordinal);
    stats.bm25(&tfs, index.doc_length(doc_ordinal), index.avg_doc_length(), k1, b)
}

/// Dirichlet-smoothed query log-likelihood of one document. Tokens with zero
/// collection frequency are dropped, so an all-OOV query scores 0.
pub fn ql_dirichlet_score(index: &InvertedIndex, query_tokens: &[String], doc_ordinal: u32, mu: f64) -> f64 {
    let stats = QueryStats::new(index, query_tokens);
    let tfs = pointwise_tfs(index, &stats, doc_ordinal);
    stats.ql_dirichlet(&tfs, index.doc_length(doc_ordinal), mu)
}

pub fn oracle_mix_score(base_bm25_score: f64, relevance_grade: u32, alpha: f64) -> f64 {
    base_bm25_score + alpha * f64::from(relevance_grade)
}

/// Dense per-query tf table filled from postings.
struct TfTable {
    width: usize,
    tfs: Vec<u32>,
    touched: Vec<u32>,
}

impl TfTable {
    fn gather(index: &InvertedIndex, stats: &QueryStats) -> Self {
        let width = stats.term_ids.len();
        let mut tfs = vec![0u32; index.num_docs() * width];
        let mut seen = vec![false; index.num_docs()];
        let mut touched = Vec::new();
        for (i, id) in stats.term_ids.iter().enumerate() {
            let Some(id) = *id else { continue };
            for p in index.postings_by_id(id) {
                let d = p.doc_ordinal as usize;
                tfs[d * width + i] = p.term_frequency;
                if !seen[d] {
                    seen[d] = true;
                    touched.push(p.doc_ordinal);
                }
            }
        }
        touched.sort_unstable();
        TfTable { width, tfs, touched }
    }

    fn row(&self, doc_ordinal: u32) -> &[u32] {
        let start = doc_ordinal as usize * self.width;
        &self.tfs[start..start + self.width]
    }
}

/// Retrieves the top `config.top_k` documents for one query.
///
/// BM25 variants score every document sharing at least one token with the
/// query; query likelihood scores the whole collection. `oracle_mix` needs
/// `qrels`.
pub fn retrieve(
    index: &InvertedIndex,
    query: &Query,
    config: &RetrieverConfig,
    qrels: Option<&QrelSet>,
) -> Result<Ranking> {
    config.validate()?;
    if config.kind == RetrieverKind::OracleMix && qrels.is_none() {
        return Err(Error::Config("oracle_mix retrieval requires qrels".into()));
    }
    let tokens = index.analyze_query(&query.text);
    let stats = QueryStats::new(index, &tokens);
    let table = TfTable::gather(index, &stats);
    let avgdl = index.avg_doc_length();
    let docs = index.docs();

    // Score as (score, ordinal) and only materialize ids for the survivors.
    let scored: Vec<(f64, u32)> = match config.kind {
        RetrieverKind::Bm25 | RetrieverKind::Bm25Tuned => table
            .touched
            .iter()
            .map(|&d| {
                let s = stats.bm25(
                    table.row(d),
                    docs[d as usize].length,
                    avgdl,
                    config.bm25_k1,
                    config.bm25_b,
                );
                (s, d)
            })
            .collect(),
        RetrieverKind::OracleMix => {
            let qrels = qrels.expect("checked above");
            table
                .touched
                .iter()
                .map(|&d| {
                    let base = stats.bm25(
                        table.row(d),
                        docs[d as usize].length,
                        avgdl,
                        config.bm25_k1,
                        config.bm25_b,
                    );
                    let grade = qrels.grade(&query.query_id, &docs[d as usize].doc_id);
                    (oracle_mix_score(base, grade, config.oracle_alpha), d)
                })
                .collect()
        }
        RetrieverKind::QlDirichlet => (0..index.num_docs() as u32)
            .map(|d| {
                (
                    stats.ql_dirichlet(table.row(d), docs[d as usize].length, config.ql_mu),
                    d,
                )
            })
            .collect(),
    };
    let order = |a: &(f64, u32), b: &(f64, u32)| {
        b.0.total_cmp(&a.0)
            .then_with(|| docs[a.1 as usize].doc_id.cmp(&docs[b.1 as usize].doc_id))
    };
    let mut scored = scored;
    if scored.len() > config.top_k {
        scored.select_nth_unstable_by(config.top_k - 1, order);
        scored.truncate(config.top_k);
    }
    let candidates = scored
        .into_iter()
        .map(|(score, d)| ScoredDoc {
            doc_id: docs[d as usize].doc_id.clone(),
            score,
        })
        .collect();
    Ok(Ranking::from_scored(
        query.query_id.clone(),
        config.kind.name(),
        candidates,
        config.top_k,
    ))
}

/// Retrieves every query in parallel; output follows `queries` order.
pub fn retrieve_all(
    index: &InvertedIndex,
    queries: &[Query],
    config: &RetrieverConfig,
    qrels: Option<&QrelSet>,
) -> Result<Vec<Ranking>> {
    queries.par_iter().map(|q| retrieve(index, q, config, qrels)).collect()
}
