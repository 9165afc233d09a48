//! Seeded synthetic retrieval benchmark.
//!
//! Every query owns a handful of topical terms that appear nowhere else in
//! the collection, plus a base rate at which those terms recur. Relevant
//! documents repeat every term at `relevant_rate` times the base rate. The
//! rest of the collection is background text drawn from a Zipf vocabulary,
//! except that each query also owns a pool of slots. Each slot becomes, with
//! probability `confounder_strength`, a confounder drawn from a weighted
//! list of [`ConfounderProfile`]s that share the query's terms at another
//! rate, length or coverage.
//!
//! Counts are Poisson and base rates are log-uniform across queries, so raw
//! lexical features carry a per-query offset.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::corpus_io::{Document, QrelSet, Query};
use crate::error::{Error, Result};

/// Which of the query's terms a confounder carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coverage {
    All,
    /// A uniformly sized, uniformly chosen strict subset.
    StrictSubset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfounderProfile {
    pub name: String,
    /// Relative sampling weight.
    pub weight: f64,
    /// Mean count per carried term, as a multiple of the query's base rate.
    pub rate: f64,
    /// Length multiplier relative to an ordinary document of the query.
    pub length: f64,
    pub coverage: Coverage,
}

impl ConfounderProfile {
    pub fn new(name: &str, weight: f64, rate: f64, length: f64, coverage: Coverage) -> Self {
        ConfounderProfile {
            name: name.to_owned(),
            weight,
            rate,
            length,
            coverage,
        }
    }

    /// Long documents that repeat every term more than a relevant one,
    /// short documents that mention every term sparsely, and documents that
    /// hammer a strict subset of the terms.
    pub fn defaults() -> Vec<ConfounderProfile> {
        vec![
            ConfounderProfile::new("abundant", 0.25, 3.0, 3.0, Coverage::All),
            ConfounderProfile::new("sparse", 0.25, 1.0, 0.5, Coverage::All),
            ConfounderProfile::new("stuffed", 0.5, 8.0, 1.0, Coverage::StrictSubset),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_queries: usize,
    /// Total documents, relevant ones included.
    pub n_docs: usize,
    pub min_query_terms: usize,
    pub max_query_terms: usize,
    /// Size of the shared background vocabulary.
    pub background_vocab: usize,
    /// Probability that a pool slot holds a confounder rather than
    /// background text.
    pub confounder_strength: f64,
    pub relevant_per_query: usize,
    pub min_doc_length: usize,
    pub max_doc_length: usize,
    /// Per-query length multipliers are uniform on `[1/s, s]`.
    pub length_spread: f64,
    /// Probability that a relevant document omits one of its query's terms.
    pub relevance_noise: f64,
    /// Per-query base rates are log-uniform on `[1, max_term_rate]`.
    pub max_term_rate: f64,
    /// Mean count per term in relevant documents, as a multiple of the
    /// base rate.
    pub relevant_rate: f64,
    pub confounders: Vec<ConfounderProfile>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_queries: 500,
            n_docs: 125_500,
            min_query_terms: 2,
            max_query_terms: 5,
            background_vocab: 5000,
            confounder_strength: 0.8,
            relevant_per_query: 1,
            min_doc_length: 30,
            max_doc_length: 90,
            length_spread: 1.25,
            relevance_noise: 0.0,
            max_term_rate: 6.0,
            relevant_rate: 3.0,
            confounders: ConfounderProfile::defaults(),
            seed: 0,
        }
    }
}

/// Generated collection, queries in id order and their judgments.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub corpus: Vec<Document>,
    pub queries: Vec<Query>,
    pub qrels: QrelSet,
}

impl SynthConfig {
    /// Pool slots available to each query.
    pub fn slots_per_query(&self) -> usize {
        (self.n_docs / self.n_queries.max(1)).saturating_sub(self.relevant_per_query)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Infeasible(m));
        if self.n_queries == 0 || self.relevant_per_query == 0 {
            return bad("query and relevant-document counts must be positive".into());
        }
        if self.min_query_terms < 2 || self.min_query_terms > self.max_query_terms {
            return bad(format!(
                "query term range {}..={} must start at 2 or more so confounders can miss a term",
                self.min_query_terms, self.max_query_terms
            ));
        }
        if self.background_vocab < 10 {
            return bad(format!(
                "background vocabulary of {} terms is too small",
                self.background_vocab
            ));
        }
        let positive = |x: f64| x > 0.0 && x.is_finite();
        if !(self.max_term_rate >= 1.0 && self.max_term_rate.is_finite())
            || !(self.length_spread >= 1.0 && self.length_spread.is_finite())
            || !positive(self.relevant_rate)
        {
            return bad("max_term_rate and length_spread must be finite and at least 1, relevant_rate positive".into());
        }
        if self.confounder_strength > 0.0 {
            if self.confounders.is_empty() {
                return bad("confounder_strength is positive but no confounder profiles are given".into());
            }
            for p in &self.confounders {
                if !(p.weight >= 0.0 && p.weight.is_finite()) || !positive(p.rate) || !positive(p.length) {
                    return bad(format!("confounder profile `{}` has an invalid parameter", p.name));
                }
            }
            if self.confounders.iter().map(|p| p.weight).sum::<f64>() <= 0.0 {
                return bad("confounder weights sum to zero".into());
            }
        }
        for (name, p) in [
            ("confounder_strength", self.confounder_strength),
            ("relevance_noise", self.relevance_noise),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        let needed = self.n_queries * self.relevant_per_query;
        if self.n_docs < needed {
            return bad(format!(
                "{} documents cannot hold {needed} relevant documents",
                self.n_docs
            ));
        }
        // Relevant documents must fit every term at the heaviest rate.
        if self.min_doc_length < 2 * self.max_query_terms || self.max_doc_length < self.min_doc_length {
            return bad(format!(
                "document length range {}..={} cannot hold {} query terms",
                self.min_doc_length, self.max_doc_length, self.max_query_terms
            ));
        }
        Ok(())
    }
}

/// Cumulative Zipf weights over the background vocabulary.
struct Zipf {
    cdf: Vec<f64>,
}

impl Zipf {
    fn new(n: usize) -> Self {
        let mut acc = 0.0;
        let cdf = (0..n)
            .map(|r| {
                acc += 1.0 / (r + 1) as f64;
                acc
            })
            .collect();
        Zipf { cdf }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let u = rng.gen::<f64>() * self.cdf[self.cdf.len() - 1];
        self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1)
    }
}

/// Per-query traits shared by its relevant documents and confounders.
struct Topic {
    terms: Vec<String>,
    /// Mean repetitions of a topical term in a confounder of ordinary length.
    rate: f64,
    /// Multiplier on document length.
    scale: f64,
}

#[derive(Clone, Copy)]
enum Kind {
    Relevant,
    Confounder(usize),
    Background,
}

fn pick_profile<R: Rng>(profiles: &[ConfounderProfile], rng: &mut R) -> usize {
    let total: f64 = profiles.iter().map(|p| p.weight).sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, p) in profiles.iter().enumerate() {
        if u < p.weight {
            return i;
        }
        u -= p.weight;
    }
    profiles.len() - 1
}

fn topical_term(query: usize, j: usize) -> String {
    format!("t{query}x{j}")
}

fn poisson<R: Rng>(mean: f64, rng: &mut R) -> u32 {
    Poisson::new(mean).map_or(0, |p| p.sample(rng) as u32)
}

fn compose<R: Rng>(cfg: &SynthConfig, topic: Option<&Topic>, kind: Kind, zipf: &Zipf, rng: &mut R) -> String {
    let base = rng.gen_range(cfg.min_doc_length as f64..=cfg.max_doc_length as f64);
    let mut topical: Vec<(usize, u32)> = Vec::new();
    let length = match (kind, topic) {
        (Kind::Background, _) | (_, None) => base,
        (Kind::Relevant, Some(t)) => {
            let k = t.terms.len();
            let dropped = (rng.gen::<f64>() < cfg.relevance_noise).then(|| rng.gen_range(0..k));
            for j in (0..k).filter(|&j| Some(j) != dropped) {
                topical.push((j, poisson(cfg.relevant_rate * t.rate, rng)));
            }
            // Keep at least one query term so BM25 can always reach it.
            if topical.iter().all(|&(_, n)| n == 0) {
                let j = topical.first().map_or(0, |&(j, _)| j);
                topical.push((j, 1));
            }
            t.scale * base
        }
        (Kind::Confounder(i), Some(t)) => {
            let p = &cfg.confounders[i];
            let k = t.terms.len();
            let carried = match p.coverage {
                Coverage::All => (0..k).collect(),
                Coverage::StrictSubset => {
                    let size = rng.gen_range(1..k);
                    rand::seq::index::sample(rng, k, size).into_vec()
                }
            };
            for j in carried {
                topical.push((j, poisson(p.rate * t.rate, rng)));
            }
            t.scale * base * p.length
        }
    };
    let topical_count: usize = topical.iter().map(|&(_, n)| n as usize).sum();
    let length = (length.round() as usize).max(topical_count + 1);
    let mut tokens: Vec<String> = Vec::with_capacity(length);
    if let Some(t) = topic {
        for &(j, n) in &topical {
            tokens.extend(std::iter::repeat_n(t.terms[j].clone(), n as usize));
        }
    }
    while tokens.len() < length {
        tokens.push(format!("w{}", zipf.sample(rng)));
    }
    tokens.shuffle(rng);
    tokens.join(" ")
}

/// Generates a benchmark. Identical configs give identical output.
pub fn generate_synth(cfg: &SynthConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let zipf = Zipf::new(cfg.background_vocab);

    let topics: Vec<Topic> = (0..cfg.n_queries)
        .map(|q| {
            let k = rng.gen_range(cfg.min_query_terms..=cfg.max_query_terms);
            Topic {
                terms: (0..k).map(|j| topical_term(q, j)).collect(),
                rate: rng.gen_range(0.0..=cfg.max_term_rate.ln()).exp(),
                scale: rng.gen_range(1.0 / cfg.length_spread..=cfg.length_spread),
            }
        })
        .collect();

    // (owning query, kind) per document before shuffling.
    let mut plan: Vec<(Option<usize>, Kind)> = Vec::with_capacity(cfg.n_docs);
    let slots = cfg.slots_per_query();
    for q in 0..cfg.n_queries {
        plan.extend(std::iter::repeat_n((Some(q), Kind::Relevant), cfg.relevant_per_query));
        for _ in 0..slots {
            let kind = if rng.gen::<f64>() < cfg.confounder_strength {
                Kind::Confounder(pick_profile(&cfg.confounders, &mut rng))
            } else {
                Kind::Background
            };
            plan.push((Some(q), kind));
        }
    }
    plan.resize(cfg.n_docs, (None, Kind::Background));
    // Shuffle so doc_id order (the tie-break) carries no signal.
    plan.shuffle(&mut rng);

    let width = cfg.n_docs.to_string().len();
    let mut corpus = Vec::with_capacity(cfg.n_docs);
    let mut qrels = QrelSet::new();
    for (i, &(owner, kind)) in plan.iter().enumerate() {
        let doc_id = format!("D{:0width$}", i);
        let topic = owner.map(|q| &topics[q]);
        let body = compose(cfg, topic, kind, &zipf, &mut rng);
        if let (Some(q), Kind::Relevant) = (owner, kind) {
            qrels.insert(&query_id(q, cfg.n_queries), &doc_id, 1);
        }
        corpus.push(Document {
            doc_id,
            title: String::new(),
            url: String::new(),
            body,
        });
    }
    let queries = topics
        .iter()
        .enumerate()
        .map(|(q, t)| Query {
            query_id: query_id(q, cfg.n_queries),
            text: t.terms.join(" "),
        })
        .collect();
    Ok(SynthData { corpus, queries, qrels })
}

fn query_id(q: usize, n: usize) -> String {
    format!("Q{:0width$}", q, width = n.to_string().len())
}
