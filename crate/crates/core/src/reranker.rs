//! Feature-based neural reranker.
//!
//! A query-document pair is encoded as a fixed six-dimensional feature
//! vector, z-normalized with statistics frozen at training time, passed
//! through one relu hidden layer and projected to a scalar:
//!
//! ```text
//! s = v_pᵀ · relu(W1 · normalize(φ(q, d)) + b1) + b2
//! ```
//!
//! Features are computed from the document head (its first 512 tokens) and
//! collection statistics only; relevance labels are never consulted.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::binio::{read_file, Decoder, Encoder};
use crate::corpus_io::Query;
use crate::error::{Error, Result};
use crate::inverted_index::InvertedIndex;
use crate::retrieval::{bm25_idf, BM25_DEFAULT_B, BM25_DEFAULT_K1, QL_DEFAULT_MU};

pub const NUM_FEATURES: usize = 6;
pub const DEFAULT_HIDDEN: usize = 16;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "bm25",
    "term_coverage",
    "idf_coverage",
    "log_tf",
    "log_length_ratio",
    "ql_dirichlet",
];

const MAGIC: &[u8; 8] = b"LCEMODEL";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureVector(pub [f64; NUM_FEATURES]);

impl FeatureVector {
    pub fn check_finite(&self) -> Result<()> {
        match self.0.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(Error::NonFiniteFeature(i)),
            None => Ok(()),
        }
    }
}

/// Query-side state for computing features against many documents.
pub struct FeatureExtractor<'a> {
    index: &'a InvertedIndex,
    /// Query tokens with repetition, resolved to term ids.
    token_ids: Vec<Option<u32>>,
    /// Distinct query terms and their idf.
    distinct: Vec<(Option<u32>, f64)>,
    idf_total: f64,
}

impl<'a> FeatureExtractor<'a> {
    pub fn new(index: &'a InvertedIndex, query_text: &str) -> Self {
        let tokens = index.analyze_query(query_text);
        let token_ids: Vec<Option<u32>> = tokens.iter().map(|t| index.term_id(t)).collect();
        let mut seen = std::collections::BTreeSet::new();
        let mut distinct = Vec::new();
        for (tok, id) in tokens.iter().zip(&token_ids) {
            if seen.insert(tok.as_str()) {
                let df = id.map_or(0, |id| index.postings_by_id(id).len());
                distinct.push((*id, bm25_idf(index.num_docs(), df)));
            }
        }
        let idf_total = distinct.iter().map(|(_, idf)| idf).sum();
        FeatureExtractor {
            index,
            token_ids,
            distinct,
            idf_total,
        }
    }

    pub fn features(&self, doc_id: &str) -> Result<FeatureVector> {
        let ordinal = self
            .index
            .doc_ordinal(doc_id)
            .ok_or_else(|| Error::UnknownDocument(doc_id.to_owned()))?;
        Ok(self.features_by_ordinal(ordinal))
    }

    pub fn features_by_ordinal(&self, doc_ordinal: u32) -> FeatureVector {
        let index = self.index;
        let head = index.head(doc_ordinal);
        let tf = |id: Option<u32>| id.map_or(0, |id| head.term_frequency(id));
        let dl = f64::from(head.length);
        let avgdl = index.avg_doc_length();
        let total = index.total_tokens() as f64;

        let (k1, b) = (BM25_DEFAULT_K1, BM25_DEFAULT_B);
        let mut bm25 = 0.0;
        let mut ql = 0.0;
        for &id in &self.token_ids {
            let Some(term) = id else { continue };
            let f = f64::from(tf(id));
            if f > 0.0 {
                let df = index.postings_by_id(term).len();
                bm25 += bm25_idf(index.num_docs(), df) * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * dl / avgdl));
            }
            let p = index.collection_frequency_by_id(term) as f64 / total;
            ql += ((f + QL_DEFAULT_MU * p) / (dl + QL_DEFAULT_MU)).ln();
        }

        let mut matched = 0usize;
        let mut matched_idf = 0.0;
        let mut tf_sum = 0u64;
        for &(id, idf) in &self.distinct {
            let f = tf(id);
            if f > 0 {
                matched += 1;
                matched_idf += idf;
                tf_sum += u64::from(f);
            }
        }
        let coverage = if self.distinct.is_empty() {
            0.0
        } else {
            matched as f64 / self.distinct.len() as f64
        };
        let idf_coverage = if self.idf_total > 0.0 {
            matched_idf / self.idf_total
        } else {
            0.0
        };

        FeatureVector([
            bm25,
            coverage,
            idf_coverage,
            (1.0 + tf_sum as f64).ln(),
            ((dl + 1.0) / (avgdl + 1.0)).ln(),
            ql,
        ])
    }
}

/// Features of one query-document pair.
pub fn extract_features(index: &InvertedIndex, query: &Query, doc_id: &str) -> Result<FeatureVector> {
    FeatureExtractor::new(index, &query.text).features(doc_id)
}

/// Per-feature z-normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNorm {
    pub mean: [f64; NUM_FEATURES],
    pub std: [f64; NUM_FEATURES],
}

impl Default for FeatureNorm {
    fn default() -> Self {
        FeatureNorm {
            mean: [0.0; NUM_FEATURES],
            std: [1.0; NUM_FEATURES],
        }
    }
}

impl FeatureNorm {
    /// Population mean and standard deviation; zero-variance features get
    /// std 1.
    pub fn fit(samples: &[FeatureVector]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let n = samples.len() as f64;
        let mut mean = [0.0; NUM_FEATURES];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s.0) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = [0.0; NUM_FEATURES];
        for s in samples {
            for i in 0..NUM_FEATURES {
                var[i] += (s.0[i] - mean[i]).powi(2);
            }
        }
        let std = var.map(|v| {
            let sd = (v / n).sqrt();
            if sd > 0.0 && sd.is_finite() {
                sd
            } else {
                1.0
            }
        });
        FeatureNorm { mean, std }
    }

    pub fn apply(&self, features: &FeatureVector) -> [f64; NUM_FEATURES] {
        std::array::from_fn(|i| (features.0[i] - self.mean[i]) / self.std[i])
    }
}

/// Trainable reranker state. `w1` is hidden × features, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    pub hidden: usize,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub v_p: Vec<f64>,
    pub b2: f64,
    pub norm: FeatureNorm,
}

/// Gradients with the shapes of the trainable fields of [`ScorerParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerGradients {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub v_p: Vec<f64>,
    pub b2: f64,
}

impl ScorerGradients {
    pub fn zeros(hidden: usize) -> Self {
        ScorerGradients {
            w1: vec![0.0; hidden * NUM_FEATURES],
            b1: vec![0.0; hidden],
            v_p: vec![0.0; hidden],
            b2: 0.0,
        }
    }

    /// Flattened as `w1, b1, v_p, b2`, matching [`ScorerParams::trainable`].
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.w1.len() + 2 * self.b1.len() + 1);
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.v_p);
        out.push(self.b2);
        out
    }
}

struct Activations {
    z: [f64; NUM_FEATURES],
    pre: Vec<f64>,
    score: f64,
}

impl ScorerParams {
    /// All-zero weights with identity normalization.
    pub fn zeros(hidden: usize) -> Self {
        ScorerParams {
            hidden,
            w1: vec![0.0; hidden * NUM_FEATURES],
            b1: vec![0.0; hidden],
            v_p: vec![0.0; hidden],
            b2: 0.0,
            norm: FeatureNorm::default(),
        }
    }

    pub fn num_trainable(&self) -> usize {
        self.hidden * (NUM_FEATURES + 2) + 1
    }

    pub fn trainable(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_trainable());
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.v_p);
        out.push(self.b2);
        out
    }

    pub fn set_trainable(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_trainable(), "parameter vector length");
        let h = self.hidden;
        let (w1, rest) = flat.split_at(h * NUM_FEATURES);
        let (b1, rest) = rest.split_at(h);
        let (v_p, rest) = rest.split_at(h);
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.v_p.copy_from_slice(v_p);
        self.b2 = rest[0];
    }

    fn check_shapes(&self) -> Result<()> {
        let h = self.hidden;
        if h == 0 || self.w1.len() != h * NUM_FEATURES || self.b1.len() != h || self.v_p.len() != h {
            return Err(Error::Config(format!(
                "scorer parameter shapes do not match hidden size {h}"
            )));
        }
        Ok(())
    }

    fn forward(&self, features: &FeatureVector) -> Result<Activations> {
        features.check_finite()?;
        let z = self.norm.apply(features);
        let mut pre = self.b1.clone();
        let mut score = self.b2;
        for (j, p) in pre.iter_mut().enumerate() {
            let row = &self.w1[j * NUM_FEATURES..(j + 1) * NUM_FEATURES];
            for (w, x) in row.iter().zip(&z) {
                *p += w * x;
            }
            score += self.v_p[j] * p.max(0.0);
        }
        Ok(Activations { z, pre, score })
    }

    pub fn score(&self, features: &FeatureVector) -> Result<f64> {
        Ok(self.forward(features)?.score)
    }

    /// Adds `upstream · ∂score/∂θ` into `grads`. The relu derivative at
    /// exactly zero is taken as zero.
    pub fn accumulate_backward(
        &self,
        features: &FeatureVector,
        upstream: f64,
        grads: &mut ScorerGradients,
    ) -> Result<()> {
        let act = self.forward(features)?;
        grads.b2 += upstream;
        for j in 0..self.hidden {
            let pre = act.pre[j];
            grads.v_p[j] += upstream * pre.max(0.0);
            if pre > 0.0 {
                let d = upstream * self.v_p[j];
                grads.b1[j] += d;
                let row = &mut grads.w1[j * NUM_FEATURES..(j + 1) * NUM_FEATURES];
                for (g, x) in row.iter_mut().zip(&act.z) {
                    *g += d * x;
                }
            }
        }
        Ok(())
    }
}

pub fn score(params: &ScorerParams, features: &FeatureVector) -> Result<f64> {
    params.score(features)
}

/// Exact gradients of `upstream · score(params, features)`.
pub fn score_backward(params: &ScorerParams, features: &FeatureVector, upstream: f64) -> Result<ScorerGradients> {
    let mut grads = ScorerGradients::zeros(params.hidden);
    params.accumulate_backward(features, upstream, &mut grads)?;
    Ok(grads)
}

/// Uniform fan-in initialization: `W1 ~ U(±1/√F)`, `v_p ~ U(±1/√H)`, zero
/// biases. Deterministic per seed.
pub fn init_params(seed: u64, hidden: usize, num_features: usize, norm: FeatureNorm) -> Result<ScorerParams> {
    if num_features != NUM_FEATURES {
        return Err(Error::Config(format!(
            "feature count {num_features} unsupported (expected {NUM_FEATURES})"
        )));
    }
    if hidden == 0 {
        return Err(Error::Config("hidden size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w_bound = 1.0 / (num_features as f64).sqrt();
    let v_bound = 1.0 / (hidden as f64).sqrt();
    let w1 = (0..hidden * num_features)
        .map(|_| rng.gen_range(-w_bound..=w_bound))
        .collect();
    let v_p = (0..hidden).map(|_| rng.gen_range(-v_bound..=v_bound)).collect();
    Ok(ScorerParams {
        hidden,
        w1,
        b1: vec![0.0; hidden],
        v_p,
        b2: 0.0,
        norm,
    })
}

impl ScorerParams {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new(MAGIC, VERSION);
        enc.u64(self.hidden as u64);
        enc.u64(NUM_FEATURES as u64);
        enc.f64s(&self.w1);
        enc.f64s(&self.b1);
        enc.f64s(&self.v_p);
        enc.f64(self.b2);
        enc.f64s(&self.norm.mean);
        enc.f64s(&self.norm.std);
        enc.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut dec = Decoder::new("model file", data, MAGIC, VERSION)?;
        let hidden = dec.u64()? as usize;
        let features = dec.u64()? as usize;
        if features != NUM_FEATURES {
            return Err(dec.corrupt(format!("feature count {features} (expected {NUM_FEATURES})")));
        }
        let w1 = dec.f64s()?;
        let b1 = dec.f64s()?;
        let v_p = dec.f64s()?;
        let b2 = dec.f64()?;
        let mean = dec.f64s()?;
        let std = dec.f64s()?;
        dec.finish()?;
        let shape_error = || Error::Format {
            what: "model file",
            message: format!("array shapes do not match hidden size {hidden}"),
        };
        let mean: [f64; NUM_FEATURES] = mean.try_into().map_err(|_| shape_error())?;
        let std: [f64; NUM_FEATURES] = std.try_into().map_err(|_| shape_error())?;
        let params = ScorerParams {
            hidden,
            w1,
            b1,
            v_p,
            b2,
            norm: FeatureNorm { mean, std },
        };
        params.check_shapes().map_err(|_| shape_error())?;
        let all_finite = params
            .trainable()
            .iter()
            .chain(&mean)
            .chain(&std)
            .all(|v| v.is_finite());
        if !all_finite || std.iter().any(|&s| s <= 0.0) {
            return Err(Error::Format {
                what: "model file",
                message: "non-finite weights or non-positive normalization std".into(),
            });
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path.as_ref())?)
    }
}

pub fn save_model(params: &ScorerParams, path: impl AsRef<Path>) -> Result<()> {
    params.save(path)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ScorerParams> {
    ScorerParams::load(path)
}
