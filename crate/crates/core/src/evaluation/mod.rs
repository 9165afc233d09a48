//! Reranking, MRR@k and paired significance testing.

mod stats;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

pub use stats::{regularized_incomplete_beta, student_t_two_tailed};

use crate::corpus_io::{QrelSet, Query};
use crate::error::{Error, Result};
use crate::inverted_index::InvertedIndex;
use crate::reranker::{FeatureExtractor, ScorerParams};
use crate::retrieval::{Ranking, ScoredDoc};

/// Rescores the first `depth` candidates with the reranker; the rest are
/// dropped. Ties fall back to ascending doc_id.
pub fn rerank(
    params: &ScorerParams,
    index: &InvertedIndex,
    query: &Query,
    candidates: &Ranking,
    depth: usize,
    model_tag: &str,
) -> Result<Ranking> {
    let extractor = FeatureExtractor::new(index, &query.text);
    let docs = candidates
        .docs
        .iter()
        .take(depth)
        .map(|c| {
            let features = extractor.features(&c.doc_id)?;
            Ok(ScoredDoc {
                doc_id: c.doc_id.clone(),
                score: params.score(&features)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let n = docs.len();
    Ok(Ranking::from_scored(
        candidates.query_id.clone(),
        format!("{model_tag}+{}", candidates.tag),
        docs,
        n,
    ))
}

/// Reranks every candidate list whose query appears in `queries`, in
/// candidate order. Lists for unknown queries are an error.
pub fn rerank_all(
    params: &ScorerParams,
    index: &InvertedIndex,
    queries: &[Query],
    candidates: &[Ranking],
    depth: usize,
    model_tag: &str,
) -> Result<Vec<Ranking>> {
    use rayon::prelude::*;
    let by_id: BTreeMap<&str, &Query> = queries.iter().map(|q| (q.query_id.as_str(), q)).collect();
    candidates
        .par_iter()
        .map(|c| {
            let query = by_id
                .get(c.query_id.as_str())
                .ok_or_else(|| Error::Config(format!("no query text for `{}`", c.query_id)))?;
            rerank(params, index, query, c, depth, model_tag)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_query: BTreeMap<String, f64>,
    pub mrr: f64,
    pub k: usize,
    pub tag: String,
}

impl EvalReport {
    pub fn num_queries(&self) -> usize {
        self.per_query.len()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("query_id,reciprocal_rank\n");
        for (q, rr) in &self.per_query {
            let _ = writeln!(out, "{q},{rr}");
        }
        let _ = writeln!(out, "AGGREGATE,{}", self.mrr);
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, path)
    }

    /// Parses a report written by [`EvalReport::to_csv`]; `k` and `tag` are
    /// not stored and come back as 0 and the file stem.
    pub fn parse_csv(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_owned(),
            line,
            message,
        };
        let mut per_query = BTreeMap::new();
        let mut aggregate = None;
        for (i, line) in text.lines().enumerate() {
            let lineno = i + 1;
            if line.trim().is_empty() || (lineno == 1 && line.starts_with("query_id,")) {
                continue;
            }
            let (q, v) = line
                .split_once(',')
                .ok_or_else(|| err(lineno, "expected `query_id,value`".into()))?;
            let v: f64 = v
                .trim()
                .parse()
                .map_err(|_| err(lineno, format!("invalid value `{v}`")))?;
            if q == "AGGREGATE" {
                aggregate = Some(v);
            } else if per_query.insert(q.to_owned(), v).is_some() {
                return Err(err(lineno, format!("duplicate query `{q}`")));
            }
        }
        let mrr = aggregate.ok_or_else(|| err(0, "missing AGGREGATE row".into()))?;
        Ok(EvalReport {
            per_query,
            mrr,
            k: 0,
            tag: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
        })
    }
}

/// MRR@k over every query with at least one relevant judgment; queries
/// missing from `run` score 0 and run queries without relevant judgments are
/// ignored.
pub fn mrr_at_k(run: &[Ranking], qrels: &QrelSet, k: usize, tag: &str) -> EvalReport {
    let by_query: BTreeMap<&str, &Ranking> = run.iter().map(|r| (r.query_id.as_str(), r)).collect();
    let mut per_query = BTreeMap::new();
    let mut excluded = 0usize;
    for qid in qrels.query_ids() {
        if !qrels.has_relevant(qid) {
            excluded += 1;
            continue;
        }
        let rr = by_query
            .get(qid)
            .and_then(|r| r.doc_ids().take(k).position(|d| qrels.is_relevant(qid, d)))
            .map_or(0.0, |pos| 1.0 / (pos + 1) as f64);
        per_query.insert(qid.to_owned(), rr);
    }
    if excluded > 0 {
        log::debug!("mrr: {excluded} judged queries without relevant documents excluded");
    }
    let mrr = if per_query.is_empty() {
        0.0
    } else {
        per_query.values().sum::<f64>() / per_query.len() as f64
    };
    EvalReport {
        per_query,
        mrr,
        k,
        tag: tag.to_owned(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestResult {
    pub t: f64,
    pub p: f64,
    pub n: usize,
    pub mean_difference: f64,
}

/// Two-tailed paired t-test on per-query differences `a − b`.
///
/// Identical inputs give `t = 0, p = 1`; a constant non-zero difference
/// gives an infinite `t` and `p = 0`.
pub fn paired_t_test(a: &EvalReport, b: &EvalReport) -> Result<TTestResult> {
    if a.per_query.len() != b.per_query.len() || a.per_query.keys().ne(b.per_query.keys()) {
        return Err(Error::MismatchedReports(format!(
            "query sets differ ({} vs {} queries)",
            a.per_query.len(),
            b.per_query.len()
        )));
    }
    let diffs: Vec<f64> = a
        .per_query
        .values()
        .zip(b.per_query.values())
        .map(|(x, y)| x - y)
        .collect();
    paired_t_test_differences(&diffs)
}

/// Paired t-test from precomputed differences.
pub fn paired_t_test_differences(diffs: &[f64]) -> Result<TTestResult> {
    let n = diffs.len();
    if n < 2 {
        return Err(Error::MismatchedReports(format!(
            "need at least 2 paired queries, got {n}"
        )));
    }
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let (t, p) = if diffs.iter().all(|&d| d == 0.0) {
        (0.0, 1.0)
    } else if var == 0.0 {
        (f64::INFINITY.copysign(mean), 0.0)
    } else {
        let t = mean / (var / nf).sqrt();
        (t, student_t_two_tailed(t, nf - 1.0))
    };
    Ok(TTestResult {
        t,
        p,
        n,
        mean_difference: mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus_io::Document;
    use crate::reranker::ScorerParams;
    use crate::text_analysis::AnalyzerConfig;

    fn ranking(qid: &str, docs: &[&str]) -> Ranking {
        Ranking {
            query_id: qid.into(),
            docs: docs
                .iter()
                .enumerate()
                .map(|(i, d)| ScoredDoc {
                    doc_id: (*d).into(),
                    score: -(i as f64),
                })
                .collect(),
            tag: "t".into(),
        }
    }

    fn qrels(rel: &[(&str, &str)]) -> QrelSet {
        let mut q = QrelSet::new();
        for (qid, d) in rel {
            q.insert(qid, d, 1);
        }
        q
    }

    #[test]
    fn mrr_hand_case() {
        let run = vec![
            ranking("q1", &["a", "b"]),
            ranking("q2", &["x", "y", "z", "w"]),
            ranking("q3", &["m", "n"]),
        ];
        let q = qrels(&[("q1", "a"), ("q2", "w"), ("q3", "zz")]);
        let r = mrr_at_k(&run, &q, 100, "t");
        assert_eq!(r.per_query["q1"], 1.0);
        assert_eq!(r.per_query["q2"], 0.25);
        assert_eq!(r.per_query["q3"], 0.0);
        assert!((r.mrr - 0.416_667).abs() < 1e-6);
        assert!((r.mrr - 5.0 / 12.0).abs() < 1e-15);
    }

    #[test]
    fn mrr_cutoff_and_missing_queries() {
        let run = vec![ranking("q1", &["a", "b", "c"])];
        let q = qrels(&[("q1", "c"), ("q2", "x")]);
        assert_eq!(mrr_at_k(&run, &q, 2, "t").per_query["q1"], 0.0);
        let r = mrr_at_k(&run, &q, 3, "t");
        assert!((r.per_query["q1"] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_query["q2"], 0.0);
        assert_eq!(r.num_queries(), 2);
    }

    #[test]
    fn mrr_excludes_queries_without_relevant() {
        let mut q = qrels(&[("q1", "a")]);
        q.insert("q2", "b", 0);
        let r = mrr_at_k(&[ranking("q1", &["a"]), ranking("q2", &["b"])], &q, 10, "t");
        assert_eq!(r.num_queries(), 1);
        assert_eq!(r.mrr, 1.0);
    }

    #[test]
    fn report_csv_round_trip() {
        let run = vec![ranking("q1", &["a", "b", "c"]), ranking("q2", &["b"])];
        let q = qrels(&[("q1", "c"), ("q2", "b")]);
        let r = mrr_at_k(&run, &q, 100, "t");
        let parsed = EvalReport::parse_csv(&r.to_csv(), Path::new("t.csv")).unwrap();
        assert_eq!(parsed.per_query, r.per_query);
        assert_eq!(parsed.mrr, r.mrr);
        assert!(r.to_csv().ends_with(&format!("AGGREGATE,{}\n", r.mrr)));
    }

    fn report(values: &[f64]) -> EvalReport {
        EvalReport {
            per_query: values.iter().enumerate().map(|(i, v)| (format!("q{i}"), *v)).collect(),
            mrr: 0.0,
            k: 100,
            tag: "t".into(),
        }
    }

    #[test]
    fn ttest_identical_reports() {
        let a = report(&[0.5, 1.0, 0.25]);
        let r = paired_t_test(&a, &a).unwrap();
        assert_eq!((r.t, r.p, r.n), (0.0, 1.0, 3));
    }

    #[test]
    fn ttest_constant_difference() {
        let a = report(&[0.6, 0.7, 0.8, 0.9]);
        let b = report(&[0.5, 0.6, 0.7, 0.8]);
        let diffs: Vec<f64> = [0.1; 4].to_vec();
        let r = paired_t_test_differences(&diffs).unwrap();
        assert!(r.t.is_infinite() && r.t > 0.0);
        assert!(r.p < 1e-12);
        // float subtraction makes these differences unequal in the last bits
        let r = paired_t_test(&a, &b).unwrap();
        assert!(r.p < 1e-12);
    }

    #[test]
    fn ttest_reference_value() {
        // scipy.stats.ttest_1samp([0.5, -0.2, 0.3, 0.0, 0.1], 0)
        let r = paired_t_test_differences(&[0.5, -0.2, 0.3, 0.0, 0.1]).unwrap();
        assert!((r.t - 1.158_648_244_043_315_2).abs() < 1e-9, "{}", r.t);
        assert!((r.p - 0.311_060_767_334_371_3).abs() < 1e-9, "{}", r.p);
    }

    #[test]
    fn ttest_errors() {
        let a = report(&[0.5, 1.0]);
        let b = report(&[0.5]);
        assert!(paired_t_test(&a, &b).is_err());
        assert!(paired_t_test(&b, &b).is_err());
        let mut c = report(&[0.5, 1.0]);
        let v = c.per_query.remove("q1").unwrap();
        c.per_query.insert("other".into(), v);
        assert!(paired_t_test(&a, &c).is_err());
    }

    #[test]
    fn ttest_antisymmetric() {
        let a = report(&[0.5, 1.0, 0.2, 0.0, 0.33]);
        let b = report(&[0.25, 1.0, 0.5, 0.1, 0.2]);
        let ab = paired_t_test(&a, &b).unwrap();
        let ba = paired_t_test(&b, &a).unwrap();
        assert_eq!(ab.t, -ba.t);
        assert_eq!(ab.p, ba.p);
    }

    fn doc(id: &str, body: &str) -> Document {
        Document {
            doc_id: id.into(),
            title: String::new(),
            url: String::new(),
            body: body.into(),
        }
    }

    #[test]
    fn rerank_zero_model_orders_by_doc_id() {
        let idx = InvertedIndex::build(
            &[doc("D3", "a b"), doc("D1", "a"), doc("D2", "a a a")],
            &AnalyzerConfig::default(),
        )
        .unwrap();
        let q = Query {
            query_id: "q1".into(),
            text: "a".into(),
        };
        let cands = ranking("q1", &["D2", "D3", "D1"]);
        let out = rerank(&ScorerParams::zeros(4), &idx, &q, &cands, 100, "m").unwrap();
        assert_eq!(out.doc_ids().collect::<Vec<_>>(), vec!["D1", "D2", "D3"]);
        assert!(out.docs.iter().all(|d| d.score == 0.0));
        assert_eq!(out.tag, "m+t");
        let one = rerank(&ScorerParams::zeros(4), &idx, &q, &cands, 1, "m").unwrap();
        assert_eq!(one.doc_ids().collect::<Vec<_>>(), vec!["D2"]);
        let missing = ranking("q1", &["D9"]);
        assert!(matches!(
            rerank(&ScorerParams::zeros(4), &idx, &q, &missing, 10, "m"),
            Err(Error::UnknownDocument(_))
        ));
    }
}
