//! Corpus, query, relevance-judgment and run-file I/O.
//!
//! Formats:
//!
//! * corpus: `doc_id \t title \t url \t body`, no header
//! * queries: `query_id \t text`
//! * qrels: `query_id 0 doc_id grade`, whitespace separated
//! * runs: `query_id Q0 doc_id rank score tag`, score printed with six decimals
//!
//! Blank lines are skipped everywhere; any other malformed line is an error.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::retrieval::{Ranking, ScoredDoc};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub title: String,
    pub url: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub query_id: String,
    pub text: String,
}

/// Graded relevance judgments keyed by query, then document.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QrelSet {
    judgments: BTreeMap<String, BTreeMap<String, u32>>,
}

impl QrelSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a judgment. Returns `false` if the pair was already judged, in
    /// which case the set is unchanged.
    pub fn insert(&mut self, query_id: &str, doc_id: &str, grade: u32) -> bool {
        let docs = self.judgments.entry(query_id.to_owned()).or_default();
        if docs.contains_key(doc_id) {
            return false;
        }
        docs.insert(doc_id.to_owned(), grade);
        true
    }

    /// Grade of a pair; unjudged pairs count as 0.
    pub fn grade(&self, query_id: &str, doc_id: &str) -> u32 {
        self.judgments
            .get(query_id)
            .and_then(|docs| docs.get(doc_id))
            .copied()
            .unwrap_or(0)
    }

    pub fn is_relevant(&self, query_id: &str, doc_id: &str) -> bool {
        self.grade(query_id, doc_id) >= 1
    }

    /// Relevant documents of a query in ascending doc_id order.
    pub fn relevant_docs<'a>(&'a self, query_id: &str) -> impl Iterator<Item = &'a str> + 'a {
        self.judgments
            .get(query_id)
            .into_iter()
            .flat_map(|docs| docs.iter())
            .filter(|(_, &g)| g >= 1)
            .map(|(d, _)| d.as_str())
    }

    pub fn has_relevant(&self, query_id: &str) -> bool {
        self.relevant_docs(query_id).next().is_some()
    }

    /// Judged queries in ascending order.
    pub fn query_ids(&self) -> impl Iterator<Item = &str> {
        self.judgments.keys().map(String::as_str)
    }

    /// All judgments as `(query_id, doc_id, grade)` in sorted order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, u32)> {
        self.judgments
            .iter()
            .flat_map(|(q, docs)| docs.iter().map(move |(d, &g)| (q.as_str(), d.as_str(), g)))
    }

    pub fn len(&self) -> usize {
        self.judgments.values().map(BTreeMap::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One line of a run file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunEntry {
    pub query_id: String,
    pub doc_id: String,
    pub rank: usize,
    pub score: f64,
    pub tag: String,
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|_| Error::Encoding { path: path.to_owned() })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Non-blank lines with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_owned(),
        line,
        message: message.into(),
    }
}

/// Corpus file layouts understood by [`load_corpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// `doc_id \t title \t url \t body`
    Tsv4,
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv4" => Ok(CorpusFormat::Tsv4),
            other => Err(Error::UnknownVariant {
                kind: "corpus format",
                value: other.to_owned(),
            }),
        }
    }
}

pub fn load_corpus(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Vec<Document>> {
    let path = path.as_ref();
    parse_corpus(&read_text(path)?, path, format)
}

pub fn parse_corpus(text: &str, path: &Path, format: CorpusFormat) -> Result<Vec<Document>> {
    let CorpusFormat::Tsv4 = format;
    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    for (lineno, line) in content_lines(text) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(parse_error(
                path,
                lineno,
                format!("expected 4 tab-separated columns, found {}", cols.len()),
            ));
        }
        if cols[0].is_empty() {
            return Err(parse_error(path, lineno, "empty doc_id"));
        }
        if !seen.insert(cols[0]) {
            return Err(Error::Duplicate {
                path: path.to_owned(),
                line: lineno,
                kind: "doc_id",
                id: cols[0].to_owned(),
            });
        }
        docs.push(Document {
            doc_id: cols[0].to_owned(),
            title: cols[1].to_owned(),
            url: cols[2].to_owned(),
            body: cols[3].to_owned(),
        });
    }
    Ok(docs)
}

pub fn write_corpus(docs: &[Document], path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &format_corpus(docs))
}

pub fn format_corpus(docs: &[Document]) -> String {
    let mut out = String::new();
    for d in docs {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", d.doc_id, d.title, d.url, d.body);
    }
    out
}

pub fn load_queries(path: impl AsRef<Path>) -> Result<Vec<Query>> {
    let path = path.as_ref();
    parse_queries(&read_text(path)?, path)
}

pub fn parse_queries(text: &str, path: &Path) -> Result<Vec<Query>> {
    let mut seen = HashSet::new();
    let mut queries = Vec::new();
    for (lineno, line) in content_lines(text) {
        let Some((id, body)) = line.split_once('\t') else {
            return Err(parse_error(path, lineno, "missing query text column"));
        };
        if id.is_empty() {
            return Err(parse_error(path, lineno, "empty query_id"));
        }
        if body.trim().is_empty() {
            return Err(parse_error(path, lineno, "empty query text"));
        }
        if !seen.insert(id) {
            return Err(Error::Duplicate {
                path: path.to_owned(),
                line: lineno,
                kind: "query_id",
                id: id.to_owned(),
            });
        }
        queries.push(Query {
            query_id: id.to_owned(),
            text: body.to_owned(),
        });
    }
    Ok(queries)
}

pub fn write_queries(queries: &[Query], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for q in queries {
        let _ = writeln!(out, "{}\t{}", q.query_id, q.text);
    }
    write_text(path.as_ref(), &out)
}

pub fn load_qrels(path: impl AsRef<Path>) -> Result<QrelSet> {
    let path = path.as_ref();
    parse_qrels(&read_text(path)?, path)
}

pub fn parse_qrels(text: &str, path: &Path) -> Result<QrelSet> {
    let mut qrels = QrelSet::new();
    for (lineno, line) in content_lines(text) {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 4 {
            return Err(parse_error(
                path,
                lineno,
                format!("expected 4 columns, found {}", cols.len()),
            ));
        }
        let grade: u32 = cols[3].parse().map_err(|_| {
            parse_error(
                path,
                lineno,
                format!("grade `{}` is not a non-negative integer", cols[3]),
            )
        })?;
        if !qrels.insert(cols[0], cols[2], grade) {
            return Err(Error::Duplicate {
                path: path.to_owned(),
                line: lineno,
                kind: "judgment",
                id: format!("{} {}", cols[0], cols[2]),
            });
        }
    }
    Ok(qrels)
}

pub fn write_qrels(qrels: &QrelSet, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for (q, d, g) in qrels.iter() {
        let _ = writeln!(out, "{q} 0 {d} {g}");
    }
    write_text(path.as_ref(), &out)
}

/// Serializes rankings as run lines, all carrying `tag`.
pub fn format_run(rankings: &[Ranking], tag: &str) -> Result<String> {
    if tag.is_empty() || tag.contains(char::is_whitespace) {
        return Err(Error::Config(format!(
            "run tag `{tag}` must be a non-empty single token"
        )));
    }
    let mut out = String::new();
    for ranking in rankings {
        ranking.validate()?;
        for (i, doc) in ranking.docs.iter().enumerate() {
            let _ = writeln!(
                out,
                "{} Q0 {} {} {:.6} {}",
                ranking.query_id,
                doc.doc_id,
                i + 1,
                doc.score,
                tag
            );
        }
    }
    Ok(out)
}

pub fn write_run(rankings: &[Ranking], tag: &str, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &format_run(rankings, tag)?)
}

pub fn read_run(path: impl AsRef<Path>) -> Result<Vec<Ranking>> {
    let path = path.as_ref();
    parse_run(&read_text(path)?, path)
}

/// Parses run lines. Each query's lines must be contiguous with ranks
/// 1, 2, .. in file order.
pub fn parse_run(text: &str, path: &Path) -> Result<Vec<Ranking>> {
    let mut rankings: Vec<Ranking> = Vec::new();
    let mut finished = HashSet::new();
    for (lineno, line) in content_lines(text) {
        let entry = parse_run_line(line).map_err(|m| parse_error(path, lineno, m))?;
        let continues = rankings.last().is_some_and(|r| r.query_id == entry.query_id);
        if !continues {
            if let Some(prev) = rankings.last() {
                finished.insert(prev.query_id.clone());
            }
            if finished.contains(&entry.query_id) {
                return Err(parse_error(
                    path,
                    lineno,
                    format!("lines for query `{}` are not contiguous", entry.query_id),
                ));
            }
            rankings.push(Ranking {
                query_id: entry.query_id.clone(),
                docs: Vec::new(),
                tag: entry.tag.clone(),
            });
        }
        let ranking = rankings.last_mut().unwrap();
        let expected = ranking.docs.len() + 1;
        if entry.rank != expected {
            return Err(parse_error(
                path,
                lineno,
                format!(
                    "query `{}`: expected rank {expected}, found {}",
                    entry.query_id, entry.rank
                ),
            ));
        }
        if let Some(prev) = ranking.docs.last() {
            if entry.score > prev.score {
                return Err(parse_error(path, lineno, "scores increase with rank"));
            }
        }
        if ranking.docs.iter().any(|d| d.doc_id == entry.doc_id) {
            return Err(parse_error(
                path,
                lineno,
                format!("document `{}` repeated within query", entry.doc_id),
            ));
        }
        ranking.docs.push(ScoredDoc {
            doc_id: entry.doc_id,
            score: entry.score,
        });
    }
    Ok(rankings)
}

fn parse_run_line(line: &str) -> std::result::Result<RunEntry, String> {
    let cols: Vec<&str> = line.split_whitespace().collect();
    if cols.len() != 6 {
        return Err(format!("expected 6 columns, found {}", cols.len()));
    }
    if cols[1] != "Q0" {
        return Err(format!("expected literal `Q0` in column 2, found `{}`", cols[1]));
    }
    let rank: usize = cols[3]
        .parse()
        .ok()
        .filter(|&r| r >= 1)
        .ok_or_else(|| format!("invalid rank `{}`", cols[3]))?;
    let score: f64 = cols[4]
        .parse()
        .ok()
        .filter(|s: &f64| s.is_finite())
        .ok_or_else(|| format!("invalid score `{}`", cols[4]))?;
    Ok(RunEntry {
        query_id: cols[0].to_owned(),
        doc_id: cols[2].to_owned(),
        rank,
        score,
        tag: cols[5].to_owned(),
    })
}

/// Flattens rankings into run entries with 1-based ranks.
pub fn run_entries(rankings: &[Ranking]) -> Vec<RunEntry> {
    rankings
        .iter()
        .flat_map(|r| {
            r.docs.iter().enumerate().map(move |(i, d)| RunEntry {
                query_id: r.query_id.clone(),
                doc_id: d.doc_id.clone(),
                rank: i + 1,
                score: d.score,
                tag: r.tag.clone(),
            })
        })
        .collect()
}
