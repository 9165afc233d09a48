//! In-memory inverted index with the collection statistics BM25 and
//! query-likelihood scoring need.
//!
//! Besides postings, the index keeps a per-document term-count vector of the
//! first [`RERANKER_MAX_TOKENS`] tokens (the "head"), which is the view of a
//! document the reranker's features are computed from.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;

use crate::binio::{read_file, Decoder, Encoder};
use crate::corpus_io::Document;
use crate::error::{Error, Result};
use crate::text_analysis::{analyze, document_text, AnalyzerConfig, RERANKER_MAX_TOKENS};

const MAGIC: &[u8; 8] = b"LCEINDEX";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc_ordinal: u32,
    pub term_frequency: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocEntry {
    pub doc_id: String,
    /// Post-analysis token count.
    pub length: u32,
}

/// Term counts over a document's leading tokens, sorted by term id.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DocHead {
    pub length: u32,
    pub terms: Vec<(u32, u32)>,
}

impl DocHead {
    pub fn term_frequency(&self, term_id: u32) -> u32 {
        self.terms
            .binary_search_by_key(&term_id, |&(t, _)| t)
            .map(|i| self.terms[i].1)
            .unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    analyzer: AnalyzerConfig,
    head_tokens: usize,
    terms: Vec<String>,
    term_ids: HashMap<String, u32>,
    postings: Vec<Vec<Posting>>,
    collection_freq: Vec<u64>,
    docs: Vec<DocEntry>,
    doc_ordinals: HashMap<String, u32>,
    heads: Vec<DocHead>,
    total_tokens: u64,
}

struct AnalyzedDoc {
    length: u32,
    counts: Vec<(String, u32)>,
    head: Vec<(String, u32)>,
    head_length: u32,
}

fn count_tokens(tokens: &[String]) -> Vec<(String, u32)> {
    let mut counts: HashMap<&str, u32> = HashMap::new();
    for t in tokens {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    counts.into_iter().map(|(t, c)| (t.to_owned(), c)).collect()
}

impl InvertedIndex {
    /// Indexes `corpus` in order; document ordinals follow corpus order.
    ///
    /// Documents are analyzed in parallel but merged sequentially, so the
    /// result does not depend on the thread count.
    pub fn build(corpus: &[Document], analyzer: &AnalyzerConfig) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let head_tokens = RERANKER_MAX_TOKENS;
        let analyzed: Vec<AnalyzedDoc> = corpus
            .par_iter()
            .map(|doc| {
                let tokens = analyze(&document_text(doc), analyzer);
                let head = &tokens[..tokens.len().min(head_tokens)];
                let counts = count_tokens(&tokens);
                let head_counts = if head.len() == tokens.len() {
                    counts.clone()
                } else {
                    count_tokens(head)
                };
                AnalyzedDoc {
                    length: tokens.len() as u32,
                    counts,
                    head: head_counts,
                    head_length: head.len() as u32,
                }
            })
            .collect();

        let mut doc_ordinals = HashMap::with_capacity(corpus.len());
        for (i, doc) in corpus.iter().enumerate() {
            if doc_ordinals.insert(doc.doc_id.clone(), i as u32).is_some() {
                return Err(Error::Config(format!("duplicate doc_id `{}` in corpus", doc.doc_id)));
            }
        }

        // Provisional ids in first-seen order, then renumbered alphabetically.
        let mut provisional: HashMap<&str, usize> = HashMap::new();
        let mut lists: Vec<Vec<Posting>> = Vec::new();
        for (ordinal, doc) in analyzed.iter().enumerate() {
            for (term, tf) in &doc.counts {
                let next = lists.len();
                let id = *provisional.entry(term.as_str()).or_insert(next);
                if id == next {
                    lists.push(Vec::new());
                }
                lists[id].push(Posting {
                    doc_ordinal: ordinal as u32,
                    term_frequency: *tf,
                });
            }
        }
        let mut sorted: Vec<(&str, usize)> = provisional.into_iter().collect();
        sorted.sort_unstable_by(|a, b| a.0.cmp(b.0));
        let terms: Vec<String> = sorted.iter().map(|(t, _)| (*t).to_owned()).collect();
        let term_ids: HashMap<String, u32> = terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let postings: Vec<Vec<Posting>> = sorted.iter().map(|&(_, id)| std::mem::take(&mut lists[id])).collect();
        let collection_freq = postings
            .iter()
            .map(|list| list.iter().map(|p| u64::from(p.term_frequency)).sum())
            .collect();

        let heads = analyzed
            .iter()
            .map(|doc| {
                let mut terms: Vec<(u32, u32)> = doc.head.iter().map(|(t, c)| (term_ids[t.as_str()], *c)).collect();
                terms.sort_unstable();
                DocHead {
                    length: doc.head_length,
                    terms,
                }
            })
            .collect();
        let docs: Vec<DocEntry> = corpus
            .iter()
            .zip(&analyzed)
            .map(|(d, a)| DocEntry {
                doc_id: d.doc_id.clone(),
                length: a.length,
            })
            .collect();
        let total_tokens = docs.iter().map(|d| u64::from(d.length)).sum();

        Ok(InvertedIndex {
            analyzer: analyzer.clone(),
            head_tokens,
            terms,
            term_ids,
            postings,
            collection_freq,
            docs,
            doc_ordinals,
            heads,
            total_tokens,
        })
    }

    pub fn analyzer(&self) -> &AnalyzerConfig {
        &self.analyzer
    }

    /// Tokenizes query text with the analyzer the index was built with.
    pub fn analyze_query(&self, text: &str) -> Vec<String> {
        analyze(text, &self.analyzer.with_max_tokens(None))
    }

    pub fn head_tokens(&self) -> usize {
        self.head_tokens
    }

    pub fn num_docs(&self) -> usize {
        self.docs.len()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.total_tokens as f64 / self.docs.len() as f64
    }

    pub fn term_id(&self, term: &str) -> Option<u32> {
        self.term_ids.get(term).copied()
    }

    pub fn term(&self, term_id: u32) -> &str {
        &self.terms[term_id as usize]
    }

    /// Terms in ascending order.
    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(String::as_str)
    }

    /// Posting list of `term`, sorted by document ordinal; empty if unseen.
    pub fn postings(&self, term: &str) -> &[Posting] {
        self.term_id(term).map(|id| self.postings_by_id(id)).unwrap_or(&[])
    }

    pub fn postings_by_id(&self, term_id: u32) -> &[Posting] {
        &self.postings[term_id as usize]
    }

    pub fn document_frequency(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn collection_frequency(&self, term: &str) -> u64 {
        self.term_id(term)
            .map(|id| self.collection_freq[id as usize])
            .unwrap_or(0)
    }

    pub fn collection_frequency_by_id(&self, term_id: u32) -> u64 {
        self.collection_freq[term_id as usize]
    }

    /// Frequency of `term` in a document, by binary search over postings.
    pub fn term_frequency(&self, term: &str, doc_ordinal: u32) -> u32 {
        let list = self.postings(term);
        list.binary_search_by_key(&doc_ordinal, |p| p.doc_ordinal)
            .map(|i| list[i].term_frequency)
            .unwrap_or(0)
    }

    pub fn docs(&self) -> &[DocEntry] {
        &self.docs
    }

    pub fn doc(&self, doc_ordinal: u32) -> &DocEntry {
        &self.docs[doc_ordinal as usize]
    }

    pub fn doc_ordinal(&self, doc_id: &str) -> Option<u32> {
        self.doc_ordinals.get(doc_id).copied()
    }

    pub fn doc_length(&self, doc_ordinal: u32) -> u32 {
        self.docs[doc_ordinal as usize].length
    }

    pub fn head(&self, doc_ordinal: u32) -> &DocHead {
        &self.heads[doc_ordinal as usize]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new(MAGIC, VERSION);
        enc.u8(u8::from(self.analyzer.lowercase()));
        enc.len(self.analyzer.stopwords().len());
        for s in self.analyzer.stopwords() {
            enc.str(s);
        }
        enc.u64(self.analyzer.max_tokens().unwrap_or(0) as u64);
        enc.u64(self.head_tokens as u64);

        enc.len(self.docs.len());
        for d in &self.docs {
            enc.str(&d.doc_id);
            enc.u32(d.length);
        }
        enc.len(self.terms.len());
        for (term, list) in self.terms.iter().zip(&self.postings) {
            enc.str(term);
            enc.len(list.len());
            for p in list {
                enc.u32(p.doc_ordinal);
                enc.u32(p.term_frequency);
            }
        }
        for h in &self.heads {
            enc.u32(h.length);
            enc.len(h.terms.len());
            for &(t, c) in &h.terms {
                enc.u32(t);
                enc.u32(c);
            }
        }
        enc.u64(self.total_tokens);
        enc.finish()
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut dec = Decoder::new("index file", data, MAGIC, VERSION)?;
        let lowercase = match dec.u8()? {
            0 => false,
            1 => true,
            v => return Err(dec.corrupt(format!("bad lowercase flag {v}"))),
        };
        let n_stop = dec.len(8)?;
        let stopwords = (0..n_stop).map(|_| dec.str()).collect::<Result<Vec<_>>>()?;
        let max_tokens = match dec.u64()? {
            0 => None,
            n => Some(n as usize),
        };
        let analyzer = AnalyzerConfig::new(lowercase, stopwords, max_tokens);
        let head_tokens = dec.u64()? as usize;

        let n_docs = dec.len(12)?;
        let mut docs = Vec::with_capacity(n_docs);
        for _ in 0..n_docs {
            docs.push(DocEntry {
                doc_id: dec.str()?,
                length: dec.u32()?,
            });
        }
        let n_terms = dec.len(16)?;
        let mut terms = Vec::with_capacity(n_terms);
        let mut postings = Vec::with_capacity(n_terms);
        for _ in 0..n_terms {
            terms.push(dec.str()?);
            let n = dec.len(8)?;
            let mut list = Vec::with_capacity(n);
            for _ in 0..n {
                list.push(Posting {
                    doc_ordinal: dec.u32()?,
                    term_frequency: dec.u32()?,
                });
            }
            postings.push(list);
        }
        let mut heads = Vec::with_capacity(n_docs);
        for _ in 0..n_docs {
            let length = dec.u32()?;
            let n = dec.len(8)?;
            let mut head_terms = Vec::with_capacity(n);
            for _ in 0..n {
                head_terms.push((dec.u32()?, dec.u32()?));
            }
            heads.push(DocHead {
                length,
                terms: head_terms,
            });
        }
        let total_tokens = dec.u64()?;
        dec.finish()?;

        let corrupt = |message: String| Error::Format {
            what: "index file",
            message,
        };
        if docs.is_empty() {
            return Err(corrupt("no documents".into()));
        }
        if terms.windows(2).any(|w| w[0] >= w[1]) {
            return Err(corrupt("term dictionary not strictly sorted".into()));
        }
        for (term, list) in terms.iter().zip(&postings) {
            let sorted = list.windows(2).all(|w| w[0].doc_ordinal < w[1].doc_ordinal);
            let in_range = list
                .iter()
                .all(|p| (p.doc_ordinal as usize) < n_docs && p.term_frequency >= 1);
            if list.is_empty() || !sorted || !in_range {
                return Err(corrupt(format!("invalid posting list for `{term}`")));
            }
        }
        for h in &heads {
            let valid =
                h.terms.windows(2).all(|w| w[0].0 < w[1].0) && h.terms.iter().all(|&(t, _)| (t as usize) < n_terms);
            if !valid {
                return Err(corrupt("invalid document head".into()));
            }
        }
        if docs.iter().map(|d| u64::from(d.length)).sum::<u64>() != total_tokens {
            return Err(corrupt("document lengths do not sum to total_tokens".into()));
        }
        let mut doc_ordinals = HashMap::with_capacity(n_docs);
        for (i, d) in docs.iter().enumerate() {
            if doc_ordinals.insert(d.doc_id.clone(), i as u32).is_some() {
                return Err(corrupt(format!("duplicate doc_id `{}`", d.doc_id)));
            }
        }
        let term_ids = terms.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        let collection_freq = postings
            .iter()
            .map(|list| list.iter().map(|p| u64::from(p.term_frequency)).sum())
            .collect();
        Ok(InvertedIndex {
            analyzer,
            head_tokens,
            terms,
            term_ids,
            postings,
            collection_freq,
            docs,
            doc_ordinals,
            heads,
            total_tokens,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&read_file(path.as_ref())?)
    }
}
