//! Shared tokenizer used by indexing, query parsing and feature extraction.

use std::collections::BTreeSet;

use crate::corpus_io::Document;

/// Token budget for the reranker's view of a document.
pub const RERANKER_MAX_TOKENS: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnalyzerConfig {
    lowercase: bool,
    stopwords: BTreeSet<String>,
    max_tokens: Option<usize>,
}

impl Default for AnalyzerConfig {
    fn default() -> Self {
        AnalyzerConfig {
            lowercase: true,
            stopwords: BTreeSet::new(),
            max_tokens: None,
        }
    }
}

impl AnalyzerConfig {
    /// Builds a config; stopwords are lowercased when `lowercase` is set so
    /// they match post-lowercasing tokens.
    pub fn new<I, S>(lowercase: bool, stopwords: I, max_tokens: Option<usize>) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let stopwords = stopwords
            .into_iter()
            .map(|s| {
                if lowercase {
                    s.as_ref().to_lowercase()
                } else {
                    s.as_ref().to_owned()
                }
            })
            .collect();
        AnalyzerConfig {
            lowercase,
            stopwords,
            max_tokens: max_tokens.filter(|&n| n > 0),
        }
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn stopwords(&self) -> &BTreeSet<String> {
        &self.stopwords
    }

    pub fn max_tokens(&self) -> Option<usize> {
        self.max_tokens
    }

    /// Same settings with a different token limit.
    pub fn with_max_tokens(&self, max_tokens: Option<usize>) -> Self {
        AnalyzerConfig {
            max_tokens: max_tokens.filter(|&n| n > 0),
            ..self.clone()
        }
    }
}

/// Splits `text` into maximal alphanumeric runs (lowercased when
/// configured), drops stopwords, then truncates to `max_tokens`.
pub fn analyze(text: &str, config: &AnalyzerConfig) -> Vec<String> {
    let limit = config.max_tokens.unwrap_or(usize::MAX);
    // Lowercasing can emit non-alphanumeric code points (combining marks), so
    // it runs before splitting.
    let folded;
    let text = if config.lowercase {
        folded = text.to_lowercase();
        folded.as_str()
    } else {
        text
    };
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !config.stopwords.contains(*t))
        .map(str::to_owned)
        .take(limit)
        .collect()
}

/// Title, url and body joined by single spaces.
pub fn document_text(doc: &Document) -> String {
    format!("{} {} {}", doc.title, doc.url, doc.body)
}
