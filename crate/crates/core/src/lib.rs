//! Two-stage text retrieval with trainable rerankers.
//!
//! A first-stage retriever ([`retrieval`]) over an [`inverted_index`] produces
//! top-k candidate lists; a small feed-forward [`reranker`] rescores them. The
//! [`training`] module trains that reranker either pointwise with binary
//! cross-entropy or with localized contrastive estimation (LCE): a group
//! softmax over one positive and negatives sampled from the target
//! retriever's own top results. [`evaluation`] measures MRR@k and paired
//! significance; [`experiments`] generates a synthetic benchmark and runs the
//! group-size sweep and the train/test retriever cross-pairing.

mod binio;
pub mod corpus_io;
pub mod error;
pub mod evaluation;
pub mod experiments;
pub mod inverted_index;
pub mod reranker;
pub mod retrieval;
pub mod text_analysis;
pub mod training;

pub use error::{Error, Result};
