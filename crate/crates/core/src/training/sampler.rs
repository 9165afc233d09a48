//! Localized negative sampling from a retriever's top-m candidates.

use rand::seq::index::sample;
use rand::Rng;

use crate::corpus_io::QrelSet;
use crate::error::{Error, Result};
use crate::retrieval::Ranking;

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    /// Depth of the candidate pool negatives are drawn from.
    pub m: usize,
    /// Documents per group: one positive plus `group_size - 1` negatives.
    pub group_size: usize,
    pub seed: u64,
    pub resample_each_epoch: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            m: 100,
            group_size: 8,
            seed: 0,
            resample_each_epoch: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::Config("group size must be at least 2".into()));
        }
        if self.m == 0 || self.group_size - 1 > self.m {
            return Err(Error::Config(format!(
                "pool depth m={} cannot supply {} negatives",
                self.m,
                self.group_size - 1
            )));
        }
        Ok(())
    }
}

/// One positive and its sampled negatives for a query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingGroup {
    pub query_id: String,
    pub positive: String,
    pub negatives: Vec<String>,
}

impl TrainingGroup {
    /// Positive first, then negatives.
    pub fn docs(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.positive.as_str()).chain(self.negatives.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    NoRelevant,
    TooFewNegatives { available: usize },
}

/// Draws `group_size - 1` distinct non-relevant documents uniformly from the
/// top `m` of `ranking`. The positive is the lowest-doc_id relevant document.
///
/// Queries without a relevant document, or with too few non-relevant
/// documents in the pool, are skipped without consuming randomness. Sampled
/// negatives are returned in ranking order.
pub fn sample_negatives<R: Rng + ?Sized>(
    ranking: &Ranking,
    qrels: &QrelSet,
    config: &SamplerConfig,
    rng: &mut R,
) -> std::result::Result<TrainingGroup, SkipReason> {
    let qid = ranking.query_id.as_str();
    let positive = qrels.relevant_docs(qid).next().ok_or(SkipReason::NoRelevant)?;
    let pool: Vec<&str> = ranking
        .doc_ids()
        .take(config.m)
        .filter(|d| !qrels.is_relevant(qid, d))
        .collect();
    let wanted = config.group_size.saturating_sub(1);
    if pool.len() < wanted {
        return Err(SkipReason::TooFewNegatives { available: pool.len() });
    }
    let mut picked = sample(rng, pool.len(), wanted).into_vec();
    picked.sort_unstable();
    Ok(TrainingGroup {
        query_id: qid.to_owned(),
        positive: positive.to_owned(),
        negatives: picked.into_iter().map(|i| pool[i].to_owned()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::ScoredDoc;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ranking(n: usize) -> Ranking {
        Ranking {
            query_id: "q".into(),
            docs: (0..n)
                .map(|i| ScoredDoc {
                    doc_id: format!("D{i:02}"),
                    score: (n - i) as f64,
                })
                .collect(),
            tag: "bm25".into(),
        }
    }

    fn cfg(m: usize, g: usize) -> SamplerConfig {
        SamplerConfig {
            m,
            group_size: g,
            seed: 0,
            resample_each_epoch: true,
        }
    }

    #[test]
    fn all_relevant_pool_is_skipped() {
        let mut qrels = QrelSet::new();
        for i in 0..5 {
            qrels.insert("q", &format!("D{i:02}"), 1);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            sample_negatives(&ranking(5), &qrels, &cfg(5, 2), &mut rng),
            Err(SkipReason::TooFewNegatives { available: 0 })
        );
    }

    #[test]
    fn no_relevant_is_skipped() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            sample_negatives(&ranking(5), &QrelSet::new(), &cfg(5, 2), &mut rng),
            Err(SkipReason::NoRelevant)
        );
    }

    #[test]
    fn forced_selection_ignores_seed() {
        let mut qrels = QrelSet::new();
        qrels.insert("q", "D01", 1);
        qrels.insert("q", "D03", 1);
        // top-5 holds D00, D02, D04 as the only non-relevant docs
        let groups: Vec<_> = (0..20)
            .map(|seed| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                sample_negatives(&ranking(10), &qrels, &cfg(5, 4), &mut rng).unwrap()
            })
            .collect();
        for g in &groups {
            assert_eq!(g.positive, "D01");
            assert_eq!(g.negatives, vec!["D00", "D02", "D04"]);
        }
    }

    #[test]
    fn positive_is_lowest_relevant_doc_id_even_if_unretrieved() {
        let mut qrels = QrelSet::new();
        qrels.insert("q", "D05", 1);
        qrels.insert("q", "A99", 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = sample_negatives(&ranking(10), &qrels, &cfg(10, 3), &mut rng).unwrap();
        assert_eq!(g.positive, "A99");
        assert!(!g.negatives.contains(&"D05".to_string()));
        assert_eq!(g.docs().count(), 3);
    }

    #[test]
    fn seeded_sample_reproduces() {
        let mut qrels = QrelSet::new();
        qrels.insert("q", "D02", 1);
        qrels.insert("q", "D06", 0);
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_negatives(&ranking(20), &qrels, &cfg(10, 4), &mut rng).unwrap()
        };
        let a = draw(42);
        assert_eq!(a, draw(42));
        assert_eq!(a.negatives.len(), 3);
        let in_pool = |d: &String| d.as_str() < "D10" && d != "D02";
        assert!(a.negatives.iter().all(in_pool));
    }

    #[test]
    fn config_validation() {
        assert!(cfg(10, 1).validate().is_err());
        assert!(cfg(3, 5).validate().is_err());
        assert!(cfg(4, 5).validate().is_ok());
    }
}
