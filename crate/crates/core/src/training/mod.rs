//! Reranker training with either objective over the same localized groups.
//!
//! Each epoch draws one [`TrainingGroup`] per trainable query from the train
//! retriever's top-m candidates. The LCE objective applies a group softmax to
//! every group; the vanilla objective flattens the same groups into
//! independent labelled pairs scored with binary cross-entropy. Sampling
//! never depends on the objective, so the loss is the only difference
//! between the two.

mod loss;
mod optim;
mod sampler;

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use loss::{lce_batch_loss, lce_group_loss, vanilla_bce_loss};
pub use optim::{Adam, LinearSchedule};
pub use sampler::{sample_negatives, SamplerConfig, SkipReason, TrainingGroup};

use crate::corpus_io::{QrelSet, Query};
use crate::error::{Error, Result};
use crate::inverted_index::InvertedIndex;
use crate::reranker::{
    init_params, FeatureExtractor, FeatureNorm, FeatureVector, ScorerGradients, ScorerParams, DEFAULT_HIDDEN,
    NUM_FEATURES,
};
use crate::retrieval::Ranking;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Objective {
    Vanilla,
    Lce,
}

impl Objective {
    pub const ALL: [Objective; 2] = [Objective::Vanilla, Objective::Lce];

    pub fn name(self) -> &'static str {
        match self {
            Objective::Vanilla => "vanilla",
            Objective::Lce => "lce",
        }
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Objective::ALL
            .into_iter()
            .find(|o| o.name() == s)
            .ok_or_else(|| Error::UnknownVariant {
                kind: "objective",
                value: s.to_owned(),
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub objective: Objective,
    pub epochs: usize,
    pub learning_rate: f64,
    pub warmup_portion: f64,
    /// Queries (groups) per batch.
    pub batch_queries: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub hidden: usize,
    /// Seeds parameter initialization and batch order.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::Lce,
            epochs: 2,
            learning_rate: 1e-3,
            warmup_portion: 0.1,
            batch_queries: 8,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            hidden: DEFAULT_HIDDEN,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_portion) {
            return Err(Error::Config("warmup portion must lie in [0, 1)".into()));
        }
        if self.batch_queries == 0 || self.hidden == 0 {
            return Err(Error::Config("batch size and hidden size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub skipped_queries: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
    pub trainable_queries: usize,
    pub skipped_queries: usize,
    /// Groups drawn in each epoch, in query order.
    pub epoch_groups: Vec<Vec<TrainingGroup>>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,epoch,lr,loss,skipped_queries\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{:e},{:.9},{}",
                r.step, r.epoch, r.lr, r.loss, r.skipped_queries
            );
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// A trainable query with the features of its candidate pool cached.
struct QueryData<'a> {
    ranking: &'a Ranking,
    features: HashMap<String, FeatureVector>,
}

impl QueryData<'_> {
    fn features(&self, doc_id: &str) -> &FeatureVector {
        &self.features[doc_id]
    }
}

fn group_features<'a>(data: &'a QueryData<'_>, group: &TrainingGroup) -> Vec<&'a FeatureVector> {
    group.docs().map(|d| data.features(d)).collect()
}

/// Trains a reranker on groups sampled from `rankings` (the train
/// retriever's output).
///
/// Queries are visited in `queries` order; those without a ranking or that
/// the sampler skips are counted in the log. Feature normalization is fit on
/// every pooled candidate and positive of the trainable queries.
pub fn train(
    index: &InvertedIndex,
    rankings: &[Ranking],
    qrels: &QrelSet,
    queries: &[Query],
    train_config: &TrainConfig,
    sampler_config: &SamplerConfig,
) -> Result<(ScorerParams, TrainingLog)> {
    train_config.validate()?;
    sampler_config.validate()?;

    let by_query: HashMap<&str, &Ranking> = rankings.iter().map(|r| (r.query_id.as_str(), r)).collect();
    let mut data: Vec<QueryData> = Vec::new();
    let mut skipped = 0usize;
    let mut norm_samples = Vec::new();
    for query in queries {
        let Some(&ranking) = by_query.get(query.query_id.as_str()) else {
            skipped += 1;
            continue;
        };
        // A throwaway draw decides trainability; skips never consume randomness.
        let mut probe = ChaCha8Rng::seed_from_u64(0);
        let Ok(group) = sample_negatives(ranking, qrels, sampler_config, &mut probe) else {
            skipped += 1;
            continue;
        };
        let extractor = FeatureExtractor::new(index, &query.text);
        let mut features = HashMap::new();
        let pool = ranking.doc_ids().take(sampler_config.m);
        for doc_id in std::iter::once(group.positive.as_str()).chain(pool) {
            if !features.contains_key(doc_id) {
                let f = extractor.features(doc_id)?;
                norm_samples.push(f);
                features.insert(doc_id.to_owned(), f);
            }
        }
        data.push(QueryData { ranking, features });
    }
    if data.is_empty() {
        return Err(Error::NoTrainableQueries { skipped });
    }
    if skipped > 0 {
        log::info!("training: {} trainable queries, {} skipped", data.len(), skipped);
    }

    let norm = FeatureNorm::fit(&norm_samples);
    let mut params = init_params(train_config.seed, train_config.hidden, NUM_FEATURES, norm)?;
    let mut flat = params.trainable();
    let mut adam = Adam::new(
        flat.len(),
        train_config.adam_beta1,
        train_config.adam_beta2,
        train_config.adam_epsilon,
    );
    let batches_per_epoch = data.len().div_ceil(train_config.batch_queries);
    let schedule = LinearSchedule::new(
        train_config.learning_rate,
        train_config.warmup_portion,
        train_config.epochs * batches_per_epoch,
    );

    let mut sampler_rng = ChaCha8Rng::seed_from_u64(sampler_config.seed);
    let mut order_rng = ChaCha8Rng::seed_from_u64(train_config.seed);
    order_rng.set_stream(1);

    let mut log = TrainingLog {
        trainable_queries: data.len(),
        skipped_queries: skipped,
        ..TrainingLog::default()
    };
    let mut groups: Vec<TrainingGroup> = Vec::new();
    let mut step = 0usize;
    for epoch in 0..train_config.epochs {
        if epoch == 0 || sampler_config.resample_each_epoch {
            groups = data
                .iter()
                .map(|d| {
                    sample_negatives(d.ranking, qrels, sampler_config, &mut sampler_rng)
                        .expect("trainability checked during setup")
                })
                .collect();
        }
        log.epoch_groups.push(groups.clone());
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut order_rng);

        for batch in order.chunks(train_config.batch_queries) {
            let lr = schedule.lr(step);
            let mut grads = ScorerGradients::zeros(params.hidden);
            let loss = match train_config.objective {
                Objective::Lce => lce_batch_step(&params, &data, &groups, batch, &mut grads)?,
                Objective::Vanilla => vanilla_batch_step(&params, &data, &groups, batch, &mut grads)?,
            };
            adam.step(&mut flat, &grads.flat(), lr);
            params.set_trainable(&flat);
            log.rows.push(LogRow {
                step,
                epoch,
                lr,
                loss,
                skipped_queries: skipped,
            });
            step += 1;
        }
    }
    Ok((params, log))
}

/// Accumulates mean LCE gradients for a batch; groups in batch order, then
/// documents positive-first.
fn lce_batch_step(
    params: &ScorerParams,
    data: &[QueryData],
    groups: &[TrainingGroup],
    batch: &[usize],
    grads: &mut ScorerGradients,
) -> Result<f64> {
    let scale = 1.0 / batch.len() as f64;
    let mut losses = Vec::with_capacity(batch.len());
    for &qi in batch {
        let feats = group_features(&data[qi], &groups[qi]);
        let scores = feats.iter().map(|f| params.score(f)).collect::<Result<Vec<_>>>()?;
        let (loss, dscores) = lce_group_loss(&scores, 0)?;
        for (f, d) in feats.iter().zip(&dscores) {
            params.accumulate_backward(f, d * scale, grads)?;
        }
        losses.push(loss);
    }
    lce_batch_loss(&losses)
}

/// Accumulates mean BCE gradients over every (query, document) pair of the
/// batch's groups.
fn vanilla_batch_step(
    params: &ScorerParams,
    data: &[QueryData],
    groups: &[TrainingGroup],
    batch: &[usize],
    grads: &mut ScorerGradients,
) -> Result<f64> {
    let pairs: usize = batch.iter().map(|&qi| 1 + groups[qi].negatives.len()).sum();
    let scale = 1.0 / pairs as f64;
    let mut total = 0.0;
    for &qi in batch {
        for (i, f) in group_features(&data[qi], &groups[qi]).into_iter().enumerate() {
            let (loss, dscore) = vanilla_bce_loss(params.score(f)?, i == 0);
            params.accumulate_backward(f, dscore * scale, grads)?;
            total += loss;
        }
    }
    Ok(total * scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn objective_names_round_trip() {
        for o in Objective::ALL {
            assert_eq!(o.name().parse::<Objective>().unwrap(), o);
        }
        assert!("softmax".parse::<Objective>().is_err());
    }

    #[test]
    fn invalid_train_configs_are_rejected() {
        let bad = [
            TrainConfig {
                learning_rate: 0.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                warmup_portion: 1.0,
                ..TrainConfig::default()
            },
            TrainConfig {
                batch_queries: 0,
                ..TrainConfig::default()
            },
        ];
        for cfg in &bad {
            assert!(cfg.validate().is_err());
        }
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn log_csv_has_one_line_per_step() {
        let log = TrainingLog {
            rows: vec![LogRow {
                step: 0,
                epoch: 0,
                lr: 0.5,
                loss: 1.0,
                skipped_queries: 2,
            }],
            ..TrainingLog::default()
        };
        let csv = log.to_csv();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("step,epoch,lr,loss,skipped_queries\n"));
    }
}
