use lcerank::corpus_io::QrelSet;
use lcerank::experiments::{generate_synth, SynthConfig, SynthData};
use lcerank::inverted_index::InvertedIndex;
use lcerank::reranker::{init_params, score_backward, FeatureNorm, FeatureVector, ScorerGradients, ScorerParams};
use lcerank::retrieval::{retrieve_all, Ranking, RetrieverConfig, RetrieverKind, ScoredDoc};
use lcerank::text_analysis::AnalyzerConfig;
use lcerank::training::{
    lce_group_loss, sample_negatives, train, vanilla_bce_loss, Objective, SamplerConfig, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

/// Central-difference gradient of `f` over the trainable parameters.
fn numeric_grad(params: &ScorerParams, f: impl Fn(&ScorerParams) -> f64) -> Vec<f64> {
    let base = params.trainable();
    let mut p = params.clone();
    (0..base.len())
        .map(|i| {
            let mut x = base.clone();
            x[i] = base[i] + H;
            p.set_trainable(&x);
            let up = f(&p);
            x[i] = base[i] - H;
            p.set_trainable(&x);
            let down = f(&p);
            (up - down) / (2.0 * H)
        })
        .collect()
}

fn assert_close(analytic: &[f64], numeric: &[f64], what: &str) {
    assert_eq!(analytic.len(), numeric.len());
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
        assert!(rel < 1e-4, "{what}: parameter {i}: analytic {a} numeric {n}");
    }
}

fn random_features(rng: &mut ChaCha8Rng) -> FeatureVector {
    FeatureVector(std::array::from_fn(|_| rng.gen_range(-3.0..3.0)))
}

fn random_params(rng: &mut ChaCha8Rng) -> ScorerParams {
    let norm = FeatureNorm {
        mean: std::array::from_fn(|_| rng.gen_range(-1.0..1.0)),
        std: std::array::from_fn(|_| rng.gen_range(0.5..2.0)),
    };
    let hidden = rng.gen_range(1..20);
    let mut p = init_params(rng.gen(), hidden, 6, norm).unwrap();
    // Non-zero biases so hidden units sit on both sides of the kink.
    let mut flat = p.trainable();
    for x in flat.iter_mut() {
        *x += rng.gen_range(-0.5..0.5);
    }
    p.set_trainable(&flat);
    p
}

#[test]
fn scorer_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..120 {
        let p = random_params(&mut rng);
        let f = random_features(&mut rng);
        let upstream = rng.gen_range(-2.0..2.0);
        let analytic = score_backward(&p, &f, upstream).unwrap().flat();
        let numeric = numeric_grad(&p, |q| upstream * q.score(&f).unwrap());
        assert_close(&analytic, &numeric, "score");
    }
}

#[test]
fn bce_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..120 {
        let s = rng.gen_range(-10.0..10.0);
        let label = rng.gen_bool(0.5);
        let (_, d) = vanilla_bce_loss(s, label);
        let n = (vanilla_bce_loss(s + H, label).0 - vanilla_bce_loss(s - H, label).0) / (2.0 * H);
        assert_close(&[d], &[n], "bce");

        // And through the scorer.
        let p = random_params(&mut rng);
        let f = random_features(&mut rng);
        let (_, d) = vanilla_bce_loss(p.score(&f).unwrap(), label);
        let analytic = score_backward(&p, &f, d).unwrap().flat();
        let numeric = numeric_grad(&p, |q| vanilla_bce_loss(q.score(&f).unwrap(), label).0);
        assert_close(&analytic, &numeric, "bce through scorer");
    }
}

#[test]
fn lce_gradient_through_scorer_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..120 {
        let p = random_params(&mut rng);
        let g = rng.gen_range(2..9);
        let feats: Vec<FeatureVector> = (0..g).map(|_| random_features(&mut rng)).collect();
        let pos = rng.gen_range(0..g);
        let loss = |q: &ScorerParams| {
            let s: Vec<f64> = feats.iter().map(|f| q.score(f).unwrap()).collect();
            lce_group_loss(&s, pos).unwrap().0
        };
        let scores: Vec<f64> = feats.iter().map(|f| p.score(f).unwrap()).collect();
        let (_, dscores) = lce_group_loss(&scores, pos).unwrap();
        let mut grads = ScorerGradients::zeros(p.hidden);
        for (f, d) in feats.iter().zip(&dscores) {
            p.accumulate_backward(f, *d, &mut grads).unwrap();
        }
        assert_close(&grads.flat(), &numeric_grad(&p, loss), "lce");
    }
}

#[test]
fn loss_identities() {
    let (loss, grad) = lce_group_loss(&[0.3; 4], 0).unwrap();
    assert!((loss - 4f64.ln()).abs() < 1e-12);
    for (g, want) in grad.iter().zip([-0.75, 0.25, 0.25, 0.25]) {
        assert!((g - want).abs() < 1e-12);
    }
    let s = [0.1, -2.0, 3.5, 0.0];
    let shifted: Vec<f64> = s.iter().map(|x| x + 1e6).collect();
    let (a, ga) = lce_group_loss(&s, 2).unwrap();
    let (b, gb) = lce_group_loss(&shifted, 2).unwrap();
    assert!((a - b).abs() < 1e-9);
    for (x, y) in ga.iter().zip(&gb) {
        assert!((x - y).abs() < 1e-9);
    }
    assert!((vanilla_bce_loss(0.0, true).0 - 2f64.ln()).abs() < 1e-12);
    assert!((vanilla_bce_loss(0.0, false).0 - 2f64.ln()).abs() < 1e-12);
}

struct Fixture {
    data: SynthData,
    index: InvertedIndex,
    run: Vec<Ranking>,
}

fn fixture() -> Fixture {
    let cfg = SynthConfig {
        n_queries: 30,
        n_docs: 1500,
        seed: 4,
        ..SynthConfig::default()
    };
    let data = generate_synth(&cfg).unwrap();
    let index = InvertedIndex::build(&data.corpus, &AnalyzerConfig::default()).unwrap();
    let run = retrieve_all(
        &index,
        &data.queries,
        &RetrieverConfig::new(RetrieverKind::QlDirichlet),
        None,
    )
    .unwrap();
    Fixture { data, index, run }
}

fn configs(objective: Objective, epochs: usize) -> (TrainConfig, SamplerConfig) {
    let t = TrainConfig {
        objective,
        epochs,
        seed: 9,
        ..TrainConfig::default()
    };
    let s = SamplerConfig {
        group_size: 4,
        m: 20,
        seed: 9,
        ..SamplerConfig::default()
    };
    (t, s)
}

#[test]
fn training_is_deterministic_and_thread_independent() {
    let fx = fixture();
    let (t, s) = configs(Objective::Lce, 3);
    let go = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| train(&fx.index, &fx.run, &fx.data.qrels, &fx.data.queries, &t, &s).unwrap())
    };
    let (p1, l1) = go(1);
    let (p2, l2) = go(4);
    assert_eq!(p1.to_bytes(), p2.to_bytes());
    assert_eq!(l1, l2);
    assert_eq!(l1.rows.len(), 3 * 30usize.div_ceil(t.batch_queries));
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let fx = fixture();
    let (t, s) = configs(Objective::Lce, 0);
    let (lce, log) = train(&fx.index, &fx.run, &fx.data.qrels, &fx.data.queries, &t, &s).unwrap();
    assert!(log.rows.is_empty());
    let (t, s) = configs(Objective::Vanilla, 0);
    let (vanilla, _) = train(&fx.index, &fx.run, &fx.data.qrels, &fx.data.queries, &t, &s).unwrap();
    assert_eq!(lce, vanilla);
    let fresh = init_params(9, lce.hidden, 6, lce.norm.clone()).unwrap();
    assert_eq!(lce, fresh);
}

#[test]
fn objectives_see_identical_groups() {
    let fx = fixture();
    let (t, s) = configs(Objective::Lce, 2);
    let (_, a) = train(&fx.index, &fx.run, &fx.data.qrels, &fx.data.queries, &t, &s).unwrap();
    let (t, s) = configs(Objective::Vanilla, 2);
    let (_, b) = train(&fx.index, &fx.run, &fx.data.qrels, &fx.data.queries, &t, &s).unwrap();
    assert_eq!(a.epoch_groups, b.epoch_groups);
    assert_ne!(
        a.epoch_groups[0], a.epoch_groups[1],
        "negatives are resampled each epoch"
    );
}

#[test]
fn fixed_negatives_reuse_the_first_draw() {
    let fx = fixture();
    let (t, mut s) = configs(Objective::Lce, 3);
    s.resample_each_epoch = false;
    let (_, log) = train(&fx.index, &fx.run, &fx.data.qrels, &fx.data.queries, &t, &s).unwrap();
    assert!(log.epoch_groups.iter().all(|g| *g == log.epoch_groups[0]));
}

#[test]
fn training_lowers_the_loss() {
    let fx = fixture();
    let (mut t, s) = configs(Objective::Lce, 30);
    t.learning_rate = 1e-2;
    let (_, log) = train(&fx.index, &fx.run, &fx.data.qrels, &fx.data.queries, &t, &s).unwrap();
    let per_epoch = |e: usize| {
        let rows: Vec<f64> = log.rows.iter().filter(|r| r.epoch == e).map(|r| r.loss).collect();
        rows.iter().sum::<f64>() / rows.len() as f64
    };
    assert!(per_epoch(29) < per_epoch(0), "{} vs {}", per_epoch(29), per_epoch(0));
}

#[test]
fn sampler_draws_negatives_uniformly() {
    let docs: Vec<ScoredDoc> = (0..12)
        .map(|i| ScoredDoc {
            doc_id: format!("d{i:02}"),
            score: 12.0 - i as f64,
        })
        .collect();
    let ranking = Ranking::from_scored("q", "r", docs, 12);
    let mut qrels = QrelSet::new();
    qrels.insert("q", "d03", 1);
    // Pool is the top 11: ten non-relevant candidates.
    let cfg = SamplerConfig {
        m: 11,
        group_size: 4,
        ..SamplerConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let trials = 20_000;
    let mut counts = std::collections::BTreeMap::new();
    for _ in 0..trials {
        let g = sample_negatives(&ranking, &qrels, &cfg, &mut rng).unwrap();
        assert_eq!(g.positive, "d03");
        assert_eq!(g.negatives.len(), 3);
        for n in g.negatives {
            *counts.entry(n).or_insert(0usize) += 1;
        }
    }
    assert_eq!(counts.len(), 10);
    assert!(!counts.contains_key("d11"), "documents below m are never drawn");
    let expected = trials as f64 * 3.0 / 10.0;
    let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 99.9th percentile of chi-square with 9 degrees of freedom.
    assert!(chi2 < 27.88, "chi-square {chi2}");
}
