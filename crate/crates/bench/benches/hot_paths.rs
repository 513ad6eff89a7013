//! Microbenchmarks for the paths that dominate training and evaluation:
//! the single-document ELBO forward/backward pair, the Dirichlet sampler,
//! one full slice of training, and NPMI scoring.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;
use std::rc::Rc;

use contm_bench::bench_stream;
use contm_core::continual::{train_slice, SliceTrainConfig};
use contm_core::corpus::{BowVector, Split};
use contm_core::eval::{build_cooc_restricted, npmi_coherence, top_words, NPMI_EPS};
use contm_core::model::{
    backward, elbo_local, sample_dirichlet, DirichletDraws, DirichletParams, EncoderParams,
    ModelHyper, NoiseDraws, PriorConcentration, Reparam, TopicMatrix,
};
use ndarray::Array1;

fn elbo_backward(c: &mut Criterion) {
    let (k, v, hidden) = (50, 5000, 100);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let enc = EncoderParams::init(k, v, hidden, &mut rng);
    let global = TopicMatrix::init_global(k, v, &mut rng);
    let delta = TopicMatrix::zeros(k, v, contm_core::model::TopicRole::Delta);
    let local = Rc::new(global.plus(&delta));
    let prior = PriorConcentration::symmetric(k, 0.02);
    let hyper = ModelHyper::default();
    let bow = BowVector {
        entries: (0..60u32).map(|i| (i * 80, 1 + (i % 3))).collect(),
    };
    let draws = NoiseDraws::sample(&mut rng, k, Reparam::GammaBoost, hyper.boost);

    c.bench_function("elbo_forward_k50_v5000", |b| {
        b.iter(|| {
            elbo_local(&bow, &enc, Rc::clone(&local), &prior, &draws, &hyper)
                .unwrap()
                .0
        })
    });
    let (_, cache) = elbo_local(&bow, &enc, Rc::clone(&local), &prior, &draws, &hyper).unwrap();
    c.bench_function("backward_k50_v5000", |b| b.iter(|| backward(&cache, &enc)));
}

fn dirichlet_sampler(c: &mut Criterion) {
    let alpha = DirichletParams {
        alpha_hat: Array1::from_iter((0..50).map(|i| 0.05 + 0.1 * i as f64)),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    c.bench_function("sample_dirichlet_k50_b10", |b| {
        b.iter_batched(
            || DirichletDraws::sample(&mut rng, 50, 10),
            |draws| sample_dirichlet(&alpha, &draws).unwrap().0,
            BatchSize::SmallInput,
        )
    });
}

fn slice_training(c: &mut Criterion) {
    let (k, v) = (5, 200);
    let slices = bench_stream(k, v, 1, 200, 50);
    let cfg = SliceTrainConfig {
        steps: 20,
        batch: 50,
        hidden: 50,
        ..SliceTrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let global = TopicMatrix::init_global(k, v, &mut rng);
    c.bench_function("train_slice_20_steps", |b| {
        b.iter(|| train_slice(&slices[0], &global, &cfg, None).unwrap())
    });
}

fn npmi_scoring(c: &mut Criterion) {
    let slices = bench_stream(5, 200, 3, 300, 50);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let matrix = TopicMatrix::init_global(10, 200, &mut rng);
    let tops = top_words(&matrix, 10);
    let wanted: HashSet<u32> = tops.topics.iter().flatten().copied().collect();
    c.bench_function("npmi_10_topics_900_docs", |b| {
        b.iter(|| {
            let store = build_cooc_restricted(&slices, 3, &wanted);
            npmi_coherence(&tops, &store, NPMI_EPS).unwrap().1
        })
    });
    // Keep the fixture honest: every document carries tokens.
    assert!(slices
        .iter()
        .flat_map(|s| s.docs_in(Split::Train))
        .all(|d| !d.bow.is_empty()));
}

criterion_group!(
    benches,
    elbo_backward,
    dirichlet_sampler,
    slice_training,
    npmi_scoring
);
criterion_main!(benches);
