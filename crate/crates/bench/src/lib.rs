//! Benchmark-only crate; see `benches/hot_paths.rs`.
//!
//! Shared fixture builders live here so the bench harness stays thin.

use contm_core::continual::{block_topic_matrix, generate_synthetic};
use contm_core::corpus::TimeSlice;
use contm_core::model::{PriorConcentration, TopicMatrix, TopicRole};

/// A deterministic synthetic stream sized for microbenchmarks.
pub fn bench_stream(k: usize, v: usize, slices: usize, docs: usize, len: usize) -> Vec<TimeSlice> {
    let truth = block_topic_matrix(k, v, 2.5);
    let deltas = vec![TopicMatrix::zeros(k, v, TopicRole::Delta); slices];
    let prior = PriorConcentration::symmetric(k, 0.02);
    generate_synthetic(
        &truth,
        &deltas,
        &prior,
        &vec![docs; slices],
        len,
        (0.8, 0.1, 0.1),
        1234,
    )
}
