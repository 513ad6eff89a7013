//! The continual training loop: per-slice optimization of the encoder and a
//! local topic delta against a frozen global matrix, followed by the
//! rho-weighted running-average update of the global matrix.
//!
//! The outer loop over slices is strictly sequential; each slice sees only
//! its own documents plus the inherited global matrix. Within a slice every
//! random draw is keyed by (seed, slice, step, document key), so a run is a
//! pure function of the seed and the document set; the order documents
//! arrive in cannot change anything.

pub mod persist;

use ndarray::Array1;
use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::rc::Rc;

use crate::corpus::{doc_key, slice_and_split, BowVector, BucketedDoc, Split, TimeSlice};
use crate::model::math::substream_seed;
use crate::model::{
    backward_into, elbo_mean_field, elbo_with_rng, AdamState, EncoderParams, Gradients,
    ModelError, ModelHyper, PriorConcentration, Reparam, TopicMatrix, TopicRole,
};

// Substream domain tags.
const GLOBAL_INIT: u64 = 0x676c6f62; // "glob"
const ENC_INIT: u64 = 0x656e6309; // "enc"
const BATCH_ORDER: u64 = 0x62617463; // "batc"
const NOISE: u64 = 0x6e6f6973; // "nois"
const SYNTH: u64 = 0x73796e74; // "synt"

/// Parameters of the power-law step-size schedule
/// rho_t = 1 / (tau0 + t)^kappa with kappa in (0.5, 1] and tau0 >= 0.
/// kappa controls the rate of forgetting; tau0 damps early updates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    pub tau0: f64,
    pub kappa: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams {
            tau0: 1.0,
            kappa: 0.7,
        }
    }
}

/// Exact schedule value for 1-based slice index t.
pub fn rho(t: usize, sched: &ScheduleParams) -> f64 {
    assert!(t >= 1, "slice index is 1-based");
    assert!(sched.tau0 >= 0.0, "tau0 must be >= 0");
    assert!(
        sched.kappa > 0.5 && sched.kappa <= 1.0,
        "kappa must lie in (0.5, 1]"
    );
    1.0 / (sched.tau0 + t as f64).powf(sched.kappa)
}

/// The global-update step size, either the power-law schedule or a constant
/// (rho = 1 reproduces a memoryless per-slice model; useful as a baseline).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoSchedule {
    Power(ScheduleParams),
    Constant(f64),
}

impl RhoSchedule {
    pub fn rho(&self, t: usize) -> f64 {
        match self {
            RhoSchedule::Power(p) => rho(t, p),
            RhoSchedule::Constant(r) => {
                assert!((0.0..=1.0).contains(r), "constant rho must lie in [0,1]");
                *r
            }
        }
    }
}

impl Default for RhoSchedule {
    fn default() -> Self {
        RhoSchedule::Power(ScheduleParams::default())
    }
}

/// Per-slice optimization settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceTrainConfig {
    /// Optimizer steps J per slice.
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Carry the encoder forward instead of re-initializing per slice.
    pub warm_start: bool,
    /// Stop early when the validation ELBO plateaus (patience 10 evals).
    pub early_stop: bool,
    pub reparam: Reparam,
    /// Symmetric prior concentration.
    pub alpha0: f64,
    pub hidden: usize,
    pub alpha_min: f64,
    pub boost: u32,
}

impl Default for SliceTrainConfig {
    fn default() -> Self {
        SliceTrainConfig {
            steps: 200,
            batch: 100,
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 42,
            warm_start: false,
            early_stop: false,
            reparam: Reparam::GammaBoost,
            alpha0: 0.02,
            hidden: 100,
            alpha_min: 1e-4,
            boost: 10,
        }
    }
}

impl SliceTrainConfig {
    fn hyper(&self) -> ModelHyper {
        ModelHyper {
            alpha_min: self.alpha_min,
            boost: self.boost,
            reparam: self.reparam,
        }
    }
}

/// Errors from the continual loop.
#[derive(Debug, thiserror::Error)]
pub enum ContinualError {
    #[error("slice {t} has no training documents")]
    EmptySlice { t: usize },
    /// Divergence aborts the slice; `last` carries the most recent finite
    /// parameter state for post-mortems when one survived.
    #[error("training diverged on slice {t} at step {step}")]
    NonFinite {
        t: usize,
        step: usize,
        last: Option<Box<SliceFit>>,
    },
    #[error("slices must arrive in order: expected {expected}, got {got}")]
    OutOfOrder { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Everything a finished slice leaves behind.
#[derive(Debug, Clone)]
pub struct SliceRecord {
    pub t: usize,
    pub label: i64,
    pub rho: f64,
    pub encoder: EncoderParams,
    pub delta: TopicMatrix,
    pub local: TopicMatrix,
    /// Running global after absorbing this slice.
    pub global_after: TopicMatrix,
    /// Mean-field validation ELBO per token before/after training, when the
    /// slice has validation documents.
    pub val_elbo_before: Option<f64>,
    pub val_elbo_after: Option<f64>,
}

/// The trained model over the whole stream: one record per slice plus the
/// final global matrix.
#[derive(Debug, Clone)]
pub struct ModelTimeline {
    pub schedule: RhoSchedule,
    pub slices: Vec<SliceRecord>,
    pub global: TopicMatrix,
}

impl ModelTimeline {
    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn slice(&self, t: usize) -> Option<&SliceRecord> {
        self.slices.get(t.checked_sub(1)?)
    }
}

/// Elementwise convex combination: (1 - rho) * global + rho * local.
pub fn update_global(global: &TopicMatrix, local: &TopicMatrix, rho_t: f64) -> TopicMatrix {
    assert!((0.0..=1.0).contains(&rho_t), "rho must lie in [0,1]");
    assert_eq!(
        global.values.dim(),
        local.values.dim(),
        "global/local shape mismatch"
    );
    TopicMatrix {
        values: global.values.mapv(|g| g * (1.0 - rho_t))
            + &local.values.mapv(|l| l * rho_t),
        role: TopicRole::Global,
    }
}

/// Result of fitting one slice, before the global update.
#[derive(Debug, Clone)]
pub struct SliceFit {
    pub encoder: EncoderParams,
    pub delta: TopicMatrix,
    pub local: TopicMatrix,
    pub val_elbo_before: Option<f64>,
    pub val_elbo_after: Option<f64>,
    /// Optimizer steps actually taken (less than J when early stopping
    /// fires).
    pub steps_run: usize,
}

fn mean_field_per_token(
    docs: &[&crate::corpus::SliceDoc],
    enc: &EncoderParams,
    local: &TopicMatrix,
    prior: &PriorConcentration,
    alpha_min: f64,
) -> Option<f64> {
    if docs.is_empty() {
        return None;
    }
    let mut total = 0.0;
    let mut tokens = 0u64;
    for doc in docs {
        match elbo_mean_field(&doc.bow, enc, local, prior, alpha_min) {
            Ok(v) => {
                total += v;
                tokens += doc.bow.token_count();
            }
            Err(_) => continue,
        }
    }
    if tokens == 0 {
        None
    } else {
        Some(total / tokens as f64)
    }
}

/// Fits the encoder and local delta for one slice against a frozen global
/// matrix: J Adam steps on minibatch ELBO gradients, encoder freshly
/// initialized (or warm-started), delta starting at zero. Returns
/// local = global + delta exactly.
pub fn train_slice(
    slice: &TimeSlice,
    global: &TopicMatrix,
    cfg: &SliceTrainConfig,
    warm_from: Option<&EncoderParams>,
) -> Result<SliceFit, ContinualError> {
    let t = slice.t;
    let k = global.num_topics();
    let v = global.vocab_size();
    let mut train_docs: Vec<&crate::corpus::SliceDoc> = slice
        .docs_in(Split::Train)
        .filter(|d| !d.bow.is_empty())
        .collect();
    if train_docs.is_empty() {
        return Err(ContinualError::EmptySlice { t });
    }
    // Canonical order: everything downstream keys off position-independent
    // document identity.
    train_docs.sort_by_key(|d| d.key);
    let val_docs: Vec<&crate::corpus::SliceDoc> = {
        let mut v: Vec<_> = slice
            .docs_in(Split::Val)
            .filter(|d| !d.bow.is_empty())
            .collect();
        v.sort_by_key(|d| d.key);
        v
    };

    let mut enc = match warm_from {
        Some(prev) if cfg.warm_start => prev.clone(),
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(cfg.seed, &[ENC_INIT, t as u64]));
            EncoderParams::init(k, v, cfg.hidden, &mut rng)
        }
    };
    let mut delta = TopicMatrix::zeros(k, v, TopicRole::Delta);
    let prior = PriorConcentration::symmetric(k, cfg.alpha0);
    let hyper = cfg.hyper();

    let val_before = {
        let local0 = global.plus(&delta);
        mean_field_per_token(&val_docs, &enc, &local0, &prior, cfg.alpha_min)
    };

    let mut opt_w1 = AdamState::new(enc.w1.len(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut opt_b1 = AdamState::new(enc.b1.len(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut opt_w2 = AdamState::new(enc.w2.len(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut opt_b2 = AdamState::new(enc.b2.len(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);
    let mut opt_delta = AdamState::new(delta.values.len(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps);

    let n_train = train_docs.len();
    let steps_per_epoch = n_train.div_ceil(cfg.batch);
    let mut order: Vec<usize> = (0..n_train).collect();

    // Early stopping bookkeeping (off by default).
    const EVAL_EVERY: usize = 20;
    const PATIENCE: usize = 10;
    let mut best_val = f64::NEG_INFINITY;
    let mut stale_evals = 0usize;

    let mut grads = Gradients::zeros(k, v, cfg.hidden);
    let mut steps_run = 0;
    for j in 0..cfg.steps {
        let pos = j % steps_per_epoch;
        if pos == 0 {
            let epoch = j / steps_per_epoch;
            let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(
                cfg.seed,
                &[BATCH_ORDER, t as u64, epoch as u64],
            ));
            order = (0..n_train).collect();
            order.shuffle(&mut rng);
        }
        let lo = pos * cfg.batch;
        let hi = ((pos + 1) * cfg.batch).min(n_train);
        let batch = &order[lo..hi];

        let local = Rc::new(global.plus(&delta));
        // A divergence mid-step leaves the pre-step parameters intact; hand
        // them back as the last finite state.
        let snapshot = |enc: &EncoderParams, delta: &TopicMatrix| -> Option<Box<SliceFit>> {
            Some(Box::new(SliceFit {
                encoder: enc.clone(),
                delta: delta.clone(),
                local: global.plus(delta),
                val_elbo_before: val_before,
                val_elbo_after: None,
                steps_run: j,
            }))
        };
        grads.zero();
        for &idx in batch {
            let doc = train_docs[idx];
            let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(
                cfg.seed,
                &[NOISE, t as u64, j as u64, doc.key],
            ));
            let (_, cache) =
                match elbo_with_rng(&doc.bow, &enc, Rc::clone(&local), &prior, &mut rng, &hyper) {
                    Ok(pair) => pair,
                    Err(ModelError::NonFinite(_)) => {
                        return Err(ContinualError::NonFinite {
                            t,
                            step: j,
                            last: snapshot(&enc, &delta),
                        })
                    }
                    Err(other) => return Err(ContinualError::Model(other)),
                };
            backward_into(&cache, &enc, &mut grads);
        }
        // Mean over the batch, negated: Adam descends on -ELBO.
        grads.scale(-1.0 / batch.len() as f64);
        if !grads.is_finite() {
            return Err(ContinualError::NonFinite {
                t,
                step: j,
                last: snapshot(&enc, &delta),
            });
        }
        opt_w1.step(enc.w1.as_slice_mut().expect("row-major"), grads.w1.as_slice().expect("row-major"));
        opt_b1.step(enc.b1.as_slice_mut().expect("contiguous"), grads.b1.as_slice().expect("contiguous"));
        opt_w2.step(enc.w2.as_slice_mut().expect("row-major"), grads.w2.as_slice().expect("row-major"));
        opt_b2.step(enc.b2.as_slice_mut().expect("contiguous"), grads.b2.as_slice().expect("contiguous"));
        opt_delta.step(
            delta.values.as_slice_mut().expect("row-major"),
            grads.delta.as_slice().expect("row-major"),
        );
        if !enc.is_finite() || !delta.is_finite() {
            // The update itself overflowed; the pre-step state is gone.
            return Err(ContinualError::NonFinite {
                t,
                step: j,
                last: None,
            });
        }

        steps_run = j + 1;
        if cfg.early_stop && !val_docs.is_empty() && (j + 1) % EVAL_EVERY == 0 {
            let local_now = global.plus(&delta);
            if let Some(score) =
                mean_field_per_token(&val_docs, &enc, &local_now, &prior, cfg.alpha_min)
            {
                if score > best_val + 1e-9 {
                    best_val = score;
                    stale_evals = 0;
                } else {
                    stale_evals += 1;
                    if stale_evals >= PATIENCE {
                        break;
                    }
                }
            }
        }
    }

    let local = global.plus(&delta);
    let val_after = mean_field_per_token(&val_docs, &enc, &local, &prior, cfg.alpha_min);
    Ok(SliceFit {
        encoder: enc,
        delta,
        local,
        val_elbo_before: val_before,
        val_elbo_after: val_after,
        steps_run,
    })
}

/// Incremental trainer: feed slices one at a time in order. `run_stream`
/// and the CLI `--stream` mode both drive this, which is what makes their
/// outputs identical.
#[derive(Debug)]
pub struct StreamTrainer {
    sched: RhoSchedule,
    cfg: SliceTrainConfig,
    global: TopicMatrix,
    prev_encoder: Option<EncoderParams>,
    next_t: usize,
    slices: Vec<SliceRecord>,
}

impl StreamTrainer {
    /// Fresh trainer with the seeded global initialization.
    pub fn new(k: usize, v: usize, sched: RhoSchedule, cfg: SliceTrainConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(cfg.seed, &[GLOBAL_INIT]));
        StreamTrainer {
            sched,
            cfg,
            global: TopicMatrix::init_global(k, v, &mut rng),
            prev_encoder: None,
            next_t: 1,
            slices: Vec::new(),
        }
    }

    /// Resumes from a persisted run: the running global after slice
    /// `next_t - 1`, plus the previous encoder when warm-starting.
    pub fn resume(
        global: TopicMatrix,
        next_t: usize,
        prev_encoder: Option<EncoderParams>,
        sched: RhoSchedule,
        cfg: SliceTrainConfig,
    ) -> Self {
        StreamTrainer {
            sched,
            cfg,
            global,
            prev_encoder,
            next_t,
            slices: Vec::new(),
        }
    }

    pub fn next_slice_index(&self) -> usize {
        self.next_t
    }

    pub fn global(&self) -> &TopicMatrix {
        &self.global
    }

    pub fn records(&self) -> &[SliceRecord] {
        &self.slices
    }

    /// Trains one slice and folds its local topics into the global matrix.
    pub fn push_slice(&mut self, slice: &TimeSlice) -> Result<&SliceRecord, ContinualError> {
        if slice.t != self.next_t {
            return Err(ContinualError::OutOfOrder {
                expected: self.next_t,
                got: slice.t,
            });
        }
        if self.global.num_topics() == 0 {
            return Err(ContinualError::Shape("empty global matrix".into()));
        }
        let fit = train_slice(slice, &self.global, &self.cfg, self.prev_encoder.as_ref())?;
        let rho_t = self.sched.rho(slice.t);
        let global_after = update_global(&self.global, &fit.local, rho_t);
        self.global = global_after.clone();
        self.next_t += 1;
        if self.cfg.warm_start {
            self.prev_encoder = Some(fit.encoder.clone());
        }
        self.slices.push(SliceRecord {
            t: slice.t,
            label: slice.label,
            rho: rho_t,
            encoder: fit.encoder,
            delta: fit.delta,
            local: fit.local,
            global_after,
            val_elbo_before: fit.val_elbo_before,
            val_elbo_after: fit.val_elbo_after,
        });
        Ok(self.slices.last().expect("just pushed"))
    }

    pub fn into_timeline(self) -> ModelTimeline {
        ModelTimeline {
            schedule: self.sched,
            slices: self.slices,
            global: self.global,
        }
    }
}

/// Runs the full stream in one call. Slices must be indexed 1..T; the
/// timeline built so far is available inside the error path via
/// [`StreamTrainer`] when incremental persistence is needed.
pub fn run_stream(
    slices: &[TimeSlice],
    k: usize,
    v: usize,
    sched: RhoSchedule,
    cfg: SliceTrainConfig,
) -> Result<ModelTimeline, ContinualError> {
    assert!(!slices.is_empty(), "need at least one slice");
    let mut trainer = StreamTrainer::new(k, v, sched, cfg);
    for slice in slices {
        trainer.push_slice(slice)?;
    }
    Ok(trainer.into_timeline())
}

/// Builds a block-structured topic matrix for synthetic experiments: topic
/// r puts `strength` logits on its own V/K contiguous block of words and 0
/// elsewhere.
pub fn block_topic_matrix(k: usize, v: usize, strength: f64) -> TopicMatrix {
    assert!(k >= 1 && v >= k, "need v >= k >= 1");
    let mut m = TopicMatrix::zeros(k, v, TopicRole::Global);
    let block = v / k;
    for r in 0..k {
        let lo = r * block;
        let hi = if r == k - 1 { v } else { (r + 1) * block };
        for w in lo..hi {
            m.values[(r, w)] = strength;
        }
    }
    m
}

/// Draws a synthetic stream from the generative model: for each slice t the
/// local logits are global + delta_t; each document draws z from the
/// Dirichlet prior and N words from the softmax-mixed word distribution
/// (the decoder's product-of-experts form, so generator and model agree).
pub fn generate_synthetic(
    global: &TopicMatrix,
    deltas: &[TopicMatrix],
    alpha0: &PriorConcentration,
    doc_counts: &[usize],
    doc_len: usize,
    ratios: (f64, f64, f64),
    seed: u64,
) -> Vec<TimeSlice> {
    assert_eq!(
        deltas.len(),
        doc_counts.len(),
        "need one delta per slice"
    );
    assert!(doc_len >= 1, "documents need at least one word");
    let k = global.num_topics();
    assert_eq!(alpha0.alpha0.len(), k, "prior dimension mismatch");
    let mut all_docs = Vec::new();
    for (slice_idx, (delta, &count)) in deltas.iter().zip(doc_counts).enumerate() {
        let t = slice_idx + 1;
        let local = global.plus(delta);
        for i in 0..count {
            let mut rng = ChaCha8Rng::seed_from_u64(substream_seed(
                seed,
                &[SYNTH, t as u64, i as u64],
            ));
            let z = sample_prior_weights(alpha0, &mut rng);
            let logits = local.values.t().dot(&z);
            let lse = crate::model::math::logsumexp(logits.as_slice().expect("contiguous"));
            let probs: Vec<f64> = logits.iter().map(|&l| (l - lse).exp()).collect();
            let dist = WeightedIndex::new(&probs).expect("valid word distribution");
            let mut counts = std::collections::BTreeMap::new();
            for _ in 0..doc_len {
                let w = dist.sample(&mut rng) as u32;
                *counts.entry(w).or_insert(0u32) += 1;
            }
            all_docs.push(BucketedDoc {
                key: doc_key(&format!("synth-{t}-{i}")),
                label: t as i64,
                bow: BowVector {
                    entries: counts.into_iter().collect(),
                },
            });
        }
    }
    slice_and_split(all_docs, ratios, seed)
}

/// z ~ Dir(alpha0) through per-component Gamma draws; falls back to a
/// one-hot sample if every gamma underflows (tiny concentrations).
fn sample_prior_weights<R: Rng>(alpha0: &PriorConcentration, rng: &mut R) -> Array1<f64> {
    let k = alpha0.alpha0.len();
    let mut gamma = Array1::zeros(k);
    for i in 0..k {
        let g = rand_distr::Gamma::new(alpha0.alpha0[i], 1.0).expect("positive shape");
        gamma[i] = g.sample(rng);
    }
    let sum = gamma.sum();
    if sum > 0.0 && sum.is_finite() {
        gamma / sum
    } else {
        let hot = rng.gen_range(0..k);
        let mut z = Array1::zeros(k);
        z[hot] = 1.0;
        z
    }
}
