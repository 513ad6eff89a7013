//! The variational objective and its exact reverse-mode gradients.
//!
//! For one document with counts c and length N = sum(c):
//!
//! ```text
//! L = -KL(Dir(alpha_hat) || Dir(alpha0)) + sum_w c_w * log softmax(z' phi)_w
//! ```
//!
//! with one reparameterized sample z and phi = global + delta. The backward
//! pass differentiates the single-sample estimate exactly: through the
//! softmax decoder, through the Gamma (or logistic-normal) sampling path
//! into the encoder, and through the closed-form KL. The global matrix is
//! frozen within a slice and receives no gradient.

use ndarray::{Array1, Array2};
use rand::Rng;
use std::rc::Rc;

use super::math::{self, digamma, ln_gamma, trigamma};
use super::sampler::{sample_topic_weights, NoiseDraws, PathCache};
use super::{
    encode_forward, DirichletParams, EncoderCache, EncoderParams, ModelError, PriorConcentration,
    Reparam, TopicMatrix, TopicWeights,
};
use crate::corpus::BowVector;

/// Hyperparameters threaded through every forward/backward call.
#[derive(Debug, Clone, Copy)]
pub struct ModelHyper {
    pub alpha_min: f64,
    pub boost: u32,
    pub reparam: Reparam,
}

impl Default for ModelHyper {
    fn default() -> Self {
        ModelHyper {
            alpha_min: 1e-4,
            boost: 10,
            reparam: Reparam::GammaBoost,
        }
    }
}

/// Word distribution of a document with topic weights z: softmax over the
/// vocabulary of the z-mixed local topic logits (product of experts; the
/// softmax runs after mixing).
pub fn decode(z: &TopicWeights, global: &TopicMatrix, delta: &TopicMatrix) -> Array1<f64> {
    let local = global.plus(delta);
    decode_local(z, &local)
}

/// `decode` against a precomputed local = global + delta matrix.
pub fn decode_local(z: &TopicWeights, local: &TopicMatrix) -> Array1<f64> {
    let logits = local.values.t().dot(&z.z);
    softmax(&logits)
}

fn softmax(logits: &Array1<f64>) -> Array1<f64> {
    let lse = math::logsumexp(logits.as_slice().expect("contiguous"));
    logits.mapv(|l| (l - lse).exp())
}

/// Closed-form KL(Dir(alpha_hat) || Dir(alpha0)), nonnegative.
pub fn kl_dirichlet(alpha_hat: &DirichletParams, prior: &PriorConcentration) -> f64 {
    let a = &alpha_hat.alpha_hat;
    let b = &prior.alpha0;
    assert_eq!(a.len(), b.len(), "dimension mismatch");
    let sa = a.sum();
    let sb = b.sum();
    let mut val = ln_gamma(sa) - ln_gamma(sb);
    let dg_sa = digamma(sa);
    for k in 0..a.len() {
        val += ln_gamma(b[k]) - ln_gamma(a[k]);
        val += (a[k] - b[k]) * (digamma(a[k]) - dg_sa);
    }
    val
}

/// Gradient of `kl_dirichlet` w.r.t. alpha_hat.
pub fn kl_dirichlet_grad(alpha_hat: &DirichletParams, prior: &PriorConcentration) -> Array1<f64> {
    let a = &alpha_hat.alpha_hat;
    let b = &prior.alpha0;
    let diff_sum: f64 = (a - b).sum();
    let tg_sa = trigamma(a.sum());
    Array1::from_iter(
        a.iter()
            .zip(b.iter())
            .map(|(&ak, &bk)| (ak - bk) * trigamma(ak) - tg_sa * diff_sum),
    )
}

/// Gradients of the single-sample ELBO for one document.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
    pub delta: Array2<f64>,
}

impl Gradients {
    pub fn zeros(k: usize, v: usize, hidden: usize) -> Self {
        Gradients {
            w1: Array2::zeros((hidden, v)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((k, hidden)),
            b2: Array1::zeros(k),
            delta: Array2::zeros((k, v)),
        }
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        self.w1 += &other.w1;
        self.b1 += &other.b1;
        self.w2 += &other.w2;
        self.b2 += &other.b2;
        self.delta += &other.delta;
    }

    pub fn scale(&mut self, c: f64) {
        self.w1 *= c;
        self.b1 *= c;
        self.w2 *= c;
        self.b2 *= c;
        self.delta *= c;
    }

    pub fn zero(&mut self) {
        self.w1.fill(0.0);
        self.b1.fill(0.0);
        self.w2.fill(0.0);
        self.b2.fill(0.0);
        self.delta.fill(0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().all(|x| x.is_finite())
            && self.b1.iter().all(|x| x.is_finite())
            && self.w2.iter().all(|x| x.is_finite())
            && self.b2.iter().all(|x| x.is_finite())
            && self.delta.iter().all(|x| x.is_finite())
    }
}

/// Everything the backward pass needs, captured by the forward pass.
#[derive(Debug, Clone)]
pub struct ElboCache {
    local: Rc<TopicMatrix>,
    enc: EncoderCache,
    alpha: DirichletParams,
    path: PathCache,
    probs: Array1<f64>,
    bow: BowVector,
    prior: PriorConcentration,
}

/// Single-sample ELBO of one document given explicit noise draws.
pub fn elbo(
    bow: &BowVector,
    enc: &EncoderParams,
    global: &TopicMatrix,
    delta: &TopicMatrix,
    prior: &PriorConcentration,
    draws: &NoiseDraws,
    hyper: &ModelHyper,
) -> Result<(f64, ElboCache), ModelError> {
    let local = Rc::new(global.plus(delta));
    elbo_local(bow, enc, local, prior, draws, hyper)
}

/// `elbo` against a shared precomputed local matrix (the training loop
/// builds it once per step).
pub fn elbo_local(
    bow: &BowVector,
    enc: &EncoderParams,
    local: Rc<TopicMatrix>,
    prior: &PriorConcentration,
    draws: &NoiseDraws,
    hyper: &ModelHyper,
) -> Result<(f64, ElboCache), ModelError> {
    let (alpha, enc_cache) = encode_forward(bow, enc, hyper.alpha_min)?;
    let (z, path) = sample_topic_weights(&alpha, draws)?;
    let probs = decode_local(&z, &local);
    let mut recon = 0.0;
    for &(w, c) in &bow.entries {
        recon += c as f64 * probs[w as usize].ln();
    }
    let kl = kl_dirichlet(&alpha, prior);
    let value = recon - kl;
    if !value.is_finite() {
        return Err(ModelError::NonFinite("elbo"));
    }
    Ok((
        value,
        ElboCache {
            local,
            enc: enc_cache,
            alpha,
            path,
            probs,
            bow: bow.clone(),
            prior: prior.clone(),
        },
    ))
}

/// Samples noise from `rng`, retrying degenerate Dirichlet draws with fresh
/// noise up to 10 times.
pub fn elbo_with_rng<R: Rng>(
    bow: &BowVector,
    enc: &EncoderParams,
    local: Rc<TopicMatrix>,
    prior: &PriorConcentration,
    rng: &mut R,
    hyper: &ModelHyper,
) -> Result<(f64, ElboCache), ModelError> {
    let k = enc.num_topics();
    for attempt in 0..10u32 {
        let draws = NoiseDraws::sample(rng, k, hyper.reparam, hyper.boost);
        match elbo_local(bow, enc, Rc::clone(&local), prior, &draws, hyper) {
            Err(ModelError::DegenerateSample(_)) if attempt < 9 => continue,
            Err(ModelError::DegenerateSample(_)) => {
                return Err(ModelError::DegenerateSample(attempt + 1))
            }
            other => return other,
        }
    }
    unreachable!("retry loop returns");
}

/// Exact reverse-mode gradients of the single-sample ELBO w.r.t. the
/// encoder parameters and the local delta. `enc` must be the parameters the
/// matching forward pass ran with. The frozen global matrix gets none.
pub fn backward(cache: &ElboCache, enc: &EncoderParams) -> Gradients {
    let mut grads = Gradients::zeros(
        cache.local.num_topics(),
        cache.local.vocab_size(),
        cache.enc.h.len(),
    );
    backward_into(cache, enc, &mut grads);
    grads
}

/// `backward`, accumulating into an existing gradient buffer. The training
/// loop sums many documents into one accumulator without reallocating.
pub fn backward_into(cache: &ElboCache, enc: &EncoderParams, grads: &mut Gradients) {
    let k_count = cache.local.num_topics();

    let n_tokens: f64 = cache.bow.token_count() as f64;
    // Residual r_w = c_w - N p_w; d recon / d logits = r.
    let mut resid = cache.probs.mapv(|p| -n_tokens * p);
    for &(w, c) in &cache.bow.entries {
        resid[w as usize] += c as f64;
    }

    let z = cache.path.z();
    // d recon / d delta_kw = z_k r_w  (rank-one).
    for k in 0..k_count {
        let zk = z[k];
        let mut row = grads.delta.row_mut(k);
        for (g, &r) in row.iter_mut().zip(resid.iter()) {
            *g += zk * r;
        }
    }
    // d recon / d z = phi r.
    let g_z = cache.local.values.dot(&resid);

    // Through the sampling path into alpha_hat, then add the KL term.
    let mut g_alpha = cache.path.grad_alpha(&g_z);
    g_alpha -= &kl_dirichlet_grad(&cache.alpha, &cache.prior);

    // alpha = max(softplus(s), alpha_min): clamped components are flat.
    let g_s = Array1::from_iter((0..k_count).map(|k| {
        if cache.enc.unclamped[k] {
            g_alpha[k] * math::sigmoid(cache.enc.s[k])
        } else {
            0.0
        }
    }));

    // s = W2 h + b2.
    for k in 0..k_count {
        let gk = g_s[k];
        let mut row = grads.w2.row_mut(k);
        for (g, &hj) in row.iter_mut().zip(cache.enc.h.iter()) {
            *g += gk * hj;
        }
    }
    grads.b2 += &g_s;
    let g_h = enc.w2.t().dot(&g_s);

    // h = softplus(q).
    let g_q = Array1::from_iter(
        g_h.iter()
            .zip(cache.enc.q.iter())
            .map(|(&g, &q)| g * math::sigmoid(q)),
    );

    // q = W1 x + b1 with sparse x: only the document's columns get gradient.
    for &(w, xv) in &cache.enc.x {
        let mut col = grads.w1.column_mut(w as usize);
        for (g, &gq) in col.iter_mut().zip(g_q.iter()) {
            *g += gq * xv;
        }
    }
    grads.b1 += &g_q;
}

/// Deterministic ELBO proxy with z fixed at the variational mean
/// alpha/sum(alpha); used for validation scoring where sampling noise would
/// obscure comparisons.
pub fn elbo_mean_field(
    bow: &BowVector,
    enc: &EncoderParams,
    local: &TopicMatrix,
    prior: &PriorConcentration,
    alpha_min: f64,
) -> Result<f64, ModelError> {
    let (alpha, _) = encode_forward(bow, enc, alpha_min)?;
    let total = alpha.sum();
    let z = TopicWeights {
        z: alpha.alpha_hat.mapv(|a| a / total),
    };
    let probs = decode_local(&z, local);
    let mut recon = 0.0;
    for &(w, c) in &bow.entries {
        recon += c as f64 * probs[w as usize].ln();
    }
    let value = recon - kl_dirichlet(&alpha, prior);
    if !value.is_finite() {
        return Err(ModelError::NonFinite("mean-field elbo"));
    }
    Ok(value)
}
