//! The Dirichlet-VAE core: encoder, reparameterized sampling, closed-form KL,
//! product-of-experts decoder, exact reverse-mode gradients and Adam.
//!
//! All tensors are 64-bit; the gradient-check tolerances depend on it.

pub mod adam;
pub mod checkpoint;
pub mod elbo;
pub mod math;
pub mod sampler;

pub use adam::AdamState;
pub use elbo::{
    backward, backward_into, decode, decode_local, elbo, elbo_local, elbo_mean_field,
    elbo_with_rng, kl_dirichlet, kl_dirichlet_grad, ElboCache, Gradients, ModelHyper,
};
pub use sampler::{
    sample_dirichlet, sample_logistic_normal, sample_topic_weights, DirichletDraws, NoiseDraws,
    PathCache,
};

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::BowVector;

/// Errors raised by the numerical core.
#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("non-finite value in {0}; the run has diverged")]
    NonFinite(&'static str),
    #[error("dirichlet sample degenerated (gamma sum underflow) after {0} retries")]
    DegenerateSample(u32),
    #[error("document has no tokens")]
    EmptyDocument,
}

/// Which role a topic matrix plays. The matrix used by the decoder is always
/// `global + delta`, elementwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TopicRole {
    Global,
    Delta,
    Local,
}

/// An unconstrained K x V matrix of topic logits; softmax of a row gives the
/// topic's word distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicMatrix {
    pub values: Array2<f64>,
    pub role: TopicRole,
}

impl TopicMatrix {
    pub fn zeros(k: usize, v: usize, role: TopicRole) -> Self {
        TopicMatrix {
            values: Array2::zeros((k, v)),
            role,
        }
    }

    /// Global matrix at t=1: seeded standard normal scaled by 0.02.
    pub fn init_global<R: Rng>(k: usize, v: usize, rng: &mut R) -> Self {
        let mut values = Array2::zeros((k, v));
        for x in values.iter_mut() {
            *x = 0.02 * math::standard_normal(rng);
        }
        TopicMatrix {
            values,
            role: TopicRole::Global,
        }
    }

    pub fn num_topics(&self) -> usize {
        self.values.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.values.ncols()
    }

    /// Elementwise sum with a delta, producing the local matrix.
    pub fn plus(&self, delta: &TopicMatrix) -> TopicMatrix {
        assert_eq!(self.values.dim(), delta.values.dim(), "shape mismatch");
        TopicMatrix {
            values: &self.values + &delta.values,
            role: TopicRole::Local,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }
}

/// Weights of the amortized inference network: one softplus hidden layer
/// mapping log(1+count) features to Dirichlet parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub w1: Array2<f64>, // H x V
    pub b1: Array1<f64>, // H
    pub w2: Array2<f64>, // K x H
    pub b2: Array1<f64>, // K
}

impl EncoderParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng>(k: usize, v: usize, hidden: usize, rng: &mut R) -> Self {
        let mut w1 = Array2::zeros((hidden, v));
        let bound1 = (6.0 / (v + hidden) as f64).sqrt();
        for x in w1.iter_mut() {
            *x = rng.gen_range(-bound1..bound1);
        }
        let mut w2 = Array2::zeros((k, hidden));
        let bound2 = (6.0 / (hidden + k) as f64).sqrt();
        for x in w2.iter_mut() {
            *x = rng.gen_range(-bound2..bound2);
        }
        EncoderParams {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(k),
        }
    }

    pub fn zeros(k: usize, v: usize, hidden: usize) -> Self {
        EncoderParams {
            w1: Array2::zeros((hidden, v)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((k, hidden)),
            b2: Array1::zeros(k),
        }
    }

    pub fn hidden_width(&self) -> usize {
        self.b1.len()
    }

    pub fn num_topics(&self) -> usize {
        self.b2.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.w1.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().all(|x| x.is_finite())
            && self.b1.iter().all(|x| x.is_finite())
            && self.w2.iter().all(|x| x.is_finite())
            && self.b2.iter().all(|x| x.is_finite())
    }
}

/// Per-document variational Dirichlet parameters, clamped away from zero.
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletParams {
    pub alpha_hat: Array1<f64>,
}

impl DirichletParams {
    pub fn sum(&self) -> f64 {
        self.alpha_hat.sum()
    }
}

/// The Dirichlet prior concentration, symmetric by default.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorConcentration {
    pub alpha0: Array1<f64>,
}

impl PriorConcentration {
    pub fn symmetric(k: usize, value: f64) -> Self {
        assert!(value > 0.0, "prior concentration must be positive");
        PriorConcentration {
            alpha0: Array1::from_elem(k, value),
        }
    }
}

/// A point on the topic simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicWeights {
    pub z: Array1<f64>,
}

/// Reparameterization used when sampling the topic weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reparam {
    /// Shape-augmented Gamma pathwise transform (default).
    GammaBoost,
    /// Softmax-Gaussian Laplace approximation, kept for cross-checks.
    LogisticNormal,
}

/// Encoder forward pass: alpha_hat = max(softplus(W2 softplus(W1 x + b1) + b2), alpha_min)
/// with x the log(1+count) feature vector.
pub fn encode(
    bow: &BowVector,
    params: &EncoderParams,
    alpha_min: f64,
) -> Result<DirichletParams, ModelError> {
    let (alpha, _) = encode_forward(bow, params, alpha_min)?;
    Ok(alpha)
}

/// Intermediates of the encoder forward pass kept for backpropagation.
#[derive(Debug, Clone)]
pub struct EncoderCache {
    /// log(1+count) features, sparse over the document's terms.
    pub x: Vec<(u32, f64)>,
    /// Hidden pre-activation W1 x + b1.
    pub q: Array1<f64>,
    /// Hidden activation softplus(q).
    pub h: Array1<f64>,
    /// Output pre-activation W2 h + b2.
    pub s: Array1<f64>,
    /// Whether softplus(s_k) cleared the alpha_min floor.
    pub unclamped: Vec<bool>,
}

pub(crate) fn encode_forward(
    bow: &BowVector,
    params: &EncoderParams,
    alpha_min: f64,
) -> Result<(DirichletParams, EncoderCache), ModelError> {
    if bow.is_empty() {
        return Err(ModelError::EmptyDocument);
    }
    let x: Vec<(u32, f64)> = bow
        .entries
        .iter()
        .map(|&(w, c)| (w, (1.0 + c as f64).ln()))
        .collect();
    let mut q = params.b1.clone();
    for &(w, xv) in &x {
        let col = params.w1.column(w as usize);
        for (qi, wi) in q.iter_mut().zip(col.iter()) {
            *qi += wi * xv;
        }
    }
    let h = q.mapv(math::softplus);
    let s = params.w2.dot(&h) + &params.b2;
    let mut alpha = Array1::zeros(s.len());
    let mut unclamped = vec![false; s.len()];
    for (k, &sk) in s.iter().enumerate() {
        let sp = math::softplus(sk);
        if !sp.is_finite() {
            return Err(ModelError::NonFinite("encoder activation"));
        }
        unclamped[k] = sp > alpha_min;
        alpha[k] = sp.max(alpha_min);
    }
    Ok((
        DirichletParams { alpha_hat: alpha },
        EncoderCache {
            x,
            q,
            h,
            s,
            unclamped,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn bow(entries: &[(u32, u32)]) -> BowVector {
        BowVector {
            entries: entries.to_vec(),
        }
    }

    #[test]
    fn encode_zero_weights_gives_log_two() {
        let params = EncoderParams::zeros(3, 4, 2);
        let alpha = encode(&bow(&[(0, 1), (2, 3)]), &params, 1e-4).unwrap();
        for &a in alpha.alpha_hat.iter() {
            assert!((a - 2f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn encode_is_positive_under_count_scaling() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        use rand::SeedableRng;
        let params = EncoderParams::init(3, 4, 2, &mut rng);
        for scale in [1u32, 2, 4, 100] {
            let alpha = encode(&bow(&[(0, scale), (3, 2 * scale)]), &params, 1e-4).unwrap();
            assert!(alpha.alpha_hat.iter().all(|&a| a >= 1e-4 && a.is_finite()));
        }
    }

    #[test]
    fn encode_is_deterministic() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let params = EncoderParams::init(4, 6, 3, &mut rng);
        let a = encode(&bow(&[(1, 2), (5, 1)]), &params, 1e-4).unwrap();
        let b = encode(&bow(&[(1, 2), (5, 1)]), &params, 1e-4).unwrap();
        assert_eq!(a.alpha_hat, b.alpha_hat);
    }

    #[test]
    fn encode_rejects_empty_document() {
        let params = EncoderParams::zeros(2, 3, 2);
        assert!(matches!(
            encode(&bow(&[]), &params, 1e-4),
            Err(ModelError::EmptyDocument)
        ));
    }

    #[test]
    fn local_is_global_plus_delta() {
        let global = TopicMatrix {
            values: array![[1.0, 2.0], [3.0, 4.0]],
            role: TopicRole::Global,
        };
        let delta = TopicMatrix {
            values: array![[0.5, -0.5], [0.0, 1.0]],
            role: TopicRole::Delta,
        };
        let local = global.plus(&delta);
        assert_eq!(local.role, TopicRole::Local);
        assert_eq!(local.values, array![[1.5, 1.5], [3.0, 5.0]]);
    }
}
