//! Reparameterized sampling of the topic weights.
//!
//! The default path draws each Gamma variate through the smooth
//! shape-augmented transform: with boost B, shape a = alpha + B,
//!
//! ```text
//! h(eps, a) = (a - 1/3) * (1 + eps / sqrt(9a - 3))^3
//! gamma     = h(eps, a) * prod_{b=0}^{B-1} u_b^(1 / (alpha + b))
//! ```
//!
//! clamped to stay positive, then z = gamma / sum(gamma). Because a >= B+
//! alpha is large, the transform is essentially exact and the rejection
//! correction is dropped, keeping every gradient pathwise. The cache
//! retains the per-component derivative d gamma / d alpha so the backward
//! pass can push decoder gradients into the encoder.

use ndarray::Array1;
use rand::Rng;

use super::math;
use super::{DirichletParams, ModelError, Reparam, TopicWeights};

/// Positive floor for the Marsaglia-Tsang cubic when eps lands deep in the
/// left tail (probability ~1e-20 at a >= 10). The clamp zeroes the local
/// gradient, which is what a flat region calls for.
const H_FLOOR: f64 = 1e-100;

/// Frozen noise for one document/step: K standard normals plus K x B
/// uniforms (row-major per component).
#[derive(Debug, Clone, PartialEq)]
pub struct DirichletDraws {
    pub eps: Vec<f64>,
    pub uniforms: Vec<f64>,
    pub boost: u32,
}

impl DirichletDraws {
    pub fn sample<R: Rng>(rng: &mut R, k: usize, boost: u32) -> Self {
        let eps = (0..k).map(|_| math::standard_normal(rng)).collect();
        let uniforms = (0..k * boost as usize)
            .map(|_| loop {
                let u: f64 = rng.gen();
                if u > 0.0 {
                    break u;
                }
            })
            .collect();
        DirichletDraws {
            eps,
            uniforms,
            boost,
        }
    }
}

/// Noise for whichever reparameterization is active.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseDraws {
    Gamma(DirichletDraws),
    /// K standard normals for the softmax-Gaussian path.
    Logistic(Vec<f64>),
}

impl NoiseDraws {
    pub fn sample<R: Rng>(rng: &mut R, k: usize, reparam: Reparam, boost: u32) -> Self {
        match reparam {
            Reparam::GammaBoost => NoiseDraws::Gamma(DirichletDraws::sample(rng, k, boost)),
            Reparam::LogisticNormal => {
                NoiseDraws::Logistic((0..k).map(|_| math::standard_normal(rng)).collect())
            }
        }
    }
}

/// Intermediates retained for the pathwise gradient d z / d alpha_hat.
#[derive(Debug, Clone)]
pub enum PathCache {
    Gamma {
        z: Array1<f64>,
        gamma_sum: f64,
        /// d gamma_k / d alpha_k; the transform is componentwise.
        dgamma_dalpha: Array1<f64>,
    },
    Logistic {
        z: Array1<f64>,
        eps: Vec<f64>,
        alpha: Array1<f64>,
        sigma: Array1<f64>,
    },
}

impl PathCache {
    pub fn z(&self) -> &Array1<f64> {
        match self {
            PathCache::Gamma { z, .. } => z,
            PathCache::Logistic { z, .. } => z,
        }
    }

    /// Chains an upstream gradient w.r.t. z into a gradient w.r.t.
    /// alpha_hat.
    pub fn grad_alpha(&self, g_z: &Array1<f64>) -> Array1<f64> {
        match self {
            PathCache::Gamma {
                z,
                gamma_sum,
                dgamma_dalpha,
            } => {
                let inner = g_z.dot(z);
                let mut out = Array1::zeros(z.len());
                for k in 0..z.len() {
                    let g_gamma = (g_z[k] - inner) / gamma_sum;
                    out[k] = g_gamma * dgamma_dalpha[k];
                }
                out
            }
            PathCache::Logistic {
                z,
                eps,
                alpha,
                sigma,
            } => {
                let k_count = z.len();
                let kf = k_count as f64;
                let inner = g_z.dot(z);
                // Softmax jacobian: g_y = z .* (g_z - <g_z, z>).
                let g_y: Vec<f64> = (0..k_count).map(|k| z[k] * (g_z[k] - inner)).collect();
                let g_mu_sum: f64 = g_y.iter().sum();
                let mut g_v = vec![0.0; k_count];
                for k in 0..k_count {
                    if sigma[k] > 0.0 {
                        g_v[k] = g_y[k] * eps[k] / (2.0 * sigma[k]);
                    }
                }
                let g_v_sum: f64 = g_v.iter().sum();
                let mut out = Array1::zeros(k_count);
                for j in 0..k_count {
                    let a = alpha[j];
                    let mu_part = g_y[j] / a - g_mu_sum / (kf * a);
                    let v_part = -g_v[j] * (1.0 - 2.0 / kf) / (a * a) - g_v_sum / (kf * kf * a * a);
                    out[j] = mu_part + v_part;
                }
                out
            }
        }
    }
}

/// Draws z ~ Dir(alpha_hat) through the shape-augmented Gamma transform.
///
/// Fails with [`ModelError::DegenerateSample`] when every augmented Gamma
/// underflows to zero (possible for very small alpha); callers retry with
/// fresh noise.
pub fn sample_dirichlet(
    alpha_hat: &DirichletParams,
    draws: &DirichletDraws,
) -> Result<(TopicWeights, PathCache), ModelError> {
    let k_count = alpha_hat.alpha_hat.len();
    assert_eq!(draws.eps.len(), k_count, "noise shape mismatch");
    assert_eq!(
        draws.uniforms.len(),
        k_count * draws.boost as usize,
        "uniform shape mismatch"
    );
    let boost = draws.boost as usize;
    let mut gamma = vec![0.0; k_count];
    let mut dgamma = vec![0.0; k_count];
    for k in 0..k_count {
        let alpha = alpha_hat.alpha_hat[k];
        debug_assert!(alpha > 0.0, "alpha_hat must be positive");
        let a = alpha + draws.boost as f64;
        let root = (9.0 * a - 3.0).sqrt();
        let v = 1.0 + draws.eps[k] / root;
        let (h, dh_da) = if v <= 0.0 || (a - 1.0 / 3.0) * v * v * v <= H_FLOOR {
            (H_FLOOR, 0.0)
        } else {
            let h = (a - 1.0 / 3.0) * v * v * v;
            let dv_da = -4.5 * draws.eps[k] / (root * root * root);
            (h, v * v * v + (a - 1.0 / 3.0) * 3.0 * v * v * dv_da)
        };
        let mut log_shrink = 0.0;
        let mut dshrink_dalpha = 0.0;
        for b in 0..boost {
            let u = draws.uniforms[k * boost + b];
            let denom = alpha + b as f64;
            let log_u = u.ln();
            log_shrink += log_u / denom;
            dshrink_dalpha -= log_u / (denom * denom);
        }
        let shrink = log_shrink.exp();
        gamma[k] = h * shrink;
        dgamma[k] = dh_da * shrink + gamma[k] * dshrink_dalpha;
    }
    let gamma_sum: f64 = gamma.iter().sum();
    if !(gamma_sum.is_finite() && gamma_sum > 0.0) {
        return Err(ModelError::DegenerateSample(0));
    }
    let z = Array1::from_iter(gamma.iter().map(|&g| g / gamma_sum));
    let cache = PathCache::Gamma {
        z: z.clone(),
        gamma_sum,
        dgamma_dalpha: Array1::from_vec(dgamma),
    };
    Ok((TopicWeights { z }, cache))
}

/// Softmax-Gaussian Laplace approximation of Dir(alpha_hat):
/// z = softmax(mu + sigma .* eps) with the standard moment matching in the
/// softmax basis. Used as a cross-check reparameterization.
pub fn sample_logistic_normal(
    alpha_hat: &DirichletParams,
    eps: &[f64],
) -> Result<(TopicWeights, PathCache), ModelError> {
    let k_count = alpha_hat.alpha_hat.len();
    assert_eq!(eps.len(), k_count, "noise shape mismatch");
    let kf = k_count as f64;
    let log_alpha: Vec<f64> = alpha_hat.alpha_hat.iter().map(|&a| a.ln()).collect();
    let mean_log: f64 = log_alpha.iter().sum::<f64>() / kf;
    let inv_sum: f64 = alpha_hat.alpha_hat.iter().map(|&a| 1.0 / a).sum();
    let mut y = vec![0.0; k_count];
    let mut sigma = Array1::zeros(k_count);
    for k in 0..k_count {
        let mu = log_alpha[k] - mean_log;
        let var = (1.0 - 2.0 / kf) / alpha_hat.alpha_hat[k] + inv_sum / (kf * kf);
        sigma[k] = var.max(0.0).sqrt();
        y[k] = mu + sigma[k] * eps[k];
    }
    let lse = math::logsumexp(&y);
    let z = Array1::from_iter(y.iter().map(|&yk| (yk - lse).exp()));
    if z.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("logistic-normal sample"));
    }
    let cache = PathCache::Logistic {
        z: z.clone(),
        eps: eps.to_vec(),
        alpha: alpha_hat.alpha_hat.clone(),
        sigma,
    };
    Ok((TopicWeights { z }, cache))
}

/// Dispatches on the active reparameterization.
pub fn sample_topic_weights(
    alpha_hat: &DirichletParams,
    draws: &NoiseDraws,
) -> Result<(TopicWeights, PathCache), ModelError> {
    match draws {
        NoiseDraws::Gamma(d) => sample_dirichlet(alpha_hat, d),
        NoiseDraws::Logistic(eps) => sample_logistic_normal(alpha_hat, eps),
    }
}
