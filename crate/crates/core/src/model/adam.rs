//! Adam with bias correction, operating on flat parameter slices.

/// Optimizer state: step count plus first/second moment accumulators
/// mirroring one flattened parameter tensor (or a concatenation of them).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            step: 0,
            lr,
            beta1,
            beta2,
            eps,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    /// One descent step. Gradients computed for ELBO ascent must be negated
    /// by the caller before reaching here (the trainer passes -dELBO).
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "parameter shape mismatch");
        assert_eq!(grads.len(), self.m.len(), "gradient shape mismatch");
        self.step += 1;
        let t = self.step as i32;
        let corr1 = 1.0 - self.beta1.powi(t);
        let corr2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / corr1;
            let v_hat = self.v[i] / corr2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut state = AdamState::new(3, 0.01, 0.9, 0.999, 1e-8);
        let mut params = vec![1.0, -2.0, 0.5];
        let before = params.clone();
        for _ in 0..5 {
            state.step(&mut params, &[0.0, 0.0, 0.0]);
        }
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut state = AdamState::new(3, 0.01, 0.9, 0.999, 1e-8);
        let mut params = vec![0.0, 0.0, 0.0];
        state.step(&mut params, &[0.3, -4.0, 2e-6]);
        // Bias-corrected m/sqrt(v) equals g/|g| on the first step, so each
        // parameter moves by ~lr against the gradient sign.
        assert!((params[0] + 0.01).abs() < 1e-6);
        assert!((params[1] - 0.01).abs() < 1e-6);
        assert!((params[2] + 0.01).abs() < 1e-3);
    }

    #[test]
    fn identical_runs_stay_bit_identical() {
        let grads: Vec<Vec<f64>> = (0..100)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()])
            .collect();
        let mut a = AdamState::new(2, 0.01, 0.9, 0.999, 1e-8);
        let mut b = AdamState::new(2, 0.01, 0.9, 0.999, 1e-8);
        let mut pa = vec![0.1, -0.2];
        let mut pb = vec![0.1, -0.2];
        for g in &grads {
            a.step(&mut pa, g);
            b.step(&mut pb, g);
        }
        assert_eq!(pa, pb);
        assert_eq!(a, b);
    }
}
