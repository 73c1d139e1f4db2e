use serde::{Deserialize, Serialize};

use super::NumericsError;

/// Bias-corrected Adam over a flat parameter vector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self::with_betas(n_params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(n_params: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One update in place. Fails on NaN gradients rather than skipping them.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), NumericsError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NumericsError::Shape {
                node: "adam".into(),
                detail: format!(
                    "state for {} params, got {} params and {} grads",
                    self.m.len(),
                    params.len(),
                    grads.len()
                ),
            });
        }
        if self.lr.is_nan() || self.lr <= 0.0 {
            return Err(NumericsError::InvalidConfig(format!(
                "learning rate {} must be > 0",
                self.lr
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(NumericsError::NonFinite(format!(
                "gradient[{i}] = {}",
                grads[i]
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut st = AdamState::new(3, 0.1);
        let mut p = vec![1.0, -2.0, 0.5];
        st.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m = 0.1, v = 0.001; m_hat = 1, v_hat = 1 -> p = 0 - 0.1 * 1 / (1 + 1e-8)
        let mut st = AdamState::new(1, 0.1);
        let mut p = vec![0.0];
        st.step(&mut p, &[1.0]).unwrap();
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15, "{}", p[0]);
        assert!((p[0] + 0.1).abs() < 1e-8);
    }

    #[test]
    fn two_steps_differ_from_one_step_at_double_rate() {
        let mut a = AdamState::new(1, 0.1);
        let mut pa = vec![0.0];
        a.step(&mut pa, &[1.0]).unwrap();
        a.step(&mut pa, &[1.0]).unwrap();
        let mut b = AdamState::new(1, 0.2);
        let mut pb = vec![0.0];
        b.step(&mut pb, &[1.0]).unwrap();
        assert_ne!(pa[0], pb[0]);
    }

    #[test]
    fn nan_gradient_fails_loudly() {
        let mut st = AdamState::new(2, 0.1);
        let mut p = vec![0.0, 0.0];
        assert!(matches!(
            st.step(&mut p, &[0.0, f64::NAN]),
            Err(NumericsError::NonFinite(_))
        ));
    }

    proptest! {
        #[test]
        fn zero_gradients_are_identity_at_any_step(
            params in proptest::collection::vec(-10.0f64..10.0, 1..8),
            warmup in 0usize..20,
        ) {
            let n = params.len();
            let mut st = AdamState::new(n, 0.01);
            let mut p = params.clone();
            for _ in 0..warmup {
                st.step(&mut p, &vec![0.0; n]).unwrap();
            }
            prop_assert_eq!(&p, &params);
            prop_assert_eq!(st.t, warmup as u64);
        }
    }
}
