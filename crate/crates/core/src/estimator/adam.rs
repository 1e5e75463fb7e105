use crate::error::{Error, Result};

/// Default learning rate for estimator training.
pub const DEFAULT_LEARNING_RATE: f64 = 0.001;

/// Moment accumulators of the Adam optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(num_params: usize) -> Self {
        Self {
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::shape(format!(
                "adam state for {} parameters, got {} params and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_keeps_parameters() {
        let mut s = AdamState::new(3);
        let mut p = [1.0, -2.0, 0.5];
        s.step(&mut p, &[0.0; 3], 0.001).unwrap();
        assert_eq!(p, [1.0, -2.0, 0.5]);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so Δ = lr·g/(|g| + ε)
        for g in [0.3, -5.0, 1e-3] {
            let mut s = AdamState::new(1);
            let mut p = [0.0];
            s.step(&mut p, &[g], 0.001).unwrap();
            let expected = -0.001 * g / (g.abs() + 1e-8);
            assert!((p[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn deterministic_from_same_state() {
        let mut a = AdamState::new(2);
        let mut p = [0.1, 0.2];
        a.step(&mut p, &[0.5, -0.5], 0.01).unwrap();
        let mut b = a.clone();
        let (mut pa, mut pb) = (p, p);
        a.step(&mut pa, &[0.2, 0.1], 0.01).unwrap();
        b.step(&mut pb, &[0.2, 0.1], 0.01).unwrap();
        assert_eq!(pa, pb);
        assert_eq!(a, b);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut s = AdamState::new(2);
        assert!(s.step(&mut [0.0; 3], &[0.0; 3], 0.1).is_err());
    }
}
