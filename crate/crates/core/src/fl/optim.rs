//! Local optimizers. Adam state persists across global rounds per user.

use serde::{Deserialize, Serialize};

/// Learning-rate schedule indexed by the global round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearningRate {
    Constant { value: f64 },
    /// `eta(t) = 2 / (mu * (gamma + t))`, the rate assumed by the
    /// convergence analysis.
    Diminishing { mu: f64, gamma: f64 },
}

impl LearningRate {
    pub fn at(&self, round: u64) -> f64 {
        match *self {
            LearningRate::Constant { value } => value,
            LearningRate::Diminishing { mu, gamma } => 2.0 / (mu * (gamma + round as f64)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam(AdamState),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(dim: usize, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            beta1,
            beta2,
            epsilon,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            step: 0,
        }
    }
}

impl Optimizer {
    pub fn adam(dim: usize) -> Self {
        Optimizer::Adam(AdamState::new(dim, 0.9, 0.999, 1e-8))
    }

    /// Applies one step in place with the given learning rate.
    pub fn step(&mut self, w: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            Optimizer::Sgd => {
                for (wi, gi) in w.iter_mut().zip(grad) {
                    *wi -= lr * gi;
                }
            }
            Optimizer::Adam(st) => {
                st.step += 1;
                let b1 = st.beta1;
                let b2 = st.beta2;
                let bc1 = 1.0 - b1.powi(st.step as i32);
                let bc2 = 1.0 - b2.powi(st.step as i32);
                for i in 0..w.len() {
                    st.m[i] = b1 * st.m[i] + (1.0 - b1) * grad[i];
                    st.v[i] = b2 * st.v[i] + (1.0 - b2) * grad[i] * grad[i];
                    let m_hat = st.m[i] / bc1;
                    let v_hat = st.v[i] / bc2;
                    w[i] -= lr * m_hat / (v_hat.sqrt() + st.epsilon);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_is_plain_descent() {
        let mut w = vec![1.0, -2.0];
        let grad = vec![0.5, -0.5];
        Optimizer::Sgd.step(&mut w, &grad, 0.1);
        assert_eq!(w, vec![0.95, -1.95]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        // with bias correction, the first step is lr * g / (|g| + eps)
        let mut w = vec![0.0, 0.0];
        let grad = vec![2.0, -3.0];
        let mut opt = Optimizer::adam(2);
        opt.step(&mut w, &grad, 1e-3);
        assert!((w[0] + 1e-3).abs() < 1e-9, "w0 = {}", w[0]);
        assert!((w[1] - 1e-3).abs() < 1e-9, "w1 = {}", w[1]);
    }

    #[test]
    fn diminishing_rate_formula() {
        let lr = LearningRate::Diminishing { mu: 0.5, gamma: 8.0 };
        assert!((lr.at(0) - 2.0 / (0.5 * 8.0)).abs() < 1e-15);
        assert!((lr.at(12) - 2.0 / (0.5 * 20.0)).abs() < 1e-15);
    }
}
