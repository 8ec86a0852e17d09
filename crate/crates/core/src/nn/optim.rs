use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// RMSProp: `E[g²] ← ρ E[g²] + (1 - ρ) g²`, `w ← w - η g / sqrt(E[g²] + ε)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    /// One accumulator per parameter tensor; empty until the first step.
    pub grad_sq: Vec<Array2<f64>>,
}

impl RmsProp {
    pub fn new(learning_rate: f64, rho: f64, epsilon: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::param(format!("learning rate must be positive, got {learning_rate}")));
        }
        if !(0.0..1.0).contains(&rho) {
            return Err(Error::param(format!("rho must lie in [0, 1), got {rho}")));
        }
        if !(epsilon > 0.0) {
            return Err(Error::param(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { learning_rate, rho, epsilon, grad_sq: Vec::new() })
    }

    pub fn step(&mut self, params: Vec<&mut Array2<f64>>, grads: &[Array2<f64>]) {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        if self.grad_sq.is_empty() {
            self.grad_sq = grads.iter().map(|g| Array2::zeros(g.raw_dim())).collect();
        }
        let (rho, eps, lr) = (self.rho, self.epsilon, self.learning_rate);
        for ((w, g), acc) in params.into_iter().zip(grads).zip(&mut self.grad_sq) {
            ndarray::Zip::from(w).and(g).and(acc).for_each(|w, &g, a| {
                *a = rho * *a + (1.0 - rho) * g * g;
                *w -= lr * g / (*a + eps).sqrt();
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn first_step_matches_hand_computation() {
        let mut opt = RmsProp::new(0.01, 0.9, 1e-7).unwrap();
        let mut w = array![[1.0, -2.0]];
        let g = array![[0.5, 0.0]];
        opt.step(vec![&mut w], &[g]);
        let a = 0.1 * 0.25;
        assert!((w[[0, 0]] - (1.0 - 0.01 * 0.5 / (a + 1e-7f64).sqrt())).abs() < 1e-15);
        assert_eq!(w[[0, 1]], -2.0);
        assert!(opt.grad_sq[0].iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn minimises_a_quadratic() {
        let mut opt = RmsProp::new(0.05, 0.9, 1e-7).unwrap();
        let mut w = array![[3.0, -4.0]];
        for _ in 0..500 {
            let g = w.clone() * 2.0;
            opt.step(vec![&mut w], &[g]);
        }
        assert!(w.iter().all(|v| v.abs() < 0.1), "{w}");
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        assert!(RmsProp::new(0.0, 0.9, 1e-7).is_err());
        assert!(RmsProp::new(1e-3, 1.0, 1e-7).is_err());
        assert!(RmsProp::new(1e-3, 0.9, 0.0).is_err());
    }
}
