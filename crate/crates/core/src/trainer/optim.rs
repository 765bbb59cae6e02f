//! Momentum SGD with coupled weight decay.

use crate::error::{Error, Result};

/// `v ← μ·v + g + wd·p`, `p ← p − lr·v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(param_count: usize, lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            lr,
            momentum,
            weight_decay,
            velocity: vec![0.0; param_count],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.velocity.len() || grads.len() != params.len() {
            return Err(Error::domain("optimizer length mismatch"));
        }
        for ((p, &g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            *v = self.momentum * *v + g + self.weight_decay * *p;
            *p -= self.lr * *v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_steps_by_hand() {
        let mut o = Sgd::new(1, 0.1, 0.9, 0.0);
        let mut p = [1.0];
        o.step(&mut p, &[2.0]).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-15);
        o.step(&mut p, &[2.0]).unwrap();
        // v = 0.9*2 + 2 = 3.8
        assert!((p[0] - 0.42).abs() < 1e-15);
    }

    #[test]
    fn decay_pulls_to_zero() {
        let mut o = Sgd::new(2, 0.1, 0.0, 0.5);
        let mut p = [4.0, -2.0];
        o.step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, [3.8, -1.9]);
    }

    #[test]
    fn quadratic_converges() {
        let mut o = Sgd::new(1, 0.05, 0.9, 0.0);
        let mut p = [3.0];
        for _ in 0..500 {
            let g = [2.0 * (p[0] - 1.0)];
            o.step(&mut p, &g).unwrap();
        }
        assert!((p[0] - 1.0).abs() < 1e-6);
        assert!(o.step(&mut p, &[1.0, 2.0]).is_err());
    }
}
