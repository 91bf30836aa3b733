//! First-order optimizers over lists of flat parameter blocks.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Optimizer {
            kind,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update. `params` and `grads` must list the same blocks in
    /// the same order on every call.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient block count");
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    for (w, gi) in p.iter_mut().zip(g) {
                        *w -= self.lr * gi;
                    }
                }
            }
            OptimizerKind::Adam => {
                if self.m.is_empty() {
                    self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
                    self.v = self.m.clone();
                }
                let t = self.step as i32;
                let c1 = 1.0 - self.beta1.powi(t);
                let c2 = 1.0 - self.beta2.powi(t);
                for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    for i in 0..p.len() {
                        m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                        v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                        let m_hat = m[i] / c1;
                        let v_hat = v[i] / c2;
                        p[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step_is_lr_times_gradient() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.5);
        let mut p = vec![1.0, 2.0];
        opt.step(vec![&mut p], vec![&[2.0, -2.0]]);
        assert_eq!(p, vec![0.0, 3.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.1);
        let mut p = vec![0.0, 0.0];
        opt.step(vec![&mut p], vec![&[3.0, -0.01]]);
        assert!((p[0] + 0.1).abs() < 1e-6);
        assert!((p[1] - 0.1).abs() < 1e-4);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.05);
        let mut p = vec![3.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0)];
            opt.step(vec![&mut p], vec![&g]);
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
    }
}
