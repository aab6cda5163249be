use serde::{Deserialize, Serialize};

use super::{Tensor, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for a fixed list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> AdamState {
        AdamState {
            config,
            t: 0,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    /// One update of every parameter in place. Nothing is modified when a
    /// shape mismatches or a gradient is non-finite.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<(), TensorError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TensorError::Shape {
                op: "adam_step",
                left: [params.len(), 0],
                right: [grads.len(), self.m.len()],
            });
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape != g.shape || p.len() != self.m[k].len() {
                return Err(TensorError::Shape {
                    op: "adam_step",
                    left: p.shape,
                    right: g.shape,
                });
            }
            super::ensure_finite(g, "adam_step")?;
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..g.len() {
                let gi = g.data[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                p.data[i] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = Tensor::from_rows(&[vec![1.0, -2.0]]);
        let mut s = AdamState::new(AdamConfig::default(), &[&p]);
        s.step(&mut [&mut p], &[Tensor::zeros(1, 2)]).unwrap();
        assert_eq!(p.data, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = Tensor::scalar(0.0);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        let mut s = AdamState::new(cfg, &[&p]);
        s.step(&mut [&mut p], &[Tensor::scalar(1.0)]).unwrap();
        // m̂ = v̂ = 1, so the step is lr / (1 + eps)
        assert!((p.item() + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_gradients() {
        let mut p = Tensor::scalar(0.0);
        let mut s = AdamState::new(AdamConfig::default(), &[&p]);
        assert!(s.step(&mut [&mut p], &[Tensor::scalar(f64::INFINITY)]).is_err());
        assert!(s.step(&mut [&mut p], &[Tensor::zeros(1, 2)]).is_err());
        assert_eq!(s.t, 0);
    }
}
