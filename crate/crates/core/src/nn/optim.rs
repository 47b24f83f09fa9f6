use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First-order optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, num_params: usize) -> Result<Self> {
        if !(learning_rate > 0.0) || !learning_rate.is_finite() {
            return Err(Error::OutOfRange(format!("learning rate must be > 0, got {learning_rate}")));
        }
        let moments = match kind {
            OptimizerKind::Sgd => 0,
            OptimizerKind::Adam { .. } => num_params,
        };
        Ok(Self {
            kind,
            learning_rate,
            m: vec![0.0; moments],
            v: vec![0.0; moments],
            step: 0,
        })
    }

    pub fn adam(learning_rate: f64, num_params: usize) -> Result<Self> {
        Self::new(OptimizerKind::adam(), learning_rate, num_params)
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One descent step: `params -= update(grads)`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        Error::check_dim(params.len(), grads.len())?;
        self.step += 1;
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= self.learning_rate * g;
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                Error::check_dim(self.m.len(), params.len())?;
                let t = self.step as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for i in 0..params.len() {
                    let g = grads[i];
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_step() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, 2).unwrap();
        let mut p = vec![1.0, -1.0];
        opt.step(&mut p, &[2.0, -4.0]).unwrap();
        assert_eq!(p, vec![0.8, -0.6]);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        let mut opt = Optimizer::adam(1e-3, 2).unwrap();
        let mut p = vec![0.0, 0.0];
        opt.step(&mut p, &[5.0, -0.01]).unwrap();
        assert!((p[0] + 1e-3).abs() < 1e-9);
        assert!((p[1] - 1e-3).abs() < 1e-6);
    }

    #[test]
    fn adam_minimises_quadratic() {
        let mut opt = Optimizer::adam(0.05, 1).unwrap();
        let mut p = vec![3.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.0)];
            opt.step(&mut p, &g).unwrap();
        }
        assert!((p[0] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn rejects_bad_learning_rate() {
        assert!(Optimizer::adam(0.0, 1).is_err());
        assert!(Optimizer::adam(-1.0, 1).is_err());
    }
}
