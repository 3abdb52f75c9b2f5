//! First-order optimizers over flat parameter vectors: plain SGD and an
//! adaptive-moment method (β₁ = 0.9, β₂ = 0.999, eps = 1e-8) with bias
//! correction. Both obey the same contract: `step(params, grad)` applies one
//! in-place update.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Which optimizer to run, with its learning rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerSpec {
    Sgd { lr: f64 },
    Adam { lr: f64 },
}

impl OptimizerSpec {
    pub fn lr(&self) -> f64 {
        match self {
            OptimizerSpec::Sgd { lr } | OptimizerSpec::Adam { lr } => *lr,
        }
    }
}

/// Stateful optimizer bound to a fixed parameter dimension.
#[derive(Clone, Debug)]
pub struct Optimizer {
    spec: OptimizerSpec,
    dim: usize,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Optimizer {
    pub fn new(spec: OptimizerSpec, dim: usize) -> Result<Self> {
        let lr = spec.lr();
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
        }
        let moments = match spec {
            OptimizerSpec::Sgd { .. } => 0,
            OptimizerSpec::Adam { .. } => dim,
        };
        Ok(Self { spec, dim, m: vec![0.0; moments], v: vec![0.0; moments], t: 0 })
    }

    pub fn spec(&self) -> OptimizerSpec {
        self.spec
    }

    /// Change the learning rate without resetting accumulated moments, so a
    /// training schedule can anneal the rate mid-run.
    pub fn set_lr(&mut self, lr: f64) -> Result<()> {
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::invalid(format!("learning rate must be positive, got {lr}")));
        }
        match &mut self.spec {
            OptimizerSpec::Sgd { lr: l } | OptimizerSpec::Adam { lr: l } => *l = lr,
        }
        Ok(())
    }

    /// One in-place update. Rejects dimension mismatches and non-finite
    /// gradients so a diverging run aborts with diagnostics instead of
    /// poisoning the parameters.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.dim || grad.len() != self.dim {
            return Err(Error::invalid(format!(
                "optimizer dimension {} vs params {} / grad {}",
                self.dim,
                params.len(),
                grad.len()
            )));
        }
        if let Some(pos) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::numerical(format!(
                "non-finite gradient component at index {pos}"
            )));
        }
        match self.spec {
            OptimizerSpec::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerSpec::Adam { lr } => {
                self.t += 1;
                let bc1 = 1.0 - BETA1.powi(self.t as i32);
                let bc2 = 1.0 - BETA2.powi(self.t as i32);
                for i in 0..self.dim {
                    self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * grad[i];
                    self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * grad[i] * grad[i];
                    let mhat = self.m[i] / bc1;
                    let vhat = self.v[i] / bc2;
                    params[i] -= lr * mhat / (vhat.sqrt() + EPS);
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
    fn sgd_step_is_the_textbook_update() {
        let mut opt = Optimizer::new(OptimizerSpec::Sgd { lr: 0.5 }, 2).unwrap();
        let mut p = vec![1.0, -2.0];
        opt.step(&mut p, &[2.0, 4.0]).unwrap();
        assert!(p == vec![0.0, -4.0], "p - lr*g expected, got {p:?}");
    }

    #[test]
    fn adam_first_step_moves_by_lr_regardless_of_gradient_scale() {
        // After bias correction the first update is lr·g/(|g| + eps·√bc2/…),
        // so the move is lr up to the eps term for any nonzero gradient.
        for &g in &[1e-3, 1.0, 1e3] {
            let mut opt = Optimizer::new(OptimizerSpec::Adam { lr: 0.1 }, 1).unwrap();
            let mut p = vec![0.0];
            opt.step(&mut p, &[g]).unwrap();
            assert!(
                (p[0] + 0.1).abs() < 1e-4,
                "first adaptive step should be ≈ -lr, got {}",
                p[0]
            );
        }
    }

    #[test]
    fn adam_converges_on_a_quadratic() {
        let mut opt = Optimizer::new(OptimizerSpec::Adam { lr: 0.05 }, 1).unwrap();
        let mut p = vec![3.0];
        for _ in 0..2000 {
            let g = [2.0 * (p[0] - 1.5)];
            opt.step(&mut p, &g).unwrap();
        }
        assert!((p[0] - 1.5).abs() < 1e-3, "quadratic minimum missed: {}", p[0]);
    }

    #[test]
    fn annealing_the_rate_keeps_the_moments() {
        let mut warm = Optimizer::new(OptimizerSpec::Adam { lr: 0.1 }, 1).unwrap();
        warm.step(&mut vec![0.0], &[1.0]).unwrap();
        let mut annealed = warm.clone();
        annealed.set_lr(0.05).unwrap();
        let (mut pw, mut pa) = (vec![0.0], vec![0.0]);
        warm.step(&mut pw, &[1.0]).unwrap();
        annealed.step(&mut pa, &[1.0]).unwrap();
        assert!(
            (pa[0] - pw[0] / 2.0).abs() < 1e-12,
            "halving the rate must halve the step when the moments agree"
        );
        assert!(annealed.set_lr(0.0).is_err(), "zero rate must be rejected");
    }

    #[test]
    fn non_finite_gradients_are_rejected() {
        let mut opt = Optimizer::new(OptimizerSpec::Sgd { lr: 0.1 }, 2).unwrap();
        let mut p = vec![0.0, 0.0];
        assert!(opt.step(&mut p, &[1.0, f64::NAN]).is_err());
        assert!(p == vec![0.0, 0.0], "a rejected step must not touch the parameters");
    }

    #[test]
    fn invalid_learning_rates_are_rejected() {
        assert!(Optimizer::new(OptimizerSpec::Sgd { lr: 0.0 }, 1).is_err());
        assert!(Optimizer::new(OptimizerSpec::Adam { lr: -1.0 }, 1).is_err());
        assert!(Optimizer::new(OptimizerSpec::Adam { lr: f64::NAN }, 1).is_err());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut opt = Optimizer::new(OptimizerSpec::Sgd { lr: 0.1 }, 3).unwrap();
        let mut p = vec![0.0; 2];
        assert!(opt.step(&mut p, &[1.0, 1.0]).is_err());
    }
}
