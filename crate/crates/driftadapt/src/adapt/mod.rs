//! Adaptation of a trained reconstruction network to a drifted forward model
//! without ground-truth images.
//!
//! Four entry points, all driven by [`AdaptConfig`]:
//! - [`pnp_adapt`] perturbs the trained weights against the new model by
//!   descending ‖y − A₁f(y;θ,A₁)‖² + μ‖θ − θ₀‖².
//! - [`pnp_adapt_blind`] additionally descends the forward-model parameters
//!   σ when A₁ = A(σ) is only known up to a parameter vector.
//! - [`pnp_adapt_calibrated`] runs the same objective averaged over a set of
//!   calibration measurements and returns the retrained weights for reuse.
//! - [`rnr_reconstruct`] keeps the weights frozen and alternates the
//!   auto-encoding regularizer g(x) = f₀(A₀x) with a data-consistency solve;
//!   [`rnr_plus`] fine-tunes the weights through the unrolled loop, and
//!   [`rnr_estimate_sigma`] recovers unknown forward-model parameters by
//!   minimizing the data residual of the unrolled estimator.
//!
//! Every run is deterministic: the optimizers are full-batch first-order
//! methods with no randomness, so identical inputs give bit-identical
//! results. Each run tracks the best objective seen and returns that state;
//! a rise of the 50-step moving average of the objective flags the run as
//! divergent and stops it early.

mod pnp;
mod rnr;

pub use pnp::{pnp_adapt, pnp_adapt_blind, pnp_adapt_calibrated};
pub use rnr::{rnr_estimate_sigma, rnr_plus, rnr_reconstruct};

use crate::error::{Error, Result};
use crate::linop::Op;
use crate::net::{NetworkParams, OptimizerSpec};
use crate::solver::{supports_fft_direct, DcMethod};
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

/// Hyperparameters shared by the adaptation algorithms. Weight-perturbation
/// methods use `mu`, `opt`, `opt_steps`; the regularized-reconstruction loop
/// uses `lambda`, `tau`, `k`; parameter estimation uses `sigma_opt`,
/// `sigma_opt_steps`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    /// Proximity weight μ on ‖θ − θ₀‖² in the perturbation objectives.
    pub mu: f64,
    /// Regularization weight λ of the data-consistency loop.
    pub lambda: f64,
    /// Stepsize τ of the regularizer average z = (1 − τ)x + τ·g(x).
    pub tau: f64,
    /// Iterations of the regularize/data-consistency loop.
    pub k: usize,
    /// Conjugate-gradient budget inside each data-consistency solve.
    pub cg_iters: usize,
    /// Conjugate-gradient budget for the least-squares initialization A₁†y.
    pub pinv_iters: usize,
    /// Data-consistency solver; `None` picks the exact FFT path when the
    /// operator supports it and CG otherwise.
    pub dc_method: Option<DcMethod>,
    /// Optimizer for the network weights θ.
    pub opt: OptimizerSpec,
    /// Weight-update steps.
    pub opt_steps: usize,
    /// Optimizer for forward-model parameters σ.
    pub sigma_opt: OptimizerSpec,
    /// σ-update steps for parameter estimation.
    pub sigma_opt_steps: usize,
    /// Optional proximity weight for fine-tuning through the unrolled loop
    /// (0 keeps the plain data-residual objective).
    pub rnr_plus_mu: f64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            mu: 0.01,
            lambda: 1.0,
            tau: 1.0,
            k: 5,
            cg_iters: 20,
            pinv_iters: 100,
            dc_method: None,
            opt: OptimizerSpec::Adam { lr: 1e-4 },
            opt_steps: 200,
            sigma_opt: OptimizerSpec::Adam { lr: 1e-2 },
            sigma_opt_steps: 100,
            rnr_plus_mu: 0.0,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            return Err(Error::invalid("mu must be finite and >= 0"));
        }
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::invalid("lambda must be finite and > 0"));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::invalid("tau must be finite and > 0"));
        }
        if self.k == 0 {
            return Err(Error::invalid("the reconstruction loop needs k >= 1"));
        }
        if self.cg_iters == 0 || self.pinv_iters == 0 {
            return Err(Error::invalid("cg_iters and pinv_iters must be >= 1"));
        }
        if !(self.rnr_plus_mu.is_finite() && self.rnr_plus_mu >= 0.0) {
            return Err(Error::invalid("rnr_plus_mu must be finite and >= 0"));
        }
        Ok(())
    }

    /// Solver for the data-consistency updates against `a1`.
    pub(crate) fn dc_method_for(&self, a1: &Op) -> DcMethod {
        self.dc_method.unwrap_or({
            if supports_fft_direct(a1) {
                DcMethod::FftDirect
            } else {
                DcMethod::Cg(self.cg_iters)
            }
        })
    }
}

/// One objective evaluation along an adaptation run. `iteration` counts
/// states: entry 0 is the starting point, entry k the state after k updates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    pub iteration: usize,
    /// ‖A x̂ − y‖ (root of the mean squared residual over a calibration set).
    pub data_residual: f64,
    /// ‖θ − θ₀‖; zero for runs that keep the weights frozen.
    pub proximity: f64,
    /// The full objective the run descends.
    pub objective: f64,
}

/// Output of an adaptation run: the reconstruction at the best recorded
/// objective, whatever parameters the run optimized, and the trace.
#[derive(Clone, Debug)]
pub struct AdaptResult {
    pub x_hat: Tensor,
    /// Adapted network weights, when the run optimized them.
    pub theta1: Option<NetworkParams>,
    /// Estimated forward-model parameters, when the run optimized them.
    pub sigma_hat: Option<Vec<f64>>,
    pub trace: Vec<TraceRecord>,
    /// True when the 50-step moving average of the objective rose and the
    /// run stopped early, returning the best state seen.
    pub diverged: bool,
    /// Trace index of the state the outputs were taken from.
    pub best_step: usize,
}

impl AdaptResult {
    /// Export the trace as CSV: `iteration,data_residual,proximity,objective`.
    pub fn write_trace_csv(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path)?;
        writeln!(file, "iteration,data_residual,proximity,objective")?;
        for rec in &self.trace {
            writeln!(
                file,
                "{},{},{},{}",
                rec.iteration, rec.data_residual, rec.proximity, rec.objective
            )?;
        }
        Ok(())
    }
}

/// Flags divergence when the mean objective over the latest `window` states
/// exceeds the mean over the `window` states before them.
pub(crate) struct DivergenceGuard {
    window: usize,
    history: Vec<f64>,
}

impl DivergenceGuard {
    pub(crate) fn new(window: usize) -> Self {
        Self { window, history: Vec::new() }
    }

    /// Record one objective value; true means the run should stop.
    pub(crate) fn push(&mut self, objective: f64) -> bool {
        self.history.push(objective);
        let w = self.window;
        if self.history.len() < 2 * w {
            return false;
        }
        let n = self.history.len();
        let recent: f64 = self.history[n - w..].iter().sum::<f64>() / w as f64;
        let previous: f64 = self.history[n - 2 * w..n - w].iter().sum::<f64>() / w as f64;
        recent > previous
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation_rejects_bad_weights() {
        let good = AdaptConfig::default();
        assert!(good.validate().is_ok());
        assert!(AdaptConfig { mu: -1.0, ..good }.validate().is_err());
        assert!(AdaptConfig { lambda: 0.0, ..good }.validate().is_err());
        assert!(AdaptConfig { tau: 0.0, ..good }.validate().is_err());
        assert!(AdaptConfig { k: 0, ..good }.validate().is_err());
        assert!(AdaptConfig { cg_iters: 0, ..good }.validate().is_err());
        assert!(AdaptConfig { rnr_plus_mu: f64::NAN, ..good }.validate().is_err());
    }

    #[test]
    fn divergence_guard_triggers_on_a_rising_average() {
        let mut guard = DivergenceGuard::new(3);
        for v in [5.0, 4.0, 3.0, 2.0, 1.0, 0.5] {
            assert!(!guard.push(v), "a falling objective must not trip the guard");
        }
        let mut guard = DivergenceGuard::new(3);
        let mut tripped = false;
        for v in [1.0, 1.0, 1.0, 2.0, 3.0, 4.0] {
            tripped = guard.push(v);
        }
        assert!(tripped, "a rising mean must trip the guard");
    }

    #[test]
    fn divergence_guard_needs_two_full_windows() {
        let mut guard = DivergenceGuard::new(50);
        for i in 0..99 {
            assert!(!guard.push(i as f64), "fewer than 100 states cannot trip a 50-window guard");
        }
    }
}
