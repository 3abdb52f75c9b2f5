//! Regularized reconstruction with a frozen network: start from the
//! least-squares solution, alternate the auto-encoding regularizer
//! g(x) = f₀(A₀x) with the data-consistency solve
//! x ← (A₁ᵀA₁ + (λ/τ)I)⁻¹(A₁ᵀy + (λ/τ)z), and optionally differentiate the
//! whole K-step unroll — through the linear solve via the implicit identity
//! ∂x/∂z = (λ/τ)(A₁ᵀA₁ + (λ/τ)I)⁻¹, itself a data-consistency-shaped solve —
//! to fine-tune the weights or to estimate unknown forward-model parameters
//! from the data residual alone.

use super::{AdaptConfig, AdaptResult, DivergenceGuard, TraceRecord};
use crate::error::{Error, Result};
use crate::linop::Op;
use crate::net::{Optimizer, ReconNet};
use crate::solver::{dc_update, DcMethod};
use crate::tensor::Tensor;

/// Forward pass of the K-step loop: all iterates x₀..x_K and their data
/// residuals ‖A₁xₖ − y‖.
pub(crate) struct Unrolled {
    pub(crate) iterates: Vec<Tensor>,
    pub(crate) residuals: Vec<f64>,
}

impl Unrolled {
    pub(crate) fn x_final(&self) -> &Tensor {
        self.iterates.last().expect("unroll produces at least the initialization")
    }

    pub(crate) fn final_residual(&self) -> f64 {
        *self.residuals.last().expect("unroll produces at least the initialization")
    }
}

/// Run K iterations of the regularize/data-consistency loop from `x_init`.
/// `lam` is the solve weight λ/τ.
#[allow(clippy::too_many_arguments)]
pub(crate) fn unroll_rnr(
    net: &ReconNet,
    a0: &Op,
    a1: &Op,
    y: &Tensor,
    lam: f64,
    tau: f64,
    k: usize,
    method: DcMethod,
    x_init: &Tensor,
) -> Result<Unrolled> {
    let residual = |x: &Tensor| -> Result<f64> { Ok(a1.apply(x)?.sub(y)?.norm2()) };
    let mut iterates = Vec::with_capacity(k + 1);
    let mut residuals = Vec::with_capacity(k + 1);
    iterates.push(x_init.clone());
    residuals.push(residual(x_init)?);
    let mut x = x_init.clone();
    for step in 1..=k {
        let g = net.autoencode(a0, &x)?;
        let z = if tau == 1.0 { g } else { x.scaled(1.0 - tau).add(&g.scaled(tau))? };
        x = dc_update(a1, y, &z, lam, method)?;
        x.check_finite(&format!("reconstruction iterate {step}"))?;
        iterates.push(x.clone());
        residuals.push(residual(&x)?);
    }
    Ok(Unrolled { iterates, residuals })
}

/// Reverse pass of ‖A₁x_K − y‖² through the recorded unroll. Gradients flow
/// through each solve via w = (A₁ᵀA₁ + λI)⁻¹c and through A₁(σ) via the
/// operator tangents; the initialization is treated as a constant.
#[allow(clippy::too_many_arguments)]
pub(crate) fn unroll_rnr_backward(
    net: &ReconNet,
    a0: &Op,
    a1: &Op,
    y: &Tensor,
    lam: f64,
    tau: f64,
    method: DcMethod,
    un: &Unrolled,
    want_theta: bool,
    want_sigma: bool,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let q = a1.params().len();
    let mut grad_theta = vec![0.0; net.theta().len()];
    let mut grad_sigma = vec![0.0; q];
    let k = un.iterates.len() - 1;

    let x_k = un.x_final();
    let r = a1.apply(x_k)?.sub(y)?;
    if want_sigma && q > 0 {
        // Direct term of ‖A(σ)x_K − y‖²: 2·Re⟨r, (∂ⱼA)x_K⟩.
        let direct = a1.sigma_vjp(x_k, &r)?;
        for (acc, v) in grad_sigma.iter_mut().zip(&direct) {
            *acc += 2.0 * v;
        }
    }
    let mut c = a1.adjoint(&r)?.scaled(2.0);
    let zero_y = Tensor::zeros(y.dtype(), a1.out_shape());

    for step in (1..=k).rev() {
        // Cotangent on zₖ: (λ/τ)·M⁻¹c, computed as a data-consistency solve
        // with zero measurement.
        let cz = dc_update(a1, &zero_y, &c, lam, method)?;
        if want_sigma && q > 0 {
            // xₖ = M⁻¹(A₁ᵀy + λz): with w = M⁻¹c, the measurement term of b
            // contributes Re⟨(∂ⱼA)w, y⟩ and dM = (∂ⱼA)ᵀA + Aᵀ(∂ⱼA)
            // contributes −Re⟨(∂ⱼA)w, Ax⟩ − Re⟨Aw, (∂ⱼA)x⟩.
            let w = cz.scaled(1.0 / lam);
            let x_cur = &un.iterates[step];
            let ax = a1.apply(x_cur)?;
            let aw = a1.apply(&w)?;
            let b_term = a1.sigma_vjp(&w, y)?;
            let m_term1 = a1.sigma_vjp(&w, &ax)?;
            let m_term2 = a1.sigma_vjp(x_cur, &aw)?;
            for i in 0..q {
                grad_sigma[i] += b_term[i] - m_term1[i] - m_term2[i];
            }
        }
        // zₖ = (1 − τ)xₖ₋₁ + τ·f(A₀xₖ₋₁; θ, A₀).
        let x_prev = &un.iterates[step - 1];
        let y_meas = a0.apply(x_prev)?;
        let cot_g = if tau == 1.0 { cz.clone() } else { cz.scaled(tau) };
        let back = net.backward(a0, &y_meas, &cot_g)?;
        if want_theta {
            for (acc, v) in grad_theta.iter_mut().zip(&back.theta) {
                *acc += v;
            }
        }
        let from_g = a0.adjoint(&back.measurement)?;
        c = if tau == 1.0 { from_g } else { cz.scaled(1.0 - tau).add(&from_g)? };
    }
    Ok((grad_theta, grad_sigma))
}

fn check_image_spaces(a0: &Op, a1: &Op, y: &Tensor) -> Result<()> {
    if a0.in_shape() != a1.in_shape() {
        return Err(Error::invalid(format!(
            "the original and drifted models act on different image spaces: {} vs {}",
            a0.in_shape(),
            a1.in_shape()
        )));
    }
    if y.shape() != a1.out_shape() {
        return Err(Error::ShapeMismatch { left: y.shape(), right: a1.out_shape() });
    }
    Ok(())
}

/// Reconstruct under the drifted model with the weights frozen: K rounds of
/// auto-encoder regularization and data consistency from the least-squares
/// initialization.
pub fn rnr_reconstruct(
    net0: &ReconNet,
    a0: &Op,
    a1: &Op,
    y: &Tensor,
    cfg: &AdaptConfig,
) -> Result<AdaptResult> {
    cfg.validate()?;
    check_image_spaces(a0, a1, y)?;
    let method = cfg.dc_method_for(a1);
    let x_init = a1.pseudo_inverse_apply(y, cfg.pinv_iters)?;
    let un = unroll_rnr(net0, a0, a1, y, cfg.lambda / cfg.tau, cfg.tau, cfg.k, method, &x_init)?;
    let trace: Vec<TraceRecord> = un
        .residuals
        .iter()
        .enumerate()
        .map(|(i, &r)| TraceRecord {
            iteration: i,
            data_residual: r,
            proximity: 0.0,
            objective: r * r,
        })
        .collect();
    Ok(AdaptResult {
        x_hat: un.x_final().clone(),
        theta1: None,
        sigma_hat: None,
        trace,
        diverged: false,
        best_step: cfg.k,
    })
}

/// Fine-tune the weights through the K-step unrolled loop by descending the
/// data residual ‖A₁x̂(y;θ) − y‖² (plus an optional proximity term); returns
/// the reconstruction at the best objective seen.
pub fn rnr_plus(
    net0: &ReconNet,
    a0: &Op,
    a1: &Op,
    y: &Tensor,
    cfg: &AdaptConfig,
) -> Result<AdaptResult> {
    cfg.validate()?;
    check_image_spaces(a0, a1, y)?;
    let method = cfg.dc_method_for(a1);
    let lam = cfg.lambda / cfg.tau;
    let x_init = a1.pseudo_inverse_apply(y, cfg.pinv_iters)?;

    let mut net = net0.clone();
    let theta0 = net0.theta().to_vec();
    let mut opt = Optimizer::new(cfg.opt, theta0.len())?;
    let mut guard = DivergenceGuard::new(50);
    let mut trace = Vec::with_capacity(cfg.opt_steps + 1);
    let mut diverged = false;
    let mut best_objective = f64::INFINITY;
    let mut best_theta = theta0.clone();
    let mut best_x = x_init.clone();
    let mut best_step = 0;

    for step in 0..=cfg.opt_steps {
        let un = unroll_rnr(&net, a0, a1, y, lam, cfg.tau, cfg.k, method, &x_init)?;
        let residual = un.final_residual();
        let proximity_sq: f64 = net
            .theta()
            .iter()
            .zip(&theta0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let objective = residual * residual + cfg.rnr_plus_mu * proximity_sq;
        if !objective.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite fine-tuning objective at step {step}"
            )));
        }
        trace.push(TraceRecord {
            iteration: step,
            data_residual: residual,
            proximity: proximity_sq.sqrt(),
            objective,
        });
        if objective < best_objective {
            best_objective = objective;
            best_theta.copy_from_slice(net.theta());
            best_x = un.x_final().clone();
            best_step = step;
        }
        if guard.push(objective) {
            diverged = true;
            break;
        }
        if step == cfg.opt_steps {
            break;
        }
        let (mut grad_theta, _) =
            unroll_rnr_backward(&net, a0, a1, y, lam, cfg.tau, method, &un, true, false)?;
        if cfg.rnr_plus_mu > 0.0 {
            for ((g, t), t0) in grad_theta.iter_mut().zip(net.theta()).zip(&theta0) {
                *g += 2.0 * cfg.rnr_plus_mu * (t - t0);
            }
        }
        opt.step(net.theta_mut(), &grad_theta)?;
    }

    net.set_theta(&best_theta)?;
    Ok(AdaptResult {
        x_hat: best_x,
        theta1: Some(net.params().clone()),
        sigma_hat: None,
        trace,
        diverged,
        best_step,
    })
}

/// Estimate unknown forward-model parameters by descending the data residual
/// of the K-step unrolled estimator, ‖A(σ)x̂(y;A(σ)) − y‖². The
/// least-squares initialization is taken once at σ_init and held fixed, so
/// the differentiated objective is exactly the optimized one.
pub fn rnr_estimate_sigma(
    net0: &ReconNet,
    a0: &Op,
    family: &Op,
    y: &Tensor,
    cfg: &AdaptConfig,
) -> Result<AdaptResult> {
    cfg.validate()?;
    check_image_spaces(a0, family, y)?;
    let lam = cfg.lambda / cfg.tau;
    let x_init = family.pseudo_inverse_apply(y, cfg.pinv_iters)?;

    let mut sigma = family.params().to_vec();
    let q = sigma.len();
    let mut opt = Optimizer::new(cfg.sigma_opt, q)?;
    let mut guard = DivergenceGuard::new(50);
    let mut trace = Vec::with_capacity(cfg.sigma_opt_steps + 1);
    let mut diverged = false;
    let mut best_objective = f64::INFINITY;
    let mut best_sigma = sigma.clone();
    let mut best_x = x_init.clone();
    let mut best_step = 0;

    for step in 0..=cfg.sigma_opt_steps {
        let a = family.with_params(&sigma)?;
        let method = cfg.dc_method_for(&a);
        let un = unroll_rnr(net0, a0, &a, y, lam, cfg.tau, cfg.k, method, &x_init)?;
        let residual = un.final_residual();
        let objective = residual * residual;
        if !objective.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite estimation objective at step {step}"
            )));
        }
        trace.push(TraceRecord {
            iteration: step,
            data_residual: residual,
            proximity: 0.0,
            objective,
        });
        if objective < best_objective {
            best_objective = objective;
            best_sigma.copy_from_slice(&sigma);
            best_x = un.x_final().clone();
            best_step = step;
        }
        if guard.push(objective) {
            diverged = true;
            break;
        }
        if step == cfg.sigma_opt_steps {
            break;
        }
        let (_, grad_sigma) =
            unroll_rnr_backward(net0, a0, &a, y, lam, cfg.tau, method, &un, false, true)?;
        opt.step(&mut sigma, &grad_sigma)?;
    }

    Ok(AdaptResult {
        x_hat: best_x,
        theta1: None,
        sigma_hat: Some(best_sigma),
        trace,
        diverged,
        best_step,
    })
}
