//! Weight perturbation against a drifted forward model: descend
//! (1/N)Σᵢ‖yᵢ − A f(yᵢ;θ,A)‖² + μ‖θ − θ₀‖² over θ, and over the
//! forward-model parameters σ as well when A = A(σ) is unknown. One engine
//! serves the single-measurement, blind, and calibrated variants, so the
//! singleton calibration set is bitwise identical to the single-measurement
//! run and a parameter-free operator makes the blind variant bitwise
//! identical to the known-model one.

use super::{AdaptConfig, AdaptResult, DivergenceGuard, TraceRecord};
use crate::error::{Error, Result};
use crate::linop::Op;
use crate::net::{Optimizer, ReconNet};
use crate::tensor::Tensor;
use rayon::prelude::*;

/// One evaluation of the perturbation objective and its gradients.
struct PnpEval {
    objective: f64,
    /// Mean of ‖A f(yᵢ) − yᵢ‖² over the measurement set.
    data_mean_sq: f64,
    proximity: f64,
    grad_theta: Vec<f64>,
    grad_sigma: Vec<f64>,
}

/// Evaluate the objective at the network's current weights and the operator
/// parameters `sigma`, with gradients. σ enters twice per measurement: the
/// residual's direct A-dependence and the network's internal adjoint stage.
fn evaluate(
    net: &ReconNet,
    theta0: &[f64],
    base: &Op,
    sigma: &[f64],
    ys: &[Tensor],
    mu: f64,
    want_sigma: bool,
) -> Result<PnpEval> {
    let a = base.with_params(sigma)?;
    let n = ys.len() as f64;
    let q = sigma.len();

    let parts: Vec<(f64, Vec<f64>, Vec<f64>)> = ys
        .par_iter()
        .map(|y| {
            let f = net.forward(&a, y)?;
            let r = a.apply(&f)?.sub(y)?;
            let data_sq: f64 = r.data().iter().map(|v| v.norm_sqr()).sum();
            let cot = a.adjoint(&r)?.scaled(2.0 / n);
            let back = net.backward(&a, y, &cot)?;
            let mut gs = back.sigma;
            if want_sigma && q > 0 {
                let direct = a.sigma_vjp(&f, &r)?;
                for (acc, v) in gs.iter_mut().zip(&direct) {
                    *acc += 2.0 / n * v;
                }
            }
            Ok((data_sq, back.theta, gs))
        })
        .collect::<Result<_>>()?;

    let mut grad_theta = vec![0.0; net.theta().len()];
    let mut grad_sigma = vec![0.0; q];
    let mut data_total = 0.0;
    for (data_sq, gt, gs) in &parts {
        data_total += data_sq;
        for (acc, v) in grad_theta.iter_mut().zip(gt) {
            *acc += v;
        }
        if want_sigma {
            for (acc, v) in grad_sigma.iter_mut().zip(gs) {
                *acc += v;
            }
        }
    }

    let mut proximity_sq = 0.0;
    for ((g, t), t0) in grad_theta.iter_mut().zip(net.theta()).zip(theta0) {
        let d = t - t0;
        proximity_sq += d * d;
        *g += 2.0 * mu * d;
    }
    let data_mean_sq = data_total / n;
    Ok(PnpEval {
        objective: data_mean_sq + mu * proximity_sq,
        data_mean_sq,
        proximity: proximity_sq.sqrt(),
        grad_theta,
        grad_sigma,
    })
}

fn engine(
    net0: &ReconNet,
    base: &Op,
    ys: &[Tensor],
    cfg: &AdaptConfig,
    optimize_sigma: bool,
) -> Result<AdaptResult> {
    cfg.validate()?;
    if ys.is_empty() {
        return Err(Error::invalid("adaptation needs at least one measurement"));
    }
    for y in ys {
        if y.shape() != base.out_shape() {
            return Err(Error::ShapeMismatch { left: y.shape(), right: base.out_shape() });
        }
    }

    let mut net = net0.clone();
    let theta0 = net0.theta().to_vec();
    let mut sigma = base.params().to_vec();
    let q = sigma.len();
    let mut opt_theta = Optimizer::new(cfg.opt, theta0.len())?;
    let mut opt_sigma = if optimize_sigma && q > 0 {
        Some(Optimizer::new(cfg.sigma_opt, q)?)
    } else {
        None
    };

    let mut guard = DivergenceGuard::new(50);
    let mut trace = Vec::with_capacity(cfg.opt_steps + 1);
    let mut diverged = false;
    let mut best_objective = f64::INFINITY;
    let mut best_theta = theta0.clone();
    let mut best_sigma = sigma.clone();
    let mut best_step = 0;

    for step in 0..=cfg.opt_steps {
        let eval = evaluate(&net, &theta0, base, &sigma, ys, cfg.mu, optimize_sigma)?;
        if !eval.objective.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite adaptation objective at step {step}"
            )));
        }
        trace.push(TraceRecord {
            iteration: step,
            data_residual: eval.data_mean_sq.sqrt(),
            proximity: eval.proximity,
            objective: eval.objective,
        });
        if eval.objective < best_objective {
            best_objective = eval.objective;
            best_theta.copy_from_slice(net.theta());
            best_sigma.copy_from_slice(&sigma);
            best_step = step;
        }
        if guard.push(eval.objective) {
            diverged = true;
            break;
        }
        if step == cfg.opt_steps {
            break;
        }
        opt_theta.step(net.theta_mut(), &eval.grad_theta)?;
        if let Some(opt) = opt_sigma.as_mut() {
            opt.step(&mut sigma, &eval.grad_sigma)?;
        }
    }

    net.set_theta(&best_theta)?;
    let a_best = base.with_params(&best_sigma)?;
    let x_hat = net.forward(&a_best, &ys[0])?;
    Ok(AdaptResult {
        x_hat,
        theta1: Some(net.params().clone()),
        sigma_hat: optimize_sigma.then_some(best_sigma),
        trace,
        diverged,
        best_step,
    })
}

/// Adapt the weights to a known drifted model A₁ for one measurement.
pub fn pnp_adapt(net0: &ReconNet, a1: &Op, y: &Tensor, cfg: &AdaptConfig) -> Result<AdaptResult> {
    engine(net0, a1, std::slice::from_ref(y), cfg, false)
}

/// Jointly adapt the weights and the forward-model parameters; `a_init`
/// fixes the operator family and carries the starting parameters σ_init
/// (typically the parameters of the training-time model).
pub fn pnp_adapt_blind(
    net0: &ReconNet,
    a_init: &Op,
    y: &Tensor,
    cfg: &AdaptConfig,
) -> Result<AdaptResult> {
    engine(net0, a_init, std::slice::from_ref(y), cfg, true)
}

/// Adapt over a calibration set of measurements; the returned weights (and
/// parameters, with `estimate_sigma`) are meant for reuse on new data. The
/// reported reconstruction is of the first calibration measurement.
pub fn pnp_adapt_calibrated(
    net0: &ReconNet,
    a: &Op,
    ys: &[Tensor],
    cfg: &AdaptConfig,
    estimate_sigma: bool,
) -> Result<AdaptResult> {
    engine(net0, a, ys, cfg, estimate_sigma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::{Arch, OptimizerSpec};
    use crate::tensor::{Dtype, Shape};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_real(shape: Shape, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_real(
            shape,
            (0..shape.len()).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn small_cfg() -> AdaptConfig {
        AdaptConfig {
            mu: 0.05,
            opt: OptimizerSpec::Adam { lr: 1e-3 },
            opt_steps: 25,
            sigma_opt: OptimizerSpec::Adam { lr: 1e-3 },
            ..AdaptConfig::default()
        }
    }

    #[test]
    fn theta_gradient_matches_finite_differences() {
        let shape = Shape::new(1, 6, 6);
        let a = Op::motion_blur(shape, 3, 25.0).unwrap();
        let net = ReconNet::init_random(Arch::new(vec![1, 3, 1]).unwrap(), 1);
        let theta0: Vec<f64> = net.theta().iter().map(|v| v + 0.01).collect();
        let y = rand_real(shape, 2);
        let ys = [y];
        let mu = 0.3;

        let eval = evaluate(&net, &theta0, &a, a.params(), &ys, mu, false).unwrap();
        let h = 1e-5;
        for k in 0..net.theta().len() {
            let mut plus = net.clone();
            plus.theta_mut()[k] += h;
            let mut minus = net.clone();
            minus.theta_mut()[k] -= h;
            let op = evaluate(&plus, &theta0, &a, a.params(), &ys, mu, false).unwrap();
            let om = evaluate(&minus, &theta0, &a, a.params(), &ys, mu, false).unwrap();
            let fd = (op.objective - om.objective) / (2.0 * h);
            let rel = (eval.grad_theta[k] - fd).abs() / (fd.abs() + 1e-8);
            assert!(rel <= 1e-4, "θ[{k}]: analytic {} vs fd {fd}", eval.grad_theta[k]);
        }
    }

    #[test]
    fn sigma_gradient_matches_finite_differences() {
        let shape = Shape::new(1, 6, 6);
        let a = Op::motion_blur(shape, 3, 25.0).unwrap();
        let net = ReconNet::init_random(Arch::new(vec![1, 3, 1]).unwrap(), 3);
        let theta0 = net.theta().to_vec();
        let y = rand_real(shape, 4);
        let ys = [y];
        let sigma = a.params().to_vec();

        let eval = evaluate(&net, &theta0, &a, &sigma, &ys, 0.1, true).unwrap();
        let h = 1e-6;
        for k in 0..sigma.len() {
            let mut plus = sigma.clone();
            plus[k] += h;
            let mut minus = sigma.clone();
            minus[k] -= h;
            let op = evaluate(&net, &theta0, &a, &plus, &ys, 0.1, true).unwrap();
            let om = evaluate(&net, &theta0, &a, &minus, &ys, 0.1, true).unwrap();
            let fd = (op.objective - om.objective) / (2.0 * h);
            let rel = (eval.grad_sigma[k] - fd).abs() / (fd.abs() + 1e-6);
            assert!(rel <= 1e-4, "σ[{k}]: analytic {} vs fd {fd}", eval.grad_sigma[k]);
        }
    }

    #[test]
    fn huge_proximity_weight_freezes_the_weights() {
        let shape = Shape::new(1, 6, 6);
        let a1 = Op::motion_blur(shape, 3, 40.0).unwrap();
        let net0 = ReconNet::init_random(Arch::new(vec![1, 3, 1]).unwrap(), 5);
        let y = rand_real(shape, 6);
        let cfg = AdaptConfig { mu: 1e12, ..small_cfg() };
        let result = pnp_adapt(&net0, &a1, &y, &cfg).unwrap();
        let theta1 = result.theta1.unwrap();
        let dist: f64 = theta1
            .theta()
            .iter()
            .zip(net0.theta())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let scale: f64 = net0.theta().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(dist <= 1e-6 * scale, "θ must stay at θ₀, moved {dist:.2e}");
        assert_eq!(result.x_hat, net0.forward(&a1, &y).unwrap());
    }

    #[test]
    fn best_objective_never_exceeds_the_starting_objective() {
        let shape = Shape::new(1, 6, 6);
        let a1 = Op::motion_blur(shape, 3, 10.0).unwrap();
        let net0 = ReconNet::init_random(Arch::new(vec![1, 3, 1]).unwrap(), 7);
        let y = rand_real(shape, 8);
        let result = pnp_adapt(&net0, &a1, &y, &small_cfg()).unwrap();
        let start = result.trace[0].objective;
        let best = result.trace[result.best_step].objective;
        assert!(best <= start, "best-so-far {best} must not exceed start {start}");
        assert!(result.trace.len() == small_cfg().opt_steps + 1);
    }

    #[test]
    fn blind_with_parameter_free_operator_matches_plain_adaptation_bitwise() {
        let shape = Shape::new(1, 6, 6);
        let a1 = Op::identity(shape);
        let net0 = ReconNet::init_random(Arch::new(vec![1, 3, 1]).unwrap(), 9);
        let y = rand_real(shape, 10);
        let cfg = small_cfg();
        let plain = pnp_adapt(&net0, &a1, &y, &cfg).unwrap();
        let blind = pnp_adapt_blind(&net0, &a1, &y, &cfg).unwrap();
        assert_eq!(plain.x_hat, blind.x_hat);
        assert_eq!(plain.theta1, blind.theta1);
        assert!(plain.trace == blind.trace, "traces must agree bitwise");
    }

    #[test]
    fn singleton_calibration_set_matches_single_measurement_bitwise() {
        let shape = Shape::new(1, 6, 6);
        let a1 = Op::motion_blur(shape, 3, 55.0).unwrap();
        let net0 = ReconNet::init_random(Arch::new(vec![1, 3, 1]).unwrap(), 11);
        let y = rand_real(shape, 12);
        let cfg = small_cfg();
        let single = pnp_adapt(&net0, &a1, &y, &cfg).unwrap();
        let calibrated =
            pnp_adapt_calibrated(&net0, &a1, std::slice::from_ref(&y), &cfg, false).unwrap();
        assert_eq!(single.x_hat, calibrated.x_hat);
        assert_eq!(single.theta1, calibrated.theta1);
        assert!(single.trace == calibrated.trace);
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let shape = Shape::new(1, 6, 6);
        let a1 = Op::motion_blur(shape, 3, 70.0).unwrap();
        let net0 = ReconNet::init_random(Arch::new(vec![1, 3, 1]).unwrap(), 13);
        let y = rand_real(shape, 14);
        let cfg = small_cfg();
        let first = pnp_adapt(&net0, &a1, &y, &cfg).unwrap();
        let second = pnp_adapt(&net0, &a1, &y, &cfg).unwrap();
        assert_eq!(first.x_hat, second.x_hat);
        assert!(first.trace == second.trace, "identical runs must agree bitwise");
    }

    #[test]
    fn empty_measurement_set_is_rejected() {
        let shape = Shape::new(1, 4, 4);
        let net0 = ReconNet::zeros(Arch::new(vec![1, 2, 1]).unwrap());
        let cfg = small_cfg();
        assert!(
            pnp_adapt_calibrated(&net0, &Op::identity(shape), &[], &cfg, false).is_err()
        );
    }

    #[test]
    fn shuffled_calibration_order_changes_the_loss_only_marginally() {
        let shape = Shape::new(1, 6, 6);
        let a1 = Op::motion_blur(shape, 3, 30.0).unwrap();
        let net0 = ReconNet::init_random(Arch::new(vec![1, 3, 1]).unwrap(), 15);
        let ys: Vec<Tensor> = (0..4).map(|s| rand_real(shape, 40 + s)).collect();
        let mut swapped = ys.clone();
        swapped.swap(0, 3);
        swapped.swap(1, 2);
        let cfg = small_cfg();
        let a = pnp_adapt_calibrated(&net0, &a1, &ys, &cfg, false).unwrap();
        let b = pnp_adapt_calibrated(&net0, &a1, &swapped, &cfg, false).unwrap();
        let la = a.trace.last().unwrap().objective;
        let lb = b.trace.last().unwrap().objective;
        assert!(
            (la - lb).abs() <= 1e-3 * la.abs().max(1e-12),
            "full-batch objective must be order-insensitive: {la} vs {lb}"
        );
    }
}
