//! Supervised training of the reconstruction network on clean images: each
//! epoch regenerates measurements yᵢ = A₀xᵢ + ε with fresh Gaussian noise,
//! runs minibatch gradient steps on ½‖f(yᵢ) − xᵢ‖², and snapshots the
//! parameters with the best loss on a held-out validation split whose noise
//! is fixed once so epochs stay comparable.

use super::{Optimizer, OptimizerSpec, ReconNet};
use crate::error::{Error, Result};
use crate::linop::Op;
use crate::tensor::{Dtype, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Training hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Standard deviation of the Gaussian measurement noise added per epoch
    /// (per real scalar component).
    pub noise_sigma: f64,
    pub opt: OptimizerSpec,
    pub seed: u64,
    /// Fraction of the dataset held out for validation; with fewer than two
    /// images (or a zero fraction) validation runs on the training images.
    pub val_fraction: f64,
    pub batch_size: usize,
    /// Learning-rate schedule: the rate decays geometrically from `opt`'s
    /// value to `opt.lr() * final_lr_fraction` at the last epoch. 1.0 keeps
    /// the rate constant.
    pub final_lr_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            noise_sigma: 0.01,
            opt: OptimizerSpec::Adam { lr: 1e-3 },
            seed: 0,
            val_fraction: 0.1,
            batch_size: 8,
            final_lr_fraction: 1.0,
        }
    }
}

/// Loss curves and the best-validation snapshot location.
#[derive(Clone, Debug)]
pub struct TrainReport {
    /// Mean per-sample training loss of each epoch.
    pub epoch_train_loss: Vec<f64>,
    /// Validation loss after each epoch (fixed validation noise).
    pub epoch_val_loss: Vec<f64>,
    /// Index into the loss vectors of the snapshot that was kept.
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Add iid Gaussian noise of standard deviation `sigma` to every real scalar
/// component (both real and imaginary parts for complex tensors).
pub fn add_gaussian_noise(y: &Tensor, sigma: f64, rng: &mut ChaCha8Rng) -> Tensor {
    if sigma == 0.0 {
        return y.clone();
    }
    let mut out = y.clone();
    match y.dtype() {
        Dtype::Real => {
            for v in out.data_mut() {
                let e: f64 = rng.sample(StandardNormal);
                v.re += sigma * e;
            }
        }
        Dtype::Complex => {
            for v in out.data_mut() {
                let er: f64 = rng.sample(StandardNormal);
                let ei: f64 = rng.sample(StandardNormal);
                v.re += sigma * er;
                v.im += sigma * ei;
            }
        }
    }
    out
}

/// Mean squared reconstruction loss ½‖x̂ − x‖²/n over the n real scalar
/// components, and the matching output cotangent (x̂ − x)/n.
fn loss_and_cotangent(xhat: &Tensor, x: &Tensor) -> Result<(f64, Tensor)> {
    let diff = xhat.sub(x)?;
    let n = match diff.dtype() {
        Dtype::Real => diff.shape().len(),
        Dtype::Complex => 2 * diff.shape().len(),
    } as f64;
    let sq: f64 = diff.data().iter().map(|v| v.norm_sqr()).sum();
    Ok((sq / (2.0 * n), diff.scaled(1.0 / n)))
}

fn validation_loss(net: &ReconNet, adjoints: &[Tensor], targets: &[Tensor]) -> Result<f64> {
    let mut total = 0.0;
    for (x0, x) in adjoints.iter().zip(targets) {
        let xhat = net.refine(x0)?;
        let (loss, _) = loss_and_cotangent(&xhat, x)?;
        total += loss;
    }
    Ok(total / adjoints.len() as f64)
}

/// Train in place; the network ends at the best-validation snapshot.
pub fn train_supervised(
    net: &mut ReconNet,
    a0: &Op,
    dataset: &[Tensor],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let assignment = vec![0; dataset.len()];
    train_supervised_mixed(net, std::slice::from_ref(a0), &assignment, dataset, cfg)
}

/// Train on data measured through several forward models at once: sample i is
/// measured with `ops[assignment[i]]`, and its adjoint feeds the network. All
/// operators must share the image space. With a single operator this is
/// exactly [`train_supervised`].
pub fn train_supervised_mixed(
    net: &mut ReconNet,
    ops: &[Op],
    assignment: &[usize],
    dataset: &[Tensor],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(Error::invalid("training needs at least one image"));
    }
    if ops.is_empty() {
        return Err(Error::invalid("training needs at least one forward model"));
    }
    if assignment.len() != dataset.len() {
        return Err(Error::invalid(format!(
            "operator assignment covers {} samples, dataset has {}",
            assignment.len(),
            dataset.len()
        )));
    }
    if let Some(bad) = assignment.iter().find(|&&i| i >= ops.len()) {
        return Err(Error::invalid(format!(
            "operator index {bad} out of range for {} forward models",
            ops.len()
        )));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::invalid("epochs and batch size must be positive"));
    }
    if !(cfg.noise_sigma.is_finite() && cfg.noise_sigma >= 0.0) {
        return Err(Error::invalid("noise sigma must be finite and non-negative"));
    }
    if !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(Error::invalid("validation fraction must lie in [0, 1)"));
    }
    if !(cfg.final_lr_fraction.is_finite() && cfg.final_lr_fraction > 0.0) {
        return Err(Error::invalid("final learning-rate fraction must be positive"));
    }
    for a in ops {
        if a.in_shape() != ops[0].in_shape() {
            return Err(Error::ShapeMismatch { left: a.in_shape(), right: ops[0].in_shape() });
        }
    }
    for x in dataset {
        if x.shape() != ops[0].in_shape() {
            return Err(Error::ShapeMismatch { left: x.shape(), right: ops[0].in_shape() });
        }
    }

    let n_val = if dataset.len() >= 2 {
        ((cfg.val_fraction * dataset.len() as f64).round() as usize).min(dataset.len() - 1)
    } else {
        0
    };
    let n_train = dataset.len() - n_val;
    let train_set = &dataset[..n_train];
    let train_ops = &assignment[..n_train];
    // With no held-out images, validate on the training images (fixed noise).
    let (val_set, val_ops) = if n_val > 0 {
        (&dataset[n_train..], &assignment[n_train..])
    } else {
        (train_set, train_ops)
    };

    // Validation measurements are drawn once so epoch losses are comparable.
    let mut val_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x517c_c1b7_2722_0a95);
    let val_adjoints: Vec<Tensor> = val_set
        .iter()
        .zip(val_ops)
        .map(|(x, &op)| {
            let a0 = &ops[op];
            let y = add_gaussian_noise(&a0.apply(x)?, cfg.noise_sigma, &mut val_rng);
            a0.adjoint(&y)
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.opt, net.theta().len())?;
    let mut report = TrainReport {
        epoch_train_loss: Vec::with_capacity(cfg.epochs),
        epoch_val_loss: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
    };
    let mut best_theta = net.theta().to_vec();

    for epoch in 0..cfg.epochs {
        if cfg.final_lr_fraction != 1.0 && cfg.epochs > 1 {
            let t = epoch as f64 / (cfg.epochs - 1) as f64;
            opt.set_lr(cfg.opt.lr() * cfg.final_lr_fraction.powf(t))?;
        }
        // Fresh measurement noise each epoch.
        let adjoints: Vec<Tensor> = train_set
            .iter()
            .zip(train_ops)
            .map(|(x, &op)| {
                let a0 = &ops[op];
                let y = add_gaussian_noise(&a0.apply(x)?, cfg.noise_sigma, &mut rng);
                a0.adjoint(&y)
            })
            .collect::<Result<_>>()?;

        // Deterministic shuffle of the sample order.
        let mut order: Vec<usize> = (0..n_train).collect();
        for i in (1..n_train).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }

        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            // Per-sample gradients in parallel, reduced in batch order so the
            // result is bit-stable regardless of thread scheduling.
            let parts: Vec<(f64, Vec<f64>)> = batch
                .par_iter()
                .map(|&i| {
                    let xhat = net.refine(&adjoints[i])?;
                    let (loss, cot) = loss_and_cotangent(&xhat, &train_set[i])?;
                    let (grad_theta, _) = net.refine_backward(&adjoints[i], &cot)?;
                    Ok((loss, grad_theta))
                })
                .collect::<Result<_>>()?;

            let mut grad = vec![0.0; net.theta().len()];
            let mut batch_loss = 0.0;
            for (loss, g) in &parts {
                batch_loss += loss;
                for (acc, v) in grad.iter_mut().zip(g) {
                    *acc += v;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|v| *v *= scale);
            epoch_loss += batch_loss;

            if !batch_loss.is_finite() {
                return Err(Error::numerical(format!(
                    "non-finite training loss in epoch {epoch}"
                )));
            }
            opt.step(net.theta_mut(), &grad)?;
        }
        epoch_loss /= n_train as f64;

        let val_loss = validation_loss(net, &val_adjoints, val_set)?;
        if !val_loss.is_finite() {
            return Err(Error::numerical(format!(
                "non-finite validation loss in epoch {epoch}"
            )));
        }
        report.epoch_train_loss.push(epoch_loss);
        report.epoch_val_loss.push(val_loss);
        if val_loss < report.best_val_loss {
            report.best_val_loss = val_loss;
            report.best_epoch = epoch;
            best_theta.copy_from_slice(net.theta());
        }
    }

    net.set_theta(&best_theta)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Arch;
    use crate::tensor::Shape;

    fn smooth_image(shape: Shape, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (cx, cy) = (rng.gen_range(2.0..6.0), rng.gen_range(2.0..6.0));
        let data: Vec<f64> = (0..shape.len())
            .map(|k| {
                let (i, j) = ((k / shape.width) as f64, (k % shape.width) as f64);
                let d2 = (i - cy).powi(2) + (j - cx).powi(2);
                0.3 + 0.6 * (-d2 / 8.0).exp()
            })
            .collect();
        Tensor::from_real(shape, data).unwrap()
    }

    #[test]
    fn zero_theta_on_identity_noise_free_data_stays_at_zero_loss() {
        let shape = Shape::new(1, 8, 8);
        let a0 = Op::identity(shape);
        let data: Vec<Tensor> = (0..4).map(|s| smooth_image(shape, s)).collect();
        let mut net = ReconNet::zeros(Arch::new(vec![1, 4, 1]).unwrap());
        let cfg = TrainConfig {
            epochs: 3,
            noise_sigma: 0.0,
            opt: OptimizerSpec::Sgd { lr: 0.1 },
            seed: 1,
            val_fraction: 0.25,
            batch_size: 2,
            final_lr_fraction: 1.0,
        };
        let report = train_supervised(&mut net, &a0, &data, &cfg).unwrap();
        for loss in &report.epoch_train_loss {
            assert!(*loss == 0.0, "identity at θ = 0 is already optimal, loss {loss}");
        }
        assert!(net.theta().iter().all(|&v| v == 0.0), "zero gradients must not move θ");
    }

    #[test]
    fn training_reduces_the_loss_on_a_blur_problem() {
        let shape = Shape::new(1, 8, 8);
        let a0 = Op::motion_blur(shape, 3, 0.0).unwrap();
        let data: Vec<Tensor> = (0..8).map(|s| smooth_image(shape, 100 + s)).collect();
        let mut net = ReconNet::init_random(Arch::new(vec![1, 8, 1]).unwrap(), 5);
        let cfg = TrainConfig {
            epochs: 30,
            noise_sigma: 0.005,
            opt: OptimizerSpec::Adam { lr: 5e-3 },
            seed: 2,
            val_fraction: 0.25,
            batch_size: 4,
            final_lr_fraction: 1.0,
        };
        let report = train_supervised(&mut net, &a0, &data, &cfg).unwrap();
        let first: f64 = report.epoch_train_loss[..3].iter().sum::<f64>() / 3.0;
        let last: f64 = report.epoch_train_loss[report.epoch_train_loss.len() - 3..]
            .iter()
            .sum::<f64>()
            / 3.0;
        assert!(
            last < first,
            "mean loss must decrease: first 3 epochs {first:.3e}, last 3 {last:.3e}"
        );
        assert!(report.best_val_loss.is_finite());
    }

    #[test]
    fn best_snapshot_matches_the_reported_epoch() {
        let shape = Shape::new(1, 8, 8);
        let a0 = Op::motion_blur(shape, 3, 90.0).unwrap();
        let data: Vec<Tensor> = (0..6).map(|s| smooth_image(shape, 200 + s)).collect();
        let mut net = ReconNet::init_random(Arch::new(vec![1, 4, 1]).unwrap(), 9);
        let cfg = TrainConfig {
            epochs: 10,
            noise_sigma: 0.01,
            opt: OptimizerSpec::Adam { lr: 2e-3 },
            seed: 3,
            val_fraction: 0.3,
            batch_size: 4,
            final_lr_fraction: 1.0,
        };
        let report = train_supervised(&mut net, &a0, &data, &cfg).unwrap();
        let min = report
            .epoch_val_loss
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        assert!(
            (report.best_val_loss - min).abs() <= f64::EPSILON * min.abs(),
            "best snapshot must match the minimum of the validation curve"
        );
        assert!(report.epoch_val_loss[report.best_epoch] == report.best_val_loss);
    }

    #[test]
    fn training_is_deterministic_for_a_fixed_seed() {
        let shape = Shape::new(1, 6, 6);
        let a0 = Op::identity(shape);
        let data: Vec<Tensor> = (0..4).map(|s| smooth_image(shape, 300 + s)).collect();
        let cfg = TrainConfig {
            epochs: 4,
            noise_sigma: 0.01,
            opt: OptimizerSpec::Adam { lr: 1e-3 },
            seed: 4,
            val_fraction: 0.25,
            batch_size: 2,
            final_lr_fraction: 1.0,
        };
        let mut a = ReconNet::init_random(Arch::new(vec![1, 4, 1]).unwrap(), 6);
        let mut b = a.clone();
        let ra = train_supervised(&mut a, &a0, &data, &cfg).unwrap();
        let rb = train_supervised(&mut b, &a0, &data, &cfg).unwrap();
        assert!(a.theta() == b.theta(), "same seed must give bit-identical parameters");
        assert!(ra.epoch_train_loss == rb.epoch_train_loss);
    }

    #[test]
    fn annealed_training_differs_from_constant_rate_but_stays_deterministic() {
        let shape = Shape::new(1, 6, 6);
        let a0 = Op::motion_blur(shape, 3, 30.0).unwrap();
        let data: Vec<Tensor> = (0..4).map(|s| smooth_image(shape, 600 + s)).collect();
        let base = TrainConfig {
            epochs: 6,
            noise_sigma: 0.01,
            opt: OptimizerSpec::Adam { lr: 2e-3 },
            seed: 8,
            val_fraction: 0.25,
            batch_size: 2,
            final_lr_fraction: 1.0,
        };
        let annealed = TrainConfig { final_lr_fraction: 0.1, ..base };
        let init = ReconNet::init_random(Arch::new(vec![1, 4, 1]).unwrap(), 13);

        let mut constant = init.clone();
        train_supervised(&mut constant, &a0, &data, &base).unwrap();
        let mut decayed = init.clone();
        train_supervised(&mut decayed, &a0, &data, &annealed).unwrap();
        assert!(constant.theta() != decayed.theta(), "the schedule must change the run");

        let mut again = init.clone();
        train_supervised(&mut again, &a0, &data, &annealed).unwrap();
        assert!(decayed.theta() == again.theta(), "annealed runs must stay deterministic");

        let bad = TrainConfig { final_lr_fraction: 0.0, ..base };
        let mut net = init.clone();
        assert!(train_supervised(&mut net, &a0, &data, &bad).is_err());
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let shape = Shape::new(1, 4, 4);
        let mut net = ReconNet::zeros(Arch::new(vec![1, 2, 1]).unwrap());
        let cfg = TrainConfig::default();
        assert!(train_supervised(&mut net, &Op::identity(shape), &[], &cfg).is_err());
    }

    #[test]
    fn mixed_training_with_one_operator_matches_the_single_operator_path() {
        let shape = Shape::new(1, 6, 6);
        let a0 = Op::motion_blur(shape, 3, 45.0).unwrap();
        let data: Vec<Tensor> = (0..4).map(|s| smooth_image(shape, 400 + s)).collect();
        let cfg = TrainConfig {
            epochs: 3,
            noise_sigma: 0.01,
            opt: OptimizerSpec::Adam { lr: 1e-3 },
            seed: 7,
            val_fraction: 0.25,
            batch_size: 2,
            final_lr_fraction: 1.0,
        };
        let mut single = ReconNet::init_random(Arch::new(vec![1, 4, 1]).unwrap(), 11);
        let mut mixed = single.clone();
        train_supervised(&mut single, &a0, &data, &cfg).unwrap();
        train_supervised_mixed(&mut mixed, &[a0], &[0, 0, 0, 0], &data, &cfg).unwrap();
        assert!(single.theta() == mixed.theta(), "one-operator mixed run must be identical");
    }

    #[test]
    fn mixed_training_rejects_bad_assignments() {
        let shape = Shape::new(1, 4, 4);
        let a = Op::identity(shape);
        let data: Vec<Tensor> = (0..2).map(|s| smooth_image(shape, 500 + s)).collect();
        let cfg = TrainConfig::default();
        let mut net = ReconNet::zeros(Arch::new(vec![1, 2, 1]).unwrap());
        let wrong_len = train_supervised_mixed(&mut net, &[a.clone()], &[0], &data, &cfg);
        assert!(wrong_len.is_err(), "assignment length must match the dataset");
        let out_of_range = train_supervised_mixed(&mut net, &[a], &[0, 1], &data, &cfg);
        assert!(out_of_range.is_err(), "operator indices must be in range");
    }
}
