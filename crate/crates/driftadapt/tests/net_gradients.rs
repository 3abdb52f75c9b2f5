//! Reverse-mode gradients of the reconstruction network checked against
//! central finite differences of the scalar loss Re⟨cot, forward(A, y)⟩.

use driftadapt::{Arch, Dtype, Op, ReconNet, Shape, Tensor};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: Shape, dtype: Dtype, rng: &mut ChaCha8Rng) -> Tensor {
    match dtype {
        Dtype::Real => Tensor::from_real(
            shape,
            (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap(),
        Dtype::Complex => Tensor::from_complex(
            shape,
            (0..shape.len())
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect(),
        )
        .unwrap(),
    }
}

/// Re⟨cot, x̂⟩, the scalar whose gradients backward() reports.
fn loss(net: &ReconNet, a: &Op, y: &Tensor, cot: &Tensor) -> f64 {
    let xhat = net.forward(a, y).unwrap();
    cot.dot(&xhat).unwrap().re
}

#[test]
fn theta_gradient_matches_finite_differences_per_coordinate() {
    let shape = Shape::new(1, 6, 6);
    let a = Op::motion_blur(shape, 3, 40.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y = rand_tensor(shape, Dtype::Real, &mut rng);
    let cot = rand_tensor(shape, Dtype::Real, &mut rng);
    let net = ReconNet::init_random(Arch::new(vec![1, 4, 1]).unwrap(), 2);

    let grads = net.backward(&a, &y, &cot).unwrap();
    let h = 1e-5;
    for k in 0..net.theta().len() {
        let mut plus = net.clone();
        plus.theta_mut()[k] += h;
        let mut minus = net.clone();
        minus.theta_mut()[k] -= h;
        let fd = (loss(&plus, &a, &y, &cot) - loss(&minus, &a, &y, &cot)) / (2.0 * h);
        let rel = (grads.theta[k] - fd).abs() / (fd.abs() + 1e-8);
        assert!(
            rel <= 1e-4,
            "θ[{k}]: reverse {} vs finite difference {fd} (rel {rel:.2e})",
            grads.theta[k]
        );
    }
}

#[test]
fn theta_gradient_exercises_every_layer_of_a_deep_stack() {
    let shape = Shape::new(1, 5, 5);
    let a = Op::identity(shape);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let y = rand_tensor(shape, Dtype::Real, &mut rng);
    let cot = rand_tensor(shape, Dtype::Real, &mut rng);
    // Three conv layers: two ReLU boundaries, interior widths differ.
    let net = ReconNet::init_random(Arch::new(vec![1, 3, 5, 1]).unwrap(), 4);

    let grads = net.backward(&a, &y, &cot).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for k in 0..net.theta().len() {
        let mut plus = net.clone();
        plus.theta_mut()[k] += h;
        let mut minus = net.clone();
        minus.theta_mut()[k] -= h;
        let fd = (loss(&plus, &a, &y, &cot) - loss(&minus, &a, &y, &cot)) / (2.0 * h);
        let rel = (grads.theta[k] - fd).abs() / (fd.abs() + 1e-8);
        worst = worst.max(rel);
    }
    assert!(worst <= 1e-4, "worst per-coordinate relative error {worst:.2e}");
}

#[test]
fn measurement_gradient_matches_directional_finite_differences() {
    let shape = Shape::new(1, 6, 6);
    let a = Op::motion_blur(shape, 3, 15.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let y = rand_tensor(shape, Dtype::Real, &mut rng);
    let cot = rand_tensor(shape, Dtype::Real, &mut rng);
    let net = ReconNet::init_random(Arch::new(vec![1, 4, 1]).unwrap(), 6);

    let grads = net.backward(&a, &y, &cot).unwrap();
    let h = 1e-5;
    for trial in 0..8 {
        let dy = rand_tensor(shape, Dtype::Real, &mut rng);
        let want = grads.measurement.dot(&dy).unwrap().re;
        let fd = (loss(&net, &a, &y.add(&dy.scaled(h)).unwrap(), &cot)
            - loss(&net, &a, &y.add(&dy.scaled(-h)).unwrap(), &cot))
            / (2.0 * h);
        let rel = (want - fd).abs() / (fd.abs() + 1e-8);
        assert!(rel <= 1e-5, "trial {trial}: ⟨grad_y, dy⟩ {want} vs fd {fd} (rel {rel:.2e})");
    }
}

#[test]
fn sigma_gradient_matches_finite_differences_through_the_adjoint_stage() {
    let shape = Shape::new(1, 6, 6);
    let a = Op::motion_blur(shape, 3, 75.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let y = rand_tensor(shape, Dtype::Real, &mut rng);
    let cot = rand_tensor(shape, Dtype::Real, &mut rng);
    let net = ReconNet::init_random(Arch::new(vec![1, 4, 1]).unwrap(), 8);

    let grads = net.backward(&a, &y, &cot).unwrap();
    assert!(grads.sigma.len() == 9, "3×3 blur carries 9 σ components");
    let h = 1e-6;
    let sigma = a.params().to_vec();
    for k in 0..sigma.len() {
        let mut plus = sigma.clone();
        plus[k] += h;
        let mut minus = sigma.clone();
        minus[k] -= h;
        let fd = (loss(&net, &a.with_params(&plus).unwrap(), &y, &cot)
            - loss(&net, &a.with_params(&minus).unwrap(), &y, &cot))
            / (2.0 * h);
        let rel = (grads.sigma[k] - fd).abs() / (fd.abs() + 1e-6);
        assert!(
            rel <= 1e-4,
            "σ[{k}]: reverse {} vs finite difference {fd} (rel {rel:.2e})",
            grads.sigma[k]
        );
    }
}

#[test]
fn complex_gradients_match_finite_differences_on_both_planes() {
    let shape = Shape::new(1, 5, 5);
    let mask = driftadapt::KspaceMask::generate(5, 1.5, 0.2, 3).unwrap();
    let a = Op::fourier_mask(shape, mask).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let y = rand_tensor(a.out_shape(), Dtype::Complex, &mut rng);
    let cot = rand_tensor(shape, Dtype::Complex, &mut rng);
    let net = ReconNet::init_random(Arch::new(vec![2, 4, 2]).unwrap(), 10);

    let grads = net.backward(&a, &y, &cot).unwrap();
    let h = 1e-5;
    for k in 0..net.theta().len() {
        let mut plus = net.clone();
        plus.theta_mut()[k] += h;
        let mut minus = net.clone();
        minus.theta_mut()[k] -= h;
        let fd = (loss(&plus, &a, &y, &cot) - loss(&minus, &a, &y, &cot)) / (2.0 * h);
        let rel = (grads.theta[k] - fd).abs() / (fd.abs() + 1e-8);
        assert!(rel <= 1e-4, "θ[{k}] complex path rel {rel:.2e}");
    }
    // Directional check on the complex measurement: dL = Re⟨grad_y, dy⟩.
    for trial in 0..6 {
        let dy = rand_tensor(a.out_shape(), Dtype::Complex, &mut rng);
        let want = grads.measurement.dot(&dy).unwrap().re;
        let fd = (loss(&net, &a, &y.add(&dy.scaled(h)).unwrap(), &cot)
            - loss(&net, &a, &y.add(&dy.scaled(-h)).unwrap(), &cot))
            / (2.0 * h);
        let rel = (want - fd).abs() / (fd.abs() + 1e-8);
        assert!(rel <= 1e-5, "trial {trial}: complex measurement gradient rel {rel:.2e}");
    }
}
