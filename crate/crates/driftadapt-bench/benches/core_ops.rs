//! Benchmarks of the arithmetic the adaptation loops spend their time in:
//! the 2-D FFT, operator application, the network forward pass, conjugate
//! gradients, the data-consistency solve, and one full reconstruction-loop
//! run at each solver choice.

use criterion::{criterion_group, criterion_main, Criterion};
use driftadapt::tensor::fft2;
use driftadapt::{
    cg_solve, dc_update, pnp_adapt, rnr_reconstruct, AdaptConfig, DcMethod, OptimizerSpec,
};
use driftadapt_bench::{blur, drifted_blur, image, net};
use std::hint::black_box;

fn bench_tensor_ops(c: &mut Criterion) {
    let x = image();
    let complex = x.to_complex();
    c.bench_function("fft2 32x32", |b| b.iter(|| fft2(black_box(&complex)).unwrap()));

    let a = blur();
    c.bench_function("blur apply 7x7 32x32", |b| b.iter(|| a.apply(black_box(&x)).unwrap()));
    c.bench_function("blur gram 7x7 32x32", |b| b.iter(|| a.gram(black_box(&x)).unwrap()));
}

fn bench_network(c: &mut Criterion) {
    let x = image();
    let a = blur();
    let y = a.apply(&x).expect("measurement");
    let f = net();
    c.bench_function("net forward 1-8-1 32x32", |b| {
        b.iter(|| f.forward(black_box(&a), black_box(&y)).unwrap())
    });
    c.bench_function("net autoencode 1-8-1 32x32", |b| {
        b.iter(|| f.autoencode(black_box(&a), black_box(&x)).unwrap())
    });
}

fn bench_solvers(c: &mut Criterion) {
    let x = image();
    let a = blur();
    let y = a.apply(&x).expect("measurement");
    let b_rhs = a.adjoint(&y).expect("adjoint");
    let zero = driftadapt::Tensor::zeros(x.dtype(), x.shape());
    c.bench_function("cg 20 iters blur gram 32x32", |b| {
        b.iter(|| {
            let gram = |v: &driftadapt::Tensor| {
                let mut g = a.gram(v)?;
                g.axpy(0.1, v)?;
                Ok(g)
            };
            cg_solve(gram, black_box(&b_rhs), &zero, 20, 0.0).unwrap()
        })
    });
    c.bench_function("dc_update fft_direct 32x32", |b| {
        b.iter(|| dc_update(&a, black_box(&y), &x, 0.1, DcMethod::FftDirect).unwrap())
    });
    c.bench_function("dc_update cg(20) 32x32", |b| {
        b.iter(|| dc_update(&a, black_box(&y), &x, 0.1, DcMethod::Cg(20)).unwrap())
    });
}

fn bench_adaptation(c: &mut Criterion) {
    let x = image();
    let a0 = blur();
    let a1 = drifted_blur();
    let y = a1.apply(&x).expect("measurement");
    let f = net();

    let mut group = c.benchmark_group("adaptation");
    group.sample_size(10);
    for method in [DcMethod::FftDirect, DcMethod::Cg(20)] {
        let cfg = AdaptConfig { k: 3, dc_method: Some(method), ..AdaptConfig::default() };
        group.bench_function(format!("rnr k=3 {method:?} 32x32"), |b| {
            b.iter(|| rnr_reconstruct(&f, &a0, &a1, black_box(&y), &cfg).unwrap())
        });
    }
    let cfg = AdaptConfig {
        opt_steps: 5,
        opt: OptimizerSpec::Adam { lr: 1e-4 },
        ..AdaptConfig::default()
    };
    group.bench_function("pnp 5 steps 32x32", |b| {
        b.iter(|| pnp_adapt(&f, &a1, black_box(&y), &cfg).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_tensor_ops, bench_network, bench_solvers, bench_adaptation);
criterion_main!(benches);
