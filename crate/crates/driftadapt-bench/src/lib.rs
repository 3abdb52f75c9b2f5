//! Shared fixtures for the criterion benchmarks: a deterministic test image,
//! the blur model the hot paths run against, and a small untrained network
//! (benchmark timings measure arithmetic, not training quality).

use driftadapt::{gen_synthetic, Arch, Op, ReconNet, Shape, Tensor};

pub const SIDE: usize = 32;

pub fn shape() -> Shape {
    Shape { channels: 1, height: SIDE, width: SIDE }
}

pub fn image() -> Tensor {
    gen_synthetic(7, 1, SIDE).expect("fixture image").remove(0)
}

pub fn blur() -> Op {
    Op::motion_blur(shape(), 7, 10.0).expect("fixture blur")
}

pub fn drifted_blur() -> Op {
    Op::motion_blur(shape(), 7, 100.0).expect("fixture blur")
}

pub fn net() -> ReconNet {
    ReconNet::init_random(Arch::new(vec![1, 8, 1]).expect("fixture arch"), 13)
}
