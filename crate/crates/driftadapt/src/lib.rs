//! Train a reconstruction network for a linear inverse problem y = A₀x + ε,
//! then adapt it — without ground-truth images — when the forward model drifts
//! to A₁. Adaptation covers perturbing the trained weights against the new
//! model, reusing the frozen network inside a regularized data-consistency
//! loop, fine-tuning that unrolled loop, and estimating unknown forward-model
//! parameters such as blur kernels or k-space line offsets.
//!
//! Module map:
//! - [`tensor`]: dense real/complex arrays, FFTs, PSNR/SSIM, file formats.
//! - [`linop`]: the forward operators (blur, downsampling, Fourier masks).
//! - [`solver`]: conjugate gradient, data-consistency solves, a TV baseline.
//! - [`net`]: a small residual CNN with hand-rolled reverse-mode gradients.
//! - [`adapt`]: the adaptation algorithms and parameter estimation.
//! - [`harness`]: experiment specs, synthetic data, sweeps, reporting.

pub mod adapt;
pub mod error;
pub mod harness;
pub mod linop;
pub mod net;
pub mod solver;
pub mod tensor;

pub use adapt::{
    pnp_adapt, pnp_adapt_blind, pnp_adapt_calibrated, rnr_estimate_sigma, rnr_plus,
    rnr_reconstruct, AdaptConfig, AdaptResult, TraceRecord,
};
pub use error::{Error, Result};
pub use harness::{
    checkpoint_path, default_log_grid, drifted_measurement, ensure_checkpoint, gen_synthetic,
    gen_synthetic_complex,
    mean_std, multi_kernel_training, render_report, report_csv, run_dir, run_experiment,
    sweep_calibration_size, sweep_nullspace_overlap, sweep_sampling_rate, ExperimentSpec,
    GridChoice, GridSpec, ImageSource, Method, NoiseSpec, OperatorSpec, Problem, RunRecord,
    SwapSpec, SweepTable,
};
pub use linop::{DenseMatrix, DownsampleKernel, KspaceMask, Op};
pub use net::{
    add_gaussian_noise, train_supervised, train_supervised_mixed, Arch, NetGradients,
    NetworkParams, Optimizer, OptimizerSpec, ReconNet, TrainConfig, TrainReport,
};
pub use solver::{cg_solve, dc_update, supports_fft_direct, tv_reconstruct, CgReport, DcMethod};
pub use tensor::{Dtype, Shape, Tensor};
