//! Experiment engine: declarative experiment specs, synthetic data, a
//! train-if-needed → adapt → evaluate pipeline with persisted run records,
//! and the hyperparameter sweeps behind the standard comparison tables.
//!
//! Every artifact a run writes embeds the SHA-256 hash of its spec, and the
//! whole pipeline is deterministic: the same spec and seed produce the same
//! metrics bit for bit. Trained weights are cached per *scenario* — the spec
//! with the method, adaptation config, grid and name stripped — so every
//! method adapting the same trained network shares one checkpoint.

pub mod synth;

pub use synth::{gen_synthetic, gen_synthetic_complex};

use crate::adapt::{
    pnp_adapt, pnp_adapt_blind, pnp_adapt_calibrated, rnr_estimate_sigma, rnr_plus,
    rnr_reconstruct, AdaptConfig, AdaptResult,
};
use crate::error::{Error, Result};
use crate::linop::{DownsampleKernel, KspaceMask, Op};
use crate::net::{add_gaussian_noise, train_supervised_mixed, Arch, ReconNet, TrainConfig};
use crate::solver::tv_reconstruct;
use crate::tensor::{psnr, read_dat, ssim, write_dat, Dtype, Shape, Tensor};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Instant;

/// Dynamic range assumed by the image metrics; synthetic data lives in [0, 1].
const METRIC_PEAK: f64 = 1.0;
const SSIM_WINDOW: usize = 7;

// Seed-stream tags so the independent random decisions of a run never share
// a generator state.
const TEST_NOISE_STREAM: u64 = 0x7465_7374_6e6f_6973;
const VAL_NOISE_STREAM: u64 = 0x7661_6c5f_6e6f_6973;
const CALIB_NOISE_STREAM: u64 = 0x6361_6c5f_6e6f_6973;
const SWEEP_MASK_STREAM: u64 = 0x7377_6565_706d_736b;
const KERNEL_BANK_STREAM: u64 = 0x6b65_726e_656c_6273;

fn mix_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9e37_79b9_7f4a_7c15u64;
    for &p in parts {
        let mut z = h ^ p.wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        h = z ^ (z >> 31);
    }
    h
}

fn seeded_rng(parts: &[u64]) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(mix_seed(parts))
}

fn sha_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::format(e.to_string()))
}

/// Inverse problem family; it decides whether images are real or complex.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    Deblur,
    Superres,
    Mri,
}

impl Problem {
    pub fn dtype(self) -> Dtype {
        match self {
            Problem::Deblur | Problem::Superres => Dtype::Real,
            Problem::Mri => Dtype::Complex,
        }
    }
}

/// Swap `n` sampled mask lines for unsampled ones, drawn from `seed`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapSpec {
    pub n: usize,
    pub seed: u64,
}

/// Serializable description of a measurement operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OperatorSpec {
    Identity,
    MotionBlur {
        size: usize,
        angle_deg: f64,
    },
    BlurKernel {
        size: usize,
        kernel: Vec<f64>,
    },
    Downsample {
        factor: usize,
        kernel: DownsampleKernel,
    },
    Mask {
        acceleration: f64,
        center_fraction: f64,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        swap: Option<SwapSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        perturb_seed: Option<u64>,
    },
}

impl OperatorSpec {
    /// Realize the operator on images of the given shape.
    pub fn build(&self, shape: Shape) -> Result<Op> {
        match self {
            OperatorSpec::Identity => Ok(Op::identity(shape)),
            OperatorSpec::MotionBlur { size, angle_deg } => {
                Op::motion_blur(shape, *size, *angle_deg)
            }
            OperatorSpec::BlurKernel { size, kernel } => {
                Op::blur_from_kernel(shape, *size, kernel.clone())
            }
            OperatorSpec::Downsample { factor, kernel } => {
                Op::downsample(shape, *factor, *kernel)
            }
            OperatorSpec::Mask { acceleration, center_fraction, seed, swap, perturb_seed } => {
                let mut mask =
                    KspaceMask::generate(shape.width, *acceleration, *center_fraction, *seed)?;
                if let Some(s) = swap {
                    mask = mask.with_swapped_lines(s.n, s.seed)?;
                }
                if let Some(p) = perturb_seed {
                    mask = mask.with_perturbed_lines(*p);
                }
                Op::fourier_mask(shape, mask)
            }
        }
    }
}

/// Where the images come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageSource {
    Synthetic { seed: u64, count: usize, size: usize },
    Directory { path: std::path::PathBuf },
}

/// Measurement noise levels: σ₀ corrupts training measurements, σ₁ the
/// drifted test measurements.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub sigma0: f64,
    pub sigma1: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { sigma0: 0.01, sigma1: 0.01 }
    }
}

/// Reconstruction method an experiment evaluates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// The trained network applied as-is to the drifted measurements.
    None,
    /// Total-variation baseline; `cfg.lambda` doubles as the TV weight.
    Tv,
    /// Perturb the trained weights against the new model, per measurement.
    Pnp,
    /// Jointly perturb weights and forward-model parameters.
    PnpBlind,
    /// Frozen weights, alternating regularization and data consistency.
    Rnr,
    /// As `Rnr`, but with unknown forward-model parameters estimated first.
    RnrSigma,
    /// Fine-tune the weights through the unrolled reconstruction loop.
    RnrPlus,
    /// Data-free fixed-point iteration of the trained autoencoding map.
    FixedPoint,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let label = match self {
            Method::None => "none",
            Method::Tv => "tv",
            Method::Pnp => "pnp",
            Method::PnpBlind => "pnp_blind",
            Method::Rnr => "rnr",
            Method::RnrSigma => "rnr_sigma",
            Method::RnrPlus => "rnr_plus",
            Method::FixedPoint => "fixed_point",
        };
        write!(f, "{label}")
    }
}

/// Log-scale hyperparameter grid; missing axes keep the config value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub mu: Option<Vec<f64>>,
    pub lambda: Option<Vec<f64>>,
}

/// Five points per decade over [1e-4, 1e1], the default search range.
pub fn default_log_grid() -> Vec<f64> {
    (0..=25).map(|k| 10f64.powf(-4.0 + 0.2 * k as f64)).collect()
}

/// A full experiment: data, the training-time and test-time forward models,
/// the method under test and its hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub problem: Problem,
    /// Training-time forward model A₀.
    pub a0: OperatorSpec,
    /// Test-time forward model A₁; `None` (and no `a1_sigma`) means A₁ = A₀.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a1: Option<OperatorSpec>,
    /// Alternative drift description: A₁ = A₀ with its parameter vector
    /// replaced by these values (same operator family).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a1_sigma: Option<Vec<f64>>,
    pub image_source: ImageSource,
    #[serde(default)]
    pub noise: NoiseSpec,
    pub method: Method,
    #[serde(default)]
    pub cfg: AdaptConfig,
    /// Training schedule; its noise level is overridden by `noise.sigma0`.
    #[serde(default)]
    pub train: TrainConfig,
    /// Network widths; `None` picks the default for the problem's dtype.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arch: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    /// Seed for measurement noise and sweep randomness (data seeds live in
    /// `image_source`, training seeds in `train`).
    #[serde(default)]
    pub seed: u64,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::invalid("experiment name must not be empty"));
        }
        if self.a1.is_some() && self.a1_sigma.is_some() {
            return Err(Error::invalid(
                "give the drifted model either as a1 or as a1_sigma, not both",
            ));
        }
        if let ImageSource::Synthetic { count, .. } = self.image_source {
            if count < 6 {
                return Err(Error::invalid(
                    "synthetic sources need at least 6 images for a train/val/test split",
                ));
            }
        }
        if !(self.noise.sigma0.is_finite() && self.noise.sigma0 >= 0.0)
            || !(self.noise.sigma1.is_finite() && self.noise.sigma1 >= 0.0)
        {
            return Err(Error::invalid("noise levels must be finite and non-negative"));
        }
        self.cfg.validate()
    }

    /// Hash of the canonical JSON form of the spec.
    pub fn spec_hash(&self) -> Result<String> {
        Ok(sha_hex(to_json(self)?.as_bytes()))
    }

    /// Hash of the *scenario*: the spec with the method, adaptation config,
    /// grid and name stripped. Runs that differ only in those fields share
    /// trained checkpoints and measurement noise.
    pub fn scenario_hash(&self) -> Result<String> {
        let mut neutral = self.clone();
        neutral.name = String::new();
        neutral.method = Method::None;
        neutral.cfg = AdaptConfig::default();
        neutral.grid = None;
        Ok(sha_hex(to_json(&neutral)?.as_bytes()))
    }

    /// Hash of everything training depends on: data, A₀, schedule, widths.
    fn train_key(&self) -> Result<String> {
        let mut train = self.train;
        train.noise_sigma = self.noise.sigma0;
        let key = serde_json::json!({
            "problem": self.problem,
            "a0": self.a0,
            "image_source": self.image_source,
            "train": train,
            "arch": self.arch,
        });
        Ok(sha_hex(key.to_string().as_bytes()))
    }
}

/// One experiment's persisted outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub method: Method,
    pub spec_hash: String,
    pub scenario_hash: String,
    pub toolkit_version: String,
    /// Version-plus-spec tag stamped on every artifact of this run.
    pub artifact_version: String,
    pub test_count: usize,
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub psnr_mean: f64,
    pub psnr_std: f64,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    /// How many per-image adaptation runs stopped early as divergent.
    pub diverged_runs: usize,
    /// Hyperparameters chosen by the grid search, when one ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_chosen: Option<GridChoice>,
    pub wall_time_secs: f64,
    /// Protocol deviations and notes a reader of the tables should know.
    pub notes: Vec<String>,
}

/// Grid-search outcome recorded with the run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridChoice {
    pub mu: f64,
    pub lambda: f64,
    /// Mean validation PSNR of the winning candidate.
    pub val_psnr: f64,
}

/// Sample mean and standard deviation (N − 1 denominator; 0 for N ≤ 1).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, 0.0);
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var =
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (values.len() - 1) as f64;
    (mean, var.sqrt())
}

impl RunRecord {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        if self.psnr.len() != self.test_count || self.ssim.len() != self.test_count {
            return Err(Error::invalid(format!(
                "record holds {} psnr / {} ssim values for {} test images",
                self.psnr.len(),
                self.ssim.len(),
                self.test_count
            )));
        }
        fs::write(path, to_json(self)?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<RunRecord> {
        let text = fs::read_to_string(path)?;
        let record: RunRecord = serde_json::from_str(&text)
            .map_err(|e| Error::format(format!("{}: {e}", path.display())))?;
        if record.psnr.len() != record.test_count || record.ssim.len() != record.test_count {
            return Err(Error::format(format!(
                "{}: per-image metric count does not match the test-set size",
                path.display()
            )));
        }
        Ok(record)
    }

    /// Everything except the wall time, for idempotence comparisons.
    pub fn same_outcome(&self, other: &RunRecord) -> bool {
        let mut a = self.clone();
        let mut b = other.clone();
        a.wall_time_secs = 0.0;
        b.wall_time_secs = 0.0;
        a == b
    }
}

/// The trained context every run and sweep starts from.
struct Prepared {
    shape: Shape,
    val_set: Vec<Tensor>,
    test_set: Vec<Tensor>,
    a0: Op,
    a1: Op,
    net: ReconNet,
}

fn split_counts(total: usize) -> Result<(usize, usize, usize)> {
    if total < 6 {
        return Err(Error::invalid(format!(
            "need at least 6 images for a 4:1:1 train/val/test split, got {total}"
        )));
    }
    let held = total / 6;
    Ok((total - 2 * held, held, held))
}

fn load_images(spec: &ExperimentSpec) -> Result<Vec<Tensor>> {
    match &spec.image_source {
        ImageSource::Synthetic { seed, count, size } => match spec.problem.dtype() {
            Dtype::Real => gen_synthetic(*seed, *count, *size),
            Dtype::Complex => gen_synthetic_complex(*seed, *count, *size),
        },
        ImageSource::Directory { path } => {
            let mut paths: Vec<_> = fs::read_dir(path)?
                .collect::<std::io::Result<Vec<_>>>()?
                .into_iter()
                .map(|e| e.path())
                .filter(|p| p.extension().is_some_and(|e| e == "dat"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(Error::invalid(format!(
                    "{}: no .dat tensor files",
                    path.display()
                )));
            }
            let images: Vec<Tensor> =
                paths.iter().map(|p| read_dat(p)).collect::<Result<_>>()?;
            for img in &images {
                if img.shape() != images[0].shape() {
                    return Err(Error::ShapeMismatch {
                        left: img.shape(),
                        right: images[0].shape(),
                    });
                }
                if img.dtype() != spec.problem.dtype() {
                    return Err(Error::Dtype {
                        expected: spec.problem.dtype(),
                        got: img.dtype(),
                    });
                }
            }
            Ok(images)
        }
    }
}

fn build_models(spec: &ExperimentSpec, shape: Shape) -> Result<(Op, Op)> {
    let a0 = spec.a0.build(shape)?;
    let a1 = match (&spec.a1, &spec.a1_sigma) {
        (Some(op_spec), None) => op_spec.build(shape)?,
        (None, Some(sigma)) => a0.with_params(sigma)?,
        (None, None) => a0.clone(),
        (Some(_), Some(_)) => unreachable!("rejected by validate"),
    };
    if a0.in_shape() != a1.in_shape() {
        return Err(Error::ShapeMismatch { left: a0.in_shape(), right: a1.in_shape() });
    }
    Ok((a0, a1))
}

/// Path of the cached checkpoint a spec trains into, under a workspace
/// directory. The file name hashes everything training depends on (data,
/// A₀, schedule, widths), so every run of the same scenario shares it.
pub fn checkpoint_path(spec: &ExperimentSpec, workspace: &Path) -> Result<std::path::PathBuf> {
    Ok(workspace.join("checkpoints").join(format!("f0-{}.rnet", &spec.train_key()?[..16])))
}

/// Train the spec's network (or reuse the cached checkpoint) without running
/// an evaluation, and return the checkpoint path.
pub fn ensure_checkpoint(spec: &ExperimentSpec, workspace: &Path) -> Result<std::path::PathBuf> {
    prepare(spec, workspace)?;
    checkpoint_path(spec, workspace)
}

/// Load the scenario's checkpoint or train it now and cache it.
fn train_if_needed(
    spec: &ExperimentSpec,
    a0: &Op,
    train_set: &[Tensor],
    workspace: &Path,
) -> Result<ReconNet> {
    let arch = match &spec.arch {
        Some(widths) => Arch::new(widths.clone())?,
        None => Arch::default_for(spec.problem.dtype()),
    };
    let path = checkpoint_path(spec, workspace)?;
    fs::create_dir_all(path.parent().expect("checkpoint path has a parent"))?;
    if path.exists() {
        let net = ReconNet::load(&path)?;
        if net.arch() != &arch {
            return Err(Error::format(format!(
                "{}: cached checkpoint was trained with a different architecture",
                path.display()
            )));
        }
        return Ok(net);
    }
    let mut net = ReconNet::init_random(arch, spec.train.seed);
    let mut train_cfg = spec.train;
    train_cfg.noise_sigma = spec.noise.sigma0;
    let assignment = vec![0usize; train_set.len()];
    train_supervised_mixed(&mut net, std::slice::from_ref(a0), &assignment, train_set, &train_cfg)?;
    net.save(&path)?;
    Ok(net)
}

fn prepare(spec: &ExperimentSpec, workspace: &Path) -> Result<Prepared> {
    spec.validate()?;
    let images = load_images(spec)?;
    let (n_train, n_val, n_test) = split_counts(images.len())?;
    let shape = images[0].shape();
    let (a0, a1) = build_models(spec, shape)?;
    let mut images = images;
    let test_set = images.split_off(n_train + n_val);
    let val_set = images.split_off(n_train);
    let train_set = images;
    debug_assert_eq!(test_set.len(), n_test);
    let net = train_if_needed(spec, &a0, &train_set, workspace)?;
    Ok(Prepared { shape, val_set, test_set, a0, a1, net })
}

/// The measurement the pipeline scores test image `index` on: A₁x plus the
/// run's σ₁ noise, seeded by (spec.seed, index). Exposed so runs can be
/// reproduced outside the pipeline.
pub fn drifted_measurement(
    spec: &ExperimentSpec,
    a1: &Op,
    x: &Tensor,
    index: usize,
) -> Result<Tensor> {
    measure(spec, a1, x, TEST_NOISE_STREAM, index)
}

fn measure(spec: &ExperimentSpec, a1: &Op, x: &Tensor, stream: u64, index: usize) -> Result<Tensor> {
    let mut rng = seeded_rng(&[spec.seed, stream, index as u64]);
    Ok(add_gaussian_noise(&a1.apply(x)?, spec.noise.sigma1, &mut rng))
}

/// Run one method on one measurement.
fn reconstruct(
    method: Method,
    net: &ReconNet,
    a0: &Op,
    a1: &Op,
    y: &Tensor,
    cfg: &AdaptConfig,
) -> Result<(Tensor, Option<AdaptResult>)> {
    match method {
        Method::None => Ok((net.forward(a1, y)?, None)),
        Method::Tv => Ok((tv_reconstruct(a1, y, cfg.lambda, 200, 1.0, 1e-3)?, None)),
        Method::Pnp => {
            let res = pnp_adapt(net, a1, y, cfg)?;
            Ok((res.x_hat.clone(), Some(res)))
        }
        Method::PnpBlind => {
            // Blind runs know only the operator family; they start from the
            // training-time parameters.
            let res = pnp_adapt_blind(net, a0, y, cfg)?;
            Ok((res.x_hat.clone(), Some(res)))
        }
        Method::Rnr => {
            let res = rnr_reconstruct(net, a0, a1, y, cfg)?;
            Ok((res.x_hat.clone(), Some(res)))
        }
        Method::RnrSigma => {
            let res = rnr_estimate_sigma(net, a0, a0, y, cfg)?;
            Ok((res.x_hat.clone(), Some(res)))
        }
        Method::RnrPlus => {
            let res = rnr_plus(net, a0, a1, y, cfg)?;
            Ok((res.x_hat.clone(), Some(res)))
        }
        Method::FixedPoint => {
            let mut x = a1.pseudo_inverse_apply(y, cfg.pinv_iters)?;
            for _ in 0..cfg.k {
                let g = net.autoencode(a0, &x)?;
                x = x.scaled(1.0 - cfg.tau).add(&g.scaled(cfg.tau))?;
            }
            x.check_finite("fixed-point iterate")?;
            Ok((x, None))
        }
    }
}

/// Mean test-set PSNR of `method` under `cfg`, for the grid search.
fn grid_score(
    spec: &ExperimentSpec,
    prep: &Prepared,
    cfg: &AdaptConfig,
) -> Result<f64> {
    let n = prep.val_set.len().min(4).max(1);
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|idx| {
            let x = &prep.val_set[idx];
            let y = measure(spec, &prep.a1, x, VAL_NOISE_STREAM, idx)?;
            let (x_hat, _) = reconstruct(spec.method, &prep.net, &prep.a0, &prep.a1, &y, cfg)?;
            psnr(&x_hat, x, METRIC_PEAK)
        })
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Pick hyperparameters on the validation split, largest mean PSNR wins
/// (ties keep the earliest candidate, so the search is deterministic).
fn run_grid(spec: &ExperimentSpec, prep: &Prepared) -> Result<(AdaptConfig, Option<GridChoice>)> {
    let Some(grid) = &spec.grid else {
        return Ok((spec.cfg, None));
    };
    let mus = grid.mu.clone().unwrap_or_else(|| vec![spec.cfg.mu]);
    let lambdas = grid.lambda.clone().unwrap_or_else(|| vec![spec.cfg.lambda]);
    if mus.is_empty() || lambdas.is_empty() {
        return Err(Error::invalid("grid axes must not be empty"));
    }
    let mut best: Option<(AdaptConfig, GridChoice)> = None;
    for &mu in &mus {
        for &lambda in &lambdas {
            let cfg = AdaptConfig { mu, lambda, ..spec.cfg };
            cfg.validate()?;
            let score = grid_score(spec, prep, &cfg)?;
            if best.as_ref().map_or(true, |(_, c)| score > c.val_psnr) {
                best = Some((cfg, GridChoice { mu, lambda, val_psnr: score }));
            }
        }
    }
    let (cfg, choice) = best.expect("grid has at least one candidate");
    Ok((cfg, Some(choice)))
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '-' })
        .collect()
}

/// Directory a spec's run artifacts live in, under a workspace.
pub fn run_dir(spec: &ExperimentSpec, workspace: &Path) -> Result<std::path::PathBuf> {
    Ok(workspace.join("runs").join(format!(
        "{}-{}-{}",
        sanitize(&spec.name),
        spec.method,
        &spec.spec_hash()?[..8]
    )))
}

/// Execute the full train-if-needed → adapt → evaluate pipeline and persist
/// the run record, per-image metrics, reconstructions and masks under the
/// workspace: trained weights in `checkpoints/` (shared by every spec with
/// the same training inputs), everything else in this run's `runs/` entry.
/// Reruns with the same spec reproduce the record bit for bit (wall time
/// aside); a run directory already holding artifacts of a different spec is
/// an error rather than a silent overwrite.
pub fn run_experiment(spec: &ExperimentSpec, workspace: &Path) -> Result<RunRecord> {
    let started = Instant::now();
    spec.validate()?;
    let out_dir = run_dir(spec, workspace)?;
    fs::create_dir_all(&out_dir)?;
    let spec_json = to_json(spec)?;
    let spec_path = out_dir.join("spec.json");
    if spec_path.exists() {
        let cached = fs::read_to_string(&spec_path)?;
        if sha_hex(cached.as_bytes()) != sha_hex(spec_json.as_bytes()) {
            return Err(Error::invalid(format!(
                "{} holds artifacts for a different spec; pick a fresh output directory",
                out_dir.display()
            )));
        }
    } else {
        fs::write(&spec_path, &spec_json)?;
    }

    let prep = prepare(spec, workspace)?;
    let (cfg, grid_chosen) = run_grid(spec, &prep)?;

    struct Cell {
        x_hat: Tensor,
        psnr: f64,
        ssim: f64,
        diverged: bool,
        result: Option<AdaptResult>,
    }
    let cells: Vec<Cell> = prep
        .test_set
        .par_iter()
        .enumerate()
        .map(|(idx, x)| {
            let y = measure(spec, &prep.a1, x, TEST_NOISE_STREAM, idx)?;
            let (x_hat, result) =
                reconstruct(spec.method, &prep.net, &prep.a0, &prep.a1, &y, &cfg)?;
            Ok(Cell {
                psnr: psnr(&x_hat, x, METRIC_PEAK)?,
                ssim: ssim(&x_hat, x, SSIM_WINDOW, METRIC_PEAK)?,
                diverged: result.as_ref().is_some_and(|r| r.diverged),
                result: if idx == 0 { result } else { None },
                x_hat,
            })
        })
        .collect::<Result<_>>()?;

    let tensor_dir = out_dir.join("tensors");
    fs::create_dir_all(&tensor_dir)?;
    for (idx, cell) in cells.iter().enumerate() {
        write_dat(&tensor_dir.join(format!("recon-{idx:03}.dat")), &cell.x_hat)?;
    }
    if let Some(result) = cells.first().and_then(|c| c.result.as_ref()) {
        result.write_trace_csv(&out_dir.join("trace.csv"))?;
    }
    let mask_dir = out_dir.join("masks");
    for (name, op) in [("a0", &prep.a0), ("a1", &prep.a1)] {
        if let Some(mask) = op.mask() {
            fs::create_dir_all(&mask_dir)?;
            mask.save_json(&mask_dir.join(format!("{name}.json")))?;
        }
    }

    let psnrs: Vec<f64> = cells.iter().map(|c| c.psnr).collect();
    let ssims: Vec<f64> = cells.iter().map(|c| c.ssim).collect();
    let mut csv = String::from("index,psnr,ssim\n");
    for (idx, (p, s)) in psnrs.iter().zip(&ssims).enumerate() {
        csv.push_str(&format!("{idx},{p},{s}\n"));
    }
    fs::write(out_dir.join("metrics.csv"), csv)?;

    let (psnr_mean, psnr_std) = mean_std(&psnrs);
    let (ssim_mean, ssim_std) = mean_std(&ssims);
    let spec_hash = spec.spec_hash()?;
    let version = format!("driftadapt-{}", env!("CARGO_PKG_VERSION"));
    let mut notes = vec![
        "desk-scale protocol: full images are scored, no center crop".to_string(),
    ];
    if let Some(choice) = &grid_chosen {
        notes.push(format!(
            "grid search picked mu={} lambda={} at {:.2} dB validation PSNR",
            choice.mu, choice.lambda, choice.val_psnr
        ));
    }
    let record = RunRecord {
        name: spec.name.clone(),
        method: spec.method,
        artifact_version: format!("{version}+spec{}", &spec_hash[..8]),
        spec_hash,
        scenario_hash: spec.scenario_hash()?,
        toolkit_version: version,
        test_count: cells.len(),
        psnr: psnrs,
        ssim: ssims,
        psnr_mean,
        psnr_std,
        ssim_mean,
        ssim_std,
        diverged_runs: cells.iter().filter(|c| c.diverged).count(),
        grid_chosen,
        wall_time_secs: started.elapsed().as_secs_f64(),
        notes,
    };
    record.save_json(&out_dir.join("runrecord.json"))?;
    Ok(record)
}

/// A sweep result: named columns over numeric rows, rendered as CSV or an
/// aligned text table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub name: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl SweepTable {
    fn new(name: &str, headers: &[&str]) -> SweepTable {
        SweepTable {
            name: name.to_string(),
            headers: headers.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push_row(&mut self, row: Vec<f64>) {
        assert!(row.len() == self.headers.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.headers.join(",");
        out.push('\n');
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    pub fn render(&self) -> String {
        let mut cells: Vec<Vec<String>> = vec![self.headers.clone()];
        for row in &self.rows {
            cells.push(row.iter().map(|v| format!("{v:.4}")).collect());
        }
        let widths: Vec<usize> = (0..self.headers.len())
            .map(|c| cells.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = format!("# {}\n", self.name);
        for row in &cells {
            let line: Vec<String> =
                row.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }

    /// Write `<name>.csv` and `<name>.txt` under `dir/tables`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let tables = dir.join("tables");
        fs::create_dir_all(&tables)?;
        fs::write(tables.join(format!("{}.csv", self.name)), self.to_csv())?;
        fs::write(tables.join(format!("{}.txt", self.name)), self.render())?;
        Ok(())
    }
}

/// Mean PSNR of direct application and of the frozen-weight reconstruction
/// loop over the test split, against the drifted model `a1`.
fn paired_eval(
    spec: &ExperimentSpec,
    prep: &Prepared,
    a1: &Op,
    noise_stream: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let pairs: Vec<(f64, f64)> = prep
        .test_set
        .par_iter()
        .enumerate()
        .map(|(idx, x)| {
            let y = {
                let mut rng = seeded_rng(&[spec.seed, noise_stream, idx as u64]);
                add_gaussian_noise(&a1.apply(x)?, spec.noise.sigma1, &mut rng)
            };
            let direct = psnr(&prep.net.forward(a1, &y)?, x, METRIC_PEAK)?;
            let adapted = rnr_reconstruct(&prep.net, &prep.a0, a1, &y, &spec.cfg)?;
            Ok((direct, psnr(&adapted.x_hat, x, METRIC_PEAK)?))
        })
        .collect::<Result<_>>()?;
    Ok((pairs.iter().map(|p| p.0).collect(), pairs.iter().map(|p| p.1).collect()))
}

/// Evaluate no-adaptation against the reconstruction loop across Fourier
/// sampling rates, with a fresh mask per rate. Columns: acceleration,
/// no-adaptation mean/std, loop mean/std.
pub fn sweep_sampling_rate(
    spec: &ExperimentSpec,
    accelerations: &[f64],
    workspace: &Path,
) -> Result<SweepTable> {
    let prep = prepare(spec, workspace)?;
    if prep.a0.mask().is_none() {
        return Err(Error::invalid(
            "the sampling-rate sweep needs a Fourier-mask training model",
        ));
    }
    let cf = prep.a0.mask().expect("checked").center_fraction;
    let mut table = SweepTable::new(
        "sampling_rate",
        &["acceleration", "no_adapt_mean", "no_adapt_std", "rnr_mean", "rnr_std"],
    );
    for &accel in accelerations {
        let mask = KspaceMask::generate(
            prep.shape.width,
            accel,
            cf,
            mix_seed(&[spec.seed, SWEEP_MASK_STREAM, accel.to_bits()]),
        )?;
        let a1 = Op::fourier_mask(prep.shape, mask)?;
        if let Some(mask) = a1.mask() {
            let dir = workspace.join("masks");
            fs::create_dir_all(&dir)?;
            mask.save_json(&dir.join(format!("accel-{accel}.json")))?;
        }
        let (direct, adapted) =
            paired_eval(spec, &prep, &a1, mix_seed(&[TEST_NOISE_STREAM, accel.to_bits()]))?;
        let (dm, ds) = mean_std(&direct);
        let (am, as_) = mean_std(&adapted);
        table.push_row(vec![accel, dm, ds, am, as_]);
    }
    table.save(workspace)?;
    Ok(table)
}

/// Degrade the shared row space by swapping `n` sampled lines for unsampled
/// ones, `repeats` random instantiations per n. Columns: n, then mean/min/max
/// per method, where the mean is over repeats of the per-repeat image mean.
pub fn sweep_nullspace_overlap(
    spec: &ExperimentSpec,
    n_swapped: &[usize],
    repeats: usize,
    workspace: &Path,
) -> Result<SweepTable> {
    if repeats == 0 {
        return Err(Error::invalid("the overlap sweep needs at least one repeat"));
    }
    let prep = prepare(spec, workspace)?;
    let Some(mask0) = prep.a0.mask().cloned() else {
        return Err(Error::invalid(
            "the row-space overlap sweep needs a Fourier-mask training model",
        ));
    };
    let mut table = SweepTable::new(
        "nullspace_overlap",
        &[
            "n_swapped",
            "no_adapt_mean",
            "no_adapt_min",
            "no_adapt_max",
            "rnr_mean",
            "rnr_min",
            "rnr_max",
        ],
    );
    for &n in n_swapped {
        let mut direct_means = Vec::with_capacity(repeats);
        let mut adapted_means = Vec::with_capacity(repeats);
        for rep in 0..repeats {
            let mask =
                mask0.with_swapped_lines(n, mix_seed(&[spec.seed, SWEEP_MASK_STREAM, n as u64, rep as u64]))?;
            let a1 = Op::fourier_mask(prep.shape, mask)?;
            let (direct, adapted) = paired_eval(spec, &prep, &a1, TEST_NOISE_STREAM)?;
            direct_means.push(mean_std(&direct).0);
            adapted_means.push(mean_std(&adapted).0);
        }
        let fold =
            |v: &[f64]| (mean_std(v).0, v.iter().cloned().fold(f64::INFINITY, f64::min), v.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        let (dm, dlo, dhi) = fold(&direct_means);
        let (am, alo, ahi) = fold(&adapted_means);
        table.push_row(vec![n as f64, dm, dlo, dhi, am, alo, ahi]);
    }
    table.save(workspace)?;
    Ok(table)
}

/// Calibrate the weight-perturbation method on N held-out measurements, with
/// the drifted model known and blind, then score the retrained weights on the
/// test split. Columns: N, known mean/std, blind mean/std.
pub fn sweep_calibration_size(
    spec: &ExperimentSpec,
    sizes: &[usize],
    workspace: &Path,
) -> Result<SweepTable> {
    let prep = prepare(spec, workspace)?;
    if sizes.iter().any(|&n| n == 0) {
        return Err(Error::invalid("calibration sizes must be at least 1"));
    }
    if let Some(&max) = sizes.iter().max() {
        if max > prep.val_set.len() {
            return Err(Error::invalid(format!(
                "largest calibration size {max} exceeds the {} held-out images",
                prep.val_set.len()
            )));
        }
    }
    if prep.a0.params().len() != prep.a1.params().len() {
        return Err(Error::invalid(
            "blind calibration needs A0 and A1 from the same operator family",
        ));
    }
    let calib: Vec<Tensor> = prep
        .val_set
        .iter()
        .enumerate()
        .map(|(idx, x)| measure(spec, &prep.a1, x, CALIB_NOISE_STREAM, idx))
        .collect::<Result<_>>()?;

    let mut table = SweepTable::new(
        "calibration_size",
        &["calibration_count", "known_mean", "known_std", "blind_mean", "blind_std"],
    );
    for &n in sizes {
        let ys = &calib[..n];
        let known = pnp_adapt_calibrated(&prep.net, &prep.a1, ys, &spec.cfg, false)?;
        let blind = pnp_adapt_calibrated(&prep.net, &prep.a0, ys, &spec.cfg, true)?;

        let known_net = net_with(&prep.net, known.theta1.as_ref())?;
        let blind_net = net_with(&prep.net, blind.theta1.as_ref())?;
        let blind_a = prep
            .a0
            .with_params(blind.sigma_hat.as_deref().unwrap_or(prep.a0.params()))?;

        let scores: Vec<(f64, f64)> = prep
            .test_set
            .par_iter()
            .enumerate()
            .map(|(idx, x)| {
                let y = measure(spec, &prep.a1, x, TEST_NOISE_STREAM, idx)?;
                let known_psnr = psnr(&known_net.forward(&prep.a1, &y)?, x, METRIC_PEAK)?;
                // Blind reconstruction uses the estimated operator: the true
                // drifted model stays unknown to it.
                let blind_psnr = psnr(&blind_net.forward(&blind_a, &y)?, x, METRIC_PEAK)?;
                Ok((known_psnr, blind_psnr))
            })
            .collect::<Result<_>>()?;
        let known_scores: Vec<f64> = scores.iter().map(|s| s.0).collect();
        let blind_scores: Vec<f64> = scores.iter().map(|s| s.1).collect();
        let (km, ks) = mean_std(&known_scores);
        let (bm, bs) = mean_std(&blind_scores);
        table.push_row(vec![n as f64, km, ks, bm, bs]);
    }
    table.save(workspace)?;
    Ok(table)
}

fn net_with(base: &ReconNet, theta: Option<&crate::net::NetworkParams>) -> Result<ReconNet> {
    let mut net = base.clone();
    if let Some(params) = theta {
        net.set_theta(params.theta())?;
    }
    Ok(net)
}

/// Train one network per kernel-bank size on mixed blur data and score it on
/// seen and unseen kernels; the single-kernel network additionally gets
/// adapted to the unseen kernels with the weight-perturbation and frozen-
/// weight methods. Columns: bank size, seen mean/std, unseen mean/std, then
/// the two adaptation references (identical in every row).
pub fn multi_kernel_training(
    spec: &ExperimentSpec,
    kernel_counts: &[usize],
    workspace: &Path,
) -> Result<SweepTable> {
    spec.validate()?;
    if kernel_counts.is_empty() || kernel_counts.contains(&0) {
        return Err(Error::invalid("kernel counts must be positive"));
    }
    let OperatorSpec::MotionBlur { size, .. } = spec.a0 else {
        return Err(Error::invalid(
            "the multi-kernel sweep needs a directional-blur training model",
        ));
    };
    let images = load_images(spec)?;
    let (n_train, n_val, _) = split_counts(images.len())?;
    let shape = images[0].shape();
    let (train_set, rest) = images.split_at(n_train);
    let test_set = &rest[n_val..];

    use rand::Rng;
    let bank_size = *kernel_counts.iter().max().expect("non-empty");
    let mut rng = seeded_rng(&[spec.seed, KERNEL_BANK_STREAM]);
    let angles: Vec<f64> = (0..bank_size).map(|_| rng.gen_range(0.0..180.0)).collect();
    let bank: Vec<Op> = angles
        .iter()
        .map(|&a| Op::motion_blur(shape, size, a))
        .collect::<Result<_>>()?;
    let unseen_angles: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..180.0)).collect();
    let unseen: Vec<Op> = unseen_angles
        .iter()
        .map(|&a| Op::motion_blur(shape, size, a))
        .collect::<Result<_>>()?;

    let mut train_cfg = spec.train;
    train_cfg.noise_sigma = spec.noise.sigma0;
    let arch = match &spec.arch {
        Some(widths) => Arch::new(widths.clone())?,
        None => Arch::default_for(spec.problem.dtype()),
    };

    let eval = |net: &ReconNet, ops: &[Op], stream: u64| -> Result<Vec<f64>> {
        test_set
            .par_iter()
            .enumerate()
            .map(|(idx, x)| {
                let op = &ops[idx % ops.len()];
                let y = {
                    let mut rng = seeded_rng(&[spec.seed, stream, idx as u64]);
                    add_gaussian_noise(&op.apply(x)?, spec.noise.sigma1, &mut rng)
                };
                psnr(&net.forward(op, &y)?, x, METRIC_PEAK)
            })
            .collect()
    };

    // Single-kernel network, trained once; its adaptation to the unseen
    // kernels is the transfer reference every bank size is compared against.
    let mut single = ReconNet::init_random(arch.clone(), spec.train.seed);
    train_supervised_mixed(
        &mut single,
        &bank[..1],
        &vec![0; train_set.len()],
        train_set,
        &train_cfg,
    )?;
    let adapt_scores: Vec<(f64, f64)> = test_set
        .par_iter()
        .enumerate()
        .map(|(idx, x)| {
            let op = &unseen[idx % unseen.len()];
            let y = {
                let mut rng = seeded_rng(&[spec.seed, TEST_NOISE_STREAM, idx as u64]);
                add_gaussian_noise(&op.apply(x)?, spec.noise.sigma1, &mut rng)
            };
            let pnp = pnp_adapt(&single, op, &y, &spec.cfg)?;
            let rnr = rnr_reconstruct(&single, &bank[0], op, &y, &spec.cfg)?;
            Ok((
                psnr(&pnp.x_hat, x, METRIC_PEAK)?,
                psnr(&rnr.x_hat, x, METRIC_PEAK)?,
            ))
        })
        .collect::<Result<_>>()?;
    let pnp_scores: Vec<f64> = adapt_scores.iter().map(|s| s.0).collect();
    let rnr_scores: Vec<f64> = adapt_scores.iter().map(|s| s.1).collect();
    let pnp_ref = mean_std(&pnp_scores).0;
    let rnr_ref = mean_std(&rnr_scores).0;

    let mut table = SweepTable::new(
        "multi_kernel",
        &[
            "kernel_count",
            "seen_mean",
            "seen_std",
            "unseen_mean",
            "unseen_std",
            "pnp_adapted_single",
            "rnr_adapted_single",
        ],
    );
    for &count in kernel_counts {
        let net = if count == 1 {
            single.clone()
        } else {
            let assignment: Vec<usize> = (0..train_set.len()).map(|i| i % count).collect();
            let mut net = ReconNet::init_random(arch.clone(), spec.train.seed);
            train_supervised_mixed(&mut net, &bank[..count], &assignment, train_set, &train_cfg)?;
            net
        };
        let seen = eval(&net, &bank[..count], TEST_NOISE_STREAM)?;
        let unseen_scores = eval(&net, &unseen, TEST_NOISE_STREAM)?;
        let (sm, ss) = mean_std(&seen);
        let (um, us) = mean_std(&unseen_scores);
        table.push_row(vec![count as f64, sm, ss, um, us, pnp_ref, rnr_ref]);
    }
    table.save(workspace)?;
    Ok(table)
}

/// Render run records as an aligned text table, grouped by scenario. Records
/// that claim the same experiment (name and method) but hash differently, or
/// that come from different toolkit versions, are refused rather than mixed
/// into one table.
pub fn render_report(records: &[RunRecord]) -> Result<String> {
    if records.is_empty() {
        return Ok("no run records\n".to_string());
    }
    for r in records {
        if r.toolkit_version != records[0].toolkit_version {
            return Err(Error::invalid(format!(
                "refusing to aggregate records from {} and {}",
                records[0].toolkit_version, r.toolkit_version
            )));
        }
        if r.psnr.len() != r.test_count {
            return Err(Error::format(format!(
                "record {} carries {} metrics for {} images",
                r.name,
                r.psnr.len(),
                r.test_count
            )));
        }
    }
    for (i, a) in records.iter().enumerate() {
        for b in &records[i + 1..] {
            if a.name == b.name && a.method == b.method && a.spec_hash != b.spec_hash {
                return Err(Error::invalid(format!(
                    "two records named '{}' ({}) carry different spec hashes",
                    a.name, a.method
                )));
            }
        }
    }

    let mut scenarios: Vec<&str> = records.iter().map(|r| r.scenario_hash.as_str()).collect();
    scenarios.dedup();
    scenarios.sort_unstable();
    scenarios.dedup();

    let mut out = format!("toolkit {}\n", records[0].toolkit_version);
    for scenario in scenarios {
        out.push_str(&format!("\nscenario {}\n", &scenario[..16.min(scenario.len())]));
        let mut rows = vec![vec![
            "name".to_string(),
            "method".to_string(),
            "images".to_string(),
            "psnr (dB)".to_string(),
            "ssim".to_string(),
            "diverged".to_string(),
            "time (s)".to_string(),
        ]];
        for r in records.iter().filter(|r| r.scenario_hash == scenario) {
            rows.push(vec![
                r.name.clone(),
                r.method.to_string(),
                r.test_count.to_string(),
                format!("{:.2} ± {:.2}", r.psnr_mean, r.psnr_std),
                format!("{:.4} ± {:.4}", r.ssim_mean, r.ssim_std),
                r.diverged_runs.to_string(),
                format!("{:.1}", r.wall_time_secs),
            ]);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
            .collect();
        for row in &rows {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (s, w))| if i == 0 { format!("{s:<w$}") } else { format!("{s:>w$}") })
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
    }
    Ok(out)
}

/// Plot-ready CSV over the same records (same refusal rules as the table).
pub fn report_csv(records: &[RunRecord]) -> Result<String> {
    render_report(records)?; // reuse the validation
    let mut out = String::from(
        "name,method,scenario_hash,spec_hash,test_count,psnr_mean,psnr_std,ssim_mean,ssim_std,diverged_runs,wall_time_secs\n",
    );
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            r.name,
            r.method,
            r.scenario_hash,
            r.spec_hash,
            r.test_count,
            r.psnr_mean,
            r.psnr_std,
            r.ssim_mean,
            r.ssim_std,
            r.diverged_runs,
            r.wall_time_secs
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_spec() -> ExperimentSpec {
        ExperimentSpec {
            name: "tiny".into(),
            problem: Problem::Deblur,
            a0: OperatorSpec::MotionBlur { size: 3, angle_deg: 10.0 },
            a1: None,
            a1_sigma: None,
            image_source: ImageSource::Synthetic { seed: 1, count: 12, size: 16 },
            noise: NoiseSpec::default(),
            method: Method::None,
            cfg: AdaptConfig::default(),
            train: TrainConfig { epochs: 1, ..TrainConfig::default() },
            arch: Some(vec![1, 4, 1]),
            grid: None,
            seed: 7,
        }
    }

    #[test]
    fn spec_hashes_are_stable_and_scenario_ignores_the_method() {
        let spec = tiny_spec();
        assert!(spec.spec_hash().unwrap() == spec.spec_hash().unwrap());
        let mut other = spec.clone();
        other.method = Method::Rnr;
        other.cfg.lambda = 99.0;
        other.name = "other".into();
        assert!(spec.spec_hash().unwrap() != other.spec_hash().unwrap());
        assert!(
            spec.scenario_hash().unwrap() == other.scenario_hash().unwrap(),
            "method, config and name must not affect the scenario"
        );
        let mut drifted = spec.clone();
        drifted.a1 = Some(OperatorSpec::MotionBlur { size: 3, angle_deg: 40.0 });
        assert!(spec.scenario_hash().unwrap() != drifted.scenario_hash().unwrap());
    }

    #[test]
    fn spec_json_round_trips() {
        let spec = tiny_spec();
        let json = to_json(&spec).unwrap();
        let back: ExperimentSpec = serde_json::from_str(&json).unwrap();
        assert!(back == spec);
    }

    #[test]
    fn validation_rejects_contradictory_and_degenerate_specs() {
        let mut both = tiny_spec();
        both.a1 = Some(OperatorSpec::Identity);
        both.a1_sigma = Some(vec![0.0; 9]);
        assert!(both.validate().is_err(), "a1 and a1_sigma together must be rejected");

        let mut small = tiny_spec();
        small.image_source = ImageSource::Synthetic { seed: 1, count: 5, size: 16 };
        assert!(small.validate().is_err(), "too few images for a split");

        let mut noisy = tiny_spec();
        noisy.noise.sigma1 = f64::NAN;
        assert!(noisy.validate().is_err());
    }

    #[test]
    fn split_keeps_the_four_to_one_to_one_ratio() {
        assert!(split_counts(384).unwrap() == (256, 64, 64));
        assert!(split_counts(6).unwrap() == (4, 1, 1));
        assert!(split_counts(5).is_err());
    }

    #[test]
    fn operator_specs_build_and_round_trip() {
        let shape = Shape::new(1, 16, 16);
        let specs = vec![
            OperatorSpec::Identity,
            OperatorSpec::MotionBlur { size: 5, angle_deg: 30.0 },
            OperatorSpec::Downsample { factor: 2, kernel: DownsampleKernel::Bicubic },
            OperatorSpec::Mask {
                acceleration: 2.0,
                center_fraction: 0.2,
                seed: 3,
                swap: Some(SwapSpec { n: 1, seed: 4 }),
                perturb_seed: None,
            },
        ];
        for s in specs {
            let json = serde_json::to_string(&s).unwrap();
            let back: OperatorSpec = serde_json::from_str(&json).unwrap();
            assert!(back == s, "operator spec must round trip through JSON");
            s.build(shape).unwrap();
        }
    }

    #[test]
    fn default_grid_covers_the_documented_range() {
        let grid = default_log_grid();
        assert!(grid.len() == 26);
        assert!((grid[0] - 1e-4).abs() <= 1e-12);
        assert!((grid[25] - 1e1).abs() <= 1e-9 * 10.0);
        for pair in grid.windows(2) {
            assert!(pair[0] < pair[1], "grid must be strictly increasing");
        }
    }

    #[test]
    fn report_refuses_conflicting_records() {
        let base = RunRecord {
            name: "exp".into(),
            method: Method::Rnr,
            spec_hash: "aaaa".into(),
            scenario_hash: "ssss".into(),
            toolkit_version: "driftadapt-0.1.0".into(),
            artifact_version: "driftadapt-0.1.0+specaaaa".into(),
            test_count: 1,
            psnr: vec![30.0],
            ssim: vec![0.9],
            psnr_mean: 30.0,
            psnr_std: 0.0,
            ssim_mean: 0.9,
            ssim_std: 0.0,
            diverged_runs: 0,
            grid_chosen: None,
            wall_time_secs: 1.0,
            notes: vec![],
        };
        let mut conflicting = base.clone();
        conflicting.spec_hash = "bbbb".into();
        assert!(render_report(&[base.clone(), conflicting]).is_err());

        let mut other_version = base.clone();
        other_version.name = "exp2".into();
        other_version.toolkit_version = "driftadapt-9.9.9".into();
        assert!(render_report(&[base.clone(), other_version]).is_err());

        let mut fine = base.clone();
        fine.name = "exp2".into();
        fine.spec_hash = "cccc".into();
        let text = render_report(&[base, fine]).unwrap();
        assert!(text.contains("exp") && text.contains("exp2"));
    }

    #[test]
    fn sweep_tables_render_csv_and_text() {
        let mut t = SweepTable::new("demo", &["x", "y"]);
        t.push_row(vec![1.0, 2.5]);
        t.push_row(vec![2.0, 3.5]);
        let csv = t.to_csv();
        assert!(csv.starts_with("x,y\n"), "csv starts with the header");
        assert!(csv.contains("1,2.5"));
        let text = t.render();
        assert!(text.contains("demo"));
        let round: SweepTable = serde_json::from_str(&serde_json::to_string(&t).unwrap()).unwrap();
        assert!(round == t);
    }

    #[test]
    fn record_save_checks_the_metric_counts() {
        let dir = tempfile::tempdir().unwrap();
        let record = RunRecord {
            name: "broken".into(),
            method: Method::None,
            spec_hash: "x".into(),
            scenario_hash: "y".into(),
            toolkit_version: "driftadapt-0.1.0".into(),
            artifact_version: "driftadapt-0.1.0+specx".into(),
            test_count: 3,
            psnr: vec![1.0],
            ssim: vec![1.0],
            psnr_mean: 1.0,
            psnr_std: 0.0,
            ssim_mean: 1.0,
            ssim_std: 0.0,
            diverged_runs: 0,
            grid_chosen: None,
            wall_time_secs: 0.0,
            notes: vec![],
        };
        assert!(record.save_json(&dir.path().join("r.json")).is_err());
    }
}
