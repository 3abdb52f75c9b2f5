//! Command-line front end for the drift-adaptation toolkit: train and cache
//! reconstruction networks, run adaptation experiments end to end, drive the
//! sweep protocols, generate synthetic datasets and sampling masks, and
//! render collected run records into tables.
//!
//! Exit codes: 0 on success, 1 when a run fails, 2 for usage errors
//! (unknown flags, missing spec files).

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand};
use driftadapt::{
    ensure_checkpoint, multi_kernel_training, render_report, report_csv, run_dir, run_experiment,
    sweep_calibration_size, sweep_nullspace_overlap, sweep_sampling_rate, tensor::write_dat,
    ExperimentSpec, ImageSource, KspaceMask, Method, OperatorSpec, Problem, RunRecord, SweepTable,
};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Adapt trained image-reconstruction networks to drifted forward models.
#[derive(Parser)]
#[command(name = "driftadapt", version, about, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the spec's network (reuses the cached checkpoint if present).
    Train(SpecArgs),
    /// Run the spec's adaptation method end to end and record metrics.
    Adapt(SpecArgs),
    /// Evaluate any spec end to end, including the `none` and `tv` baselines.
    Eval(SpecArgs),
    /// Protocol sweeps around a base spec.
    #[command(subcommand)]
    Sweep(SweepCommand),
    /// Write a synthetic dataset as .dat tensors under `<out>/data`.
    GenData(GenDataArgs),
    /// Write a k-space sampling mask as JSON under `<out>/masks`.
    GenMask(GenMaskArgs),
    /// Render the workspace's run records into a text table and CSV.
    Report(ReportArgs),
}

#[derive(Args)]
struct SpecArgs {
    /// Experiment spec (JSON).
    #[arg(long, value_name = "FILE")]
    spec: PathBuf,
    /// Override the spec's measurement-noise seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Workspace directory holding checkpoints, runs and tables.
    #[arg(long, value_name = "DIR", default_value = "workspace")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum SweepCommand {
    /// Evaluate no-adaptation vs the reconstruction loop across sampling rates.
    Rate(RateArgs),
    /// Swap k-space lines between kept and discarded sets of the mask.
    Overlap(OverlapArgs),
    /// Grow the calibration set for known- and blind-weight perturbation.
    Calib(CalibArgs),
    /// Train on growing kernel banks and adapt to held-out kernels.
    Kernels(KernelsArgs),
}

#[derive(Args)]
struct RateArgs {
    #[command(flatten)]
    common: SpecArgs,
    /// Acceleration factors to evaluate.
    #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,12")]
    accelerations: Vec<f64>,
}

#[derive(Args)]
struct OverlapArgs {
    #[command(flatten)]
    common: SpecArgs,
    /// Numbers of swapped mask lines.
    #[arg(long, value_delimiter = ',', default_value = "0,2,4,8")]
    swaps: Vec<usize>,
    /// Independent mask draws per swap count.
    #[arg(long, default_value_t = 10)]
    repeats: usize,
}

#[derive(Args)]
struct CalibArgs {
    #[command(flatten)]
    common: SpecArgs,
    /// Calibration-set sizes (numbers of measurements).
    #[arg(long, value_delimiter = ',', default_value = "1,4,16,64")]
    sizes: Vec<usize>,
}

#[derive(Args)]
struct KernelsArgs {
    #[command(flatten)]
    common: SpecArgs,
    /// Training-bank sizes (numbers of blur kernels).
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    counts: Vec<usize>,
}

#[derive(Args)]
struct GenDataArgs {
    /// Spec whose synthetic image source supplies seed, count and size.
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    /// Dataset seed (overrides the spec's; defaults to 0).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Workspace directory; images land in `<out>/data`.
    #[arg(long, value_name = "DIR", default_value = "workspace")]
    out: PathBuf,
    /// Number of images (overrides the spec's; defaults to 64).
    #[arg(long, value_name = "N")]
    count: Option<usize>,
    /// Image side length in pixels (overrides the spec's; defaults to 32).
    #[arg(long, value_name = "PIXELS")]
    size: Option<usize>,
    /// Generate complex-valued images (implied by an MRI spec).
    #[arg(long)]
    complex: bool,
}

#[derive(Args)]
struct GenMaskArgs {
    /// Spec whose sampling-mask model supplies the mask parameters.
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    /// Mask seed (overrides the spec's; defaults to 0).
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Workspace directory; the mask lands in `<out>/masks`.
    #[arg(long, value_name = "DIR", default_value = "workspace")]
    out: PathBuf,
    /// Mask width in k-space lines (defaults to the spec's image size, else 32).
    #[arg(long, value_name = "LINES")]
    width: Option<usize>,
    /// Undersampling factor (overrides the spec's; defaults to 6).
    #[arg(long, value_name = "FACTOR")]
    acceleration: Option<f64>,
    /// Fraction of lines kept densely at the center (defaults to 0.25).
    #[arg(long, value_name = "FRACTION")]
    center_fraction: Option<f64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Restrict the report to runs sharing this spec's scenario.
    #[arg(long, value_name = "FILE")]
    spec: Option<PathBuf>,
    /// Accepted for interface uniformity; the report itself draws nothing.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Workspace directory whose `runs/` entries are aggregated.
    #[arg(long, value_name = "DIR", default_value = "workspace")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train(args) => {
            let spec = match read_spec(&args.spec, args.seed)? {
                Ok(spec) => spec,
                Err(code) => return Ok(code),
            };
            let path = ensure_checkpoint(&spec, &args.out)?;
            println!("checkpoint: {}", path.display());
        }
        Command::Adapt(args) => {
            let spec = match read_spec(&args.spec, args.seed)? {
                Ok(spec) => spec,
                Err(code) => return Ok(code),
            };
            if matches!(spec.method, Method::None | Method::Tv) {
                bail!(
                    "method `{}` performs no adaptation; run `driftadapt eval` instead",
                    spec.method
                );
            }
            let record = run_experiment(&spec, &args.out)?;
            print_record(&record, &run_dir(&spec, &args.out)?);
        }
        Command::Eval(args) => {
            let spec = match read_spec(&args.spec, args.seed)? {
                Ok(spec) => spec,
                Err(code) => return Ok(code),
            };
            let record = run_experiment(&spec, &args.out)?;
            print_record(&record, &run_dir(&spec, &args.out)?);
        }
        Command::Sweep(sweep) => {
            let common = match &sweep {
                SweepCommand::Rate(a) => &a.common,
                SweepCommand::Overlap(a) => &a.common,
                SweepCommand::Calib(a) => &a.common,
                SweepCommand::Kernels(a) => &a.common,
            };
            let spec = match read_spec(&common.spec, common.seed)? {
                Ok(spec) => spec,
                Err(code) => return Ok(code),
            };
            let out = common.out.clone();
            let table = match sweep {
                SweepCommand::Rate(a) => sweep_sampling_rate(&spec, &a.accelerations, &out)?,
                SweepCommand::Overlap(a) => {
                    sweep_nullspace_overlap(&spec, &a.swaps, a.repeats, &out)?
                }
                SweepCommand::Calib(a) => sweep_calibration_size(&spec, &a.sizes, &out)?,
                SweepCommand::Kernels(a) => multi_kernel_training(&spec, &a.counts, &out)?,
            };
            print_table(&table, &out)?;
        }
        Command::GenData(args) => {
            return gen_data(args);
        }
        Command::GenMask(args) => {
            return gen_mask(args);
        }
        Command::Report(args) => {
            return report(args);
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Load and parse a spec, applying the seed override. A missing file is a
/// usage error (exit 2), not a run failure.
fn read_spec(
    path: &Path,
    seed: Option<u64>,
) -> Result<std::result::Result<ExperimentSpec, ExitCode>> {
    if !path.is_file() {
        eprintln!("error: spec file {} does not exist", path.display());
        eprintln!("pass --spec <FILE> pointing at an experiment spec (JSON)");
        return Ok(Err(ExitCode::from(2)));
    }
    let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut spec: ExperimentSpec =
        serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    Ok(Ok(spec))
}

fn print_record(record: &RunRecord, dir: &Path) {
    println!(
        "{} [{}] on {} test images: PSNR {:.2} ± {:.2} dB, SSIM {:.4} ± {:.4}",
        record.name,
        record.method,
        record.test_count,
        record.psnr_mean,
        record.psnr_std,
        record.ssim_mean,
        record.ssim_std,
    );
    if let Some(grid) = record.grid_chosen {
        println!(
            "grid choice: mu {:.3e}, lambda {:.3e} (validation PSNR {:.2} dB)",
            grid.mu, grid.lambda, grid.val_psnr
        );
    }
    if record.diverged_runs > 0 {
        println!("diverged runs: {}", record.diverged_runs);
    }
    for note in &record.notes {
        println!("note: {note}");
    }
    println!("artifacts: {}", dir.display());
}

fn print_table(table: &SweepTable, workspace: &Path) -> Result<()> {
    table.save(workspace)?;
    print!("{}", table.render());
    let tables = workspace.join("tables");
    println!(
        "saved: {} and {}",
        tables.join(format!("{}.csv", table.name)).display(),
        tables.join(format!("{}.txt", table.name)).display(),
    );
    Ok(())
}

fn gen_data(args: GenDataArgs) -> Result<ExitCode> {
    let mut seed = 0u64;
    let mut count = 64usize;
    let mut size = 32usize;
    let mut complex = false;
    if let Some(path) = &args.spec {
        let spec = match read_spec(path, None)? {
            Ok(spec) => spec,
            Err(code) => return Ok(code),
        };
        match spec.image_source {
            ImageSource::Synthetic { seed: s, count: c, size: px } => {
                seed = s;
                count = c;
                size = px;
            }
            ImageSource::Directory { path } => {
                bail!("spec reads images from {}; nothing to generate", path.display())
            }
        }
        complex = spec.problem == Problem::Mri;
    }
    if let Some(s) = args.seed {
        seed = s;
    }
    if let Some(c) = args.count {
        count = c;
    }
    if let Some(px) = args.size {
        size = px;
    }
    complex |= args.complex;

    let images = if complex {
        driftadapt::gen_synthetic_complex(seed, count, size)?
    } else {
        driftadapt::gen_synthetic(seed, count, size)?
    };
    let dir = args.out.join("data");
    fs::create_dir_all(&dir)?;
    for (i, image) in images.iter().enumerate() {
        write_dat(&dir.join(format!("img-{i:03}.dat")), image)?;
    }
    println!(
        "wrote {count} {} images of size {size}x{size} (seed {seed}) to {}",
        if complex { "complex" } else { "real" },
        dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn gen_mask(args: GenMaskArgs) -> Result<ExitCode> {
    let mut seed = 0u64;
    let mut width = 32usize;
    let mut acceleration = 6.0f64;
    let mut center_fraction = 0.25f64;
    if let Some(path) = &args.spec {
        let spec = match read_spec(path, None)? {
            Ok(spec) => spec,
            Err(code) => return Ok(code),
        };
        if let ImageSource::Synthetic { size, .. } = spec.image_source {
            width = size;
        }
        match spec.a0 {
            OperatorSpec::Mask { acceleration: a, center_fraction: c, seed: s, .. } => {
                acceleration = a;
                center_fraction = c;
                seed = s;
            }
            other => bail!("spec models {other:?}; only sampling masks can be generated"),
        }
    }
    if let Some(s) = args.seed {
        seed = s;
    }
    if let Some(w) = args.width {
        width = w;
    }
    if let Some(a) = args.acceleration {
        acceleration = a;
    }
    if let Some(c) = args.center_fraction {
        center_fraction = c;
    }

    let mask = KspaceMask::generate(width, acceleration, center_fraction, seed)?;
    let dir = args.out.join("masks");
    fs::create_dir_all(&dir)?;
    let path = dir.join(format!("mask-w{width}-a{acceleration}-s{seed}.json"));
    mask.save_json(&path)?;
    println!("mask: {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn report(args: ReportArgs) -> Result<ExitCode> {
    let runs = args.out.join("runs");
    let mut records = Vec::new();
    if runs.is_dir() {
        let mut dirs: Vec<PathBuf> =
            fs::read_dir(&runs)?.map(|entry| Ok(entry?.path())).collect::<Result<_>>()?;
        dirs.sort();
        for dir in dirs {
            let path = dir.join("runrecord.json");
            if path.is_file() {
                records
                    .push(RunRecord::load_json(&path).with_context(|| format!("{}", path.display()))?);
            }
        }
    }
    if let Some(path) = &args.spec {
        let spec = match read_spec(path, args.seed)? {
            Ok(spec) => spec,
            Err(code) => return Ok(code),
        };
        let scenario = spec.scenario_hash()?;
        records.retain(|record| record.scenario_hash == scenario);
    }
    if records.is_empty() {
        println!("no run records under {}", runs.display());
        return Ok(ExitCode::SUCCESS);
    }
    let text = render_report(&records)?;
    let csv = report_csv(&records)?;
    let tables = args.out.join("tables");
    fs::create_dir_all(&tables)?;
    fs::write(tables.join("report.txt"), &text)?;
    fs::write(tables.join("report.csv"), &csv)?;
    print!("{text}");
    println!(
        "saved: {} and {}",
        tables.join("report.txt").display(),
        tables.join("report.csv").display(),
    );
    Ok(ExitCode::SUCCESS)
}
