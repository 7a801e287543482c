use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use msopt_cli::audit::run_audit;
use msopt_cli::config::{BenchConfig, ConfigFile, Experiment, Format, Overrides, PlanSpec, ScaleRange, SEED_ENV};
use msopt_cli::output::{validate_file, write_json};
use msopt_cli::{motivating, tensor_io, tucker_bench};
use msopt_core::tucker::{bcd_factorize, multiscale_factorize, FactorizeOptions};

#[derive(Parser)]
#[command(name = "msopt", version, about = "Multiscale optimization experiments and tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a benchmark experiment and write its tables.
    Bench(BenchArgs),
    /// Check every closed-form bound on randomized instances.
    Audit {
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, env = SEED_ENV, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Factorize a tensor file.
    Tensor {
        #[command(subcommand)]
        method: TensorMethod,
    },
    /// Check output files against their schemas; prints the row count of each.
    Validate {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

#[derive(Args)]
struct BenchArgs {
    /// Experiment to run; may instead come from the config file.
    experiment: Option<Experiment>,
    /// JSON config file mirroring these flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scale counts, e.g. `3..10`.
    #[arg(long)]
    scales: Option<ScaleRange>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// single, greedy-one-per-coarse, greedy-uniform(K), lazy(K) or progress-driven.
    #[arg(long)]
    plan: Option<PlanSpec>,
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Record every Nth iterate per scale.
    #[arg(long)]
    snapshot_every: Option<usize>,
    /// Iteration cap at coarse scales.
    #[arg(long)]
    coarse_cap: Option<usize>,
}

#[derive(Subcommand)]
enum TensorMethod {
    /// Single-scale block coordinate descent.
    Factorize(TensorArgs),
    /// Multiscale factorization over the continuous dimensions.
    Msfactorize(TensorArgs),
}

#[derive(Args)]
struct TensorArgs {
    /// `.msot` binary or `.json` tensor.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    rank: usize,
    /// 1-based dimensions sampled from continuous variables, e.g. `2,3`.
    #[arg(long, value_delimiter = ',')]
    continuous_dims: Vec<usize>,
    /// Relative error tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

/// Failure classes mapped to exit codes.
enum Outcome {
    Ok,
    Violations,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse()) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Violations) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<Outcome> {
    match cli.command {
        Command::Bench(args) => bench(args),
        Command::Audit { trials, seed, out } => audit(trials, seed, &out),
        Command::Tensor { method } => tensor(method),
        Command::Validate { files } => {
            for f in &files {
                let n = validate_file(f)?;
                println!("{}: ok ({n} rows)", f.display());
            }
            Ok(Outcome::Ok)
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn print_written(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

fn bench(args: BenchArgs) -> Result<Outcome> {
    let file = match &args.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let flags = Overrides {
        experiment: args.experiment,
        scales: args.scales,
        trials: args.trials,
        seed: args.seed,
        plan: args.plan,
        jobs: args.jobs,
        out: args.out,
        format: args.format,
        snapshot_every: args.snapshot_every,
        coarse_cap: args.coarse_cap,
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = BenchConfig::resolve(file, flags, env_seed.as_deref())?;
    create_dir(&cfg.out)?;
    log::info!("running {} with seed {}", cfg.experiment.as_str(), cfg.seed);
    match cfg.experiment {
        Experiment::Motivating => {
            let outcomes = motivating::run_all(&cfg)?;
            print_written(&motivating::write_outputs(&cfg, &outcomes)?);
        }
        Experiment::CoarseItersSweep => {
            let rows = tucker_bench::run_sweep(&cfg)?;
            print_written(&tucker_bench::write_sweep(&cfg, &rows)?);
        }
        Experiment::TuckerSynthetic => {
            let res = tucker_bench::run_synthetic(&cfg)?;
            print_written(&tucker_bench::write_tucker(&cfg, &res)?);
        }
        Experiment::TuckerGeoshape => {
            let res = tucker_bench::run_geoshape(&cfg)?;
            print_written(&tucker_bench::write_tucker(&cfg, &res)?);
        }
        Experiment::BoundAudit => return audit(cfg.trials, cfg.seed, &cfg.out),
    }
    Ok(Outcome::Ok)
}

fn audit(trials: usize, seed: u64, out: &Path) -> Result<Outcome> {
    if trials == 0 {
        bail!("trials must be at least 1");
    }
    create_dir(out)?;
    let report = run_audit(trials, seed)?;
    let path = out.join("audit.json");
    write_json(&path, &report)?;
    for c in &report.checks {
        let status = if c.passed() { "ok" } else { "VIOLATED" };
        println!("{status:>8}  {}", c.summary());
        if !c.passed() {
            if let Some(w) = &c.witness {
                println!("          worst: measured {} vs bound {} ({})", w.measured, w.bound, w.detail);
            }
        }
    }
    println!("wrote {}", path.display());
    Ok(if report.passed() { Outcome::Ok } else { Outcome::Violations })
}

fn tensor(method: TensorMethod) -> Result<Outcome> {
    let (multiscale, args) = match method {
        TensorMethod::Factorize(a) => (false, a),
        TensorMethod::Msfactorize(a) => (true, a),
    };
    let y = tensor_io::read_tensor(&args.input)?;
    let mut continuous = Vec::with_capacity(args.continuous_dims.len());
    for &d in &args.continuous_dims {
        if d < 2 || d > y.ndim() {
            bail!("continuous dimension {d} must lie in 2..={} (dimension 1 is the mixing mode)", y.ndim());
        }
        continuous.push(d - 1);
    }
    if multiscale && continuous.is_empty() {
        bail!("msfactorize needs --continuous-dims");
    }
    let opts = FactorizeOptions {
        rank: args.rank,
        max_iterations: args.max_iter,
        rel_error_tol: args.tol,
        seed: args.seed,
        ..Default::default()
    };
    let rep = if multiscale { multiscale_factorize(&y, &continuous, &opts)? } else { bcd_factorize(&y, &opts)? };
    println!(
        "{} iterations, stop {:?}, relative error {:.6}",
        rep.iterations, rep.stop, rep.rel_error
    );
    create_dir(&args.out)?;
    print_written(&tucker_bench::write_factorization(&args.out, &rep)?);
    Ok(Outcome::Ok)
}
