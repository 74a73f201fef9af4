use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use idm::sampler::PathMode;
use idm::Error;
use idm_bench::config::{Experiment, ExperimentConfig};
use idm_bench::experiments::SampleJob;
use idm_bench::output::{write_json, write_sweep};
use idm_bench::{
    exit, run_circle_demo, run_dimension_experiment, run_rate_experiment, run_sample,
    run_score_field,
};
use log::error;

#[derive(Parser)]
#[command(
    name = "bench",
    version,
    about = "Inertial diffusion experiments: rate and dimension sweeps, demos, sampling"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// W1 against n for IDM and the memorizing baseline, with log-log slopes.
    Rate(SweepArgs),
    /// W1 across ambient dimensions at fixed n, with the flatness statistic.
    Dim(SweepArgs),
    /// Circle illustration: training points, early-stopped and updated samples.
    CircleDemo(SweepArgs),
    /// Empirical score of circle data on a regular grid.
    ScoreField(SweepArgs),
    /// One-shot IDM batch from a data CSV.
    Sample(SampleArgs),
}

#[derive(Args)]
struct SweepArgs {
    /// JSON file with configuration fields; unspecified fields keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training-set sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    n_list: Option<Vec<usize>>,
    /// Ambient dimensions, comma separated.
    #[arg(long, value_delimiter = ',')]
    d_list: Option<Vec<usize>>,
    #[arg(long)]
    c0: Option<f64>,
    /// Proxy sample count M.
    #[arg(long)]
    m_proxy: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// `short-circuit` or `full-ode`.
    #[arg(long)]
    path_mode: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Write 0 for wall times so that result files are byte-reproducible.
    #[arg(long)]
    no_wall_time: bool,
}

#[derive(Args)]
struct SampleArgs {
    /// Data CSV (header x0..x{D-1}); a JSON sidecar with the manifold is used when present.
    #[arg(long)]
    data: PathBuf,
    /// JSON file with sampling fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    c0: Option<f64>,
    #[arg(long)]
    path_mode: Option<String>,
    #[arg(long)]
    ode_steps: Option<usize>,
    /// Intrinsic dimension d when the data has no sidecar.
    #[arg(long)]
    intrinsic_dim: Option<usize>,
    #[arg(long)]
    workers: Option<usize>,
    /// Output CSV for the samples (a JSON sidecar is written next to it).
    #[arg(long, default_value = "samples.csv")]
    out: PathBuf,
}

fn read_overlay(path: Option<&Path>) -> Result<serde_json::Value, Error> {
    match path {
        None => Ok(serde_json::json!({})),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))
        }
    }
}

fn sweep_config(experiment: Experiment, args: &SweepArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg =
        ExperimentConfig::from_overlay(experiment, &read_overlay(args.config.as_deref())?)?;
    if let Some(v) = &args.n_list {
        cfg.n_list = v.clone();
    }
    if let Some(v) = &args.d_list {
        cfg.d_list = v.clone();
    }
    if let Some(v) = args.c0 {
        cfg.c0 = v;
    }
    if let Some(v) = args.m_proxy {
        cfg.m_proxy = v;
    }
    if let Some(v) = &args.seeds {
        cfg.seeds = v.clone();
    }
    if let Some(v) = &args.path_mode {
        cfg.path_mode = v.parse::<PathMode>()?;
    }
    if let Some(v) = &args.out {
        cfg.output_dir = v.clone();
    }
    if args.workers.is_some() {
        cfg.workers = args.workers;
    }
    if args.no_wall_time {
        cfg.record_wall_time = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sample_job(args: &SampleArgs) -> Result<SampleJob, Error> {
    let overlay = read_overlay(args.config.as_deref())?;
    let mut job: SampleJob = serde_json::from_value(overlay)
        .map_err(|e| Error::Config(format!("invalid config: {e}")))?;
    if let Some(v) = args.count {
        job.count = v;
    }
    if let Some(v) = args.seed {
        job.seed = v;
    }
    if let Some(v) = args.c0 {
        job.c0 = v;
    }
    if let Some(v) = &args.path_mode {
        job.path_mode = v.parse::<PathMode>()?;
    }
    if let Some(v) = args.ode_steps {
        job.ode_steps = v;
    }
    if args.intrinsic_dim.is_some() {
        job.intrinsic_dim = args.intrinsic_dim;
    }
    if args.workers.is_some() {
        job.workers = args.workers;
    }
    Ok(job)
}

fn is_config_error(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_) | Error::Unsupported(_) | Error::DimensionMismatch { .. }
    )
}

fn run(command: Command) -> Result<i32, Error> {
    match command {
        Command::Rate(args) => {
            let cfg = sweep_config(Experiment::Rate, &args)?;
            let outcome = run_rate_experiment(&cfg)?;
            write_sweep(&cfg.output_dir, &cfg, &outcome)?;
            for (method, fit) in &outcome.summary.slopes {
                println!(
                    "{method}: slope {:.4} (r^2 {:.3})",
                    fit.slope, fit.r_squared
                );
            }
            Ok(idm_bench::sweep_exit_code(&outcome))
        }
        Command::Dim(args) => {
            let cfg = sweep_config(Experiment::Dimension, &args)?;
            let outcome = run_dimension_experiment(&cfg)?;
            write_sweep(&cfg.output_dir, &cfg, &outcome)?;
            for (method, s) in &outcome.summary.dimension {
                println!(
                    "{method}: flatness {:.4}, spearman {:.3}",
                    s.flatness, s.spearman
                );
            }
            Ok(idm_bench::sweep_exit_code(&outcome))
        }
        Command::CircleDemo(args) => {
            let cfg = sweep_config(Experiment::CircleDemo, &args)?;
            let summary = run_circle_demo(&cfg, &cfg.output_dir)?;
            write_json(&cfg.output_dir.join("summary.json"), &summary)?;
            println!(
                "median distance to the circle: early-stopped {:.4}, updated {:.4}",
                summary.median_distance_early, summary.median_distance_updated
            );
            Ok(exit::SUCCESS)
        }
        Command::ScoreField(args) => {
            let cfg = sweep_config(Experiment::ScoreField, &args)?;
            let rows = run_score_field(&cfg, &cfg.output_dir)?;
            println!(
                "wrote {rows} grid rows to {}",
                cfg.output_dir.join("score_field.csv").display()
            );
            Ok(exit::SUCCESS)
        }
        Command::Sample(args) => {
            let job = sample_job(&args)?;
            let batch = run_sample(&job, &args.data, &args.out)?;
            println!(
                "wrote {} samples to {}",
                batch.samples.len(),
                args.out.display()
            );
            Ok(exit::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let code = match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            error!("{e}");
            if is_config_error(&e) {
                exit::CONFIG_ERROR
            } else {
                exit::RUN_FAILURE
            }
        }
    };
    ExitCode::from(code as u8)
}
