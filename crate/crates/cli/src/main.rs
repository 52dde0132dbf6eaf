use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use arrivallab::experiment::{self, Check, ExperimentConfig, ExperimentReport, SpeedConfig, EXIT_CONFIG};
use clap::{Args, Parser, Subcommand};
use log::info;

/// Curvature flows of convex curves, arrival-time fields and their concavity checks.
#[derive(Parser)]
#[command(name = "arrivallab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for node-parallel loops (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Args, Clone)]
struct Source {
    /// JSON experiment config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario: circle_mcf, circle_alpha3, ellipse_mcf, ellipse_alpha13, fourier_blob_mcf.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the flow to extinction and store the trajectory.
    Flow(Source),
    /// Flow plus arrival-time reconstruction.
    Arrival(Source),
    /// Run every check listed in the config.
    Verify(Source),
    /// Inverse-concavity classification of a speed.
    ClassifySpeed {
        #[command(flatten)]
        source: Source,
        /// Speed name; replaces the config's speed.
        #[arg(long)]
        speed: Option<String>,
        #[arg(long, default_value_t = 2)]
        dimension: usize,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        segments: Option<usize>,
    },
    /// Refinement study; writes convergence.csv and convergence.json.
    Converge {
        #[command(flatten)]
        source: Source,
        #[arg(long, default_value_t = 3)]
        levels: usize,
    },
    /// Print the verdicts of an existing report.json.
    Report {
        /// report.json, or a directory containing one.
        path: PathBuf,
    },
}

enum Failure {
    Config(anyhow::Error),
    Run(anyhow::Error),
}

fn load(src: &Source) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match (&src.config, &src.preset) {
        (Some(p), None) => ExperimentConfig::load(p).with_context(|| format!("reading {}", p.display())),
        (None, Some(name)) => ExperimentConfig::preset(name).map_err(Into::into),
        (None, None) => ExperimentConfig::preset("circle_mcf").map_err(Into::into),
        (Some(_), Some(_)) => unreachable!("clap rejects --config with --preset"),
    }
    .map_err(Failure::Config)?;
    if let Some(s) = src.seed {
        cfg.seed = s;
    }
    if let Some(o) = &src.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn finish(report: &ExperimentReport) -> i32 {
    for line in report.verdict_lines() {
        println!("{line}");
    }
    println!("overall {:?} -> {}", report.verdict, report.config.output_dir.join("report.json").display());
    report.exit_code()
}

fn run_checks(mut cfg: ExperimentConfig, checks: Option<Vec<Check>>) -> Result<i32, Failure> {
    if let Some(c) = checks {
        cfg.checks = c;
    }
    cfg.validate().map_err(|e| Failure::Config(e.into()))?;
    let report = experiment::run_experiment(&cfg).map_err(|e| Failure::Run(e.into()))?;
    Ok(finish(&report))
}

fn dispatch(cmd: Command) -> Result<i32, Failure> {
    match cmd {
        Command::Flow(src) => run_checks(load(&src)?, Some(vec![Check::Flow])),
        Command::Arrival(src) => run_checks(load(&src)?, Some(vec![Check::Flow, Check::Arrival])),
        Command::Verify(src) => run_checks(load(&src)?, None),
        Command::ClassifySpeed { source, speed, dimension, alpha, p, segments } => {
            let mut cfg = load(&source)?;
            if let Some(name) = speed {
                cfg.speed = SpeedConfig { name, alpha, dimension, p };
            }
            if let Some(n) = segments {
                cfg.classify.segments = n;
            }
            run_checks(cfg, Some(vec![Check::InverseConcavity]))
        }
        Command::Converge { source, levels } => {
            let cfg = load(&source)?;
            if levels < 2 {
                return Err(Failure::Config(anyhow::anyhow!("--levels must be at least 2")));
            }
            cfg.validate().map_err(|e| Failure::Config(e.into()))?;
            let table = experiment::convergence_study(&cfg, levels).map_err(|e| Failure::Run(e.into()))?;
            let run = || -> anyhow::Result<()> {
                fs::create_dir_all(&cfg.output_dir)?;
                fs::write(cfg.output_dir.join("convergence.csv"), table.to_csv()?)?;
                fs::write(cfg.output_dir.join("convergence.json"), serde_json_pretty(&table)?)?;
                Ok(())
            };
            run().map_err(Failure::Run)?;
            println!("{:>6} {:>10} {:>12} {:>12} {:>12} {:>12} {:>12}", "N", "dx", "worst Z", "worst Hess", "min Q", "residual", "grad err");
            for r in &table.rows {
                println!(
                    "{:>6} {:>10.3e} {:>12.3e} {:>12.3e} {:>12.3e} {:>12.3e} {:>12.3e}",
                    r.theta_count, r.dx, r.worst_z, r.worst_hessian, r.worst_q, r.max_residual, r.gradient_error
                );
            }
            println!("residual orders {:?}", table.residual_orders);
            println!("gradient orders {:?}", table.gradient_orders);
            Ok(0)
        }
        Command::Report { path } => {
            let file = if path.is_dir() { path.join("report.json") } else { path };
            let report = ExperimentReport::load(&file).map_err(|e| Failure::Config(e.into()))?;
            Ok(finish(&report))
        }
    }
}

fn serde_json_pretty<T: serde::Serialize>(v: &T) -> anyhow::Result<String> {
    Ok(serde_json::to_string_pretty(v)?)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ARRIVALLAB_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
        info!("using {j} worker threads");
    }
    let code = match dispatch(cli.command) {
        Ok(c) => c,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            EXIT_CONFIG
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    };
    ExitCode::from(code as u8)
}
