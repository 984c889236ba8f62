use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use phlab::lab::{run_experiment, write_outputs, ExperimentConfig};

#[derive(Parser)]
#[command(name = "phlab", version, about = "Invariant-distribution experiments on partially hyperbolic toral maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write report.json, CSV tables and SVG plots.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker thread cap.
        #[arg(long)]
        threads: Option<usize>,
        /// Zero all wall-clock fields so reports compare byte for byte.
        #[arg(long)]
        normalize_timings: bool,
    },
    /// Parse and validate a config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    match cli.command {
        Command::Validate { config } => match ExperimentConfig::load(&config) {
            Ok(_) => {
                println!("{}: ok", config.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("{e}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
        Command::Run { config, out, threads, normalize_timings } => {
            let cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            if let Some(n) = threads {
                if n == 0 || rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
                    eprintln!("cannot use {n} threads");
                    return ExitCode::from(EXIT_CONFIG);
                }
            }
            let report = run_experiment(&cfg, normalize_timings);
            let dir = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("phlab-out"));
            if let Err(e) = write_outputs(&report, &dir) {
                eprintln!("{e}");
                return ExitCode::from(EXIT_NUMERICAL);
            }
            if let Some(stage) = &report.failed_stage {
                let msg = report.stages.iter().find(|s| &s.name == stage).and_then(|s| s.error.clone());
                eprintln!("stage {stage} failed: {}", msg.unwrap_or_else(|| report.warnings.join("; ")));
            }
            for w in &report.warnings {
                log::warn!("{w}");
            }
            if let Some(v) = &report.verdict {
                println!(
                    "hoelder_exceeds_threshold={} holonomy_invariant={:?} fractal_certified={}",
                    v.hoelder_exceeds_threshold, v.holonomy_invariant, v.fractal_certified
                );
            }
            println!("report written to {}", dir.join("report.json").display());
            ExitCode::from(report.exit_code() as u8)
        }
    }
}
