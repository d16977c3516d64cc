use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mocd_core::data::{generate_synthetic, save_dataset, SyntheticSpec};
use mocd_core::experiment::{report, run_ablation, run_experiment, sweep_openness, write_report, ExperimentConfig};
use mocd_core::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "mocd", version, about = "Multi-view open-set training and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Grid {
    /// h, h+g, h+g+mixup, h+g+omix.
    Table3,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset directory.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and evaluate one configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the component ablation grid over several seeds.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value = "table3")]
        grid: Grid,
        /// Comma-separated seeds; defaults to the config seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// One run per target openness.
    SweepOpenness {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Merge metrics.json files into one CSV table.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("MOCD_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("MOCD_THREADS={v:?} is not an integer")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Generate { spec, out, seed } => {
            let text = std::fs::read_to_string(&spec)?;
            let spec: SyntheticSpec =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", spec.display())))?;
            let dataset = generate_synthetic(&spec, seed)?;
            save_dataset(&dataset, &out)?;
            println!("wrote {} samples to {}", dataset.len(), out.display());
        }
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            let outcome = run_experiment(&cfg)?;
            let m = &outcome.metrics;
            println!(
                "{}: closed-set accuracy {:.4}, CCR@FPR=10% {:.4}, openness {:.4}",
                m.run_id,
                m.closed_set_accuracy,
                m.ccr_at("0.10"),
                m.openness
            );
        }
        Command::Ablate {
            config,
            grid: Grid::Table3,
            seeds,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let seeds = if seeds.is_empty() { vec![cfg.seed] } else { seeds };
            for row in run_ablation(&cfg, &seeds)? {
                println!(
                    "{:10} CCR@FPR=10% {:.4} ± {:.4}",
                    row.name, row.ccr_fpr10_mean, row.ccr_fpr10_std
                );
            }
            println!("wrote {}", cfg.output_dir.join("ablation.csv").display());
        }
        Command::SweepOpenness { config, values } => {
            let cfg = ExperimentConfig::load(&config)?;
            for m in sweep_openness(&cfg, &values)? {
                println!(
                    "openness {:.4} ({} known, {} unknown): CCR@FPR=10% {:.4}",
                    m.openness,
                    m.known_classes,
                    m.unknown_classes,
                    m.ccr_at("0.10")
                );
            }
        }
        Command::Report { dirs, out } => {
            let (rows, skipped) = report(&dirs)?;
            for (path, why) in &skipped {
                eprintln!("warning: skipping {}: {why}", path.display());
            }
            match out {
                Some(path) => write_report(&rows, std::fs::File::create(path)?)?,
                None => write_report(&rows, std::io::stdout().lock())?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
