use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hspn_core::{Error, Result};
use hspn_harness::commands::{self, Context};
use hspn_harness::TrainConfig;

#[derive(Parser)]
#[command(name = "hspn", about = "Image to completed point cloud: training, evaluation and ablations")]
struct Cli {
    /// Key-value config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Checkpoint to read.
    #[arg(long, global = true)]
    ckpt: Option<PathBuf>,
    /// Dataset directory, default `<out-dir>/data`.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Extra `key=value` config overrides.
    #[arg(long = "set", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Write a synthetic dataset.
    Datagen,
    /// Train the image-to-partial-cloud predictor.
    TrainPredictor,
    /// Train the completion network on a frozen predictor.
    TrainCompletion,
    /// Per-sample and aggregate metrics of a pipeline checkpoint.
    Eval,
    /// Train and compare the ablation variants.
    Ablate,
    /// CD of a checkpoint at reduced predictor point counts.
    RobustPoints,
    /// Train and compare pipelines fed 1, 3, 5, 7 slices.
    RobustSlices,
    /// Score each variant's outputs with a real-versus-generated classifier.
    Classify,
    /// Export per-vertex error heatmaps of a checkpoint's outputs.
    Heatmap,
}

fn run(cli: Cli) -> Result<String> {
    let mut cfg = match &cli.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::invalid(format!("expected key=value, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let ctx = Context {
        cfg,
        out_dir: cli.out_dir,
        ckpt: cli.ckpt,
        data: cli.data,
    };
    match cli.command {
        Command::Datagen => commands::datagen(&ctx),
        Command::TrainPredictor => commands::train_predictor_cmd(&ctx),
        Command::TrainCompletion => commands::train_completion_cmd(&ctx),
        Command::Eval => commands::eval_cmd(&ctx),
        Command::Ablate => commands::ablate(&ctx),
        Command::RobustPoints => commands::robust_points(&ctx),
        Command::RobustSlices => commands::robust_slices(&ctx),
        Command::Classify => commands::classify(&ctx),
        Command::Heatmap => commands::heatmap(&ctx),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .find_map(|l| l.strip_prefix("error: "))
                .map_or_else(|| "missing subcommand".to_string(), str::to_string);
            eprintln!("error kind=usage message={:?}", one_line(&first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error kind={} message={:?}", e.kind(), one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
