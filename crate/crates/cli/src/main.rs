//! `sightaid`: run the recognition pipeline on PPM frames from the command line.

mod commands;
mod config;
mod watch;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sightaid_core::pipeline::OutputMode;

use crate::commands::Failure;
use crate::config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(name = "sightaid", version, about = "Object recognition with JSON, braille and phrase output")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every command; they override the pipeline config file.
#[derive(Debug, Args)]
struct Common {
    /// Pipeline config JSON
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Weights file (read, or written by train-toy)
    #[arg(long, global = true)]
    weights: Option<PathBuf>,
    /// Output mode; repeat for several
    #[arg(long = "out", global = true, value_parser = parse_mode)]
    outputs: Vec<OutputMode>,
    /// Confidence threshold in [0,1]
    #[arg(long, global = true)]
    conf: Option<f64>,
    /// NMS IoU threshold in [0,1]
    #[arg(long, global = true)]
    iou: Option<f64>,
    /// Seed for dataset generation, weight initialization or shuffling
    #[arg(long, global = true)]
    seed: Option<u64>,
}

fn parse_mode(s: &str) -> Result<OutputMode, String> {
    s.parse().map_err(|e: sightaid_core::Error| e.to_string())
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the pipeline on each frame and print the results
    Detect {
        #[arg(required = true)]
        images: Vec<PathBuf>,
    },
    /// Process PPM frames as they appear in a directory
    Watch {
        dir: PathBuf,
        /// Polling interval in milliseconds
        #[arg(long, default_value_t = 100)]
        poll_ms: u64,
        /// Exit after this many frames (processed or skipped)
        #[arg(long)]
        max_frames: Option<usize>,
    },
    /// Write a synthetic shapes dataset
    GenerateShapes {
        dir: PathBuf,
        #[arg(long, default_value_t = 300)]
        count: usize,
        #[arg(long, default_value_t = 3)]
        max_objects: usize,
    },
    /// Train a toy network on a shapes dataset and save its weights
    TrainToy { dataset: PathBuf },
    /// Score the pipeline on an annotated dataset
    Eval {
        dataset: PathBuf,
        /// Write each frame's canonical JSON result to this file
        #[arg(long)]
        dump: Option<PathBuf>,
        /// Score previously dumped results instead of running the network
        #[arg(long, conflicts_with = "dump")]
        detections: Option<PathBuf>,
        /// IoU needed for a true positive
        #[arg(long, default_value_t = sightaid_core::eval::DEFAULT_IOU_THRESHOLD)]
        match_iou: f64,
    },
    /// Time each pipeline stage over repeated runs on one frame
    Bench {
        image: PathBuf,
        #[arg(long, default_value_t = 10)]
        iterations: usize,
    },
}

impl Common {
    fn pipeline_config(&self) -> sightaid_core::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(w) = &self.weights {
            cfg.weights = Some(w.clone());
        }
        if !self.outputs.is_empty() {
            cfg.outputs = self.outputs.clone();
        }
        if let Some(c) = self.conf {
            cfg.thresholds.conf = c;
        }
        if let Some(i) = self.iou {
            cfg.thresholds.iou = i;
        }
        cfg.thresholds.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let seed = cli.common.seed;
    if let Command::GenerateShapes { dir, count, max_objects } = &cli.command {
        return commands::generate_shapes(dir, *count, seed.unwrap_or(0), *max_objects);
    }
    let cfg = cli.common.pipeline_config()?;
    match cli.command {
        Command::Detect { images } => commands::detect(&cfg, &images, seed),
        Command::Watch { dir, poll_ms, max_frames } => watch::run(&cfg, &dir, poll_ms, max_frames, seed),
        Command::TrainToy { dataset } => commands::train_toy(&cfg, &dataset, seed),
        Command::Eval { dataset, dump, detections, match_iou } => {
            commands::eval(&cfg, &dataset, dump.as_deref(), detections.as_deref(), match_iou, seed)
        }
        Command::Bench { image, iterations } => commands::bench(&cfg, &image, iterations, seed),
        Command::GenerateShapes { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            failure.report();
            ExitCode::FAILURE
        }
    }
}
