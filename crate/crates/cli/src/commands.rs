use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use log::{info, warn};
use serde_json::json;
use sightaid_core::assist::{from_json, to_json, FrameResult};
use sightaid_core::detect::Detection;
use sightaid_core::eval::{mean_ap, top1_accuracy, EvalReport, FrameDetection};
use sightaid_core::network::{
    build_network, load_weights, save_weights, train_classifier, train_detector, ClassSample, DetectSample,
    HeadKind, Network, TrainConfig, TrainReport,
};
use sightaid_core::pipeline::{render, Pipeline, StageTimes};
use sightaid_core::shapes::{load_dataset, write_dataset};
use sightaid_core::Error;

use crate::config::{PipelineConfig, TrainMode};

/// Why a command failed. `Reported` means the per-item errors were already printed.
#[derive(Debug)]
pub enum Failure {
    Error {
        kind: String,
        file: Option<PathBuf>,
        message: String,
    },
    Reported,
}

impl Failure {
    pub fn new(kind: impl Into<String>, message: impl Into<String>) -> Self {
        Failure::Error {
            kind: kind.into(),
            file: None,
            message: message.into(),
        }
    }

    pub fn with_file(self, path: &Path) -> Self {
        match self {
            Failure::Error { kind, message, .. } => Failure::Error {
                kind,
                file: Some(path.to_path_buf()),
                message,
            },
            Failure::Reported => Failure::Reported,
        }
    }

    /// One JSON object per line on standard error.
    pub fn report(&self) {
        if let Failure::Error { kind, file, message } = self {
            let line = json!({
                "error": kind,
                "file": file.as_ref().map(|p| p.display().to_string()),
                "message": message,
            });
            eprintln!("{line}");
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::new(e.kind(), e.to_string())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Error::from(e).into()
    }
}

/// Frame id of an image path: its file stem.
pub fn frame_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn load_network(cfg: &PipelineConfig, seed: Option<u64>) -> Result<Network<f32>, Failure> {
    match cfg.existing_weights()? {
        Some(path) => {
            let file = File::open(path).map_err(|e| Failure::from(e).with_file(path))?;
            load_weights(&cfg.network, BufReader::new(file)).map_err(|e| Failure::from(e).with_file(path))
        }
        None => {
            let seed = seed.unwrap_or(0);
            warn!("no weights configured, using seeded initialization (seed {seed})");
            Ok(build_network(&cfg.network, seed)?)
        }
    }
}

fn pipeline(cfg: &PipelineConfig, seed: Option<u64>) -> Result<Pipeline<f32>, Failure> {
    Ok(Pipeline::new(load_network(cfg, seed)?, cfg.thresholds)?)
}

pub fn detect(cfg: &PipelineConfig, images: &[PathBuf], seed: Option<u64>) -> Result<(), Failure> {
    let pipeline = pipeline(cfg, seed)?;
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let mut failed = 0usize;
    for path in images {
        let rendered = fs::read(path)
            .map_err(Error::from)
            .and_then(|bytes| pipeline.run_bytes(&frame_id(path), &bytes))
            .and_then(|result| render(&result, &cfg.outputs));
        match rendered {
            Ok(bytes) => {
                out.write_all(&bytes)?;
                out.flush()?;
            }
            Err(e) => {
                Failure::from(e).with_file(path).report();
                failed += 1;
            }
        }
    }
    if failed > 0 {
        warn!("{failed} of {} frames failed", images.len());
        return Err(Failure::Reported);
    }
    Ok(())
}

pub fn generate_shapes(dir: &Path, count: usize, seed: u64, max_objects: usize) -> Result<(), Failure> {
    let frames = write_dataset(dir, count, seed, max_objects).map_err(|e| Failure::from(e).with_file(dir))?;
    let objects: usize = frames.iter().map(|f| f.shapes.len()).sum();
    info!("wrote {count} frames with {objects} objects to {}", dir.display());
    println!("{}", json!({ "frames": count, "objects": objects, "seed": seed }));
    Ok(())
}

pub fn train_toy(cfg: &PipelineConfig, dataset: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let settings = cfg
        .train
        .as_ref()
        .ok_or_else(|| Failure::new("invalid-config", "pipeline config has no \"train\" section"))?;
    let out_path = cfg
        .weights
        .as_ref()
        .ok_or_else(|| Failure::new("invalid-config", "no weights path to write (use --weights)"))?;
    let train_cfg = TrainConfig {
        learning_rate: settings.learning_rate,
        epochs: settings.epochs,
        batch_size: settings.batch_size,
        seed: seed.unwrap_or(settings.seed),
    };
    let head = cfg.network.head();
    match (settings.mode, head) {
        (TrainMode::Classifier, HeadKind::Classifier { .. }) | (TrainMode::Detector, HeadKind::Detector(_)) => {}
        _ => {
            return Err(Failure::new(
                "invalid-config",
                format!("train mode {:?} does not match the head of {}", settings.mode, cfg.network.name),
            ))
        }
    }
    let data = load_dataset(dataset, cfg.network.class_labels.len()).map_err(|e| Failure::from(e).with_file(dataset))?;

    let mut net: Network<f32> = build_network(&cfg.network, settings.init_seed)?;
    let shaper = Pipeline::new(net.clone(), cfg.thresholds)?;
    let log_epoch = |epoch: usize, loss: f64| info!("epoch {} loss {loss:.6}", epoch + 1);
    let report: TrainReport = match settings.mode {
        TrainMode::Classifier => {
            let samples: Vec<ClassSample<f32>> = data
                .frames
                .iter()
                .map(|(id, img)| ClassSample {
                    input: shaper.prepare(img),
                    label: data.dominant_class(id).expect("every frame is annotated"),
                })
                .collect();
            train_classifier(&mut net, &samples, &train_cfg, log_epoch)?
        }
        TrainMode::Detector => {
            let samples: Vec<DetectSample<f32>> = data
                .frames
                .iter()
                .map(|(id, img)| DetectSample {
                    input: shaper.prepare(img),
                    truths: data.truths_for(id).map(|t| (t.class_id, t.bbox)).collect(),
                })
                .collect();
            train_detector(&mut net, &samples, &train_cfg, log_epoch)?
        }
    };
    if report.final_loss > report.initial_loss {
        return Err(Failure::new(
            "training-diverged",
            format!("final loss {} exceeds initial loss {}", report.final_loss, report.initial_loss),
        ));
    }
    let file = File::create(out_path).map_err(|e| Failure::from(e).with_file(out_path))?;
    let mut sink = BufWriter::new(file);
    save_weights(&net, &mut sink)?;
    sink.flush()?;
    info!("saved weights to {}", out_path.display());
    println!(
        "{}",
        json!({
            "model": cfg.network.name,
            "samples": data.frames.len(),
            "epochs": train_cfg.epochs,
            "initial_loss": report.initial_loss,
            "final_loss": report.final_loss,
            "train_top1": report.train_top1,
        })
    );
    Ok(())
}

/// Reads a file of canonical JSON frame results, one per line.
fn read_results(path: &Path) -> Result<Vec<FrameResult>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::from(e).with_file(path))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, line)| {
            from_json(line.as_bytes()).map_err(|e| {
                Failure::new(e.kind(), format!("line {}: {e}", i + 1)).with_file(path)
            })
        })
        .collect()
}

fn class_of(label: &str, labels: &[String]) -> Result<usize, Failure> {
    labels
        .iter()
        .position(|l| l == label)
        .ok_or_else(|| Failure::new("invalid-label", format!("unknown label {label:?}")))
}

pub fn eval(
    cfg: &PipelineConfig,
    dataset: &Path,
    dump: Option<&Path>,
    offline: Option<&Path>,
    match_iou: f64,
    seed: Option<u64>,
) -> Result<(), Failure> {
    let labels = &cfg.network.class_labels;
    let data = load_dataset(dataset, labels.len()).map_err(|e| Failure::from(e).with_file(dataset))?;

    let results = match offline {
        Some(path) => read_results(path)?,
        None => {
            let pipeline = pipeline(cfg, seed)?;
            let mut sink = match dump {
                Some(p) => Some(BufWriter::new(File::create(p).map_err(|e| Failure::from(e).with_file(p))?)),
                None => None,
            };
            let mut results = Vec::with_capacity(data.frames.len());
            for (id, img) in &data.frames {
                let canonical = to_json(&pipeline.run_image(id, img)?);
                if let Some(s) = sink.as_mut() {
                    s.write_all(&canonical)?;
                }
                results.push(from_json(&canonical)?);
            }
            if let Some(mut s) = sink {
                s.flush()?;
            }
            results
        }
    };

    let mut dets = Vec::new();
    for r in &results {
        for d in &r.detections {
            dets.push(FrameDetection {
                frame_id: r.frame_id.clone(),
                detection: Detection {
                    class_id: class_of(&d.label, labels)?,
                    confidence: d.confidence,
                    bbox: d.bbox,
                },
            });
        }
    }

    let report = match cfg.network.head() {
        HeadKind::Classifier { .. } => {
            let mut predictions = Vec::with_capacity(data.frames.len());
            let mut truth = Vec::with_capacity(data.frames.len());
            for (id, _) in &data.frames {
                let top = results
                    .iter()
                    .find(|r| r.frame_id == *id)
                    .and_then(|r| r.detections.first())
                    .map(|d| class_of(&d.label, labels))
                    .transpose()?;
                predictions.push(top.unwrap_or(usize::MAX));
                truth.push(data.dominant_class(id).expect("every frame is annotated"));
            }
            EvalReport {
                per_class_ap: Default::default(),
                map_score: None,
                top1: Some(top1_accuracy(&predictions, &truth)?),
                frames: data.frames.len(),
                truths: data.truths.len(),
                detections: dets.len(),
            }
        }
        _ => mean_ap(&dets, &data.truths, match_iou)?,
    };
    println!("{}", report.to_json(labels));
    Ok(())
}

fn millis(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

/// Mean and nearest-rank 95th percentile, in milliseconds.
pub fn summarize(samples: &[Duration]) -> (f64, f64) {
    let mut ms: Vec<f64> = samples.iter().map(|&d| millis(d)).collect();
    ms.sort_by(f64::total_cmp);
    let mean = ms.iter().sum::<f64>() / ms.len() as f64;
    let rank = ((0.95 * ms.len() as f64).ceil() as usize).max(1);
    (mean, ms[rank - 1])
}

pub fn bench(cfg: &PipelineConfig, image: &Path, iterations: usize, seed: Option<u64>) -> Result<(), Failure> {
    if iterations == 0 {
        return Err(Failure::new("invalid-input", "iterations must be at least 1"));
    }
    let pipeline = pipeline(cfg, seed)?;
    let bytes = fs::read(image).map_err(|e| Failure::from(e).with_file(image))?;
    let id = frame_id(image);
    let mut times: Vec<StageTimes> = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let (_, t) = pipeline
            .run_timed(&id, &bytes, &cfg.outputs)
            .map_err(|e| Failure::from(e).with_file(image))?;
        times.push(t);
    }
    let stage = |pick: fn(&StageTimes) -> Duration| {
        let (mean, p95) = summarize(&times.iter().map(pick).collect::<Vec<_>>());
        json!({ "mean_ms": mean, "p95_ms": p95 })
    };
    let report = json!({
        "model": cfg.network.name,
        "iterations": iterations,
        "decode": stage(|t| t.decode),
        "resize": stage(|t| t.resize),
        "forward": stage(|t| t.forward),
        "postprocess": stage(|t| t.postprocess),
        "output": stage(|t| t.output),
    });
    println!("{report}");
    Ok(())
}
