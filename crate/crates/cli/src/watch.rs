//! Directory watching: a decoder thread polls for new frames and hands them,
//! one at a time, to the inference loop that owns standard output.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, SyncSender};
use std::thread;
use std::time::{Duration, Instant};

use log::{info, warn};
use sightaid_core::pipeline::{render, Pipeline};
use sightaid_core::vision::{decode_ppm, resize_bilinear, to_input_tensor};
use sightaid_core::{Error, Tensor};

use crate::commands::{frame_id, load_network, Failure};
use crate::config::PipelineConfig;

struct Decoded {
    path: PathBuf,
    input: Result<Tensor<f32>, Error>,
    started: Instant,
}

/// `.ppm` files in `dir`, in name order, with their sizes.
fn list_frames(dir: &Path) -> io::Result<BTreeMap<PathBuf, u64>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.extension().is_some_and(|e| e == "ppm") {
            if let Ok(meta) = entry.metadata() {
                if meta.is_file() {
                    out.insert(path, meta.len());
                }
            }
        }
    }
    Ok(out)
}

/// Polls `dir` and sends every frame whose size held steady across two polls.
fn decode_loop(dir: PathBuf, (w, h): (usize, usize), poll: Duration, tx: SyncSender<Decoded>) {
    let mut seen: BTreeMap<PathBuf, u64> = BTreeMap::new();
    let mut done: BTreeSet<PathBuf> = BTreeSet::new();
    loop {
        let listing = match list_frames(&dir) {
            Ok(l) => l,
            Err(e) => {
                warn!("cannot list {}: {e}", dir.display());
                thread::sleep(poll);
                continue;
            }
        };
        for (path, size) in &listing {
            if done.contains(path) {
                continue;
            }
            let stable = *size > 0 && seen.get(path) == Some(size);
            seen.insert(path.clone(), *size);
            if !stable {
                continue;
            }
            let started = Instant::now();
            let input = fs::read(path)
                .map_err(Error::from)
                .and_then(|bytes| Ok(decode_ppm(&bytes)?))
                .map(|img| to_input_tensor(&resize_bilinear(&img, w, h)));
            done.insert(path.clone());
            seen.remove(path);
            if tx.send(Decoded { path: path.clone(), input, started }).is_err() {
                return;
            }
        }
        thread::sleep(poll);
    }
}

pub fn run(
    cfg: &PipelineConfig,
    dir: &Path,
    poll_ms: u64,
    max_frames: Option<usize>,
    seed: Option<u64>,
) -> Result<(), Failure> {
    if !dir.is_dir() {
        return Err(Failure::new("invalid-input", "watch target is not a directory").with_file(dir));
    }
    let pipeline = Pipeline::new(load_network(cfg, seed)?, cfg.thresholds)?;
    // Rendezvous handoff: the decoder holds at most one finished frame while
    // inference works on the previous one.
    let (tx, rx) = sync_channel::<Decoded>(0);
    let size = pipeline.frame_size();
    let poll = Duration::from_millis(poll_ms.max(1));
    let watched = dir.to_path_buf();
    thread::spawn(move || decode_loop(watched, size, poll, tx));
    info!("watching {}", dir.display());

    let stdout = io::stdout();
    let mut handled = 0usize;
    for frame in rx {
        handled += 1;
        let id = frame_id(&frame.path);
        let outcome = frame
            .input
            .and_then(|input| pipeline.run_tensor(&id, &input))
            .and_then(|result| render(&result, &cfg.outputs));
        match outcome {
            Ok(bytes) => {
                let mut out = stdout.lock();
                out.write_all(&bytes)?;
                out.flush()?;
                info!("frame {id} latency {:.1} ms", frame.started.elapsed().as_secs_f64() * 1e3);
            }
            Err(e) => warn!("skipped frame {id}: {} ({e})", e.kind()),
        }
        if max_frames.is_some_and(|m| handled >= m) {
            break;
        }
    }
    Ok(())
}
