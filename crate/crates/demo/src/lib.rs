//! Browser demo over `sightaid-core`.
//!
//! Three operations are exported to JavaScript: sampling the ELU curve,
//! decoding a random detection grid and suppressing duplicates, and turning
//! text into braille. Each wrapper calls a plain Rust function so the logic
//! is testable without a browser.

use serde_json::{json, Value};
use sightaid_core::assist::{describe_scene, to_braille, FrameResult};
use sightaid_core::detect::{decode_grid, nms, Detection, GridSpec};
use sightaid_core::layers::elu_scalar;
use sightaid_core::rng::SplitMix64;
use sightaid_core::Tensor;
use wasm_bindgen::prelude::*;

pub const GRID: GridSpec = GridSpec { s: 4, boxes: 2, classes: 3 };
pub const LABELS: [&str; 3] = ["person", "car", "chair"];

/// `n` evenly spaced samples of ELU with parameter `a` over `[lo, hi]`.
pub fn elu_samples(a: f64, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 0 {
        return Vec::new();
    }
    let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
    (0..n).map(|i| elu_scalar(lo + step * i as f64, a)).collect()
}

/// A seeded random raw grid: background logits plus a few strong, jittered
/// responses so that suppression has overlapping boxes to remove.
pub fn random_grid(seed: u64) -> Tensor<f64> {
    let mut rng = SplitMix64::new(seed);
    let depth = GRID.depth();
    let mut data: Vec<f64> = (0..GRID.s * GRID.s * depth).map(|_| rng.uniform(-3.0, 0.0)).collect();
    for _ in 0..3 {
        let cell = rng.range_inclusive(0, (GRID.s * GRID.s - 1) as u64) as usize;
        let class = rng.range_inclusive(0, 2) as usize;
        let base = cell * depth;
        let (tw, th) = (rng.uniform(-1.5, 0.5), rng.uniform(-1.5, 0.5));
        for b in 0..GRID.boxes {
            let slot = base + b * 5;
            data[slot] = rng.uniform(-0.5, 0.5);
            data[slot + 1] = rng.uniform(-0.5, 0.5);
            data[slot + 2] = tw + rng.uniform(-0.2, 0.2);
            data[slot + 3] = th + rng.uniform(-0.2, 0.2);
            data[slot + 4] = rng.uniform(1.0, 4.0);
        }
        data[base + GRID.boxes * 5 + class] = rng.uniform(2.0, 5.0);
    }
    Tensor::from_vec(&GRID.shape(), data).expect("length matches grid shape")
}

fn det_json(d: &Detection) -> Value {
    json!({
        "label": LABELS[d.class_id],
        "confidence": d.confidence,
        "box": { "cx": d.bbox.cx, "cy": d.bbox.cy, "w": d.bbox.w, "h": d.bbox.h },
    })
}

/// Decodes the seeded grid, applies NMS and describes what is left.
pub fn detect_scene(seed: u64, conf: f64, iou: f64) -> Result<String, String> {
    let candidates = decode_grid(&random_grid(seed), GRID, conf).map_err(|e| e.to_string())?;
    let kept = nms(&candidates, iou);
    let labels: Vec<String> = LABELS.iter().map(|s| s.to_string()).collect();
    let frame = FrameResult::new("demo", "demo-grid", (416, 416), &kept, &labels).map_err(|e| e.to_string())?;
    let phrase = describe_scene(&frame);
    let braille = to_braille(&phrase).map_err(|e| e.to_string())?;
    let out = json!({
        "candidates": candidates.iter().map(det_json).collect::<Vec<_>>(),
        "kept": kept.iter().map(det_json).collect::<Vec<_>>(),
        "phrase": phrase,
        "braille": braille,
    });
    Ok(out.to_string())
}

#[wasm_bindgen(js_name = eluCurve)]
pub fn elu_curve(a: f64, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    elu_samples(a, lo, hi, n)
}

#[wasm_bindgen(js_name = detectScene)]
pub fn detect_scene_js(seed: u32, conf: f64, iou: f64) -> Result<String, JsError> {
    detect_scene(seed as u64, conf, iou).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = toBraille)]
pub fn to_braille_js(text: &str) -> Result<String, JsError> {
    to_braille(text).map_err(|e| JsError::new(&e.to_string()))
}
