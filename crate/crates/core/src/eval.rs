//! Top-1 accuracy, per-class average precision and mAP.
//!
//! Matching is greedy in confidence order: each detection claims the
//! highest-IoU still-unmatched truth of its frame and class, and counts as a
//! true positive when that IoU reaches the threshold. AP is the area under
//! the precision/recall curve with all-point interpolation (precision made
//! monotone non-increasing from the right). Classes without ground truth are
//! left out of the mean.

use std::collections::{BTreeMap, BTreeSet};

use crate::detect::{iou, BBox, Detection};
use crate::error::{Error, Result};

pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub frame_id: String,
    pub class_id: usize,
    pub bbox: BBox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDetection {
    pub frame_id: String,
    pub detection: Detection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_class_ap: BTreeMap<usize, f64>,
    /// Mean of `per_class_ap`; `None` for classification-only reports.
    pub map_score: Option<f64>,
    pub top1: Option<f64>,
    pub frames: usize,
    pub truths: usize,
    pub detections: usize,
}

impl EvalReport {
    /// Compact JSON with fixed key order and 6-decimal scores.
    pub fn to_json(&self, labels: &[String]) -> String {
        let label = |c: usize| {
            let name = labels.get(c).cloned().unwrap_or_else(|| c.to_string());
            serde_json::to_string(&name).expect("string serialization is infallible")
        };
        let per_class: Vec<String> = self
            .per_class_ap
            .iter()
            .map(|(&c, ap)| format!("{{\"class\":{},\"ap\":{ap:.6}}}", label(c)))
            .collect();
        let opt = |v: Option<f64>| v.map_or_else(|| "null".to_string(), |v| format!("{v:.6}"));
        format!(
            "{{\"frames\":{},\"truths\":{},\"detections\":{},\"map\":{},\"top1\":{},\"per_class_ap\":[{}]}}",
            self.frames,
            self.truths,
            self.detections,
            opt(self.map_score),
            opt(self.top1),
            per_class.join(",")
        )
    }
}

pub fn top1_accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() || labels.is_empty() {
        return Err(Error::InvalidInput(format!(
            "top-1 needs equal non-empty lists, got {} predictions and {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let hits = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

fn check_iou_thr(iou_thr: f64) -> Result<()> {
    if !(iou_thr > 0.0 && iou_thr <= 1.0) {
        return Err(Error::InvalidHyperparameter(format!("IoU threshold {iou_thr} outside (0,1]")));
    }
    Ok(())
}

/// AP of one class. Returns `None` when the class has no ground truth.
///
/// Callers pass only detections and truths of the class being scored.
pub fn average_precision(dets: &[FrameDetection], truths: &[GroundTruth], iou_thr: f64) -> Result<Option<f64>> {
    check_iou_thr(iou_thr)?;
    if truths.is_empty() {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].detection.confidence.total_cmp(&dets[a].detection.confidence));

    let mut matched = vec![false; truths.len()];
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(dets.len());
    for (rank, &d) in order.iter().enumerate() {
        let det = &dets[d];
        let mut best: Option<(usize, f64)> = None;
        for (t, truth) in truths.iter().enumerate() {
            if matched[t] || truth.frame_id != det.frame_id {
                continue;
            }
            let v = iou(&det.detection.bbox, &truth.bbox);
            if best.map_or(true, |(_, bv)| v > bv) {
                best = Some((t, v));
            }
        }
        if let Some((t, v)) = best {
            if v >= iou_thr {
                matched[t] = true;
                tp += 1;
            }
        }
        let precision = tp as f64 / (rank + 1) as f64;
        let recall = tp as f64 / truths.len() as f64;
        curve.push((recall, precision));
    }

    let mut envelope = 0.0f64;
    for point in curve.iter_mut().rev() {
        envelope = envelope.max(point.1);
        point.1 = envelope;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (recall, precision) in curve {
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(Some(ap))
}

/// Per-class AP and their unweighted mean over classes with ground truth.
pub fn mean_ap(all_dets: &[FrameDetection], all_truths: &[GroundTruth], iou_thr: f64) -> Result<EvalReport> {
    check_iou_thr(iou_thr)?;
    let classes: BTreeSet<usize> = all_truths.iter().map(|t| t.class_id).collect();
    if classes.is_empty() {
        return Err(Error::InvalidInput("no class has ground truth".into()));
    }
    let mut per_class_ap = BTreeMap::new();
    for &c in &classes {
        let dets: Vec<FrameDetection> = all_dets
            .iter()
            .filter(|d| d.detection.class_id == c)
            .cloned()
            .collect();
        let truths: Vec<GroundTruth> = all_truths.iter().filter(|t| t.class_id == c).cloned().collect();
        if let Some(ap) = average_precision(&dets, &truths, iou_thr)? {
            per_class_ap.insert(c, ap);
        }
    }
    let map_score = Some(per_class_ap.values().sum::<f64>() / per_class_ap.len() as f64);
    let frames: BTreeSet<&str> = all_truths
        .iter()
        .map(|t| t.frame_id.as_str())
        .chain(all_dets.iter().map(|d| d.frame_id.as_str()))
        .collect();
    Ok(EvalReport {
        per_class_ap,
        map_score,
        top1: None,
        frames: frames.len(),
        truths: all_truths.len(),
        detections: all_dets.len(),
    })
}

/// Parses `<frame_id> <class_id> <cx> <cy> <w> <h>` lines; `#` starts a comment line.
pub fn load_annotations(text: &str) -> Result<Vec<GroundTruth>> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        let parse_err = |reason: String| Error::Parse { line: line_no, reason };
        if fields.len() != 6 {
            return Err(parse_err(format!("expected 6 fields, found {}", fields.len())));
        }
        let class_id = fields[1]
            .parse::<usize>()
            .map_err(|e| parse_err(format!("class id {:?}: {e}", fields[1])))?;
        let mut coords = [0.0f64; 4];
        for (slot, field) in coords.iter_mut().zip(&fields[2..]) {
            *slot = field
                .parse::<f64>()
                .map_err(|e| parse_err(format!("coordinate {field:?}: {e}")))?;
        }
        let bbox = BBox {
            cx: coords[0],
            cy: coords[1],
            w: coords[2],
            h: coords[3],
        };
        if !bbox.is_normalized() {
            return Err(Error::InvalidAnnotation(format!(
                "line {line_no}: coordinates {coords:?} outside [0,1]"
            )));
        }
        out.push(GroundTruth {
            frame_id: fields[0].to_string(),
            class_id,
            bbox,
        });
    }
    Ok(out)
}

pub fn format_annotations(truths: &[GroundTruth]) -> String {
    let mut out = String::from("# frame_id class_id cx cy w h\n");
    for t in truths {
        out.push_str(&format!(
            "{} {} {:.6} {:.6} {:.6} {:.6}\n",
            t.frame_id, t.class_id, t.bbox.cx, t.bbox.cy, t.bbox.w, t.bbox.h
        ));
    }
    out
}
