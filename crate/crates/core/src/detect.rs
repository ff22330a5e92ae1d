//! Grid head decoding, IoU and per-class non-maximum suppression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{sigmoid, softmax};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Center-format box; every field is a fraction of the frame width or height.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn is_normalized(&self) -> bool {
        [self.cx, self.cy, self.w, self.h]
            .iter()
            .all(|v| (0.0..=1.0).contains(v))
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    /// `(x0, y0, x1, y1)`
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }
}

/// Intersection over union; 0 when the union is empty.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ax0, ay0, ax1, ay1) = a.corners();
    let (bx0, by0, bx1, by1) = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Geometry of a grid detection head: `S×S` cells, `B` boxes and `C` classes per cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub s: usize,
    pub boxes: usize,
    pub classes: usize,
}

impl GridSpec {
    /// Values per cell: `B·5 + C`.
    pub fn depth(&self) -> usize {
        self.boxes * 5 + self.classes
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.s, self.s, self.depth()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class_id: usize,
    pub confidence: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

/// Decodes a raw `[S,S,B·5+C]` head output.
///
/// Per box `(tx,ty,tw,th,tc)` in cell `(i,j)`: `cx=(j+σ(tx))/S`,
/// `cy=(i+σ(ty))/S`, `w=σ(tw)`, `h=σ(th)`. Confidence is
/// `σ(tc) · max softmax(class slots)`. Results come out in cell-major,
/// then box order.
pub fn decode_grid<T: Scalar>(raw: &Tensor<T>, spec: GridSpec, conf_threshold: f64) -> Result<Vec<Detection>> {
    if raw.shape() != spec.shape() {
        return Err(Error::ShapeMismatch(format!(
            "detection grid {:?} does not match {:?}",
            raw.shape(),
            spec.shape()
        )));
    }
    if !(0.0..=1.0).contains(&conf_threshold) {
        return Err(Error::InvalidHyperparameter(format!(
            "confidence threshold {conf_threshold} outside [0,1]"
        )));
    }
    let depth = spec.depth();
    let s = spec.s as f64;
    let sig = |v: T| sigmoid(v.to_f64());
    let mut out = Vec::new();
    for (cell_idx, cell) in raw.data().chunks(depth).enumerate() {
        let (i, j) = ((cell_idx / spec.s) as f64, (cell_idx % spec.s) as f64);
        let class_logits: Vec<f64> = cell[spec.boxes * 5..].iter().map(|v| v.to_f64()).collect();
        let probs = softmax(&class_logits);
        let (class_id, best) = probs
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, p)| if p > acc.1 { (k, p) } else { acc });
        for b in cell[..spec.boxes * 5].chunks(5) {
            let confidence = sig(b[4]) * best;
            if confidence < conf_threshold {
                continue;
            }
            out.push(Detection {
                class_id,
                confidence,
                bbox: BBox {
                    cx: (j + sig(b[0])) / s,
                    cy: (i + sig(b[1])) / s,
                    w: sig(b[2]),
                    h: sig(b[3]),
                },
            });
        }
    }
    Ok(out)
}

/// Greedy per-class suppression.
///
/// Candidates are visited by confidence descending (ties: lower class id,
/// then input order). A candidate is kept iff its IoU with every kept
/// detection of the same class is below `iou_threshold`.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .total_cmp(&dets[a].confidence)
            .then(dets[a].class_id.cmp(&dets[b].class_id))
            .then(a.cmp(&b))
    });
    let mut kept: Vec<Detection> = Vec::new();
    for idx in order {
        let d = dets[idx];
        let clear = kept
            .iter()
            .filter(|k| k.class_id == d.class_id)
            .all(|k| iou(&k.bbox, &d.bbox) < iou_threshold);
        if clear {
            kept.push(d);
        }
    }
    kept
}
