//! Frame pipeline: decode → resize → tensorise → forward → decode grid → NMS → output.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::assist::{describe_scene, to_braille, to_json, FrameResult};
use crate::detect::{decode_grid, nms, BBox, Detection};
use crate::error::{Error, Result};
use crate::network::{argmax, HeadKind, Network};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::vision::{decode_ppm, resize_bilinear, to_input_tensor, ImageBuffer};

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.25;
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.45;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputMode {
    Json,
    Braille,
    Phrase,
}

impl std::str::FromStr for OutputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(OutputMode::Json),
            "braille" => Ok(OutputMode::Braille),
            "phrase" => Ok(OutputMode::Phrase),
            other => Err(Error::InvalidInput(format!("unknown output mode {other:?}"))),
        }
    }
}

/// Renders a frame result in each requested mode, one newline-terminated line per mode.
pub fn render(result: &FrameResult, modes: &[OutputMode]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for mode in modes {
        match mode {
            OutputMode::Json => out.extend(to_json(result)),
            OutputMode::Phrase => {
                out.extend(describe_scene(result).into_bytes());
                out.push(b'\n');
            }
            OutputMode::Braille => {
                out.extend(to_braille(&describe_scene(result))?.into_bytes());
                out.push(b'\n');
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub conf: f64,
    pub iou: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            conf: DEFAULT_CONF_THRESHOLD,
            iou: DEFAULT_IOU_THRESHOLD,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("confidence", self.conf), ("IoU", self.iou)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidHyperparameter(format!("{name} threshold {v} outside [0,1]")));
            }
        }
        Ok(())
    }
}

/// Wall-clock time spent in each stage of one frame.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    pub decode: Duration,
    pub resize: Duration,
    pub forward: Duration,
    pub postprocess: Duration,
    pub output: Duration,
}

pub struct Pipeline<T: Scalar> {
    net: Network<T>,
    thresholds: Thresholds,
}

impl<T: Scalar> Pipeline<T> {
    pub fn new(net: Network<T>, thresholds: Thresholds) -> Result<Self> {
        thresholds.validate()?;
        if net.config().input_hw().is_none() {
            return Err(Error::InvalidInput("pipeline networks take [C,H,W] images".into()));
        }
        Ok(Self { net, thresholds })
    }

    pub fn network(&self) -> &Network<T> {
        &self.net
    }

    pub fn thresholds(&self) -> Thresholds {
        self.thresholds
    }

    /// `(width, height)` frames are resized to.
    pub fn frame_size(&self) -> (usize, usize) {
        let (h, w) = self.net.config().input_hw().expect("checked in new");
        (w, h)
    }

    /// Resizes a decoded frame to the network resolution and tensorises it.
    pub fn prepare(&self, img: &ImageBuffer) -> Tensor<T> {
        let (w, h) = self.frame_size();
        to_input_tensor(&resize_bilinear(img, w, h))
    }

    /// Raw network output to detections. Classifiers report their top class
    /// as a whole-frame box when it clears the confidence threshold.
    pub fn postprocess(&self, output: &Tensor<T>) -> Result<Vec<Detection>> {
        match self.net.head() {
            HeadKind::Detector(spec) => {
                let dets = decode_grid(output, spec, self.thresholds.conf)?;
                Ok(nms(&dets, self.thresholds.iou))
            }
            HeadKind::Classifier { .. } => {
                let class_id = argmax(output.data());
                let confidence = output.data()[class_id].to_f64();
                Ok(if confidence >= self.thresholds.conf {
                    vec![Detection {
                        class_id,
                        confidence,
                        bbox: BBox { cx: 0.5, cy: 0.5, w: 1.0, h: 1.0 },
                    }]
                } else {
                    vec![]
                })
            }
            HeadKind::Features => Err(Error::InvalidInput(format!(
                "{} has neither a softmax nor a detection head",
                self.net.config().name
            ))),
        }
    }

    pub fn run_tensor(&self, frame_id: &str, input: &Tensor<T>) -> Result<FrameResult> {
        let output = self.net.infer(input)?;
        let dets = self.postprocess(&output)?;
        self.result(frame_id, &dets)
    }

    fn result(&self, frame_id: &str, dets: &[Detection]) -> Result<FrameResult> {
        let cfg = self.net.config();
        FrameResult::new(frame_id, cfg.name.clone(), self.frame_size(), dets, &cfg.class_labels)
    }

    pub fn run_image(&self, frame_id: &str, img: &ImageBuffer) -> Result<FrameResult> {
        self.run_tensor(frame_id, &self.prepare(img))
    }

    pub fn run_bytes(&self, frame_id: &str, bytes: &[u8]) -> Result<FrameResult> {
        self.run_image(frame_id, &decode_ppm(bytes)?)
    }

    /// Full pass over PPM bytes with each stage timed separately.
    pub fn run_timed(&self, frame_id: &str, bytes: &[u8], modes: &[OutputMode]) -> Result<(Vec<u8>, StageTimes)> {
        let mut times = StageTimes::default();
        let t = Instant::now();
        let img = decode_ppm(bytes)?;
        times.decode = t.elapsed();

        let t = Instant::now();
        let (w, h) = self.frame_size();
        let resized = resize_bilinear(&img, w, h);
        let input = to_input_tensor::<T>(&resized);
        times.resize = t.elapsed();

        let t = Instant::now();
        let output = self.net.infer(&input)?;
        times.forward = t.elapsed();

        let t = Instant::now();
        let dets = self.postprocess(&output)?;
        times.postprocess = t.elapsed();

        let t = Instant::now();
        let rendered = render(&self.result(frame_id, &dets)?, modes)?;
        times.output = t.elapsed();
        Ok((rendered, times))
    }
}
