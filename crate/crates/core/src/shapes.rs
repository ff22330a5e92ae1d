//! Deterministic synthetic dataset: squares, disks and triangles on noise.

use std::fs;
use std::path::Path;

use crate::detect::BBox;
use crate::error::{Error, Result};
use crate::eval::{format_annotations, load_annotations, GroundTruth};
use crate::rng::SplitMix64;
use crate::vision::{decode_ppm, encode_ppm, ImageBuffer};

pub const FRAME_SIDE: usize = 64;
pub const LABELS: [&str; 3] = ["square", "disk", "triangle"];
pub const ANNOTATION_FILE: &str = "annotations.txt";

const MIN_SIDE: u64 = 14;
const MAX_SIDE: u64 = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Square,
    Disk,
    Triangle,
}

impl Shape {
    pub fn class_id(self) -> usize {
        self as usize
    }

    fn from_index(i: u64) -> Self {
        match i {
            0 => Shape::Square,
            1 => Shape::Disk,
            _ => Shape::Triangle,
        }
    }

    /// Whether the pixel at `(x, y)` lies inside the shape drawn in the
    /// `side`-pixel square at `(x0, y0)`.
    pub fn covers(self, x0: usize, y0: usize, side: usize, x: usize, y: usize) -> bool {
        if x < x0 || y < y0 || x >= x0 + side || y >= y0 + side {
            return false;
        }
        let s = side as f64;
        let (px, py) = (x as f64 + 0.5 - x0 as f64, y as f64 + 0.5 - y0 as f64);
        match self {
            Shape::Square => true,
            Shape::Disk => {
                let r = s / 2.0;
                (px - r).powi(2) + (py - r).powi(2) <= r * r
            }
            // apex at the top centre, base along the bottom edge
            Shape::Triangle => (px - s / 2.0).abs() <= py / 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacedShape {
    pub shape: Shape,
    pub x0: usize,
    pub y0: usize,
    pub side: usize,
    pub color: [u8; 3],
}

impl PlacedShape {
    pub fn bbox(&self) -> BBox {
        let f = FRAME_SIDE as f64;
        let s = self.side as f64;
        BBox {
            cx: (self.x0 as f64 + s / 2.0) / f,
            cy: (self.y0 as f64 + s / 2.0) / f,
            w: s / f,
            h: s / f,
        }
    }

    fn overlaps(&self, other: &PlacedShape) -> bool {
        // one pixel of clearance between shapes
        self.x0 <= other.x0 + other.side
            && other.x0 <= self.x0 + self.side
            && self.y0 <= other.y0 + other.side
            && other.y0 <= self.y0 + self.side
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticFrame {
    pub frame_id: String,
    pub image: ImageBuffer,
    pub shapes: Vec<PlacedShape>,
}

impl SyntheticFrame {
    pub fn truths(&self) -> Vec<GroundTruth> {
        self.shapes
            .iter()
            .map(|s| GroundTruth {
                frame_id: self.frame_id.clone(),
                class_id: s.shape.class_id(),
                bbox: s.bbox(),
            })
            .collect()
    }
}

pub fn frame_id(index: usize) -> String {
    format!("frame_{index:04}")
}

fn render(rng: &mut SplitMix64, max_objects: usize) -> (ImageBuffer, Vec<PlacedShape>) {
    let mut img = ImageBuffer::filled(FRAME_SIDE, FRAME_SIDE, [0, 0, 0]);
    for v in img.pixels_mut() {
        *v = rng.range_inclusive(0, 63) as u8;
    }
    let wanted = rng.range_inclusive(1, max_objects.max(1) as u64) as usize;
    let mut shapes: Vec<PlacedShape> = Vec::with_capacity(wanted);
    for _ in 0..wanted {
        for _attempt in 0..100 {
            let side = rng.range_inclusive(MIN_SIDE, MAX_SIDE) as usize;
            let limit = (FRAME_SIDE - side) as u64;
            let mut color = [0u8; 3];
            for c in &mut color {
                *c = rng.range_inclusive(100, 255) as u8;
            }
            color[rng.range_inclusive(0, 2) as usize] = 255;
            let candidate = PlacedShape {
                shape: Shape::from_index(rng.range_inclusive(0, 2)),
                x0: rng.range_inclusive(0, limit) as usize,
                y0: rng.range_inclusive(0, limit) as usize,
                side,
                color,
            };
            if shapes.iter().all(|s| !s.overlaps(&candidate)) {
                shapes.push(candidate);
                break;
            }
        }
    }
    for s in &shapes {
        for y in s.y0..s.y0 + s.side {
            for x in s.x0..s.x0 + s.side {
                if s.shape.covers(s.x0, s.y0, s.side, x, y) {
                    img.put(x, y, s.color);
                }
            }
        }
    }
    (img, shapes)
}

/// `count` frames, each with 1..=`max_objects` non-overlapping shapes.
pub fn generate(count: usize, seed: u64, max_objects: usize) -> Vec<SyntheticFrame> {
    let mut rng = SplitMix64::new(seed);
    (0..count)
        .map(|i| {
            let (image, shapes) = render(&mut rng, max_objects);
            SyntheticFrame {
                frame_id: frame_id(i),
                image,
                shapes,
            }
        })
        .collect()
}

/// Writes `frame_NNNN.ppm` files plus the annotation file into `dir`.
pub fn write_dataset(dir: &Path, count: usize, seed: u64, max_objects: usize) -> Result<Vec<SyntheticFrame>> {
    if count == 0 {
        return Err(Error::InvalidInput("dataset needs at least one frame".into()));
    }
    if max_objects == 0 {
        return Err(Error::InvalidInput("frames need at least one object".into()));
    }
    fs::create_dir_all(dir)?;
    let frames = generate(count, seed, max_objects);
    let mut truths = Vec::new();
    for f in &frames {
        fs::write(dir.join(format!("{}.ppm", f.frame_id)), encode_ppm(&f.image))?;
        truths.extend(f.truths());
    }
    fs::write(dir.join(ANNOTATION_FILE), format_annotations(&truths))?;
    Ok(frames)
}

/// A dataset read back from disk.
#[derive(Debug, Clone)]
pub struct Dataset {
    /// Frames sorted by id.
    pub frames: Vec<(String, ImageBuffer)>,
    pub truths: Vec<GroundTruth>,
}

impl Dataset {
    pub fn truths_for(&self, frame_id: &str) -> impl Iterator<Item = &GroundTruth> {
        let id = frame_id.to_string();
        self.truths.iter().filter(move |t| t.frame_id == id)
    }

    /// Class of the largest annotated object in a frame, the frame's classification label.
    pub fn dominant_class(&self, frame_id: &str) -> Option<usize> {
        self.truths_for(frame_id)
            .fold(None::<&GroundTruth>, |best, t| match best {
                Some(b) if b.bbox.area() >= t.bbox.area() => Some(b),
                _ => Some(t),
            })
            .map(|t| t.class_id)
    }
}

/// Loads every `.ppm` in `dir` and the annotation file, checking that they agree.
pub fn load_dataset(dir: &Path, classes: usize) -> Result<Dataset> {
    let ann_path = dir.join(ANNOTATION_FILE);
    if !ann_path.is_file() {
        return Err(Error::InvalidInput(format!("missing annotations at {}", ann_path.display())));
    }
    let truths = load_annotations(&fs::read_to_string(&ann_path)?)?;
    let mut frames = Vec::new();
    let mut entries: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ppm"))
        .collect();
    entries.sort();
    for path in entries {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::InvalidInput(format!("bad frame name {}", path.display())))?
            .to_string();
        frames.push((id, decode_ppm(&fs::read(&path)?)?));
    }
    if frames.is_empty() {
        return Err(Error::InvalidInput(format!("no .ppm frames in {}", dir.display())));
    }
    for t in &truths {
        if t.class_id >= classes {
            return Err(Error::InvalidAnnotation(format!(
                "frame {} has class {} but the model knows {classes}",
                t.frame_id, t.class_id
            )));
        }
        if !frames.iter().any(|(id, _)| *id == t.frame_id) {
            return Err(Error::InvalidAnnotation(format!("annotation for missing frame {}", t.frame_id)));
        }
    }
    for (id, _) in &frames {
        if !truths.iter().any(|t| t.frame_id == *id) {
            return Err(Error::InvalidAnnotation(format!("frame {id} has no annotation")));
        }
    }
    Ok(Dataset { frames, truths })
}
