//! Output for the user: canonical JSON, Grade-1 braille and a spoken phrase.

use std::collections::HashMap;
use std::sync::OnceLock;

use serde::Deserialize;

use crate::detect::{BBox, Detection};
use crate::error::{Error, Result};

/// A detection whose class id has been resolved to its label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDetection {
    pub label: String,
    pub confidence: f64,
    pub bbox: BBox,
}

/// Everything emitted for one processed frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameResult {
    pub frame_id: String,
    pub model: String,
    pub width: usize,
    pub height: usize,
    /// Ordered by confidence, highest first.
    pub detections: Vec<LabeledDetection>,
}

impl FrameResult {
    /// Resolves class ids through `labels` and orders by confidence (stable).
    pub fn new(
        frame_id: impl Into<String>,
        model: impl Into<String>,
        (width, height): (usize, usize),
        detections: &[Detection],
        labels: &[String],
    ) -> Result<Self> {
        let mut out = Vec::with_capacity(detections.len());
        for d in detections {
            let label = labels.get(d.class_id).ok_or(Error::InvalidLabel {
                label: d.class_id,
                classes: labels.len(),
            })?;
            out.push(LabeledDetection {
                label: label.clone(),
                confidence: d.confidence,
                bbox: d.bbox,
            });
        }
        out.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
        Ok(Self {
            frame_id: frame_id.into(),
            model: model.into(),
            width,
            height,
            detections: out,
        })
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization is infallible")
}

/// Canonical single-line JSON, newline-terminated.
///
/// Keys are in fixed order; confidence has 4 decimals, box fields 6.
pub fn to_json(r: &FrameResult) -> Vec<u8> {
    let dets: Vec<String> = r
        .detections
        .iter()
        .map(|d| {
            format!(
                "{{\"label\":{},\"confidence\":{:.4},\"box\":{{\"cx\":{:.6},\"cy\":{:.6},\"w\":{:.6},\"h\":{:.6}}}}}",
                json_str(&d.label),
                d.confidence,
                d.bbox.cx,
                d.bbox.cy,
                d.bbox.w,
                d.bbox.h
            )
        })
        .collect();
    format!(
        "{{\"frame_id\":{},\"model\":{},\"width\":{},\"height\":{},\"detections\":[{}]}}\n",
        json_str(&r.frame_id),
        json_str(&r.model),
        r.width,
        r.height,
        dets.join(",")
    )
    .into_bytes()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireFrame {
    frame_id: String,
    model: String,
    width: usize,
    height: usize,
    detections: Vec<WireDetection>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WireDetection {
    label: String,
    confidence: f64,
    #[serde(rename = "box")]
    bbox: BBox,
}

/// Parses one line produced by [`to_json`].
pub fn from_json(bytes: &[u8]) -> Result<FrameResult> {
    let w: WireFrame = serde_json::from_slice(bytes)?;
    Ok(FrameResult {
        frame_id: w.frame_id,
        model: w.model,
        width: w.width,
        height: w.height,
        detections: w
            .detections
            .into_iter()
            .map(|d| LabeledDetection {
                label: d.label,
                confidence: d.confidence,
                bbox: d.bbox,
            })
            .collect(),
    })
}

/// Dots 1-6 of a braille cell as a Unicode codepoint in the U+2800 block.
const fn cell(dots: &[u8]) -> char {
    let mut bits = 0u32;
    let mut i = 0;
    while i < dots.len() {
        bits |= 1 << (dots[i] - 1);
        i += 1;
    }
    match char::from_u32(0x2800 + bits) {
        Some(c) => c,
        None => panic!("braille codepoint out of range"),
    }
}

const LETTERS: [char; 26] = [
    cell(&[1]),
    cell(&[1, 2]),
    cell(&[1, 4]),
    cell(&[1, 4, 5]),
    cell(&[1, 5]),
    cell(&[1, 2, 4]),
    cell(&[1, 2, 4, 5]),
    cell(&[1, 2, 5]),
    cell(&[2, 4]),
    cell(&[2, 4, 5]),
    cell(&[1, 3]),
    cell(&[1, 2, 3]),
    cell(&[1, 3, 4]),
    cell(&[1, 3, 4, 5]),
    cell(&[1, 3, 5]),
    cell(&[1, 2, 3, 4]),
    cell(&[1, 2, 3, 4, 5]),
    cell(&[1, 2, 3, 5]),
    cell(&[2, 3, 4]),
    cell(&[2, 3, 4, 5]),
    cell(&[1, 3, 6]),
    cell(&[1, 2, 3, 6]),
    cell(&[2, 4, 5, 6]),
    cell(&[1, 3, 4, 6]),
    cell(&[1, 3, 4, 5, 6]),
    cell(&[1, 3, 5, 6]),
];

pub const CAPITAL_SIGN: char = cell(&[6]);
pub const NUMBER_SIGN: char = cell(&[3, 4, 5, 6]);
/// Returns a following a–j to letter meaning after a digit run.
pub const LETTER_SIGN: char = cell(&[5, 6]);
pub const BLANK: char = '\u{2800}';

const PUNCTUATION: [(char, char); 8] = [
    (',', cell(&[2])),
    (';', cell(&[2, 3])),
    (':', cell(&[2, 5])),
    ('.', cell(&[2, 5, 6])),
    ('!', cell(&[2, 3, 5])),
    ('?', cell(&[2, 3, 6])),
    ('\'', cell(&[3])),
    ('-', cell(&[3, 6])),
];

/// Uncontracted (Grade-1) braille.
///
/// Uppercase letters get the capital sign, digit runs start with the number
/// sign and reuse the a–j patterns, and a letter a–j directly after a digit
/// gets the letter sign so it cannot be read as another digit.
pub fn to_braille(text: &str) -> Result<String> {
    let mut out = String::with_capacity(text.len() * 3);
    let mut in_number = false;
    for (offset, ch) in text.chars().enumerate() {
        match ch {
            '0'..='9' => {
                if !in_number {
                    out.push(NUMBER_SIGN);
                    in_number = true;
                }
                // 1–9 → a–i, 0 → j
                let idx = if ch == '0' { 9 } else { ch as usize - '1' as usize };
                out.push(LETTERS[idx]);
            }
            'a'..='z' => {
                if in_number && ch <= 'j' {
                    out.push(LETTER_SIGN);
                }
                in_number = false;
                out.push(LETTERS[ch as usize - 'a' as usize]);
            }
            'A'..='Z' => {
                in_number = false;
                out.push(CAPITAL_SIGN);
                out.push(LETTERS[ch as usize - 'A' as usize]);
            }
            ' ' => {
                in_number = false;
                out.push(BLANK);
            }
            _ => {
                let (_, c) = PUNCTUATION
                    .iter()
                    .find(|(p, _)| *p == ch)
                    .ok_or(Error::UnmappableCharacter { ch, offset })?;
                in_number = false;
                out.push(*c);
            }
        }
    }
    Ok(out)
}

fn plurals() -> &'static HashMap<String, String> {
    static TABLE: OnceLock<HashMap<String, String>> = OnceLock::new();
    TABLE.get_or_init(|| {
        serde_json::from_str(include_str!("../data/plurals.json")).expect("shipped plural table is valid JSON")
    })
}

pub fn plural(label: &str) -> String {
    plurals()
        .get(label)
        .cloned()
        .unwrap_or_else(|| format!("{label}s"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Zone {
    Left,
    Ahead,
    Right,
}

impl Zone {
    pub fn of(cx: f64) -> Self {
        if cx < 1.0 / 3.0 {
            Zone::Left
        } else if cx > 2.0 / 3.0 {
            Zone::Right
        } else {
            Zone::Ahead
        }
    }

    fn phrase(self) -> &'static str {
        match self {
            Zone::Left => "on the left",
            Zone::Ahead => "ahead",
            Zone::Right => "on the right",
        }
    }
}

/// Short English description, e.g. `"2 cars on the left, a person on the right"`.
///
/// Detections are grouped by label and horizontal zone; groups are listed by
/// their best confidence, ties in order of first appearance.
pub fn describe_scene(r: &FrameResult) -> String {
    let mut groups: Vec<(&str, Zone, usize, f64)> = Vec::new();
    for d in &r.detections {
        let zone = Zone::of(d.bbox.cx);
        match groups.iter_mut().find(|g| g.0 == d.label && g.1 == zone) {
            Some(g) => {
                g.2 += 1;
                g.3 = g.3.max(d.confidence);
            }
            None => groups.push((&d.label, zone, 1, d.confidence)),
        }
    }
    if groups.is_empty() {
        return "nothing recognized".to_string();
    }
    groups.sort_by(|a, b| b.3.total_cmp(&a.3));
    groups
        .iter()
        .map(|&(label, zone, count, _)| {
            let noun = if count == 1 {
                let article = if label.starts_with(['a', 'e', 'i', 'o', 'u']) { "an" } else { "a" };
                format!("{article} {label}")
            } else {
                format!("{count} {}", plural(label))
            };
            format!("{noun} {}", zone.phrase())
        })
        .collect::<Vec<_>>()
        .join(", ")
}
