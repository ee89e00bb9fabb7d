//! Per-image character bounding-box annotations, stored as one JSON sidecar
//! per photograph.

use super::{CharacterSample, CorpusError, LabelSet};
use crate::imaging::{self, RasterImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const ANNOTATION_VERSION: u32 = 1;

/// Sidecar suffix appended to the image file name.
pub const ANNOTATION_SUFFIX: &str = ".ann.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CharBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub label: String,
}

impl CharBox {
    pub fn center_y(&self) -> f64 {
        f64::from(self.y) + f64::from(self.h) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignAnnotation {
    pub image_path: String,
    pub image_sha256: String,
    pub boxes: Vec<CharBox>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnnotation {
    version: u32,
    image_path: String,
    image_sha256: String,
    boxes: Vec<RawBox>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBox {
    x: i64,
    y: i64,
    w: i64,
    h: i64,
    label: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn is_digest(s: &str) -> bool {
    s.len() == 64 && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

pub fn parse_annotation(text: &str, labels: &LabelSet) -> Result<SignAnnotation, CorpusError> {
    let raw: RawAnnotation =
        serde_json::from_str(text).map_err(|e| CorpusError::Parse(e.to_string()))?;
    if raw.version != ANNOTATION_VERSION {
        return Err(CorpusError::Parse(format!(
            "unsupported annotation version {}",
            raw.version
        )));
    }
    if !is_digest(&raw.image_sha256) {
        return Err(CorpusError::Parse(
            "image_sha256 must be 64 lowercase hex digits".into(),
        ));
    }
    let boxes = raw
        .boxes
        .into_iter()
        .enumerate()
        .map(|(index, b)| {
            if labels.index_of(&b.label).is_none() {
                return Err(CorpusError::UnknownLabel(b.label));
            }
            if b.w < 1 || b.h < 1 {
                return Err(CorpusError::BadGeometry {
                    index,
                    reason: format!("w={} h={} (both must be >= 1)", b.w, b.h),
                });
            }
            let max = i64::from(u32::MAX);
            if b.x < 0 || b.y < 0 || b.x > max || b.y > max || b.w > max || b.h > max {
                return Err(CorpusError::BadGeometry {
                    index,
                    reason: format!("x={} y={} out of range", b.x, b.y),
                });
            }
            Ok(CharBox {
                x: b.x as u32,
                y: b.y as u32,
                w: b.w as u32,
                h: b.h as u32,
                label: b.label,
            })
        })
        .collect::<Result<_, _>>()?;
    Ok(SignAnnotation {
        image_path: raw.image_path,
        image_sha256: raw.image_sha256,
        boxes,
    })
}

impl SignAnnotation {
    /// Canonical serialized form: pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let raw = RawAnnotation {
            version: ANNOTATION_VERSION,
            image_path: self.image_path.clone(),
            image_sha256: self.image_sha256.clone(),
            boxes: self
                .boxes
                .iter()
                .map(|b| RawBox {
                    x: b.x.into(),
                    y: b.y.into(),
                    w: b.w.into(),
                    h: b.h.into(),
                    label: b.label.clone(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&raw).expect("annotation serializes");
        s.push('\n');
        s
    }

    /// Whether `image_bytes` still hashes to the recorded digest.
    pub fn matches_image(&self, image_bytes: &[u8]) -> bool {
        sha256_hex(image_bytes) == self.image_sha256
    }
}

/// Crop every annotated box out of the photograph and preprocess it, in box
/// order.
pub fn extract_characters(
    img: &RasterImage,
    ann: &SignAnnotation,
    labels: &LabelSet,
) -> Result<Vec<CharacterSample>, CorpusError> {
    if ann.boxes.is_empty() {
        return Ok(Vec::new());
    }
    let gray = imaging::to_grayscale(img);
    ann.boxes
        .iter()
        .enumerate()
        .map(|(index, b)| {
            let class_index = labels
                .index_of(&b.label)
                .ok_or_else(|| CorpusError::UnknownLabel(b.label.clone()))?;
            let crop = imaging::crop(
                &gray,
                b.x.into(),
                b.y.into(),
                b.w.into(),
                b.h.into(),
            )
            .map_err(|source| CorpusError::BoxOutOfBounds { index, source })?;
            let tensor = imaging::preprocess_gray(&crop)
                .map_err(|source| CorpusError::BoxOutOfBounds { index, source })?;
            Ok(CharacterSample {
                tensor,
                class_index,
                source: format!("{}#{index}", ann.image_path),
            })
        })
        .collect()
}
