//! Detection sidecar files: the JSON interchange between an external
//! detector/segmenter and the tracking and rendering stages.
//!
//! ```json
//! { "scenario_id": "s001", "image_size": [w, h],
//!   "frames": [ { "index": 0, "detections": [
//!       { "class": "car", "confidence": 0.91, "bbox": [x1, y1, x2, y2],
//!         "contour": [[x, y], ...] } ] } ] }
//! ```
//!
//! `contour` may be `null`. An optional `embedding` array carries an
//! appearance vector; it is omitted from output when absent.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point = [f64; 2];

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed JSON at line {line}, column {column}: {message}")]
    Json {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {} invalid record(s); first: {}", .issues.len(), .issues[0])]
    Invalid { path: PathBuf, issues: Vec<Issue> },
    #[error("invalid bounding box {0:?}: need finite x1 < x2, y1 < y2")]
    BadBox([f64; 4]),
    #[error("class allowlist is empty")]
    EmptyAllowlist,
}

/// Axis-aligned box in pixel coordinates, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, DetectionError> {
        let arr = [x1, y1, x2, y2];
        if arr.iter().all(|v| v.is_finite()) && x1 < x2 && y1 < y2 {
            Ok(Self { x1, y1, x2, y2 })
        } else {
            Err(DetectionError::BadBox(arr))
        }
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self {
            x1: self.x1 + dx,
            y1: self.y1 + dy,
            x2: self.x2 + dx,
            y2: self.y2 + dy,
        }
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = DetectionError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub frame_index: u32,
    pub class_label: String,
    pub confidence: f64,
    pub bbox: BoundingBox,
    /// Closed polygon outline, at least three vertices.
    pub contour: Option<Vec<Point>>,
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassAllowlist {
    labels: BTreeSet<String>,
}

pub const DEFAULT_CLASSES: [&str; 7] = ["person", "bicycle", "car", "motorcycle", "bus", "train", "truck"];

impl Default for ClassAllowlist {
    fn default() -> Self {
        Self {
            labels: DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl ClassAllowlist {
    pub fn new<I, S>(labels: I) -> Result<Self, DetectionError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: BTreeSet<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(DetectionError::EmptyAllowlist);
        }
        Ok(Self { labels })
    }

    pub fn contains(&self, label: &str) -> bool {
        self.labels.contains(label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(String::as_str)
    }
}

/// Keeps detections whose class is allowed, in input order.
pub fn filter_classes(dets: &[Detection], allow: &ClassAllowlist) -> Vec<Detection> {
    dets.iter()
        .filter(|d| allow.contains(&d.class_label))
        .cloned()
        .collect()
}

// Wire types. Boxes stay raw arrays here so that invalid records survive
// deserialization and can be reported field by field.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub scenario_id: String,
    pub image_size: [u32; 2],
    pub frames: Vec<SidecarFrame>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarFrame {
    pub index: u32,
    pub detections: Vec<SidecarDetection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarDetection {
    #[serde(rename = "class")]
    pub class_label: String,
    pub confidence: f64,
    pub bbox: [f64; 4],
    pub contour: Option<Vec<Point>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub frame_index: Option<u32>,
    pub detection: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.frame_index, self.detection) {
            (Some(fi), Some(di)) => write!(f, "frame {fi} detection {di}: {}: {}", self.field, self.message),
            (Some(fi), None) => write!(f, "frame {fi}: {}: {}", self.field, self.message),
            _ => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub issues: Vec<Issue>,
}

impl Sidecar {
    pub fn from_detections(scenario_id: impl Into<String>, image_size: [u32; 2], dets: &[Detection]) -> Self {
        let mut frames: Vec<SidecarFrame> = Vec::new();
        let mut sorted: Vec<&Detection> = dets.iter().collect();
        sorted.sort_by_key(|d| d.frame_index);
        for d in sorted {
            if frames.last().map(|f| f.index) != Some(d.frame_index) {
                frames.push(SidecarFrame {
                    index: d.frame_index,
                    detections: Vec::new(),
                });
            }
            frames.last_mut().unwrap().detections.push(SidecarDetection {
                class_label: d.class_label.clone(),
                confidence: d.confidence,
                bbox: d.bbox.into(),
                contour: d.contour.clone(),
                embedding: d.embedding.clone(),
            });
        }
        Self {
            scenario_id: scenario_id.into(),
            image_size,
            frames,
        }
    }

    /// Every issue in the document; empty means valid.
    pub fn validate(&self) -> Vec<Issue> {
        let mut issues = Vec::new();
        let [w, h] = self.image_size;
        if w == 0 || h == 0 {
            issues.push(Issue {
                frame_index: None,
                detection: None,
                field: "image_size".into(),
                message: format!("image size {w}x{h} has a zero dimension"),
            });
        }
        let mut seen = HashSet::new();
        for frame in &self.frames {
            if !seen.insert(frame.index) {
                issues.push(Issue {
                    frame_index: Some(frame.index),
                    detection: None,
                    field: "index".into(),
                    message: "duplicate frame index".into(),
                });
            }
            for (di, d) in frame.detections.iter().enumerate() {
                let mut push = |field: &str, message: String| {
                    issues.push(Issue {
                        frame_index: Some(frame.index),
                        detection: Some(di),
                        field: field.into(),
                        message,
                    })
                };
                if d.class_label.trim().is_empty() {
                    push("class", "empty class label".into());
                }
                if !(0.0..=1.0).contains(&d.confidence) {
                    push("confidence", format!("confidence {} outside [0, 1]", d.confidence));
                }
                if BoundingBox::try_from(d.bbox).is_err() {
                    push("bbox", format!("degenerate or non-finite box {:?}", d.bbox));
                }
                if let Some(contour) = &d.contour {
                    if contour.len() < 3 {
                        push("contour", "contour too short".into());
                    }
                    if let Some(p) = contour.iter().find(|p| {
                        !(p[0].is_finite()
                            && p[1].is_finite()
                            && (0.0..=w as f64).contains(&p[0])
                            && (0.0..=h as f64).contains(&p[1]))
                    }) {
                        push("contour", format!("vertex {p:?} outside image {w}x{h}"));
                    }
                }
                if let Some(e) = &d.embedding {
                    if e.is_empty() || e.iter().any(|v| !v.is_finite()) {
                        push("embedding", "embedding must be a non-empty finite vector".into());
                    }
                }
            }
        }
        issues
    }

    /// Flattened detections ordered by frame index, then input order.
    /// Records with invalid boxes are skipped; call on validated sidecars.
    pub fn detections(&self) -> Vec<Detection> {
        let mut frames: Vec<&SidecarFrame> = self.frames.iter().collect();
        frames.sort_by_key(|f| f.index);
        frames
            .into_iter()
            .flat_map(|f| f.detections.iter().map(move |d| (f.index, d)))
            .filter_map(|(frame_index, d)| {
                Some(Detection {
                    frame_index,
                    class_label: d.class_label.clone(),
                    confidence: d.confidence,
                    bbox: BoundingBox::try_from(d.bbox).ok()?,
                    contour: d.contour.clone(),
                    embedding: d.embedding.clone(),
                })
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sidecar serialization is infallible")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), DetectionError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|source| DetectionError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

fn read_sidecar(path: &Path) -> Result<Sidecar, DetectionError> {
    let raw = std::fs::read_to_string(path).map_err(|source| DetectionError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&raw).map_err(|e| DetectionError::Json {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

/// Reads and validates a sidecar. Frames come back sorted by index with
/// detection order inside each frame untouched.
pub fn parse_sidecar(path: impl AsRef<Path>) -> Result<Sidecar, DetectionError> {
    let path = path.as_ref();
    let mut sidecar = read_sidecar(path)?;
    let issues = sidecar.validate();
    if !issues.is_empty() {
        return Err(DetectionError::Invalid {
            path: path.to_path_buf(),
            issues,
        });
    }
    sidecar.frames.sort_by_key(|f| f.index);
    Ok(sidecar)
}

pub fn validate_sidecar(path: impl AsRef<Path>) -> ValidationReport {
    let issues = match read_sidecar(path.as_ref()) {
        Ok(s) => s.validate(),
        Err(e) => vec![Issue {
            frame_index: None,
            detection: None,
            field: "document".into(),
            message: e.to_string(),
        }],
    };
    ValidationReport {
        ok: issues.is_empty(),
        issues,
    }
}
