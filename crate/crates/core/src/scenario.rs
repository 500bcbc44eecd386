//! Scenario directories: discovery, validation, balanced selection and
//! frame windowing.
//!
//! On-disk layout, one directory per scenario:
//!
//! ```text
//! <root>/<scenario_id>/frames/000000.png
//! <root>/<scenario_id>/frames/000001.png
//! <root>/<scenario_id>/annotation.json
//! ```
//!
//! Anything else inside a scenario directory (other sensor modalities, vehicle
//! cameras) is ignored.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ANNOTATION_FILE: &str = "annotation.json";
pub const FRAMES_DIR: &str = "frames";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Largest number of frames sent in one request.
pub const MAX_WINDOW: usize = 3;

/// Frame-count range of dataset-conformant recordings. Outside it we warn.
pub const EXPECTED_FRAME_RANGE: std::ops::RangeInclusive<usize> = 45..=120;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("dataset root {0} does not exist")]
    RootMissing(PathBuf),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("scenario {id}: {reason}")]
    Invalid { id: String, reason: String },
    #[error("unreadable image {path}: {reason}")]
    UnreadableImage { path: PathBuf, reason: String },
    #[error("window size must be between 1 and {MAX_WINDOW}, got {0}")]
    InvalidWindowSize(usize),
    #[error("balanced selection needs an even count, got {0}")]
    OddSelection(usize),
    #[error("insufficient {class} scenarios: need {needed}, have {available}")]
    InsufficientPool {
        class: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("manifest serialization failed: {0}")]
    Manifest(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ScenarioError + '_ {
    move |source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioMeta {
    pub id: String,
    pub accident_type: String,
    pub has_accident: bool,
    pub frame_count: usize,
}

/// A problem found while indexing; `scenario_id` names the directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioIssue {
    pub scenario_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioIndex {
    pub root: PathBuf,
    /// Sorted by id, ids unique.
    pub entries: Vec<ScenarioMeta>,
    /// Directories that could not be parsed.
    #[serde(default)]
    pub failures: Vec<ScenarioIssue>,
    /// Parsed but unusual, e.g. frame count outside the dataset range.
    #[serde(default)]
    pub warnings: Vec<ScenarioIssue>,
}

impl ScenarioIndex {
    pub fn get(&self, id: &str) -> Option<&ScenarioMeta> {
        self.entries
            .binary_search_by(|e| e.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.entries[i])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Writes the advisory `manifest.json` cache into the dataset root.
    pub fn write_manifest(&self) -> Result<PathBuf, ScenarioError> {
        let path = self.root.join(MANIFEST_FILE);
        let body = serde_json::to_string_pretty(self)?;
        fs::write(&path, body).map_err(io_err(&path))?;
        Ok(path)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub index: u32,
    pub accident: bool,
    #[serde(default)]
    pub scene_context: String,
    #[serde(default)]
    pub object_info: String,
    #[serde(default)]
    pub justification: String,
}

impl FrameAnnotation {
    pub fn frame_index(&self) -> u32 {
        self.index
    }
}

/// Serialized form of `annotation.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationFile {
    pub accident_type: String,
    pub has_accident: bool,
    pub frames: Vec<FrameAnnotation>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub index: u32,
    pub image_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub accident_type: String,
    pub has_accident: bool,
    /// Indices contiguous from 0.
    pub frames: Vec<FrameRecord>,
    /// Sorted by frame index; frames without an entry are non-accident.
    pub annotations: Vec<FrameAnnotation>,
}

impl Scenario {
    pub fn annotation(&self, frame_index: u32) -> Option<&FrameAnnotation> {
        self.annotations
            .binary_search_by_key(&frame_index, |a| a.index)
            .ok()
            .map(|i| &self.annotations[i])
    }

    pub fn frame_accident(&self, frame_index: u32) -> bool {
        self.annotation(frame_index).is_some_and(|a| a.accident)
    }

    pub fn frame(&self, frame_index: u32) -> Option<&FrameRecord> {
        self.frames.get(frame_index as usize)
    }

    /// Annotation content as it would be written back to disk.
    pub fn to_annotation_file(&self) -> AnnotationFile {
        AnnotationFile {
            accident_type: self.accident_type.clone(),
            has_accident: self.has_accident,
            frames: self.annotations.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameWindow {
    pub scenario_id: String,
    pub frame_indices: Vec<u32>,
    /// True iff any member frame is annotated as an accident.
    pub label: bool,
}

impl FrameWindow {
    pub fn last_frame(&self) -> u32 {
        *self
            .frame_indices
            .last()
            .expect("windows hold at least one frame")
    }

    pub fn len(&self) -> usize {
        self.frame_indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_indices.is_empty()
    }
}

/// Directory contents parsed without touching image data.
struct ParsedDir {
    meta: ScenarioMeta,
    frames: Vec<FrameRecord>,
    annotations: Vec<FrameAnnotation>,
}

fn invalid(id: &str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        id: id.to_string(),
        reason: reason.into(),
    }
}

fn frame_index_from_name(name: &str) -> Option<u32> {
    let (stem, ext) = name.rsplit_once('.')?;
    let ext = ext.to_ascii_lowercase();
    if !matches!(ext.as_str(), "png" | "jpg" | "jpeg") {
        return None;
    }
    if stem.len() < 6 || !stem.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    stem.parse().ok()
}

fn parse_scenario_dir(id: &str, dir: &Path) -> Result<ParsedDir, ScenarioError> {
    let ann_path = dir.join(ANNOTATION_FILE);
    if !ann_path.is_file() {
        return Err(invalid(id, format!("missing {ANNOTATION_FILE}")));
    }
    let raw = fs::read_to_string(&ann_path).map_err(io_err(&ann_path))?;
    let mut ann: AnnotationFile = serde_json::from_str(&raw)
        .map_err(|e| invalid(id, format!("malformed {ANNOTATION_FILE}: {e}")))?;

    if ann.accident_type.trim().is_empty() {
        return Err(invalid(id, "accident_type is empty"));
    }

    let frames_dir = dir.join(FRAMES_DIR);
    if !frames_dir.is_dir() {
        return Err(invalid(id, format!("missing {FRAMES_DIR}/ directory")));
    }
    let mut found: BTreeMap<u32, PathBuf> = BTreeMap::new();
    for entry in fs::read_dir(&frames_dir).map_err(io_err(&frames_dir))? {
        let entry = entry.map_err(io_err(&frames_dir))?;
        let name = entry.file_name();
        let Some(index) = name.to_str().and_then(frame_index_from_name) else {
            continue;
        };
        if found.insert(index, entry.path()).is_some() {
            return Err(invalid(id, format!("frame {index} present more than once")));
        }
    }
    if found.is_empty() {
        return Err(invalid(id, "no frames"));
    }
    let frames: Vec<FrameRecord> = found
        .into_iter()
        .enumerate()
        .map(|(expected, (index, image_path))| {
            if index as usize != expected {
                Err(invalid(
                    id,
                    format!("frame indices not contiguous: expected {expected}, found {index}"),
                ))
            } else {
                Ok(FrameRecord { index, image_path })
            }
        })
        .collect::<Result<_, _>>()?;

    ann.frames.sort_by_key(|a| a.index);
    let mut seen = HashSet::new();
    for a in &ann.frames {
        if !seen.insert(a.index) {
            return Err(invalid(id, format!("frame {} annotated twice", a.index)));
        }
        if a.index as usize >= frames.len() {
            return Err(invalid(
                id,
                format!(
                    "annotation references frame {} but only {} frames exist",
                    a.index,
                    frames.len()
                ),
            ));
        }
        if a.accident {
            for (field, text) in [
                ("scene_context", &a.scene_context),
                ("object_info", &a.object_info),
                ("justification", &a.justification),
            ] {
                if text.trim().is_empty() {
                    return Err(invalid(
                        id,
                        format!("frame {} is an accident frame but {field} is empty", a.index),
                    ));
                }
            }
        }
    }
    let any_accident = ann.frames.iter().any(|a| a.accident);
    if any_accident != ann.has_accident {
        return Err(invalid(
            id,
            format!(
                "has_accident is {} but frame annotations say {}",
                ann.has_accident, any_accident
            ),
        ));
    }

    Ok(ParsedDir {
        meta: ScenarioMeta {
            id: id.to_string(),
            accident_type: ann.accident_type,
            has_accident: ann.has_accident,
            frame_count: frames.len(),
        },
        frames,
        annotations: ann.frames,
    })
}

/// Indexes every scenario directory under `root`.
///
/// Directories that fail to parse end up in `failures`; only a missing root
/// is fatal.
pub fn load_manifest(root: impl AsRef<Path>) -> Result<ScenarioIndex, ScenarioError> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(ScenarioError::RootMissing(root.to_path_buf()));
    }
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        if !entry.file_type().map_err(io_err(root))?.is_dir() {
            continue;
        }
        match entry.file_name().into_string() {
            Ok(name) => dirs.push((name, entry.path())),
            Err(name) => tracing::warn!(?name, "skipping non-UTF-8 directory name"),
        }
    }
    dirs.sort();

    let parsed: Vec<_> = dirs
        .par_iter()
        .map(|(id, path)| (id, parse_scenario_dir(id, path)))
        .collect();

    let mut index = ScenarioIndex {
        root: root.to_path_buf(),
        entries: Vec::new(),
        failures: Vec::new(),
        warnings: Vec::new(),
    };
    for (id, result) in parsed {
        match result {
            Ok(p) => {
                if !EXPECTED_FRAME_RANGE.contains(&p.meta.frame_count) {
                    index.warnings.push(ScenarioIssue {
                        scenario_id: id.clone(),
                        message: format!(
                            "{} frames, outside the expected {}..={} range",
                            p.meta.frame_count,
                            EXPECTED_FRAME_RANGE.start(),
                            EXPECTED_FRAME_RANGE.end()
                        ),
                    });
                }
                index.entries.push(p.meta);
            }
            Err(e) => index.failures.push(ScenarioIssue {
                scenario_id: id.clone(),
                message: e.to_string(),
            }),
        }
    }
    Ok(index)
}

/// Loads one indexed scenario with its frames and annotations.
pub fn load_scenario(index: &ScenarioIndex, id: &str) -> Result<Scenario, ScenarioError> {
    if index.get(id).is_none() {
        return Err(ScenarioError::UnknownScenario(id.to_string()));
    }
    let parsed = parse_scenario_dir(id, &index.root.join(id))?;
    for frame in &parsed.frames {
        image::image_dimensions(&frame.image_path).map_err(|e| ScenarioError::UnreadableImage {
            path: frame.image_path.clone(),
            reason: e.to_string(),
        })?;
    }
    Ok(Scenario {
        id: parsed.meta.id,
        accident_type: parsed.meta.accident_type,
        has_accident: parsed.meta.has_accident,
        frames: parsed.frames,
        annotations: parsed.annotations,
    })
}

/// Picks `n / 2` accident and `n / 2` non-accident scenarios.
///
/// Within each class, accident types are drawn round-robin so every type is
/// represented as evenly as the pool allows; the order inside a type is a
/// seeded shuffle. The returned ids are sorted.
pub fn select_balanced(
    index: &ScenarioIndex,
    n: usize,
    seed: u64,
) -> Result<Vec<String>, ScenarioError> {
    if !n.is_multiple_of(2) {
        return Err(ScenarioError::OddSelection(n));
    }
    let half = n / 2;
    let (positives, negatives): (Vec<&ScenarioMeta>, Vec<&ScenarioMeta>) =
        index.entries.iter().partition(|m| m.has_accident);
    for (class, pool) in [("accident", &positives), ("non-accident", &negatives)] {
        if pool.len() < half {
            return Err(ScenarioError::InsufficientPool {
                class,
                needed: half,
                available: pool.len(),
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = round_robin_by_type(&positives, half, &mut rng);
    picked.extend(round_robin_by_type(&negatives, half, &mut rng));
    picked.sort();
    Ok(picked)
}

fn round_robin_by_type(pool: &[&ScenarioMeta], take: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut by_type: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for m in pool {
        by_type
            .entry(m.accident_type.as_str())
            .or_default()
            .push(m.id.as_str());
    }
    let mut queues: Vec<Vec<&str>> = by_type
        .into_values()
        .map(|mut ids| {
            ids.shuffle(rng);
            ids
        })
        .collect();
    // Which type goes first in each round is also seeded.
    queues.shuffle(rng);

    let mut out = Vec::with_capacity(take);
    while out.len() < take {
        for q in queues.iter_mut() {
            if out.len() == take {
                break;
            }
            if let Some(id) = q.pop() {
                out.push(id.to_string());
            }
        }
    }
    out
}

/// Splits a scenario into consecutive non-overlapping windows of `size`
/// frames, with a shorter trailing window for the remainder.
pub fn windows(scenario: &Scenario, size: usize) -> Result<Vec<FrameWindow>, ScenarioError> {
    if size == 0 || size > MAX_WINDOW {
        return Err(ScenarioError::InvalidWindowSize(size));
    }
    Ok(scenario
        .frames
        .chunks(size)
        .map(|chunk| {
            let frame_indices: Vec<u32> = chunk.iter().map(|f| f.index).collect();
            let label = frame_indices.iter().any(|&i| scenario.frame_accident(i));
            FrameWindow {
                scenario_id: scenario.id.clone(),
                frame_indices,
                label,
            }
        })
        .collect())
}
