//! Tracking by detection: Kalman prediction, IoU cost, Hungarian assignment.
//!
//! Tracks start tentative and are confirmed once they have been associated on
//! `min_hits` consecutive frames. A miss resets the hit streak; a track that
//! misses more than `max_misses` frames in a row is dropped. Detections are
//! never associated with a track of a different class.

pub mod assignment;
pub mod kalman;

use serde::{Deserialize, Serialize};

use crate::detection::{filter_classes, BoundingBox, ClassAllowlist, Detection, Point};
pub use assignment::{assign, solve, Assignment};
pub use kalman::{KalmanConfig, KalmanError, KalmanFilter, KalmanState};

/// Cost for pairs that may never match; far above any gate.
const FORBIDDEN_COST: f64 = 1e6;

/// Intersection over union of two boxes, in `[0, 1]`.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

fn cosine_distance(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((1.0 - dot / (na * nb)).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackerConfig {
    /// Associations with IoU below this are rejected.
    pub iou_threshold: f64,
    pub min_hits: u32,
    pub max_misses: u32,
    /// Weight of the appearance (cosine) distance in the association cost.
    /// Only used when both track and detection carry an embedding.
    pub appearance_weight: f64,
    /// Detections below this confidence are discarded before tracking.
    pub min_confidence: f64,
    pub kalman: KalmanConfig,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.3,
            min_hits: 3,
            max_misses: 2,
            appearance_weight: 0.0,
            min_confidence: 0.5,
            kalman: KalmanConfig::default(),
        }
    }
}

impl TrackerConfig {
    /// Class allowlist plus confidence threshold.
    pub fn prepare(&self, dets: &[Detection], allow: &ClassAllowlist) -> Vec<Detection> {
        let mut kept = filter_classes(dets, allow);
        kept.retain(|d| d.confidence >= self.min_confidence);
        kept
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub id: u64,
    pub class_label: String,
    pub state: KalmanState,
    /// Consecutive frames with an associated detection.
    pub hits: u32,
    /// Consecutive frames without one.
    pub misses: u32,
    pub confirmed: bool,
    pub history: Vec<(u32, BoundingBox)>,
    pub contour: Option<Vec<Point>>,
    pub embedding: Option<Vec<f64>>,
}

impl Track {
    /// Box of the most recent associated detection.
    pub fn last_bbox(&self) -> BoundingBox {
        self.history
            .last()
            .map(|&(_, b)| b)
            .unwrap_or_else(|| self.state.bbox())
    }
}

#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    filter: KalmanFilter,
    tracks: Vec<Track>,
    next_id: u64,
    /// Number of predictions whose area had to be clamped.
    pub clamp_events: usize,
}

impl Default for Tracker {
    fn default() -> Self {
        Self::new(TrackerConfig::default())
    }
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Self {
        let filter = KalmanFilter::new(&config.kalman);
        Self {
            config,
            filter,
            tracks: Vec::new(),
            next_id: 1,
            clamp_events: 0,
        }
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn tracks(&self) -> &[Track] {
        &self.tracks
    }

    pub fn confirmed_tracks(&self) -> Vec<&Track> {
        self.tracks.iter().filter(|t| t.hits >= self.config.min_hits).collect()
    }

    fn association_cost(&self, track: &Track, predicted: &BoundingBox, det: &Detection) -> f64 {
        if track.class_label != det.class_label {
            return FORBIDDEN_COST;
        }
        let iou_cost = 1.0 - iou(predicted, &det.bbox);
        let w = self.config.appearance_weight;
        if w > 0.0 {
            if let (Some(a), Some(b)) = (&track.embedding, &det.embedding) {
                if let Some(app) = cosine_distance(a, b) {
                    return (1.0 - w) * iou_cost + w * app;
                }
            }
        }
        iou_cost
    }

    /// Advances every track to `frame_index` and associates `dets`, which
    /// should already be class- and confidence-filtered.
    pub fn step(&mut self, frame_index: u32, dets: &[Detection]) -> &[Track] {
        for track in &mut self.tracks {
            let p = self.filter.predict(&track.state);
            if p.clamped {
                self.clamp_events += 1;
                tracing::debug!(track = track.id, frame_index, "predicted area clamped");
            }
            track.state = p.state;
        }

        let predicted: Vec<BoundingBox> = self.tracks.iter().map(|t| t.state.bbox()).collect();
        let cost: Vec<Vec<f64>> = self
            .tracks
            .iter()
            .zip(&predicted)
            .map(|(t, p)| dets.iter().map(|d| self.association_cost(t, p, d)).collect())
            .collect();
        let gate = 1.0 - self.config.iou_threshold;
        let result = if self.tracks.is_empty() {
            Assignment {
                pairs: vec![],
                unmatched_rows: vec![],
                unmatched_cols: (0..dets.len()).collect(),
            }
        } else {
            assign(&cost, gate)
        };

        let mut matched = vec![false; self.tracks.len()];
        for &(ti, di) in &result.pairs {
            let det = &dets[di];
            let track = &mut self.tracks[ti];
            match self.filter.update(&track.state, &det.bbox) {
                Ok(st) => track.state = st,
                Err(e) => {
                    tracing::warn!(track = track.id, error = %e, "kalman update failed, keeping prediction");
                }
            }
            matched[ti] = true;
            track.hits += 1;
            track.misses = 0;
            track.history.push((frame_index, det.bbox));
            track.contour = det.contour.clone();
            if det.embedding.is_some() {
                track.embedding = det.embedding.clone();
            }
        }
        for (track, hit) in self.tracks.iter_mut().zip(&matched) {
            if !hit {
                track.hits = 0;
                track.misses += 1;
            }
        }
        let max_misses = self.config.max_misses;
        self.tracks.retain(|t| t.misses <= max_misses);

        for &di in &result.unmatched_cols {
            let det = &dets[di];
            self.tracks.push(Track {
                id: self.next_id,
                class_label: det.class_label.clone(),
                state: self.filter.init(&det.bbox),
                hits: 1,
                misses: 0,
                confirmed: false,
                history: vec![(frame_index, det.bbox)],
                contour: det.contour.clone(),
                embedding: det.embedding.clone(),
            });
            self.next_id += 1;
        }
        let min_hits = self.config.min_hits;
        for t in &mut self.tracks {
            t.confirmed = t.hits >= min_hits;
        }
        &self.tracks
    }
}

/// Live tracks after processing one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTracks {
    pub frame_index: u32,
    pub tracks: Vec<Track>,
}

impl FrameTracks {
    pub fn confirmed(&self) -> impl Iterator<Item = &Track> {
        self.tracks.iter().filter(|t| t.confirmed)
    }
}

/// Runs a fresh tracker over frames `0..frame_count`, feeding each frame its
/// prepared detections (frames without detections still advance the filter).
pub fn track_sequence(
    config: &TrackerConfig,
    allow: &ClassAllowlist,
    frame_count: u32,
    dets: &[Detection],
) -> Vec<FrameTracks> {
    let prepared = config.prepare(dets, allow);
    let mut tracker = Tracker::new(config.clone());
    (0..frame_count)
        .map(|frame_index| {
            let frame_dets: Vec<Detection> = prepared
                .iter()
                .filter(|d| d.frame_index == frame_index)
                .cloned()
                .collect();
            FrameTracks {
                frame_index,
                tracks: tracker.step(frame_index, &frame_dets).to_vec(),
            }
        })
        .collect()
}

/// Flat per-frame track table for inspection dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackRow {
    pub frame_index: u32,
    pub track_id: u64,
    pub class: String,
    pub bbox: [f64; 4],
    pub hits: u32,
    pub misses: u32,
    pub confirmed: bool,
    pub has_contour: bool,
}

pub fn track_table(frames: &[FrameTracks]) -> Vec<TrackRow> {
    frames
        .iter()
        .flat_map(|f| {
            f.tracks.iter().map(move |t| TrackRow {
                frame_index: f.frame_index,
                track_id: t.id,
                class: t.class_label.clone(),
                bbox: t.state.bbox().into(),
                hits: t.hits,
                misses: t.misses,
                confirmed: t.confirmed,
                has_contour: t.contour.is_some(),
            })
        })
        .collect()
}
