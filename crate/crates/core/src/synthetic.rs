//! Deterministic synthetic scenarios for offline runs and tests.
//!
//! Each scenario shows a car and a pedestrian on a flat background. In
//! accident scenarios their paths meet at `accident_from` and the boxes
//! overlap from then on; otherwise they stay in separate lanes. The matching
//! detection sidecar describes exactly what is drawn.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detection::{BoundingBox, Detection, Sidecar};
use crate::metrics::{tokenize, MetricsError};
use crate::scenario::{AnnotationFile, FrameAnnotation, ANNOTATION_FILE, FRAMES_DIR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScenario {
    pub id: String,
    pub accident_type: String,
    pub frame_count: u32,
    pub width: u32,
    pub height: u32,
    /// First accident frame, if any.
    pub accident_from: Option<u32>,
    pub seed: u64,
}

impl SyntheticScenario {
    pub fn has_accident(&self) -> bool {
        self.accident_from.is_some()
    }

    pub fn is_accident_frame(&self, i: u32) -> bool {
        self.accident_from.is_some_and(|a| i >= a)
    }

    fn car_box(&self, i: u32) -> BoundingBox {
        let meet = self.accident_from.unwrap_or(self.frame_count) as f64;
        let speed = 1.2;
        let w = 22.0;
        let h = 12.0;
        let cx_meet = self.width as f64 * 0.5;
        let cx = if self.has_accident() && i as f64 >= meet {
            cx_meet
        } else {
            cx_meet - (meet - i as f64) * speed
        };
        let cy = self.height as f64 * 0.62;
        clamp_box(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0, self.width, self.height)
    }

    fn person_box(&self, i: u32) -> BoundingBox {
        let w = 6.0;
        let h = 14.0;
        let cx = self.width as f64 * 0.5 + 8.0;
        let cy = if self.has_accident() {
            let meet = self.accident_from.unwrap() as f64;
            let target = self.height as f64 * 0.62;
            if i as f64 >= meet {
                target
            } else {
                target - (meet - i as f64) * 0.6
            }
        } else {
            self.height as f64 * 0.25 + (i % 8) as f64 * 0.25
        };
        clamp_box(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0, self.width, self.height)
    }

    pub fn detections(&self) -> Vec<Detection> {
        let mut out = Vec::new();
        for i in 0..self.frame_count {
            for (label, b) in [("car", self.car_box(i)), ("person", self.person_box(i))] {
                out.push(Detection {
                    frame_index: i,
                    class_label: label.to_string(),
                    confidence: 0.9,
                    bbox: b,
                    contour: Some(octagon(&b)),
                    embedding: None,
                });
            }
        }
        out
    }

    pub fn sidecar(&self) -> Sidecar {
        Sidecar::from_detections(self.id.clone(), [self.width, self.height], &self.detections())
    }

    pub fn frame(&self, i: u32) -> RgbImage {
        // Per-scenario tint keeps frames of different scenarios distinct.
        let tint = (self.seed % 48) as u8;
        let mut img = RgbImage::from_fn(self.width, self.height, |_, y| {
            if (y as f64) > self.height as f64 * 0.5 {
                Rgb([70, 70 + tint / 2, 75])
            } else {
                Rgb([130 + tint, 170, 150])
            }
        });
        fill(&mut img, &self.car_box(i), Rgb([200, 30, 30]));
        fill(&mut img, &self.person_box(i), Rgb([230, 200, 60]));
        // Frame counter strip, like a camera timestamp overlay, so that static
        // stretches still produce distinct images.
        for bit in 0..12u32 {
            let on = (i >> bit) & 1 == 1;
            let c = if on { Rgb([255, 255, 255]) } else { Rgb([0, 0, 0]) };
            img.put_pixel(1 + bit, 1, c);
        }
        img
    }

    pub fn annotation(&self) -> AnnotationFile {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let place = ["urban intersection", "two-lane road", "suburban street", "highway ramp"][rng.gen_range(0..4)];
        let weather = ["clear daylight", "light rain", "overcast sky", "dusk with wet asphalt"][rng.gen_range(0..4)];
        let frames = (0..self.frame_count)
            .map(|i| {
                let accident = self.is_accident_frame(i);
                FrameAnnotation {
                    index: i,
                    accident,
                    scene_context: format!("{place} in {weather} with light traffic"),
                    object_info: if accident {
                        "car red sedan stopped after impact; person pedestrian struck in the lane".into()
                    } else {
                        "car red sedan driving east; person pedestrian walking near the road".into()
                    },
                    justification: if accident {
                        format!("the red sedan collides with the pedestrian in a {} at the {place}", self.accident_type)
                    } else {
                        "the sedan and the pedestrian keep a safe distance with no contact".into()
                    },
                }
            })
            .collect();
        AnnotationFile {
            accident_type: self.accident_type.clone(),
            has_accident: self.has_accident(),
            frames,
        }
    }

    /// Writes `<root>/<id>/frames/*.png` and `<root>/<id>/annotation.json`.
    pub fn write(&self, root: &Path) -> std::io::Result<PathBuf> {
        let dir = root.join(&self.id);
        let frames = dir.join(FRAMES_DIR);
        std::fs::create_dir_all(&frames)?;
        for i in 0..self.frame_count {
            self.frame(i)
                .save(frames.join(format!("{i:06}.png")))
                .map_err(std::io::Error::other)?;
        }
        let ann = serde_json::to_string_pretty(&self.annotation()).map_err(std::io::Error::other)?;
        std::fs::write(dir.join(ANNOTATION_FILE), ann)?;
        Ok(dir)
    }
}

fn clamp_box(x1: f64, y1: f64, x2: f64, y2: f64, w: u32, h: u32) -> BoundingBox {
    let (w, h) = ((w - 1) as f64, (h - 1) as f64);
    BoundingBox {
        x1: x1.clamp(0.0, w - 1.0),
        y1: y1.clamp(0.0, h - 1.0),
        x2: x2.clamp(1.0, w),
        y2: y2.clamp(1.0, h),
    }
}

fn octagon(b: &BoundingBox) -> Vec<[f64; 2]> {
    let dx = b.width() * 0.25;
    let dy = b.height() * 0.25;
    vec![
        [b.x1 + dx, b.y1],
        [b.x2 - dx, b.y1],
        [b.x2, b.y1 + dy],
        [b.x2, b.y2 - dy],
        [b.x2 - dx, b.y2],
        [b.x1 + dx, b.y2],
        [b.x1, b.y2 - dy],
        [b.x1, b.y1 + dy],
    ]
}

fn fill(img: &mut RgbImage, b: &BoundingBox, c: Rgb<u8>) {
    let (w, h) = img.dimensions();
    let x0 = b.x1.round().max(0.0) as u32;
    let y0 = b.y1.round().max(0.0) as u32;
    let x1 = (b.x2.round() as u32).min(w - 1);
    let y1 = (b.y2.round() as u32).min(h - 1);
    for y in y0..=y1 {
        for x in x0..=x1 {
            img.put_pixel(x, y, c);
        }
    }
}

const ACCIDENT_TYPES: [&str; 3] = ["rear-end collision", "pedestrian strike", "side impact"];

/// `n_accident` accident and `n_normal` normal scenarios named `syn000`,
/// `syn001`, ... Accident scenarios come first.
pub fn plan(n_accident: usize, n_normal: usize, frame_count: u32, seed: u64) -> Vec<SyntheticScenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_accident + n_normal)
        .map(|k| {
            let accident = k < n_accident;
            SyntheticScenario {
                id: format!("syn{k:03}"),
                accident_type: if accident {
                    ACCIDENT_TYPES[k % ACCIDENT_TYPES.len()].to_string()
                } else {
                    "none".to_string()
                },
                frame_count,
                width: 96,
                height: 64,
                accident_from: accident.then(|| frame_count * 2 / 3 + rng.gen_range(0..3)),
                seed: rng.gen(),
            }
        })
        .collect()
}

/// Writes scenarios under `root` and their sidecars as
/// `<detections_dir>/<id>.json`.
pub fn write_dataset(scenarios: &[SyntheticScenario], root: &Path, detections_dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(detections_dir)?;
    for s in scenarios {
        s.write(root)?;
        s.sidecar()
            .write(detections_dir.join(format!("{}.json", s.id)))
            .map_err(std::io::Error::other)?;
    }
    Ok(())
}

/// Pseudo-random word vectors for every token in `texts`, in word2vec text
/// format. Stands in for a pretrained lexicon in offline runs.
pub fn write_lexicon<'a>(path: &Path, texts: impl IntoIterator<Item = &'a str>, dim: usize) -> Result<(), MetricsError> {
    let mut vocab: Vec<String> = texts.into_iter().flat_map(tokenize).collect();
    vocab.sort();
    vocab.dedup();
    let mut out = format!("{} {dim}\n", vocab.len());
    for w in &vocab {
        let mut rng = ChaCha8Rng::from_seed(crate::digest::sha256_bytes(w.as_bytes()));
        out.push_str(w);
        for _ in 0..dim {
            out.push_str(&format!(" {:.6}", rng.gen_range(-1.0f64..1.0)));
        }
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| MetricsError::Io(format!("{}: {e}", path.display())))?;
    f.write_all(out.as_bytes())
        .map_err(|e| MetricsError::Io(format!("{}: {e}", path.display())))
}
