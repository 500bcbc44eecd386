//! Requests sent to the multimodal models: one fixed instruction plus the
//! frames of a window.

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_hex;
use crate::render::encode_png;
use crate::scenario::{FrameWindow, MAX_WINDOW};

/// Revision tag of the instruction text below.
pub const INSTRUCTION_VERSION: &str = "inspector_v1";
/// The instruction sent with every request, in both modes.
pub const INSTRUCTION: &str = include_str!("../prompts/inspector_v1.txt");

/// Field names of the structured answer the instruction asks for.
pub const RESPONSE_FIELDS: [&str; 4] = ["classification", "scene_context", "justification", "objects"];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("window has {window} frames but {frames} images were supplied")]
    CountMismatch { window: usize, frames: usize },
    #[error("image {position} is frame {actual}, window expects frame {expected}")]
    FrameMismatch { position: usize, expected: u32, actual: u32 },
    #[error("a request carries 1 to {MAX_WINDOW} images, got {0}")]
    ImageCount(usize),
    #[error("enhanced requests need rendered frames; frame {0} is raw")]
    RawFrameInEnhanced(u32),
    #[error("PNG encoding failed: {0}")]
    Encode(#[from] image::ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptMode {
    Base,
    Enhanced,
}

impl PromptMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PromptMode::Base => "base",
            PromptMode::Enhanced => "enhanced",
        }
    }
}

impl std::fmt::Display for PromptMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PromptMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(PromptMode::Base),
            "enhanced" => Ok(PromptMode::Enhanced),
            other => Err(format!("unknown mode {other:?} (expected base or enhanced)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameSource {
    Raw,
    Rendered,
}

/// A frame as PNG bytes. Providers choose their own transport encoding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedFrame {
    pub frame_index: u32,
    pub source: FrameSource,
    pub png: Vec<u8>,
}

impl EncodedFrame {
    pub fn raw(frame_index: u32, image: &RgbImage) -> Result<Self, PromptError> {
        Ok(Self {
            frame_index,
            source: FrameSource::Raw,
            png: encode_png(image)?,
        })
    }

    /// Wraps renderer output.
    pub fn rendered(frame_index: u32, image: &RgbImage) -> Result<Self, PromptError> {
        Ok(Self {
            frame_index,
            source: FrameSource::Rendered,
            png: encode_png(image)?,
        })
    }

    pub fn content_hash(&self) -> String {
        sha256_hex(&self.png)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptRequest {
    pub mode: PromptMode,
    pub instruction: &'static str,
    pub images: Vec<EncodedFrame>,
    pub scenario_id: String,
    pub window: FrameWindow,
}

fn check_frames(window: &FrameWindow, frames: &[EncodedFrame]) -> Result<(), PromptError> {
    if frames.is_empty() || frames.len() > MAX_WINDOW {
        return Err(PromptError::ImageCount(frames.len()));
    }
    if frames.len() != window.frame_indices.len() {
        return Err(PromptError::CountMismatch {
            window: window.frame_indices.len(),
            frames: frames.len(),
        });
    }
    for (position, (f, &expected)) in frames.iter().zip(&window.frame_indices).enumerate() {
        if f.frame_index != expected {
            return Err(PromptError::FrameMismatch {
                position,
                expected,
                actual: f.frame_index,
            });
        }
    }
    Ok(())
}

pub fn build_base_prompt(window: &FrameWindow, frames: Vec<EncodedFrame>) -> Result<PromptRequest, PromptError> {
    check_frames(window, &frames)?;
    Ok(PromptRequest {
        mode: PromptMode::Base,
        instruction: INSTRUCTION,
        images: frames,
        scenario_id: window.scenario_id.clone(),
        window: window.clone(),
    })
}

/// Same instruction as the base request; only the images change.
pub fn build_enhanced_prompt(window: &FrameWindow, rendered: Vec<EncodedFrame>) -> Result<PromptRequest, PromptError> {
    check_frames(window, &rendered)?;
    if let Some(raw) = rendered.iter().find(|f| f.source != FrameSource::Rendered) {
        return Err(PromptError::RawFrameInEnhanced(raw.frame_index));
    }
    Ok(PromptRequest {
        mode: PromptMode::Enhanced,
        instruction: INSTRUCTION,
        images: rendered,
        scenario_id: window.scenario_id.clone(),
        window: window.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::BoundingBox;
    use crate::render::{render_enhanced, RenderStyle};
    use crate::tracker::kalman::KalmanFilter;
    use crate::tracker::Track;
    use image::Rgb;

    const INSTRUCTION_SHA256: &str = "5350fd5466547d85c757aa6f3088c7bac882115e40e6fb5a2ed4a3cf1a2faadf";

    fn window(indices: &[u32]) -> FrameWindow {
        FrameWindow {
            scenario_id: "s1".into(),
            frame_indices: indices.to_vec(),
            label: false,
        }
    }

    fn img(seed: u8) -> RgbImage {
        RgbImage::from_fn(32, 24, |x, y| Rgb([seed, x as u8, y as u8]))
    }

    fn raw_frames(indices: &[u32]) -> Vec<EncodedFrame> {
        indices.iter().map(|&i| EncodedFrame::raw(i, &img(i as u8)).unwrap()).collect()
    }

    #[test]
    fn instruction_is_pinned() {
        assert_eq!(sha256_hex(INSTRUCTION), INSTRUCTION_SHA256, "instruction text changed; bump INSTRUCTION_VERSION");
    }

    #[test]
    fn instruction_covers_required_sections() {
        assert!(INSTRUCTION.contains("JSON"));
        assert!(INSTRUCTION.contains("traffic accident inspector"));
        assert!(INSTRUCTION.contains("come into direct contact is classified as a collision"));
        assert!(INSTRUCTION.contains("environment, weather conditions, and overall scene context"));
        for f in RESPONSE_FIELDS {
            assert!(INSTRUCTION.contains(f), "missing field {f}");
        }
        assert!(INSTRUCTION.contains("\"label\"") && INSTRUCTION.contains("\"description\""));
    }

    #[test]
    fn base_requests() {
        let r = build_base_prompt(&window(&[0, 1, 2]), raw_frames(&[0, 1, 2])).unwrap();
        assert_eq!((r.mode, r.images.len()), (PromptMode::Base, 3));
        let tail = build_base_prompt(&window(&[45]), raw_frames(&[45])).unwrap();
        assert_eq!(tail.images.len(), 1);
    }

    #[test]
    fn mismatches_rejected() {
        assert!(matches!(
            build_base_prompt(&window(&[0, 1, 2]), raw_frames(&[0, 1])),
            Err(PromptError::CountMismatch { .. })
        ));
        assert!(matches!(
            build_base_prompt(&window(&[0, 1]), raw_frames(&[0, 2])),
            Err(PromptError::FrameMismatch { position: 1, .. })
        ));
        assert!(matches!(build_base_prompt(&window(&[]), vec![]), Err(PromptError::ImageCount(0))));
        assert!(matches!(
            build_enhanced_prompt(&window(&[0]), raw_frames(&[0])),
            Err(PromptError::RawFrameInEnhanced(0))
        ));
    }

    #[test]
    fn enhanced_keeps_instruction_and_swaps_images() {
        let w = window(&[0, 1]);
        let base = build_base_prompt(&w, raw_frames(&[0, 1])).unwrap();
        let bbox = BoundingBox::new(4.0, 4.0, 20.0, 18.0).unwrap();
        let track = Track {
            id: 1,
            class_label: "car".into(),
            state: KalmanFilter::default().init(&bbox),
            hits: 3,
            misses: 0,
            confirmed: true,
            history: vec![(0, bbox)],
            contour: None,
            embedding: None,
        };
        let rendered: Vec<EncodedFrame> = [0u32, 1]
            .iter()
            .map(|&i| {
                let (out, _) = render_enhanced(&img(i as u8), std::slice::from_ref(&track), &RenderStyle::default()).unwrap();
                EncodedFrame::rendered(i, &out).unwrap()
            })
            .collect();
        let enh = build_enhanced_prompt(&w, rendered).unwrap();
        assert_eq!(enh.instruction.as_bytes(), base.instruction.as_bytes());
        assert_eq!(enh.mode, PromptMode::Enhanced);
        assert_ne!(enh.images[0].png, base.images[0].png);

        let identity: Vec<EncodedFrame> = [0u32, 1]
            .iter()
            .map(|&i| {
                let (out, _) = render_enhanced(&img(i as u8), &[], &RenderStyle::default()).unwrap();
                EncodedFrame::rendered(i, &out).unwrap()
            })
            .collect();
        let enh = build_enhanced_prompt(&w, identity).unwrap();
        assert_eq!(enh.images[0].png, base.images[0].png);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("enhanced".parse::<PromptMode>().unwrap(), PromptMode::Enhanced);
        assert!("fancy".parse::<PromptMode>().is_err());
        assert_eq!(serde_json::to_string(&PromptMode::Base).unwrap(), "\"base\"");
    }
}
