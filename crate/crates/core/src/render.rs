//! Overlay rendering for enhanced prompts: confirmed tracks are outlined in a
//! class colour (pedestrians green, everything else blue) and labelled with
//! their track id.
//!
//! Drawing is integer-only and uses a bundled bitmap font, so identical inputs
//! always produce byte-identical images.

use std::path::{Path, PathBuf};

use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::detection::Point;
use crate::tracker::Track;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("line thickness must be at least 1")]
    InvalidThickness,
    #[error("image is {actual:?} but detections were made on {expected:?}")]
    SizeMismatch { expected: [u32; 2], actual: [u32; 2] },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderStyle {
    pub person_color: [u8; 3],
    pub other_color: [u8; 3],
    pub line_thickness: u32,
    pub id_label: bool,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self {
            person_color: [0, 255, 0],
            other_color: [0, 0, 255],
            line_thickness: 2,
            id_label: true,
        }
    }
}

impl RenderStyle {
    pub fn validate(&self) -> Result<(), RenderError> {
        if self.line_thickness == 0 {
            return Err(RenderError::InvalidThickness);
        }
        Ok(())
    }
}

pub const PERSON_LABEL: &str = "person";

pub fn contour_color(class_label: &str, style: &RenderStyle) -> [u8; 3] {
    if class_label == PERSON_LABEL {
        style.person_color
    } else {
        style.other_color
    }
}

/// A vertex that fell outside the image and was moved onto the border.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClampedVertex {
    pub track_id: u64,
    pub vertex: usize,
    pub original: Point,
    pub clamped: [i64; 2],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RenderLog {
    pub drawn_tracks: Vec<u64>,
    pub clamped: Vec<ClampedVertex>,
}

/// Draws every confirmed track onto a copy of `image`.
///
/// Labels go down first and outlines on top, so an outline is never
/// interrupted by a nearby label.
pub fn render_enhanced(image: &RgbImage, tracks: &[Track], style: &RenderStyle) -> Result<(RgbImage, RenderLog), RenderError> {
    style.validate()?;
    let mut canvas = image.clone();
    let mut log = RenderLog::default();
    let (w, h) = canvas.dimensions();
    if w == 0 || h == 0 {
        return Ok((canvas, log));
    }
    let confirmed: Vec<&Track> = tracks.iter().filter(|t| t.confirmed).collect();

    if style.id_label {
        for t in &confirmed {
            let b = t.last_bbox();
            draw_label(&mut canvas, &t.id.to_string(), b.x1, b.y1);
        }
    }

    for t in &confirmed {
        let color = Rgb(contour_color(&t.class_label, style));
        let outline = match &t.contour {
            Some(c) if c.len() >= 3 => c.clone(),
            _ => {
                let b = t.last_bbox();
                vec![[b.x1, b.y1], [b.x2, b.y1], [b.x2, b.y2], [b.x1, b.y2]]
            }
        };
        let pixels: Vec<(i64, i64)> = outline
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let (px, clamped) = clamp_vertex(p, w, h);
                if clamped {
                    log.clamped.push(ClampedVertex {
                        track_id: t.id,
                        vertex: i,
                        original: p,
                        clamped: [px.0, px.1],
                    });
                }
                px
            })
            .collect();
        stroke_closed(&mut canvas, &pixels, style.line_thickness, color);
        log.drawn_tracks.push(t.id);
    }
    Ok((canvas, log))
}

/// Rounds to the pixel grid and clamps into the image. Returns whether the
/// point had to move onto the border.
fn clamp_vertex(p: Point, w: u32, h: u32) -> ((i64, i64), bool) {
    let inside = p[0] >= 0.0 && p[1] >= 0.0 && p[0] <= (w - 1) as f64 && p[1] <= (h - 1) as f64;
    let x = (p[0].round() as i64).clamp(0, w as i64 - 1);
    let y = (p[1].round() as i64).clamp(0, h as i64 - 1);
    ((x, y), !inside || !p[0].is_finite() || !p[1].is_finite())
}

/// Offsets covered by a brush of the given thickness, relative to the
/// centre pixel: `lo..=hi` with `hi - lo + 1 == thickness`.
pub fn brush_span(thickness: u32) -> (i64, i64) {
    let lo = -((thickness as i64 - 1) / 2);
    (lo, lo + thickness as i64 - 1)
}

fn stamp(img: &mut RgbImage, x: i64, y: i64, thickness: u32, color: Rgb<u8>) {
    let (lo, hi) = brush_span(thickness);
    let (w, h) = (img.width() as i64, img.height() as i64);
    for dy in lo..=hi {
        for dx in lo..=hi {
            let (px, py) = (x + dx, y + dy);
            if (0..w).contains(&px) && (0..h).contains(&py) {
                img.put_pixel(px as u32, py as u32, color);
            }
        }
    }
}

/// Bresenham line including both endpoints.
pub fn line_pixels(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy + 1) as usize);
    loop {
        out.push((x, y));
        if (x, y) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

fn stroke_closed(img: &mut RgbImage, pts: &[(i64, i64)], thickness: u32, color: Rgb<u8>) {
    for (i, &a) in pts.iter().enumerate() {
        let b = pts[(i + 1) % pts.len()];
        for (x, y) in line_pixels(a, b) {
            stamp(img, x, y, thickness, color);
        }
    }
}

// 3x5 digit glyphs, one row per u8 (bit 2 = leftmost column).
const GLYPHS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];
const GLYPH_SCALE: i64 = 2;
const GLYPH_W: i64 = 3 * GLYPH_SCALE;
const GLYPH_H: i64 = 5 * GLYPH_SCALE;
const GLYPH_GAP: i64 = GLYPH_SCALE;
const LABEL_FG: Rgb<u8> = Rgb([255, 255, 255]);
const LABEL_OUTLINE: Rgb<u8> = Rgb([0, 0, 0]);

/// Pixel rectangle `(x0, y0, x1, y1)` (inclusive) a label occupies,
/// outline included. The label sits just above the anchor when it fits,
/// otherwise just inside it, and is shifted to stay on the image.
pub fn label_extent(text: &str, anchor_x: f64, anchor_y: f64, w: u32, h: u32) -> (i64, i64, i64, i64) {
    let n = text.chars().count() as i64;
    let tw = n * GLYPH_W + (n - 1).max(0) * GLYPH_GAP + 2;
    let th = GLYPH_H + 2;
    let ax = anchor_x.round() as i64;
    let ay = anchor_y.round() as i64;
    let mut y0 = ay - th - 1;
    if y0 < 0 {
        y0 = ay + 1;
    }
    let x0 = ax.clamp(0, (w as i64 - tw).max(0));
    let y0 = y0.clamp(0, (h as i64 - th).max(0));
    (x0, y0, x0 + tw - 1, y0 + th - 1)
}

fn draw_label(img: &mut RgbImage, text: &str, anchor_x: f64, anchor_y: f64) {
    let (w, h) = img.dimensions();
    let (x0, y0, _, _) = label_extent(text, anchor_x, anchor_y, w, h);
    let mut fg = Vec::new();
    for (k, ch) in text.chars().enumerate() {
        let Some(d) = ch.to_digit(10) else { continue };
        let gx = x0 + 1 + k as i64 * (GLYPH_W + GLYPH_GAP);
        for (row, bits) in GLYPHS[d as usize].iter().enumerate() {
            for col in 0..3 {
                if bits & (0b100 >> col) == 0 {
                    continue;
                }
                for sy in 0..GLYPH_SCALE {
                    for sx in 0..GLYPH_SCALE {
                        fg.push((gx + col * GLYPH_SCALE + sx, y0 + 1 + row as i64 * GLYPH_SCALE + sy));
                    }
                }
            }
        }
    }
    let put = |img: &mut RgbImage, x: i64, y: i64, c| {
        if x >= 0 && y >= 0 && (x as u32) < w && (y as u32) < h {
            img.put_pixel(x as u32, y as u32, c);
        }
    };
    for &(x, y) in &fg {
        for dy in -1..=1 {
            for dx in -1..=1 {
                put(img, x + dx, y + dy, LABEL_OUTLINE);
            }
        }
    }
    for &(x, y) in &fg {
        put(img, x, y, LABEL_FG);
    }
}

/// Lossless PNG bytes. The encoder is deterministic for identical pixels.
pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>, image::ImageError> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn enhanced_frame_path(out_dir: &Path, scenario_id: &str, frame_index: u32) -> PathBuf {
    out_dir.join(scenario_id).join(format!("{frame_index:06}_enhanced.png"))
}

pub fn write_enhanced(out_dir: &Path, scenario_id: &str, frame_index: u32, img: &RgbImage) -> Result<PathBuf, RenderError> {
    let path = enhanced_frame_path(out_dir, scenario_id, frame_index);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| RenderError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    let bytes = encode_png(img).map_err(|source| RenderError::Image {
        path: path.clone(),
        source,
    })?;
    std::fs::write(&path, bytes).map_err(|source| RenderError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

/// Loads a frame as RGB, checking it against the sidecar's image size.
pub fn load_frame(path: &Path, expected_size: Option<[u32; 2]>) -> Result<RgbImage, RenderError> {
    let img = image::open(path)
        .map_err(|source| RenderError::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    if let Some(expected) = expected_size {
        let actual = [img.width(), img.height()];
        if actual != expected {
            return Err(RenderError::SizeMismatch { expected, actual });
        }
    }
    Ok(img)
}
