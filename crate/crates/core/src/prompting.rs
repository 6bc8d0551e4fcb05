//! Visual prompts: candidate outlines with an id label (spatial) and a
//! `#<index>` stamp at a fixed corner of every frame (temporal).
//!
//! Rendering uses a built-in 3x5 bitmap font and integer geometry only, so
//! outputs are byte-identical across runs and platforms.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::geometry::{BoundingBox, Frame, FrameClip, Mask, Tube};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptStyle {
    pub outline_color: [u8; 3],
    pub outline_width: u32,
    /// Label drawn next to the outline; the tube id when unset.
    pub label_text: Option<String>,
    pub index_corner: Corner,
    /// Side length in pixels of one font dot.
    pub glyph_size: u32,
}

impl Default for PromptStyle {
    fn default() -> Self {
        Self {
            outline_color: [255, 0, 0],
            outline_width: 3,
            label_text: None,
            index_corner: Corner::TopLeft,
            glyph_size: 2,
        }
    }
}

impl PromptStyle {
    pub fn is_valid(&self) -> bool {
        self.outline_width > 0 && self.glyph_size > 0
    }
}

const GLYPH_W: u32 = 3;
const GLYPH_H: u32 = 5;
const ADVANCE: u32 = GLYPH_W + 1;

fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b001, 0b001, 0b001],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '#' => [0b101, 0b111, 0b101, 0b111, 0b101],
        _ => return None,
    })
}

/// Rendered size of `text`; characters outside the font take up blank space.
pub fn text_size(text: &str, glyph_size: u32) -> (u32, u32) {
    let n = text.chars().count() as u32;
    if n == 0 {
        return (0, 0);
    }
    ((n * ADVANCE - 1) * glyph_size, GLYPH_H * glyph_size)
}

/// Top-left corner of the `#<index>` stamp.
pub fn index_origin(text: &str, style: &PromptStyle, width: u32, height: u32) -> (u32, u32) {
    let (tw, th) = text_size(text, style.glyph_size);
    let m = style.glyph_size;
    let right = width.saturating_sub(tw + m);
    let bottom = height.saturating_sub(th + m);
    match style.index_corner {
        Corner::TopLeft => (m, m),
        Corner::TopRight => (right, m),
        Corner::BottomLeft => (m, bottom),
        Corner::BottomRight => (right, bottom),
    }
}

/// Top-left corner of a candidate label: above the mask's top-left corner
/// when there is room, otherwise just inside it.
pub fn label_origin(extent: &BoundingBox, text: &str, style: &PromptStyle, width: u32, height: u32) -> (u32, u32) {
    let (tw, th) = text_size(text, style.glyph_size);
    let gap = style.outline_width;
    let x = extent.x1.min(width.saturating_sub(tw));
    let y = if extent.y1 >= th + gap {
        extent.y1 - th - gap
    } else {
        (extent.y1 + gap).min(height.saturating_sub(th))
    };
    (x, y)
}

fn draw_text(frame: &mut Frame, width: u32, height: u32, origin: (u32, u32), text: &str, g: u32, color: [u8; 3]) {
    for (i, c) in text.chars().enumerate() {
        let Some(rows) = glyph(c) else { continue };
        for (r, bits) in rows.iter().enumerate() {
            for col in 0..GLYPH_W {
                if bits & (1 << (GLYPH_W - 1 - col)) == 0 {
                    continue;
                }
                let x0 = origin.0 + (i as u32 * ADVANCE + col) * g;
                let y0 = origin.1 + r as u32 * g;
                for y in y0..(y0 + g).min(height) {
                    for x in x0..(x0 + g).min(width) {
                        frame.set_rgb(width, x, y, color);
                    }
                }
            }
        }
    }
}

/// Pixels within Chebyshev distance `width - 1` of the mask boundary. The
/// boundary is every set pixel with a 4-neighbour that is unset or outside
/// the frame. Row-major.
pub fn outline_band(mask: &Mask, width: u32) -> Vec<bool> {
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let bits = mask.to_bitmap();
    let mut band = vec![false; w * h];
    let r = width.saturating_sub(1) as usize;
    let Some(ext) = mask.extent() else { return band };
    for y in ext.y1 as usize..ext.y2 as usize {
        for x in ext.x1 as usize..ext.x2 as usize {
            if !bits[y * w + x] {
                continue;
            }
            let edge = x == 0
                || y == 0
                || x + 1 == w
                || y + 1 == h
                || !bits[y * w + x - 1]
                || !bits[y * w + x + 1]
                || !bits[(y - 1) * w + x]
                || !bits[(y + 1) * w + x];
            if !edge {
                continue;
            }
            for yy in y.saturating_sub(r)..=(y + r).min(h - 1) {
                for xx in x.saturating_sub(r)..=(x + r).min(w - 1) {
                    band[yy * w + xx] = true;
                }
            }
        }
    }
    band
}

/// Outline the tube on every frame where its mask is non-empty and label it.
/// Frames without a visible mask are copied unchanged.
pub fn spatial_prompt(clip: &FrameClip, tube: &Tube, style: &PromptStyle) -> FrameClip {
    let mut out = clip.clone();
    let (w, h) = (clip.width(), clip.height());
    let label = style.label_text.clone().unwrap_or_else(|| tube.id().to_string());
    for frame in out.frames_mut() {
        let Some(mask) = tube.mask(frame.index).filter(|m| !m.is_empty()) else {
            continue;
        };
        let band = outline_band(mask, style.outline_width);
        for (p, _) in band.iter().enumerate().filter(|(_, &on)| on) {
            frame.set_rgb(w, (p % w as usize) as u32, (p / w as usize) as u32, style.outline_color);
        }
        let ext = mask.extent().expect("non-empty mask has an extent");
        let origin = label_origin(&ext, &label, style, w, h);
        draw_text(frame, w, h, origin, &label, style.glyph_size, style.outline_color);
    }
    out
}

/// Stamp `#<frame index>` at the style's corner of every frame.
pub fn temporal_prompt(clip: &FrameClip, style: &PromptStyle) -> FrameClip {
    let mut out = clip.clone();
    let (w, h) = (clip.width(), clip.height());
    for frame in out.frames_mut() {
        let text = format!("#{}", frame.index);
        let origin = index_origin(&text, style, w, h);
        draw_text(frame, w, h, origin, &text, style.glyph_size, style.outline_color);
    }
    out
}

/// Hex SHA-256 over every frame's index and pixels.
pub fn clip_digest(clip: &FrameClip) -> String {
    let mut hasher = Sha256::new();
    hasher.update(clip.width().to_le_bytes());
    hasher.update(clip.height().to_le_bytes());
    for f in clip.frames() {
        hasher.update((f.index as u64).to_le_bytes());
        hasher.update(&f.pixels);
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
