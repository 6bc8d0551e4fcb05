//! Frames, boxes, run-length masks, tubes and spans, plus the IoU, trim and
//! mask-to-box math every other module relies on.
//!
//! Conventions: pixel coordinates are 0-based, boxes are half-open
//! `[x1, x2) x [y1, y2)`, frame indices are sampled-frame indices, and mask
//! run-lengths traverse the bitmap column-major starting with a zero run.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid box ({x1},{y1},{x2},{y2})")]
    InvalidBox { x1: u32, y1: u32, x2: u32, y2: u32 },
    #[error("invalid span: st={st} > ed={ed}")]
    InvalidSpan { st: usize, ed: usize },
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("invalid run-length encoding: {0}")]
    InvalidRle(String),
    #[error("invalid clip: {0}")]
    InvalidClip(String),
    #[error("invalid tube: {0}")]
    InvalidTube(String),
    #[error("span {span} does not intersect frames [{first}, {last}]")]
    EmptyTrim { span: TemporalSpan, first: usize, last: usize },
}

/// One sampled frame: row-major RGB, 8 bits per channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub index: usize,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(index: usize, pixels: Vec<u8>) -> Self {
        Self { index, pixels }
    }

    pub fn filled(index: usize, width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut pixels = Vec::with_capacity(n * 3);
        for _ in 0..n {
            pixels.extend_from_slice(&rgb);
        }
        Self { index, pixels }
    }

    #[inline]
    pub fn rgb(&self, width: u32, x: u32, y: u32) -> [u8; 3] {
        let o = (y as usize * width as usize + x as usize) * 3;
        [self.pixels[o], self.pixels[o + 1], self.pixels[o + 2]]
    }

    #[inline]
    pub fn set_rgb(&mut self, width: u32, x: u32, y: u32, rgb: [u8; 3]) {
        let o = (y as usize * width as usize + x as usize) * 3;
        self.pixels[o..o + 3].copy_from_slice(&rgb);
    }
}

/// An ordered run of frames sharing dimensions.
///
/// Frame indices are contiguous. A freshly ingested clip starts at 0; clips
/// cut out of a larger one (scene segments, fallback trims) keep the
/// original indices so tubes and spans stay in one index space.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameClip {
    frames: Vec<Frame>,
    fps: f64,
    width: u32,
    height: u32,
}

impl FrameClip {
    pub fn new(frames: Vec<Frame>, fps: f64, width: u32, height: u32) -> Result<Self, GeometryError> {
        if frames.is_empty() {
            return Err(GeometryError::InvalidClip("no frames".into()));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(GeometryError::InvalidClip(format!("fps must be positive, got {fps}")));
        }
        if width == 0 || height == 0 {
            return Err(GeometryError::InvalidClip("zero-sized frames".into()));
        }
        let expected = width as usize * height as usize * 3;
        let first = frames[0].index;
        for (k, f) in frames.iter().enumerate() {
            if f.index != first + k {
                return Err(GeometryError::InvalidClip(format!(
                    "frame indices not contiguous at position {k} (index {})",
                    f.index
                )));
            }
            if f.pixels.len() != expected {
                return Err(GeometryError::InvalidClip(format!(
                    "frame {} has {} bytes, expected {expected}",
                    f.index,
                    f.pixels.len()
                )));
            }
        }
        Ok(Self { frames, fps, width, height })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut [Frame] {
        &mut self.frames
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn first_index(&self) -> usize {
        self.frames[0].index
    }

    pub fn last_index(&self) -> usize {
        self.first_index() + self.frames.len() - 1
    }

    pub fn span(&self) -> TemporalSpan {
        TemporalSpan { st: self.first_index(), ed: self.last_index() }
    }

    /// Frame by absolute index.
    pub fn frame(&self, index: usize) -> Option<&Frame> {
        index.checked_sub(self.first_index()).and_then(|k| self.frames.get(k))
    }

    /// The frames of this clip inside `span`, keeping their indices.
    pub fn sub_clip(&self, span: TemporalSpan) -> Result<FrameClip, GeometryError> {
        let inter = self.span().intersect(&span).ok_or(GeometryError::EmptyTrim {
            span,
            first: self.first_index(),
            last: self.last_index(),
        })?;
        let lo = inter.st - self.first_index();
        let hi = inter.ed - self.first_index();
        Ok(FrameClip {
            frames: self.frames[lo..=hi].to_vec(),
            fps: self.fps,
            width: self.width,
            height: self.height,
        })
    }
}

/// Inclusive range of sampled-frame indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[usize; 2]", try_from = "[usize; 2]")]
pub struct TemporalSpan {
    pub st: usize,
    pub ed: usize,
}

impl TemporalSpan {
    pub fn new(st: usize, ed: usize) -> Result<Self, GeometryError> {
        if st > ed {
            return Err(GeometryError::InvalidSpan { st, ed });
        }
        Ok(Self { st, ed })
    }

    pub fn len(&self) -> usize {
        self.ed - self.st + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, frame: usize) -> bool {
        self.st <= frame && frame <= self.ed
    }

    pub fn intersect(&self, other: &TemporalSpan) -> Option<TemporalSpan> {
        let st = self.st.max(other.st);
        let ed = self.ed.min(other.ed);
        (st <= ed).then_some(TemporalSpan { st, ed })
    }

    pub fn frames(&self) -> std::ops::RangeInclusive<usize> {
        self.st..=self.ed
    }
}

impl fmt::Display for TemporalSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.st, self.ed)
    }
}

impl From<TemporalSpan> for [usize; 2] {
    fn from(s: TemporalSpan) -> Self {
        [s.st, s.ed]
    }
}

impl TryFrom<[usize; 2]> for TemporalSpan {
    type Error = GeometryError;
    fn try_from(v: [usize; 2]) -> Result<Self, Self::Error> {
        TemporalSpan::new(v[0], v[1])
    }
}

/// Axis-aligned box on one frame, half-open in both axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoundingBox {
    pub frame_index: usize,
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl BoundingBox {
    pub fn new(frame_index: usize, x1: u32, y1: u32, x2: u32, y2: u32) -> Result<Self, GeometryError> {
        if x1 >= x2 || y1 >= y2 {
            return Err(GeometryError::InvalidBox { x1, y1, x2, y2 });
        }
        Ok(Self { frame_index, x1, y1, x2, y2 })
    }

    /// Build from the `[x1, y1, x2, y2]` wire form, checking frame bounds.
    pub fn from_coords(frame_index: usize, c: [i64; 4], width: u32, height: u32) -> Result<Self, GeometryError> {
        let bad = || GeometryError::InvalidBox {
            x1: c[0].clamp(0, u32::MAX as i64) as u32,
            y1: c[1].clamp(0, u32::MAX as i64) as u32,
            x2: c[2].clamp(0, u32::MAX as i64) as u32,
            y2: c[3].clamp(0, u32::MAX as i64) as u32,
        };
        if c.iter().any(|&v| v < 0) || c[2] > width as i64 || c[3] > height as i64 {
            return Err(bad());
        }
        BoundingBox::new(frame_index, c[0] as u32, c[1] as u32, c[2] as u32, c[3] as u32)
    }

    pub fn coords(&self) -> [u32; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn width(&self) -> u32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> u32 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> u64 {
        self.width() as u64 * self.height() as u64
    }

    pub fn fits(&self, width: u32, height: u32) -> bool {
        self.x2 <= width && self.y2 <= height
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        self.x1 <= x && x < self.x2 && self.y1 <= y && y < self.y2
    }
}

impl fmt::Display for BoundingBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}, {}, {}]", self.x1, self.y1, self.x2, self.y2)
    }
}

/// JSON form of a mask: `{ "size": [H, W], "counts": [...] }`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rle {
    pub size: [u32; 2],
    pub counts: Vec<u32>,
}

/// Binary mask for one frame stored as column-major run lengths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    frame_index: usize,
    width: u32,
    height: u32,
    counts: Vec<u32>,
}

impl Mask {
    pub fn empty(frame_index: usize, width: u32, height: u32) -> Self {
        Self { frame_index, width, height, counts: vec![width * height] }
    }

    /// Encode a row-major bitmap (`bits[y * width + x]`).
    pub fn from_bitmap(frame_index: usize, width: u32, height: u32, bits: &[bool]) -> Self {
        let (w, h) = (width as usize, height as usize);
        assert_eq!(bits.len(), w * h, "bitmap length must equal width*height");
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for x in 0..w {
            for y in 0..h {
                let v = bits[y * w + x];
                if v != current {
                    counts.push(run);
                    run = 0;
                    current = v;
                }
                run += 1;
            }
        }
        counts.push(run);
        Self { frame_index, width, height, counts }
    }

    /// Filled rectangle, clipped to the frame.
    pub fn from_rect(frame_index: usize, width: u32, height: u32, b: &BoundingBox) -> Self {
        let mut bits = vec![false; width as usize * height as usize];
        for y in b.y1..b.y2.min(height) {
            for x in b.x1..b.x2.min(width) {
                bits[y as usize * width as usize + x as usize] = true;
            }
        }
        Self::from_bitmap(frame_index, width, height, &bits)
    }

    pub fn from_counts(frame_index: usize, width: u32, height: u32, counts: Vec<u32>) -> Result<Self, GeometryError> {
        if counts.is_empty() {
            return Err(GeometryError::InvalidRle("no runs".into()));
        }
        if counts.iter().skip(1).any(|&c| c == 0) {
            return Err(GeometryError::InvalidRle("zero-length run after the first".into()));
        }
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        if total != width as u64 * height as u64 {
            return Err(GeometryError::InvalidRle(format!(
                "runs sum to {total}, expected {}",
                width as u64 * height as u64
            )));
        }
        Ok(Self { frame_index, width, height, counts })
    }

    pub fn from_rle(frame_index: usize, rle: &Rle) -> Result<Self, GeometryError> {
        Self::from_counts(frame_index, rle.size[1], rle.size[0], rle.counts.clone())
    }

    pub fn to_rle(&self) -> Rle {
        Rle { size: [self.height, self.width], counts: self.counts.clone() }
    }

    /// Row-major bitmap.
    pub fn to_bitmap(&self) -> Vec<bool> {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut bits = vec![false; w * h];
        let mut pos = 0usize;
        let mut value = false;
        for &c in &self.counts {
            if value {
                for p in pos..pos + c as usize {
                    let (x, y) = (p / h, p % h);
                    bits[y * w + x] = true;
                }
            }
            pos += c as usize;
            value = !value;
        }
        bits
    }

    pub fn frame_index(&self) -> usize {
        self.frame_index
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| c as u64).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.area() == 0
    }

    pub fn with_frame_index(mut self, frame_index: usize) -> Self {
        self.frame_index = frame_index;
        self
    }

    /// Tight bounding box of the set pixels, without any cleanup.
    pub fn extent(&self) -> Option<BoundingBox> {
        let h = self.height as u64;
        let (mut x1, mut y1, mut x2, mut y2) = (u32::MAX, u32::MAX, 0u32, 0u32);
        let mut pos = 0u64;
        let mut value = false;
        for &c in &self.counts {
            if value && c > 0 {
                let (first, last) = (pos, pos + c as u64 - 1);
                let (fx, fy) = ((first / h) as u32, (first % h) as u32);
                let (lx, ly) = ((last / h) as u32, (last % h) as u32);
                x1 = x1.min(fx);
                x2 = x2.max(lx + 1);
                // a run crossing a column boundary touches both the top and bottom rows
                if fx != lx {
                    y1 = 0;
                    y2 = self.height;
                } else {
                    y1 = y1.min(fy);
                    y2 = y2.max(ly + 1);
                }
            }
            pos += c as u64;
            value = !value;
        }
        (x1 != u32::MAX).then(|| BoundingBox { frame_index: self.frame_index, x1, y1, x2, y2 })
    }

    /// Number of set pixels inside `b`.
    pub fn area_inside(&self, b: &BoundingBox) -> u64 {
        let h = self.height as u64;
        let mut pos = 0u64;
        let mut value = false;
        let mut n = 0;
        for &c in &self.counts {
            if value {
                for p in pos..pos + c as u64 {
                    let (x, y) = ((p / h) as u32, (p % h) as u32);
                    if b.contains(x, y) {
                        n += 1;
                    }
                }
            }
            pos += c as u64;
            value = !value;
        }
        n
    }

    fn runs(&self) -> impl Iterator<Item = (bool, u32)> + '_ {
        self.counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(i, &c)| (i % 2 == 1, c))
    }
}

fn intersection_area(a: &Mask, b: &Mask) -> u64 {
    let mut ai = a.runs();
    let mut bi = b.runs();
    let mut ca = ai.next();
    let mut cb = bi.next();
    let mut inter = 0u64;
    while let (Some((va, la)), Some((vb, lb))) = (ca, cb) {
        let step = la.min(lb);
        if va && vb {
            inter += step as u64;
        }
        ca = if la == step { ai.next() } else { Some((va, la - step)) };
        cb = if lb == step { bi.next() } else { Some((vb, lb - step)) };
    }
    inter
}

pub fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = a.x2.min(b.x2).saturating_sub(a.x1.max(b.x1)) as u64;
    let iy = a.y2.min(b.y2).saturating_sub(a.y1.max(b.y1)) as u64;
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Set IoU of two masks; two empty masks are identical (1.0).
pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64, GeometryError> {
    if a.width != b.width || a.height != b.height {
        return Err(GeometryError::DimensionMismatch(a.width, a.height, b.width, b.height));
    }
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

fn optional_mask_iou(a: Option<&Mask>, b: Option<&Mask>) -> f64 {
    let a_empty = a.is_none_or(|m| m.is_empty());
    let b_empty = b.is_none_or(|m| m.is_empty());
    match (a_empty, b_empty) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        // same-clip tubes share dimensions; a mismatch scores as disjoint
        (false, false) => mask_iou(a.unwrap(), b.unwrap()).unwrap_or(0.0),
    }
}

/// Identifier of a tube inside one episode (rendered as the outline label).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TubeId(pub u32);

impl fmt::Display for TubeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Per-frame masks of one entity over a contiguous frame range.
#[derive(Debug, Clone, PartialEq)]
pub struct Tube {
    id: TubeId,
    masks: BTreeMap<usize, Mask>,
}

impl Tube {
    pub fn new(id: TubeId, masks: Vec<Mask>) -> Result<Self, GeometryError> {
        let mut map = BTreeMap::new();
        for m in masks {
            let idx = m.frame_index;
            if map.insert(idx, m).is_some() {
                return Err(GeometryError::InvalidTube(format!("duplicate frame {idx}")));
            }
        }
        Self::from_map(id, map)
    }

    fn from_map(id: TubeId, masks: BTreeMap<usize, Mask>) -> Result<Self, GeometryError> {
        let (Some((&first, m0)), Some((&last, _))) = (masks.first_key_value(), masks.last_key_value()) else {
            return Err(GeometryError::InvalidTube("no frames".into()));
        };
        if last - first + 1 != masks.len() {
            return Err(GeometryError::InvalidTube(format!(
                "frame range [{first}, {last}] is not contiguous"
            )));
        }
        let (w, h) = (m0.width, m0.height);
        if let Some(m) = masks.values().find(|m| m.width != w || m.height != h) {
            return Err(GeometryError::DimensionMismatch(w, h, m.width, m.height));
        }
        Ok(Self { id, masks })
    }

    pub fn id(&self) -> TubeId {
        self.id
    }

    pub fn with_id(mut self, id: TubeId) -> Self {
        self.id = id;
        self
    }

    pub fn first(&self) -> usize {
        *self.masks.keys().next().expect("tube is non-empty")
    }

    pub fn last(&self) -> usize {
        *self.masks.keys().next_back().expect("tube is non-empty")
    }

    pub fn span(&self) -> TemporalSpan {
        TemporalSpan { st: self.first(), ed: self.last() }
    }

    pub fn mask(&self, frame: usize) -> Option<&Mask> {
        self.masks.get(&frame)
    }

    pub fn masks(&self) -> impl Iterator<Item = &Mask> {
        self.masks.values()
    }

    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    pub fn width(&self) -> u32 {
        self.masks.values().next().map_or(0, |m| m.width)
    }

    pub fn height(&self) -> u32 {
        self.masks.values().next().map_or(0, |m| m.height)
    }

    /// True when every mask is empty.
    pub fn is_vacant(&self) -> bool {
        self.masks.values().all(Mask::is_empty)
    }
}

#[derive(Serialize)]
struct TubeView {
    id: TubeId,
    first: usize,
    masks: BTreeMap<usize, Option<Rle>>,
}

/// Serialized as `{ "id", "first", "masks": { "<idx>": RLE | null } }`.
impl Serialize for Tube {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        TubeView {
            id: self.id,
            first: self.first(),
            masks: self
                .masks
                .iter()
                .map(|(&k, m)| (k, (!m.is_empty()).then(|| m.to_rle())))
                .collect(),
        }
        .serialize(serializer)
    }
}

/// Mean per-frame mask IoU over the union of the two tubes' frames. A frame
/// covered by only one tube counts as that tube against an empty mask.
pub fn tube_iou(a: &Tube, b: &Tube) -> f64 {
    let frames: BTreeSet<usize> = a.masks.keys().chain(b.masks.keys()).copied().collect();
    let total: f64 = frames
        .iter()
        .map(|&f| optional_mask_iou(a.mask(f), b.mask(f)))
        .sum();
    total / frames.len() as f64
}

/// Restrict `t` to `span`, keeping its id.
pub fn trim(t: &Tube, span: TemporalSpan) -> Result<Tube, GeometryError> {
    let inter = t.span().intersect(&span).ok_or(GeometryError::EmptyTrim {
        span,
        first: t.first(),
        last: t.last(),
    })?;
    let masks = t
        .masks
        .range(inter.st..=inter.ed)
        .map(|(&k, m)| (k, m.clone()))
        .collect();
    Tube::from_map(t.id, masks)
}

/// Bounding box of the largest 4-connected component left after one 3x3
/// morphological opening; `None` when nothing survives.
pub fn mask_to_box(m: &Mask) -> Option<BoundingBox> {
    if m.is_empty() {
        return None;
    }
    let (w, h) = (m.width as usize, m.height as usize);
    let opened = dilate3(&erode3(&m.to_bitmap(), w, h), w, h);

    let mut seen = vec![false; w * h];
    let mut best: Option<(usize, [usize; 4])> = None;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !opened[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let mut size = 0usize;
        let mut ext = [usize::MAX, usize::MAX, 0, 0];
        while let Some(p) = queue.pop_front() {
            let (x, y) = (p % w, p / w);
            size += 1;
            ext[0] = ext[0].min(x);
            ext[1] = ext[1].min(y);
            ext[2] = ext[2].max(x);
            ext[3] = ext[3].max(y);
            let mut visit = |q: usize| {
                if opened[q] && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
        }
        if best.is_none_or(|(s, _)| size > s) {
            best = Some((size, ext));
        }
    }
    best.map(|(_, e)| BoundingBox {
        frame_index: m.frame_index,
        x1: e[0] as u32,
        y1: e[1] as u32,
        x2: e[2] as u32 + 1,
        y2: e[3] as u32 + 1,
    })
}

// Out-of-frame pixels count as background for erosion.
fn erode3(bits: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = vec![false; w * h];
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            out[y * w + x] = (y - 1..=y + 1).all(|yy| (x - 1..=x + 1).all(|xx| bits[yy * w + xx]));
        }
    }
    out
}

fn dilate3(bits: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            if !bits[y * w + x] {
                continue;
            }
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    out[yy * w + xx] = true;
                }
            }
        }
    }
    out
}
