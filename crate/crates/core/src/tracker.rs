//! Tracker tool contract: one seed box on one frame in, a mask tube over the
//! whole working clip out.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{BackendError, WireFrame};
use crate::geometry::{BoundingBox, FrameClip, Mask, Rle, Tube, TubeId};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackFail {
    #[error("seed box {0} lies outside the clip")]
    SeedOutsideClip(BoundingBox),
    #[error("tracker reported failure: {0}")]
    Reported(String),
    #[error("tracker returned no visible mask")]
    Vacant,
    #[error("seed-frame mask does not touch the seed box")]
    SeedMiss,
    #[error("malformed tracker output: {0}")]
    Malformed(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// What a tracker hands back before validation.
#[derive(Debug, Clone, PartialEq)]
pub enum TrackReply {
    Masks(Vec<Mask>),
    Fail(String),
}

pub trait TrackerBackend: Send + Sync {
    fn name(&self) -> &str;

    fn track(&self, clip: &FrameClip, seed: &BoundingBox) -> Result<TrackReply, BackendError>;
}

impl<B: TrackerBackend + ?Sized> TrackerBackend for &B {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn track(&self, clip: &FrameClip, seed: &BoundingBox) -> Result<TrackReply, BackendError> {
        (**self).track(clip, seed)
    }
}

/// Run the tracker and validate its output into a tube spanning `clip`.
/// Frames the tracker did not return are filled with empty masks.
pub fn track(clip: &FrameClip, seed: &BoundingBox, id: TubeId, backend: &dyn TrackerBackend) -> Result<Tube, TrackFail> {
    if !seed.fits(clip.width(), clip.height()) || clip.frame(seed.frame_index).is_none() {
        return Err(TrackFail::SeedOutsideClip(*seed));
    }
    let masks = match backend.track(clip, seed)? {
        TrackReply::Fail(reason) => return Err(TrackFail::Reported(reason)),
        TrackReply::Masks(m) => m,
    };
    let (w, h) = (clip.width(), clip.height());
    let mut by_frame: BTreeMap<usize, Mask> = BTreeMap::new();
    for m in masks {
        if m.width() != w || m.height() != h {
            return Err(TrackFail::Malformed(format!(
                "mask {}x{} on a {w}x{h} clip",
                m.width(),
                m.height()
            )));
        }
        if clip.frame(m.frame_index()).is_some() {
            by_frame.insert(m.frame_index(), m);
        }
    }
    let full: Vec<Mask> = clip
        .frames()
        .iter()
        .map(|f| by_frame.remove(&f.index).unwrap_or_else(|| Mask::empty(f.index, w, h)))
        .collect();
    let tube = Tube::new(id, full).map_err(|e| TrackFail::Malformed(e.to_string()))?;
    if tube.is_vacant() {
        return Err(TrackFail::Vacant);
    }
    let seed_mask = tube.mask(seed.frame_index).expect("tube spans the clip");
    if seed_mask.area_inside(seed) == 0 {
        return Err(TrackFail::SeedMiss);
    }
    Ok(tube)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireSeed {
    pub frame: usize,
    #[serde(rename = "box")]
    pub bbox: [u32; 4],
}

/// `POST /v1/track` body.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackWireRequest {
    pub frames: Vec<WireFrame>,
    pub seed: WireSeed,
}

impl TrackWireRequest {
    /// Replay key: frame ids plus seed.
    pub fn key(&self) -> String {
        track_key(&self.frames.iter().map(|f| f.id).collect::<Vec<_>>(), &self.seed)
    }
}

pub fn track_key(frame_ids: &[usize], seed: &WireSeed) -> String {
    let first = frame_ids.first().copied().unwrap_or(0);
    let last = frame_ids.last().copied().unwrap_or(0);
    format!("{first}-{last}:{}@{:?}", seed.frame, seed.bbox)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrackStatus {
    Ok,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireTube {
    pub first: usize,
    /// Keyed by frame index (a decimal string on the wire); `null` for an
    /// empty mask.
    #[serde(deserialize_with = "frame_keyed")]
    pub masks: BTreeMap<usize, Option<Rle>>,
}

// Keys arrive as strings; going through `String` also works when the tube is
// nested in a buffered (internally tagged) enum.
fn frame_keyed<'de, D: serde::Deserializer<'de>>(d: D) -> Result<BTreeMap<usize, Option<Rle>>, D::Error> {
    BTreeMap::<String, Option<Rle>>::deserialize(d)?
        .into_iter()
        .map(|(k, v)| {
            k.parse::<usize>()
                .map(|i| (i, v))
                .map_err(|_| serde::de::Error::custom(format!("frame key {k:?} is not an index")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrackWireResponse {
    pub status: TrackStatus,
    #[serde(default)]
    pub tube: Option<WireTube>,
}

impl WireTube {
    pub fn from_masks<'a>(masks: impl IntoIterator<Item = &'a Mask>) -> Option<Self> {
        let mut map = BTreeMap::new();
        let mut first = usize::MAX;
        for m in masks {
            first = first.min(m.frame_index());
            map.insert(m.frame_index(), (!m.is_empty()).then(|| m.to_rle()));
        }
        (!map.is_empty()).then_some(WireTube { first, masks: map })
    }

    pub fn from_tube(t: &Tube) -> Self {
        Self::from_masks(t.masks()).expect("tube is non-empty")
    }

    pub fn to_masks(&self, width: u32, height: u32) -> Result<Vec<Mask>, TrackFail> {
        self.masks
            .iter()
            .map(|(&idx, rle)| match rle {
                None => Ok(Mask::empty(idx, width, height)),
                Some(r) => Mask::from_rle(idx, r).map_err(|e| TrackFail::Malformed(e.to_string())),
            })
            .collect()
    }
}

impl TrackWireResponse {
    pub fn from_reply(reply: &TrackReply) -> Self {
        match reply {
            TrackReply::Fail(_) => TrackWireResponse { status: TrackStatus::Fail, tube: None },
            TrackReply::Masks(m) => TrackWireResponse { status: TrackStatus::Ok, tube: WireTube::from_masks(m) },
        }
    }

    pub fn into_reply(self, width: u32, height: u32) -> Result<TrackReply, BackendError> {
        match (self.status, self.tube) {
            (TrackStatus::Fail, _) => Ok(TrackReply::Fail("fail".into())),
            (TrackStatus::Ok, None) => Ok(TrackReply::Masks(Vec::new())),
            (TrackStatus::Ok, Some(t)) => t
                .to_masks(width, height)
                .map(TrackReply::Masks)
                .map_err(|e| BackendError::Transport(e.to_string())),
        }
    }
}
