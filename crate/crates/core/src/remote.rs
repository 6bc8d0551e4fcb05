//! HTTP clients for remote agent and tracker services.

use std::io::Cursor;
use std::time::Duration;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use crate::agents::{AgentBackend, AgentRequest, BackendError, WireFrame, WireResponse};
use crate::geometry::{BoundingBox, Frame, FrameClip};
use crate::tracker::{TrackReply, TrackWireRequest, TrackWireResponse, TrackerBackend, WireSeed};

pub fn encode_frame(frame: &Frame, width: u32, height: u32) -> Result<String, BackendError> {
    let img = image::RgbImage::from_raw(width, height, frame.pixels.clone())
        .ok_or_else(|| BackendError::Encoding("pixel buffer does not match dimensions".into()))?;
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| BackendError::Encoding(e.to_string()))?;
    Ok(STANDARD.encode(buf.into_inner()))
}

pub fn encode_frames(clip: &FrameClip) -> Result<Vec<WireFrame>, BackendError> {
    clip.frames()
        .iter()
        .map(|f| {
            Ok(WireFrame { id: f.index, png_base64: encode_frame(f, clip.width(), clip.height())? })
        })
        .collect()
}

/// Decode wire frames back into a clip (used by servers and test doubles).
pub fn decode_frames(frames: &[WireFrame], fps: f64) -> Result<FrameClip, BackendError> {
    let mut out = Vec::with_capacity(frames.len());
    let mut dims = None;
    for wf in frames {
        let bytes = STANDARD
            .decode(&wf.png_base64)
            .map_err(|e| BackendError::Encoding(e.to_string()))?;
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
            .map_err(|e| BackendError::Encoding(e.to_string()))?
            .to_rgb8();
        dims.get_or_insert((img.width(), img.height()));
        out.push(Frame::new(wf.id, img.into_raw()));
    }
    let (w, h) = dims.ok_or_else(|| BackendError::Encoding("no frames".into()))?;
    FrameClip::new(out, fps, w, h).map_err(|e| BackendError::Encoding(e.to_string()))
}

fn http_agent(timeout_ms: u64) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_millis(timeout_ms)))
        .http_status_as_error(false)
        .build()
        .into()
}

fn endpoint(base: &str, path: &str) -> String {
    format!("{}{path}", base.trim_end_matches('/'))
}

/// Agent backend speaking `POST /v1/agent`.
pub struct RemoteAgent {
    url: String,
    http: ureq::Agent,
}

impl RemoteAgent {
    pub fn new(base_url: &str, timeout_ms: u64) -> Self {
        Self { url: endpoint(base_url, "/v1/agent"), http: http_agent(timeout_ms) }
    }
}

impl AgentBackend for RemoteAgent {
    fn name(&self) -> &str {
        &self.url
    }

    fn call(&self, request: &AgentRequest) -> Result<WireResponse, BackendError> {
        let body = request.to_wire()?;
        let mut resp = self
            .http
            .post(&self.url)
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        resp.body_mut()
            .read_json::<WireResponse>()
            .map_err(|e| BackendError::Transport(format!("HTTP {status}: {e}")))
    }
}

/// Tracker backend speaking `POST /v1/track`.
pub struct RemoteTracker {
    url: String,
    http: ureq::Agent,
}

impl RemoteTracker {
    pub fn new(base_url: &str, timeout_ms: u64) -> Self {
        Self { url: endpoint(base_url, "/v1/track"), http: http_agent(timeout_ms) }
    }
}

impl TrackerBackend for RemoteTracker {
    fn name(&self) -> &str {
        &self.url
    }

    fn track(&self, clip: &FrameClip, seed: &BoundingBox) -> Result<TrackReply, BackendError> {
        let body = TrackWireRequest {
            frames: encode_frames(clip)?,
            seed: WireSeed { frame: seed.frame_index, bbox: seed.coords() },
        };
        let mut resp = self
            .http
            .post(&self.url)
            .send_json(&body)
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let wire: TrackWireResponse = resp
            .body_mut()
            .with_config()
            .limit(256 * 1024 * 1024)
            .read_json()
            .map_err(|e| BackendError::Transport(format!("HTTP {status}: {e}")))?;
        wire.into_reply(clip.width(), clip.height())
    }
}
