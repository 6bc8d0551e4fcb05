//! Full grounding run: ingest, parse the query, split and filter scenes,
//! then one episode per retained segment.

use serde::Serialize;
use thiserror::Error;

use crate::agents::Role;
use crate::config::{ConfigError, EngineConfig};
use crate::controller::{run_episode, Backends, ControllerError, EpisodeResult, EpisodeStatus};
use crate::geometry::{FrameClip, GeometryError, TemporalSpan, Tube};
use crate::query::{parse_query, ParsedQuery, QueryError};
use crate::scenes::{detect_scenes, filter_scenes, SceneSegment, SceneVerdict};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
}

/// Keep frames nearest to a `target_fps` grid. Clips already at or below the
/// target rate come back unchanged. Output frames are renumbered from 0.
pub fn resample(clip: &FrameClip, target_fps: f64) -> Result<FrameClip, GeometryError> {
    if target_fps >= clip.fps() {
        return Ok(clip.clone());
    }
    let duration = clip.len() as f64 / clip.fps();
    let n = ((duration * target_fps).floor() as usize).max(1);
    let mut frames = Vec::with_capacity(n);
    let mut last = None;
    for k in 0..n {
        let src = ((k as f64 * clip.fps() / target_fps).round() as usize).min(clip.len() - 1);
        if last == Some(src) {
            continue;
        }
        last = Some(src);
        let mut f = clip.frames()[src].clone();
        f.index = frames.len();
        frames.push(f);
    }
    FrameClip::new(frames, target_fps, clip.width(), clip.height())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SegmentEpisode {
    pub segment: SceneSegment,
    pub result: EpisodeResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Grounding {
    pub query: ParsedQuery,
    pub segments: Vec<SceneSegment>,
    pub verdicts: Vec<SceneVerdict>,
    pub retained: Vec<SceneSegment>,
    pub episodes: Vec<SegmentEpisode>,
    pub status: EpisodeStatus,
    pub tube: Option<Tube>,
    pub span: Option<TemporalSpan>,
}

impl Grounding {
    pub fn agent_calls(&self) -> u32 {
        self.episodes.iter().map(|e| e.result.counters.agent_calls).sum()
    }
}

/// Run the whole pipeline on an already sampled clip. Segments are tried in
/// order; the first success wins, otherwise the first best-effort result.
pub fn ground(
    clip: &FrameClip,
    raw_query: &str,
    backends: &Backends,
    config: &EngineConfig,
) -> Result<Grounding, PipelineError> {
    config.validate()?;
    let query = parse_query(raw_query, Some(backends.agent), &config.call_options(Role::Parse))?;
    let segments = detect_scenes(clip, config.scene_threshold);
    let (retained, verdicts) =
        filter_scenes(&segments, clip, &query, backends.agent, &config.call_options(Role::SceneJudge));

    let mut episodes = Vec::new();
    for seg in &retained {
        let sub = clip.sub_clip(seg.span)?;
        let result = run_episode(&sub, &query, backends, config)?;
        let done = result.status == EpisodeStatus::Success;
        episodes.push(SegmentEpisode { segment: *seg, result });
        if done {
            break;
        }
    }
    let pick = episodes
        .iter()
        .find(|e| e.result.status == EpisodeStatus::Success)
        .or_else(|| episodes.iter().find(|e| e.result.status == EpisodeStatus::BestEffort));
    let (status, tube, span) = match pick {
        Some(e) => (e.result.status, e.result.tube.clone(), e.result.span),
        None => (EpisodeStatus::Failure, None, None),
    };
    Ok(Grounding { query, segments, verdicts, retained, episodes, status, tube, span })
}
