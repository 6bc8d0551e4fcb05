//! Hard-cut scene detection and agent-driven scene filtering.

use serde::{Deserialize, Serialize};

use crate::agents::{self, AgentBackend, CallOptions, Decision};
use crate::geometry::{Frame, FrameClip, TemporalSpan};
use crate::query::ParsedQuery;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSegment {
    pub index: usize,
    pub span: TemporalSpan,
}

/// Mean absolute per-channel difference between two equally sized frames.
pub fn frame_difference(a: &Frame, b: &Frame) -> f64 {
    let total: u64 = a
        .pixels
        .iter()
        .zip(&b.pixels)
        .map(|(&x, &y)| x.abs_diff(y) as u64)
        .sum();
    total as f64 / a.pixels.len() as f64
}

/// Split at every consecutive-frame difference strictly above `threshold`.
/// The result always partitions the clip's frame range.
pub fn detect_scenes(clip: &FrameClip, threshold: f64) -> Vec<SceneSegment> {
    let mut segments = Vec::new();
    let mut start = clip.first_index();
    for pair in clip.frames().windows(2) {
        if frame_difference(&pair[0], &pair[1]) > threshold {
            segments.push(SceneSegment {
                index: segments.len(),
                span: TemporalSpan { st: start, ed: pair[0].index },
            });
            start = pair[1].index;
        }
    }
    segments.push(SceneSegment {
        index: segments.len(),
        span: TemporalSpan { st: start, ed: clip.last_index() },
    });
    segments
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneVerdict {
    pub segment: SceneSegment,
    /// `None` when the judge never answered (segment kept).
    pub decision: Option<Decision>,
    pub caption: String,
}

/// Keep the segments the judge calls relevant. Unanswered segments are kept,
/// and if everything is rejected the input comes back unchanged.
pub fn filter_scenes(
    segments: &[SceneSegment],
    clip: &FrameClip,
    query: &ParsedQuery,
    judge: &dyn AgentBackend,
    opts: &CallOptions,
) -> (Vec<SceneSegment>, Vec<SceneVerdict>) {
    let verdicts: Vec<SceneVerdict> = segments
        .iter()
        .map(|seg| {
            let sub = clip.sub_clip(seg.span).expect("segment lies within the clip");
            let out = agents::judge_scene(&sub, query, judge, opts).value;
            SceneVerdict {
                segment: *seg,
                decision: out.as_ref().map(|(d, _)| *d),
                caption: out.map(|(_, c)| c).unwrap_or_default(),
            }
        })
        .collect();
    let kept: Vec<SceneSegment> = verdicts
        .iter()
        .filter(|v| v.decision != Some(Decision::Reject))
        .map(|v| v.segment)
        .collect();
    if kept.is_empty() {
        return (segments.to_vec(), verdicts);
    }
    (kept, verdicts)
}
