//! Agentic spatio-temporal video grounding.
//!
//! A controller drives two agent roles over a clip: a spatial agent proposes
//! one box per skimmed frame, a tracker turns it into a mask tube, and a
//! temporal agent verifies the outlined tube and localizes the action span.
//! A candidate memory skips tubes already examined, and an exhausted first
//! pass falls back to temporal-localization-first on a trimmed clip.
//!
//! Backends are pluggable ([`agents::AgentBackend`], [`tracker::TrackerBackend`]):
//! in-process scripts, HTTP services, or replay logs. [`simworld`] builds
//! synthetic clips with exact ground truth and oracle backends, and [`eval`]
//! scores predictions.

pub mod agents;
pub mod config;
pub mod controller;
pub mod eval;
pub mod geometry;
pub mod memory;
pub mod pipeline;
pub mod prompting;
pub mod query;
pub mod recorded;
pub mod remote;
pub mod scenes;
pub mod simworld;
pub mod tracker;

pub use agents::{AgentBackend, AgentRequest, BackendError, Decision, Role, ScriptedAgent, WireResponse};
pub use config::{ConfigError, EngineConfig};
pub use eval::{aggregate, tiou, viou, viou_at_r, Annotation, MetricsReport};
pub use controller::{run_episode, Action, Backends, EpisodeResult, EpisodeStatus};
pub use geometry::{
    box_iou, mask_iou, mask_to_box, trim, tube_iou, BoundingBox, Frame, FrameClip, GeometryError, Mask, Rle,
    TemporalSpan, Tube, TubeId,
};
pub use memory::{CandidateMemory, DialogueContext, Message, MessageKind, Source};
pub use pipeline::{ground, Grounding, PipelineError};
pub use prompting::PromptStyle;
pub use query::{parse_query, ParsedQuery, QueryError};
pub use scenes::SceneSegment;
pub use simworld::{generate, FaultSpec, GenParams, Scenario, World};
pub use tracker::{TrackFail, TrackReply, TrackerBackend};
