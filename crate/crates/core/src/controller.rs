//! The episode loop: a fixed policy table over
//! Propose / Track / Verify / Advance / Fallback / Terminate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{self, AgentBackend, Decision, Role};
use crate::config::{ConfigError, EngineConfig};
use crate::geometry::{trim, BoundingBox, FrameClip, TemporalSpan, Tube, TubeId};
use crate::memory::{Admission, CandidateMemory, DialogueContext, Message, MessageKind, Source};
use crate::prompting::{spatial_prompt, temporal_prompt};
use crate::query::ParsedQuery;
use crate::tracker::{self, TrackerBackend};

/// Context message after a failed track.
pub const TRACK_FAIL: &str = "track-fail";
/// Context message after a duplicate candidate.
pub const DUPLICATE: &str = "duplicate";
/// Context message when the localized span misses the accepted tube.
pub const CONTRADICTION: &str = "localization-contradiction";

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Normal,
    FallbackPending,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Pending {
    None,
    Proposed(BoundingBox),
    Tracked(Tube),
}

/// Controller state. `cursor` counts frames from the start of the working
/// clip, which is shorter than the input clip after a fallback.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub mode: Mode,
    pub cursor: usize,
    pub pass: u8,
    pub pending: Pending,
    pub clip_len: usize,
}

impl ControllerState {
    pub fn new(clip_len: usize) -> Self {
        Self { mode: Mode::Normal, cursor: 0, pass: 0, pending: Pending::None, clip_len }
    }

    pub fn exhausted(&self) -> bool {
        self.cursor >= self.clip_len
    }

    /// Move the cursor by `stride`. Running off the end on the first pass
    /// arms the fallback; on the second pass `policy` terminates.
    pub fn advance(&mut self, stride: usize) {
        assert!(stride >= 1, "stride must be positive");
        self.cursor += stride;
        self.pending = Pending::None;
        if self.exhausted() && self.pass == 0 {
            self.mode = Mode::FallbackPending;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Propose,
    Track,
    Verify,
    Advance,
    Fallback,
    Terminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeStatus {
    Success,
    BestEffort,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observation {
    Start,
    Proposed { frame: usize, bbox: [u32; 4] },
    Abstained { frame: usize },
    Tracked { tube: TubeId, span: TemporalSpan },
    TrackFailed { reason: String },
    Duplicate { tube: TubeId, of: TubeId, iou: f64 },
    Accepted { tube: TubeId, span: TemporalSpan, caption: String },
    Rejected { tube: TubeId, caption: String },
    Contradiction { tube: TubeId, span: TemporalSpan },
    Advanced { cursor: usize },
    FallbackApplied { span: TemporalSpan, caption: String, cleared: usize },
    Terminated { status: EpisodeStatus },
}

/// The policy table.
pub fn policy(state: &ControllerState, last: &Observation) -> Action {
    if matches!(last, Observation::Accepted { .. }) {
        return Action::Terminate;
    }
    if state.mode == Mode::FallbackPending {
        return Action::Fallback;
    }
    match state.pending {
        Pending::Proposed(_) => return Action::Track,
        Pending::Tracked(_) => return Action::Verify,
        Pending::None => {}
    }
    if matches!(
        last,
        Observation::Abstained { .. }
            | Observation::TrackFailed { .. }
            | Observation::Duplicate { .. }
            | Observation::Rejected { .. }
            | Observation::Contradiction { .. }
    ) {
        return Action::Advance;
    }
    if state.exhausted() {
        return if state.pass == 0 { Action::Fallback } else { Action::Terminate };
    }
    Action::Propose
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    /// Logical timestamp.
    pub step: u64,
    pub pass: u8,
    /// Absolute frame index under the cursor, if it is still inside the clip.
    pub frame: Option<usize>,
    pub action: Action,
    pub observation: Observation,
    pub agent_calls: u32,
    pub tracker_calls: u32,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Counters {
    pub propose: u32,
    pub track: u32,
    pub verify: u32,
    pub advance: u32,
    pub fallback: u32,
    pub terminate: u32,
    pub propose_by_pass: [u32; 2],
    pub verify_by_pass: [u32; 2],
    /// Backend round trips, retries included.
    pub agent_calls: u32,
    pub tracker_calls: u32,
    pub duplicates: u32,
    pub track_failures: u32,
}

impl Counters {
    fn count(&mut self, action: Action, pass: u8) {
        let p = pass as usize;
        match action {
            Action::Propose => {
                self.propose += 1;
                self.propose_by_pass[p] += 1;
            }
            Action::Track => self.track += 1,
            Action::Verify => {
                self.verify += 1;
                self.verify_by_pass[p] += 1;
            }
            Action::Advance => self.advance += 1,
            Action::Fallback => self.fallback += 1,
            Action::Terminate => self.terminate += 1,
        }
    }
}

/// Memory contents when a pass ended.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MemorySnapshot {
    pub pass: u8,
    pub threshold: f64,
    pub tubes: Vec<Tube>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FallbackInfo {
    pub span: TemporalSpan,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub status: EpisodeStatus,
    pub tube: Option<Tube>,
    pub span: Option<TemporalSpan>,
    /// Working clip of each pass.
    pub clips: Vec<TemporalSpan>,
    pub fallback: Option<FallbackInfo>,
    pub trace: Vec<TraceRecord>,
    pub counters: Counters,
    pub memory: Vec<MemorySnapshot>,
    pub context: Vec<Message>,
}

pub struct Backends<'a> {
    pub agent: &'a dyn AgentBackend,
    pub tracker: &'a dyn TrackerBackend,
}

struct Outcome {
    observation: Observation,
    agent_calls: u32,
    tracker_calls: u32,
    errors: Vec<String>,
}

impl Outcome {
    fn new(observation: Observation) -> Self {
        Self { observation, agent_calls: 0, tracker_calls: 0, errors: Vec::new() }
    }
}

struct Episode<'a> {
    query: &'a ParsedQuery,
    backends: &'a Backends<'a>,
    config: &'a EngineConfig,
    work: FrameClip,
    state: ControllerState,
    memory: CandidateMemory,
    ctx: DialogueContext,
    next_id: u32,
    accepted: Option<(Tube, TemporalSpan)>,
    fallback: Option<FallbackInfo>,
    snapshots: Vec<MemorySnapshot>,
    clips: Vec<TemporalSpan>,
}

impl Episode<'_> {
    fn cursor_frame(&self) -> Option<usize> {
        (!self.state.exhausted()).then(|| self.work.first_index() + self.state.cursor)
    }

    fn snapshot(&mut self) {
        self.snapshots.push(MemorySnapshot {
            pass: self.state.pass,
            threshold: self.memory.threshold(),
            tubes: self.memory.tubes().to_vec(),
        });
    }

    fn propose(&mut self) -> Outcome {
        let frame = self.cursor_frame().expect("policy proposes only inside the clip");
        let opts = self.config.call_options(Role::Propose);
        let called = agents::propose(&self.work, frame, self.query, &mut self.ctx, self.backends.agent, &opts);
        let observation = match called.value {
            Some(b) => {
                self.ctx.update(Source::Sra, MessageKind::Status, format!("box {:?} on #{frame}", b.coords()));
                self.state.pending = Pending::Proposed(b);
                Observation::Proposed { frame, bbox: b.coords() }
            }
            None => {
                self.ctx.update(Source::Sra, MessageKind::Status, format!("abstain on #{frame}"));
                Observation::Abstained { frame }
            }
        };
        Outcome { observation, agent_calls: called.attempts, tracker_calls: 0, errors: called.errors }
    }

    fn track(&mut self) -> Outcome {
        let Pending::Proposed(seed) = std::mem::replace(&mut self.state.pending, Pending::None) else {
            unreachable!("policy tracks only a pending proposal")
        };
        let id = TubeId(self.next_id);
        self.next_id += 1;
        let mut out = Outcome::new(Observation::Start);
        out.tracker_calls = 1;
        out.observation = match tracker::track(&self.work, &seed, id, self.backends.tracker) {
            Err(e) => {
                self.ctx.update(Source::Controller, MessageKind::Status, TRACK_FAIL);
                out.errors.push(e.to_string());
                Observation::TrackFailed { reason: e.to_string() }
            }
            Ok(tube) => {
                let admission = if self.config.memory_enabled {
                    self.memory.check_and_add(tube.clone())
                } else {
                    Admission::Added
                };
                match admission {
                    Admission::Duplicate { of, iou } => {
                        self.ctx.update(Source::Controller, MessageKind::Status, DUPLICATE);
                        Observation::Duplicate { tube: id, of, iou }
                    }
                    Admission::Added => {
                        let span = tube.span();
                        self.state.pending = Pending::Tracked(tube);
                        Observation::Tracked { tube: id, span }
                    }
                }
            }
        };
        out
    }

    fn verify(&mut self) -> Outcome {
        let Pending::Tracked(tube) = std::mem::replace(&mut self.state.pending, Pending::None) else {
            unreachable!("policy verifies only a pending tube")
        };
        let style = &self.config.prompt_style;
        let v_sp = spatial_prompt(&self.work, &tube, style);
        let verdict = agents::verify(&v_sp, &tube, self.query, self.backends.agent, &self.config.call_options(Role::Verify));
        let mut out = Outcome::new(Observation::Start);
        out.agent_calls = verdict.attempts;
        out.errors = verdict.errors;
        let (decision, caption) = verdict.value;
        if decision == Decision::Reject {
            self.ctx.update(Source::Tra, MessageKind::Caption, caption.clone());
            out.observation = Observation::Rejected { tube: tube.id(), caption };
            return out;
        }
        let v_stp = temporal_prompt(&v_sp, style);
        let loc = agents::localize_grounded(
            &v_stp,
            &tube,
            self.query,
            self.backends.agent,
            &self.config.call_options(Role::LocalizeGrounded),
        );
        out.agent_calls += loc.attempts;
        out.errors.extend(loc.errors);
        out.observation = match trim(&tube, loc.value) {
            Ok(t) => {
                self.accepted = Some((t, loc.value));
                Observation::Accepted { tube: tube.id(), span: loc.value, caption }
            }
            Err(_) => {
                self.ctx.update(Source::Controller, MessageKind::Status, CONTRADICTION);
                Observation::Contradiction { tube: tube.id(), span: loc.value }
            }
        };
        out
    }

    fn fallback(&mut self) -> Outcome {
        let style = &self.config.prompt_style;
        let v_tp = temporal_prompt(&self.work, style);
        let loc = agents::localize_ungrounded(
            &v_tp,
            self.query,
            self.backends.agent,
            &self.config.call_options(Role::LocalizeUngrounded),
        );
        let (span, caption) = loc.value;
        self.snapshot();
        let cleared = self.memory.len();
        self.memory.clear();
        self.work = self.work.sub_clip(span).expect("normalized span lies within the working clip");
        self.ctx.reset_with(Source::Tra, MessageKind::Caption, caption.clone());
        self.state = ControllerState { pass: 1, ..ControllerState::new(self.work.len()) };
        self.clips.push(span);
        self.fallback = Some(FallbackInfo { span, caption: caption.clone() });
        Outcome {
            observation: Observation::FallbackApplied { span, caption, cleared },
            agent_calls: loc.attempts,
            tracker_calls: 0,
            errors: loc.errors,
        }
    }

    fn conclude(&mut self) -> (EpisodeStatus, Option<(Tube, TemporalSpan)>) {
        if let Some(found) = self.accepted.take() {
            return (EpisodeStatus::Success, Some(found));
        }
        // second pass exhausted: keep the first stored candidate, cut to the
        // span the ungrounded localizer gave
        let span = self.fallback.as_ref().map_or(self.work.span(), |f| f.span);
        match self.memory.tubes().first().map(|t| trim(t, span)) {
            Some(Ok(t)) => {
                let span = t.span();
                (EpisodeStatus::BestEffort, Some((t, span)))
            }
            _ => (EpisodeStatus::Failure, None),
        }
    }
}

/// Run one episode over an already scene-filtered clip.
pub fn run_episode(
    clip: &FrameClip,
    query: &ParsedQuery,
    backends: &Backends,
    config: &EngineConfig,
) -> Result<EpisodeResult, ControllerError> {
    config.validate()?;
    let mut ep = Episode {
        query,
        backends,
        config,
        work: clip.clone(),
        state: ControllerState::new(clip.len()),
        memory: CandidateMemory::new(config.dedup_threshold),
        ctx: DialogueContext::new(config.context_capacity),
        next_id: 1,
        accepted: None,
        fallback: None,
        snapshots: Vec::new(),
        clips: vec![clip.span()],
    };
    let mut counters = Counters::default();
    let mut trace = Vec::new();
    let mut last = Observation::Start;
    let mut step = 0u64;
    loop {
        let action = policy(&ep.state, &last);
        let pass = ep.state.pass;
        let frame = ep.cursor_frame();
        counters.count(action, pass);
        let out = match action {
            Action::Propose => ep.propose(),
            Action::Track => ep.track(),
            Action::Verify => ep.verify(),
            Action::Advance => {
                ep.state.advance(config.stride);
                Outcome::new(Observation::Advanced { cursor: ep.state.cursor })
            }
            Action::Fallback => ep.fallback(),
            Action::Terminate => {
                ep.snapshot();
                let (status, found) = ep.conclude();
                trace.push(TraceRecord {
                    step,
                    pass,
                    frame,
                    action,
                    observation: Observation::Terminated { status },
                    agent_calls: 0,
                    tracker_calls: 0,
                    errors: Vec::new(),
                });
                let (tube, span) = found.map_or((None, None), |(t, s)| (Some(t), Some(s)));
                return Ok(EpisodeResult {
                    status,
                    tube,
                    span,
                    clips: ep.clips,
                    fallback: ep.fallback,
                    trace,
                    counters,
                    memory: ep.snapshots,
                    context: ep.ctx.to_vec(),
                });
            }
        };
        if matches!(out.observation, Observation::Duplicate { .. }) {
            counters.duplicates += 1;
        }
        if matches!(out.observation, Observation::TrackFailed { .. }) {
            counters.track_failures += 1;
        }
        counters.agent_calls += out.agent_calls;
        counters.tracker_calls += out.tracker_calls;
        trace.push(TraceRecord {
            step,
            pass,
            frame,
            action,
            observation: out.observation.clone(),
            agent_calls: out.agent_calls,
            tracker_calls: out.tracker_calls,
            errors: out.errors,
        });
        last = out.observation;
        step += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{BackendError, ScriptedAgent, WireResponse};
    use crate::geometry::{Frame, Mask};
    use crate::tracker::TrackReply;

    fn clip(n: usize) -> FrameClip {
        FrameClip::new((0..n).map(|i| Frame::filled(i, 32, 24, [0; 3])).collect(), 2.0, 32, 24).unwrap()
    }

    fn q() -> ParsedQuery {
        ParsedQuery::new("the red block moves left", "the red block", "moves left").unwrap()
    }

    /// Returns a rectangle under the seed on every frame.
    struct Echo;

    impl TrackerBackend for Echo {
        fn name(&self) -> &str {
            "echo"
        }
        fn track(&self, clip: &FrameClip, seed: &BoundingBox) -> Result<TrackReply, BackendError> {
            Ok(TrackReply::Masks(
                clip.frames()
                    .iter()
                    .map(|f| Mask::from_rect(f.index, clip.width(), clip.height(), &BoundingBox { frame_index: f.index, ..*seed }))
                    .collect(),
            ))
        }
    }

    #[test]
    fn policy_table_rows() {
        let s = ControllerState::new(10);
        assert_eq!(policy(&s, &Observation::Start), Action::Propose);
        assert_eq!(policy(&s, &Observation::Duplicate { tube: TubeId(2), of: TubeId(1), iou: 1.0 }), Action::Advance);
        assert_eq!(policy(&s, &Observation::Abstained { frame: 0 }), Action::Advance);
        let b = BoundingBox::new(0, 0, 0, 2, 2).unwrap();
        let p = ControllerState { pending: Pending::Proposed(b), ..s.clone() };
        assert_eq!(policy(&p, &Observation::Proposed { frame: 0, bbox: b.coords() }), Action::Track);
        let done = ControllerState { cursor: 10, pass: 1, ..s.clone() };
        assert_eq!(policy(&done, &Observation::Advanced { cursor: 10 }), Action::Terminate);
        let armed = ControllerState { cursor: 10, mode: Mode::FallbackPending, ..s };
        assert_eq!(policy(&armed, &Observation::Advanced { cursor: 10 }), Action::Fallback);
    }

    #[test]
    fn advance_arms_fallback_on_first_pass_only() {
        let mut s = ControllerState::new(10);
        s.advance(2);
        assert_eq!((s.cursor, s.mode), (2, Mode::Normal));
        s.cursor = 9;
        s.advance(2);
        assert_eq!(s.mode, Mode::FallbackPending);
        let mut s1 = ControllerState { pass: 1, cursor: 9, ..ControllerState::new(10) };
        s1.advance(2);
        assert_eq!(s1.mode, Mode::Normal);
        assert!(s1.exhausted());
    }

    #[test]
    fn accept_on_first_proposal() {
        let agent = ScriptedAgent::new("s", |req| {
            Ok(match req.role {
                Role::Propose => WireResponse::with_box([4, 4, 10, 10]),
                Role::Verify => WireResponse::decision(Decision::Accept, "moves left"),
                _ => WireResponse::span(2, 5, "moves left"),
            })
        });
        let r = run_episode(&clip(10), &q(), &Backends { agent: &agent, tracker: &Echo }, &EngineConfig::default()).unwrap();
        assert_eq!(r.status, EpisodeStatus::Success);
        assert_eq!(r.span, Some(TemporalSpan { st: 2, ed: 5 }));
        assert_eq!(r.tube.as_ref().unwrap().span(), TemporalSpan { st: 2, ed: 5 });
        let actions: Vec<Action> = r.trace.iter().map(|t| t.action).collect();
        assert_eq!(actions, [Action::Propose, Action::Track, Action::Verify, Action::Terminate]);
        assert_eq!(r.counters.agent_calls, 3);
    }

    #[test]
    fn no_target_fails_after_two_passes() {
        let agent = ScriptedAgent::new("s", |req| {
            Ok(match req.role {
                Role::Propose => WireResponse::abstain(),
                _ => WireResponse::span(0, 99, "nothing"),
            })
        });
        let r = run_episode(&clip(9), &q(), &Backends { agent: &agent, tracker: &Echo }, &EngineConfig::default()).unwrap();
        assert_eq!(r.status, EpisodeStatus::Failure);
        assert_eq!(r.counters.fallback, 1);
        assert_eq!(r.counters.propose_by_pass, [5, 5]);
        assert_eq!(r.memory.len(), 2);
        assert_eq!(r.context.len(), 1 + 5);
    }

    #[test]
    fn same_candidate_is_verified_once_then_best_effort() {
        let agent = ScriptedAgent::new("s", |req| {
            Ok(match req.role {
                Role::Propose => WireResponse::with_box([4, 4, 10, 10]),
                Role::Verify => WireResponse::decision(Decision::Reject, "it stands still"),
                _ => WireResponse::span(3, 6, "moves left"),
            })
        });
        let r = run_episode(&clip(10), &q(), &Backends { agent: &agent, tracker: &Echo }, &EngineConfig::default()).unwrap();
        assert_eq!(r.counters.verify_by_pass, [1, 1]);
        assert_eq!(r.counters.duplicates, 4 + 1);
        assert_eq!(r.status, EpisodeStatus::BestEffort);
        assert_eq!(r.span, Some(TemporalSpan { st: 3, ed: 6 }));
        assert_eq!(r.clips, vec![TemporalSpan { st: 0, ed: 9 }, TemporalSpan { st: 3, ed: 6 }]);

        let off = EngineConfig { memory_enabled: false, ..Default::default() };
        let r = run_episode(&clip(10), &q(), &Backends { agent: &agent, tracker: &Echo }, &off).unwrap();
        assert_eq!(r.counters.verify_by_pass, [5, 2]);
        assert_eq!(r.status, EpisodeStatus::Failure);
    }

    #[test]
    fn track_failure_is_recorded_in_context() {
        struct Lost;
        impl TrackerBackend for Lost {
            fn name(&self) -> &str {
                "lost"
            }
            fn track(&self, _: &FrameClip, _: &BoundingBox) -> Result<TrackReply, BackendError> {
                Ok(TrackReply::Fail("no object".into()))
            }
        }
        let agent = ScriptedAgent::new("s", |req| {
            Ok(match req.role {
                Role::Propose => WireResponse::with_box([0, 0, 4, 4]),
                _ => WireResponse::span(0, 1, "c"),
            })
        });
        let r = run_episode(&clip(4), &q(), &Backends { agent: &agent, tracker: &Lost }, &EngineConfig::default()).unwrap();
        assert_eq!(r.status, EpisodeStatus::Failure);
        assert!(r.context.iter().any(|m| m.text == TRACK_FAIL));
        assert_eq!(r.counters.track_failures, 3);
    }
}
