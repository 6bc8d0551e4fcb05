//! Agent-backend contract and the role-specific call wrappers.
//!
//! Backends answer with raw [`WireResponse`]s; the wrappers here validate
//! them against the role's variant, run the retry / format-repair loop and
//! apply the fail-open / fail-closed defaults, so nothing malformed reaches
//! the controller.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::geometry::{BoundingBox, FrameClip, TemporalSpan, Tube};
use crate::memory::{DialogueContext, Message, MessageKind, Source};
use crate::query::ParsedQuery;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Parse,
    Propose,
    SceneJudge,
    Verify,
    LocalizeGrounded,
    LocalizeUngrounded,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::Parse,
        Role::Propose,
        Role::SceneJudge,
        Role::Verify,
        Role::LocalizeGrounded,
        Role::LocalizeUngrounded,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Parse => "parse",
            Role::Propose => "propose",
            Role::SceneJudge => "scene_judge",
            Role::Verify => "verify",
            Role::LocalizeGrounded => "localize_grounded",
            Role::LocalizeUngrounded => "localize_ungrounded",
        }
    }

    pub fn is_visual(self) -> bool {
        self != Role::Parse
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("role {0:?} not supported by backend")]
    Unsupported(Role),
    #[error("no recorded response for request {0}")]
    Replay(String),
    #[error("encoding: {0}")]
    Encoding(String),
}

/// Per-call knobs resolved from the engine config.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CallOptions {
    pub retries: u32,
    pub thinking: bool,
    pub resolution: u32,
    pub prompt: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestOptions {
    pub thinking: bool,
    pub resolution: u32,
    pub attempt: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
}

/// One call to an agent backend.
#[derive(Debug, Clone)]
pub struct AgentRequest {
    pub role: Role,
    /// Prompted frames; `None` only for [`Role::Parse`].
    pub frames: Option<FrameClip>,
    pub query: ParsedQuery,
    pub dialogue: Vec<Message>,
    pub options: RequestOptions,
    /// The tube the spatial prompt outlines. Available to in-process
    /// backends only; it is never put on the wire.
    pub candidate: Option<Tube>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireFrame {
    pub id: usize,
    pub png_base64: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireQuery {
    pub raw: String,
    pub np: String,
    pub context: String,
}

impl From<&ParsedQuery> for WireQuery {
    fn from(q: &ParsedQuery) -> Self {
        WireQuery { raw: q.raw.clone(), np: q.np.clone(), context: q.context.clone() }
    }
}

/// `POST /v1/agent` body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub role: Role,
    pub frames: Vec<WireFrame>,
    pub query: WireQuery,
    pub dialogue: Vec<Message>,
    pub options: RequestOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

/// `POST /v1/agent` response. All fields are always present (null when
/// unused by the role).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireResponse {
    pub status: Status,
    #[serde(rename = "box")]
    pub bbox: Option<[i64; 4]>,
    pub decision: Option<String>,
    pub span: Option<[i64; 2]>,
    pub caption: Option<String>,
    pub error: Option<String>,
}

impl WireResponse {
    fn blank() -> Self {
        Self { status: Status::Ok, bbox: None, decision: None, span: None, caption: None, error: None }
    }

    pub fn with_box(b: [i64; 4]) -> Self {
        Self { bbox: Some(b), ..Self::blank() }
    }

    pub fn abstain() -> Self {
        Self::blank()
    }

    pub fn decision(d: Decision, caption: impl Into<String>) -> Self {
        let d = match d {
            Decision::Accept => "accept",
            Decision::Reject => "reject",
        };
        Self { decision: Some(d.into()), caption: Some(caption.into()), ..Self::blank() }
    }

    pub fn span(st: i64, ed: i64, caption: impl Into<String>) -> Self {
        Self { span: Some([st, ed]), caption: Some(caption.into()), ..Self::blank() }
    }

    pub fn parsed(np: &str, context: &str) -> Self {
        let caption = serde_json::json!({ "np": np, "context": context }).to_string();
        Self { caption: Some(caption), ..Self::blank() }
    }

    pub fn error(msg: impl Into<String>) -> Self {
        Self { status: Status::Error, error: Some(msg.into()), ..Self::blank() }
    }
}

/// Contract every agent implementation (scripted, remote, recorded) meets.
pub trait AgentBackend: Send + Sync {
    fn name(&self) -> &str;

    fn roles(&self) -> &[Role] {
        &Role::ALL
    }

    fn call(&self, request: &AgentRequest) -> Result<WireResponse, BackendError>;
}

impl<B: AgentBackend + ?Sized> AgentBackend for &B {
    fn name(&self) -> &str {
        (**self).name()
    }

    fn roles(&self) -> &[Role] {
        (**self).roles()
    }

    fn call(&self, request: &AgentRequest) -> Result<WireResponse, BackendError> {
        (**self).call(request)
    }
}

#[derive(Serialize)]
struct KeyView<'a> {
    role: Role,
    frames: Vec<usize>,
    query: &'a WireQuery,
    dialogue: &'a [Message],
    options: &'a RequestOptions,
}

fn key_of(view: &KeyView<'_>) -> String {
    let json = serde_json::to_vec(view).expect("key view serializes");
    let digest = Sha256::digest(&json);
    digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
}

impl AgentRequest {
    pub fn new(role: Role, frames: Option<FrameClip>, query: ParsedQuery, opts: &CallOptions) -> Self {
        Self {
            role,
            frames,
            query,
            dialogue: Vec::new(),
            options: RequestOptions {
                thinking: opts.thinking,
                resolution: opts.resolution,
                attempt: 0,
                prompt: opts.prompt.clone(),
            },
            candidate: None,
        }
    }

    pub fn frame_ids(&self) -> Vec<usize> {
        self.frames
            .as_ref()
            .map(|c| c.frames().iter().map(|f| f.index).collect())
            .unwrap_or_default()
    }

    /// Stable digest of everything on the wire except pixel payloads.
    pub fn key(&self) -> String {
        let query = WireQuery::from(&self.query);
        key_of(&KeyView {
            role: self.role,
            frames: self.frame_ids(),
            query: &query,
            dialogue: &self.dialogue,
            options: &self.options,
        })
    }

    /// First 8 bytes of [`AgentRequest::key`], for seeding scripted randomness.
    pub fn key_u64(&self) -> u64 {
        u64::from_str_radix(&self.key()[..16], 16).expect("hex digest")
    }

    pub fn to_wire(&self) -> Result<WireRequest, BackendError> {
        let frames = match &self.frames {
            Some(clip) => crate::remote::encode_frames(clip)?,
            None => Vec::new(),
        };
        Ok(WireRequest {
            role: self.role,
            frames,
            query: WireQuery::from(&self.query),
            dialogue: self.dialogue.clone(),
            options: self.options.clone(),
        })
    }
}

impl WireRequest {
    /// Same digest as [`AgentRequest::key`] for the request this was built from.
    pub fn key(&self) -> String {
        key_of(&KeyView {
            role: self.role,
            frames: self.frames.iter().map(|f| f.id).collect(),
            query: &self.query,
            dialogue: &self.dialogue,
            options: &self.options,
        })
    }
}

/// Why one attempt did not produce a usable reply.
#[derive(Debug, Clone, PartialEq)]
enum Failure {
    /// Schema violation; the proposer gets a correction message.
    Malformed(String),
    Other(String),
}

/// Result of a wrapped call together with what it cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Called<T> {
    pub value: T,
    pub attempts: u32,
    pub errors: Vec<String>,
}

impl<T> Called<T> {
    fn map<U>(self, f: impl FnOnce(T) -> U) -> Called<U> {
        Called { value: f(self.value), attempts: self.attempts, errors: self.errors }
    }
}

fn run_with_retries<T>(
    backend: &dyn AgentBackend,
    mut request: AgentRequest,
    retries: u32,
    mut ctx: Option<&mut DialogueContext>,
    validate: impl Fn(&WireResponse, &AgentRequest) -> Result<T, Failure>,
) -> Called<Option<T>> {
    let mut errors = Vec::new();
    if !backend.roles().contains(&request.role) {
        errors.push(BackendError::Unsupported(request.role).to_string());
        return Called { value: None, attempts: 0, errors };
    }
    let max_attempts = retries.min(crate::config::MAX_RETRIES) + 1;
    for attempt in 0..max_attempts {
        request.options.attempt = attempt;
        if let Some(c) = ctx.as_deref() {
            request.dialogue = c.to_vec();
        }
        let failure = match backend.call(&request) {
            Err(e) => Failure::Other(e.to_string()),
            Ok(resp) if resp.status == Status::Error => {
                Failure::Other(format!("backend error: {}", resp.error.unwrap_or_default()))
            }
            Ok(resp) => match validate(&resp, &request) {
                Ok(v) => return Called { value: Some(v), attempts: attempt + 1, errors },
                Err(f) => f,
            },
        };
        let last = attempt + 1 == max_attempts;
        match failure {
            Failure::Malformed(m) => {
                if let (false, Some(c)) = (last, ctx.as_deref_mut()) {
                    c.update(
                        Source::Controller,
                        MessageKind::Correction,
                        format!("format-error: {m}; answer again with the required fields"),
                    );
                }
                errors.push(format!("malformed: {m}"));
            }
            Failure::Other(m) => errors.push(m),
        }
    }
    Called { value: None, attempts: max_attempts, errors }
}

fn parse_decision(resp: &WireResponse) -> Result<(Decision, String), Failure> {
    let decision = match resp.decision.as_deref() {
        Some("accept") => Decision::Accept,
        Some("reject") => Decision::Reject,
        Some(other) => return Err(Failure::Malformed(format!("unknown decision {other:?}"))),
        None => return Err(Failure::Malformed("missing decision".into())),
    };
    Ok((decision, resp.caption.clone().unwrap_or_default()))
}

/// Order the endpoints and clamp them into the request clip's frame range.
pub fn normalize_span(raw: [i64; 2], clip: &FrameClip) -> TemporalSpan {
    let (lo, hi) = (clip.first_index() as i64, clip.last_index() as i64);
    let (a, b) = if raw[0] <= raw[1] { (raw[0], raw[1]) } else { (raw[1], raw[0]) };
    TemporalSpan { st: a.clamp(lo, hi) as usize, ed: b.clamp(lo, hi) as usize }
}

fn parse_span(resp: &WireResponse, req: &AgentRequest) -> Result<(TemporalSpan, String), Failure> {
    let raw = resp.span.ok_or_else(|| Failure::Malformed("missing span".into()))?;
    let clip = req.frames.as_ref().expect("visual role carries frames");
    Ok((normalize_span(raw, clip), resp.caption.clone().unwrap_or_default()))
}

/// Parse-role call: np/context come back as a JSON object in `caption`.
pub fn parse_fields(raw: &str, backend: &dyn AgentBackend, opts: &CallOptions) -> Called<Option<(String, String)>> {
    let req = AgentRequest::new(Role::Parse, None, ParsedQuery::unparsed(raw), opts);
    run_with_retries(backend, req, opts.retries, None, |resp, _| {
        #[derive(Deserialize)]
        struct Fields {
            np: String,
            #[serde(default)]
            context: String,
        }
        let caption = resp.caption.as_deref().ok_or_else(|| Failure::Malformed("missing caption".into()))?;
        let f: Fields = serde_json::from_str(caption)
            .map_err(|e| Failure::Malformed(format!("caption is not {{np, context}}: {e}")))?;
        if f.np.trim().is_empty() {
            return Err(Failure::Malformed("empty np".into()));
        }
        Ok((f.np.trim().to_string(), f.context.trim().to_string()))
    })
}

/// Ask the proposer for one box on `frame`; `None` means abstain.
pub fn propose(
    clip: &FrameClip,
    frame: usize,
    query: &ParsedQuery,
    ctx: &mut DialogueContext,
    backend: &dyn AgentBackend,
    opts: &CallOptions,
) -> Called<Option<BoundingBox>> {
    let single = clip
        .sub_clip(TemporalSpan { st: frame, ed: frame })
        .expect("proposal frame lies inside the working clip");
    let (w, h) = (clip.width(), clip.height());
    let req = AgentRequest::new(Role::Propose, Some(single), query.clone(), opts);
    run_with_retries(backend, req, opts.retries, Some(ctx), |resp, _| match resp.bbox {
        None => Ok(None),
        Some(c) => BoundingBox::from_coords(frame, c, w, h)
            .map(Some)
            .map_err(|e| Failure::Malformed(format!("box out of bounds: {e}"))),
    })
    .map(Option::flatten)
}

/// Scene relevance judgement. `None` when the backend never gave a valid answer.
pub fn judge_scene(
    segment: &FrameClip,
    query: &ParsedQuery,
    backend: &dyn AgentBackend,
    opts: &CallOptions,
) -> Called<Option<(Decision, String)>> {
    let req = AgentRequest::new(Role::SceneJudge, Some(segment.clone()), query.clone(), opts);
    run_with_retries(backend, req, opts.retries, None, |resp, _| parse_decision(resp))
}

pub const VERIFY_UNAVAILABLE: &str = "verification unavailable";

/// Verify the outlined candidate; fails closed to a rejection.
pub fn verify(
    prompted: &FrameClip,
    candidate: &Tube,
    query: &ParsedQuery,
    backend: &dyn AgentBackend,
    opts: &CallOptions,
) -> Called<(Decision, String)> {
    let mut req = AgentRequest::new(Role::Verify, Some(prompted.clone()), query.clone(), opts);
    req.candidate = Some(candidate.clone());
    run_with_retries(backend, req, opts.retries, None, |resp, _| parse_decision(resp))
        .map(|v| v.unwrap_or((Decision::Reject, VERIFY_UNAVAILABLE.to_string())))
}

/// Span of the query's action for an accepted candidate; falls back to the
/// whole clip.
pub fn localize_grounded(
    prompted: &FrameClip,
    candidate: &Tube,
    query: &ParsedQuery,
    backend: &dyn AgentBackend,
    opts: &CallOptions,
) -> Called<TemporalSpan> {
    let mut req = AgentRequest::new(Role::LocalizeGrounded, Some(prompted.clone()), query.clone(), opts);
    req.candidate = Some(candidate.clone());
    let full = prompted.span();
    run_with_retries(backend, req, opts.retries, None, parse_span).map(|v| v.map_or(full, |(s, _)| s))
}

pub const LOCALIZE_UNAVAILABLE: &str = "temporal localization unavailable";

/// Span and caption without a candidate; falls back to the whole clip.
pub fn localize_ungrounded(
    prompted: &FrameClip,
    query: &ParsedQuery,
    backend: &dyn AgentBackend,
    opts: &CallOptions,
) -> Called<(TemporalSpan, String)> {
    let req = AgentRequest::new(Role::LocalizeUngrounded, Some(prompted.clone()), query.clone(), opts);
    let full = prompted.span();
    run_with_retries(backend, req, opts.retries, None, parse_span)
        .map(|v| v.unwrap_or((full, LOCALIZE_UNAVAILABLE.to_string())))
}

type ScriptFn = dyn Fn(&AgentRequest) -> Result<WireResponse, BackendError> + Send + Sync;

/// Deterministic in-process backend driven by a closure.
pub struct ScriptedAgent {
    name: String,
    roles: Vec<Role>,
    script: Box<ScriptFn>,
}

impl ScriptedAgent {
    pub fn new<F>(name: impl Into<String>, script: F) -> Self
    where
        F: Fn(&AgentRequest) -> Result<WireResponse, BackendError> + Send + Sync + 'static,
    {
        Self { name: name.into(), roles: Role::ALL.to_vec(), script: Box::new(script) }
    }

    pub fn with_roles(mut self, roles: &[Role]) -> Self {
        self.roles = roles.to_vec();
        self
    }

    pub fn always_accept() -> Self {
        Self::new("always-accept", |req| {
            Ok(match req.role {
                Role::SceneJudge | Role::Verify => WireResponse::decision(Decision::Accept, "accepted"),
                _ => WireResponse::error("unsupported"),
            })
        })
    }

    pub fn always_reject() -> Self {
        Self::new("always-reject", |req| {
            Ok(match req.role {
                Role::SceneJudge | Role::Verify => WireResponse::decision(Decision::Reject, "rejected"),
                _ => WireResponse::error("unsupported"),
            })
        })
    }
}

impl AgentBackend for ScriptedAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn roles(&self) -> &[Role] {
        &self.roles
    }

    fn call(&self, request: &AgentRequest) -> Result<WireResponse, BackendError> {
        (self.script)(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Frame, Mask, TubeId};
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Arc;

    fn clip(n: usize) -> FrameClip {
        FrameClip::new((0..n).map(|i| Frame::filled(i, 32, 24, [0, 0, 0])).collect(), 2.0, 32, 24).unwrap()
    }

    fn query() -> ParsedQuery {
        ParsedQuery::new("the red block moves right", "the red block", "moves right").unwrap()
    }

    fn opts() -> CallOptions {
        CallOptions { retries: 1, ..Default::default() }
    }

    fn tube() -> Tube {
        Tube::new(TubeId(1), (0..4).map(|f| Mask::empty(f, 32, 24)).collect()).unwrap()
    }

    #[test]
    fn propose_repairs_out_of_bounds_box_once() {
        let calls = Arc::new(AtomicU32::new(0));
        let c2 = calls.clone();
        let b = ScriptedAgent::new("fault", move |_| {
            Ok(if c2.fetch_add(1, Ordering::SeqCst) == 0 {
                WireResponse::with_box([0, 0, 99, 99])
            } else {
                WireResponse::with_box([2, 3, 10, 12])
            })
        });
        let mut ctx = DialogueContext::new(16);
        let out = propose(&clip(4), 2, &query(), &mut ctx, &b, &opts());
        assert_eq!(out.value, Some(BoundingBox::new(2, 2, 3, 10, 12).unwrap()));
        assert_eq!(out.attempts, 2);
        assert_eq!(ctx.len(), 1);
        assert_eq!(ctx.to_vec()[0].kind, MessageKind::Correction);
    }

    #[test]
    fn propose_abstains_after_second_failure() {
        let b = ScriptedAgent::new("bad", |_| Ok(WireResponse::with_box([5, 5, 2, 2])));
        let mut ctx = DialogueContext::new(16);
        let out = propose(&clip(4), 0, &query(), &mut ctx, &b, &opts());
        assert_eq!(out.value, None);
        assert_eq!(out.attempts, 2);
        // one repair attempt, one correction message
        assert_eq!(ctx.len(), 1);
        assert_eq!(out.errors.len(), 2);
    }

    #[test]
    fn propose_sees_correction_in_dialogue() {
        let b = ScriptedAgent::new("ctx-aware", |req| {
            Ok(if req.dialogue.iter().any(|m| m.kind == MessageKind::Correction) {
                WireResponse::with_box([0, 0, 4, 4])
            } else {
                WireResponse { decision: Some("accept".into()), ..WireResponse::with_box([0, 0, 0, 4]) }
            })
        });
        let mut ctx = DialogueContext::new(16);
        let out = propose(&clip(1), 0, &query(), &mut ctx, &b, &opts());
        assert_eq!(out.value.map(|b| b.coords()), Some([0, 0, 4, 4]));
    }

    #[test]
    fn abstain_and_empty_frame() {
        let b = ScriptedAgent::new("abstain", |_| Ok(WireResponse::abstain()));
        let mut ctx = DialogueContext::new(4);
        let out = propose(&clip(2), 1, &query(), &mut ctx, &b, &opts());
        assert_eq!((out.value, out.attempts, ctx.len()), (None, 1, 0));
    }

    #[test]
    fn verify_fails_closed() {
        let b = ScriptedAgent::new("down", |_| Err(BackendError::Transport("refused".into())));
        let out = verify(&clip(4), &tube(), &query(), &b, &opts());
        assert_eq!(out.value, (Decision::Reject, VERIFY_UNAVAILABLE.to_string()));
        assert_eq!(out.attempts, 2);

        let r = ScriptedAgent::always_reject();
        let out = verify(&clip(4), &tube(), &query(), &r, &opts());
        assert_eq!(out.value, (Decision::Reject, "rejected".to_string()));
    }

    #[test]
    fn verify_passes_candidate_in_process() {
        let b = ScriptedAgent::new("peek", |req| {
            let d = if req.candidate.is_some() { Decision::Accept } else { Decision::Reject };
            Ok(WireResponse::decision(d, "peeked"))
        });
        assert_eq!(verify(&clip(4), &tube(), &query(), &b, &opts()).value.0, Decision::Accept);
    }

    #[test]
    fn localize_normalizes_span() {
        let rev = ScriptedAgent::new("rev", |_| Ok(WireResponse::span(9, 3, "")));
        assert_eq!(localize_grounded(&clip(20), &tube(), &query(), &rev, &opts()).value, TemporalSpan { st: 3, ed: 9 });
        let wide = ScriptedAgent::new("wide", |_| Ok(WireResponse::span(-3, 999, "")));
        assert_eq!(localize_grounded(&clip(20), &tube(), &query(), &wide, &opts()).value, TemporalSpan { st: 0, ed: 19 });
        let none = ScriptedAgent::new("none", |_| Ok(WireResponse::abstain()));
        let out = localize_ungrounded(&clip(20), &query(), &none, &opts());
        assert_eq!(out.value, (TemporalSpan { st: 0, ed: 19 }, LOCALIZE_UNAVAILABLE.to_string()));
    }

    #[test]
    fn clamps_to_sub_clip_range() {
        let sub = clip(20).sub_clip(TemporalSpan { st: 5, ed: 12 }).unwrap();
        let wide = ScriptedAgent::new("wide", |_| Ok(WireResponse::span(0, 30, "c")));
        let out = localize_ungrounded(&sub, &query(), &wide, &opts());
        assert_eq!(out.value, (TemporalSpan { st: 5, ed: 12 }, "c".to_string()));
    }

    #[test]
    fn unsupported_role_is_not_called() {
        let b = ScriptedAgent::new("x", |_| panic!("must not be called")).with_roles(&[Role::Parse]);
        let out = verify(&clip(2), &tube(), &query(), &b, &opts());
        assert_eq!(out.attempts, 0);
        assert_eq!(out.value.0, Decision::Reject);
    }

    #[test]
    fn retries_never_exceed_two() {
        let n = Arc::new(AtomicU32::new(0));
        let n2 = n.clone();
        let b = ScriptedAgent::new("count", move |_| {
            n2.fetch_add(1, Ordering::SeqCst);
            Ok(WireResponse::error("nope"))
        });
        let o = CallOptions { retries: 10, ..Default::default() };
        let _ = verify(&clip(2), &tube(), &query(), &b, &o);
        assert_eq!(n.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn unknown_decision_is_malformed() {
        let b = ScriptedAgent::new("maybe", |_| Ok(WireResponse { decision: Some("maybe".into()), ..WireResponse::abstain() }));
        let out = judge_scene(&clip(3), &query(), &b, &opts());
        assert_eq!(out.value, None);
        assert!(out.errors[0].starts_with("malformed"));
    }

    #[test]
    fn wire_response_has_every_field() {
        let json = serde_json::to_value(WireResponse::with_box([1, 2, 3, 4])).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"status":"ok","box":[1,2,3,4],"decision":null,"span":null,"caption":null,"error":null})
        );
    }

    #[test]
    fn key_matches_between_request_and_wire() {
        let mut req = AgentRequest::new(Role::Verify, Some(clip(3)), query(), &opts());
        req.dialogue.push(Message { source: Source::Tra, kind: MessageKind::Caption, text: "hi".into() });
        let wire = req.to_wire().unwrap();
        assert_eq!(wire.key(), req.key());
        assert_eq!(wire.frames.len(), 3);
        req.options.attempt = 1;
        assert_ne!(wire.key(), req.key());
    }
}
