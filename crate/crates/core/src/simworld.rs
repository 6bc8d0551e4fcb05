//! Synthetic episodes with exact ground truth: colored rectangles moving
//! piecewise-linearly over flat backgrounds, one of which performs the queried
//! action during a scripted span. Oracle agent and tracker backends answer
//! from the script, degraded by a [`FaultSpec`].

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::agents::{AgentBackend, AgentRequest, BackendError, Decision, Role, WireResponse};
use crate::config::EngineConfig;
use crate::controller::{Backends, EpisodeStatus};
use crate::eval::Annotation;
use crate::pipeline::{ground, Grounding, PipelineError};
use crate::geometry::{box_iou, mask_to_box, trim, tube_iou, BoundingBox, Frame, FrameClip, Mask, TemporalSpan, Tube, TubeId};
use crate::query::split_rule_based;
use crate::scenes::SceneSegment;
use crate::tracker::{TrackReply, TrackerBackend};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("infeasible parameters: {0}")]
    Infeasible(String),
    #[error("invalid fault spec: {0}")]
    InvalidFaults(String),
    #[error("scenario violates an invariant: {0}")]
    Invalid(String),
}

pub const PALETTE: [(&str, [u8; 3]); 8] = [
    ("red", [230, 40, 40]),
    ("green", [40, 200, 60]),
    ("blue", [50, 80, 235]),
    ("yellow", [235, 220, 40]),
    ("magenta", [220, 50, 220]),
    ("cyan", [40, 220, 220]),
    ("orange", [245, 140, 30]),
    ("white", [245, 245, 245]),
];

/// Background of each scene, cycled.
pub const BACKGROUNDS: [[u8; 3]; 4] = [[20, 20, 20], [130, 130, 130], [20, 20, 120], [130, 130, 30]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenParams {
    pub frames: usize,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    pub entities: usize,
    pub cuts: usize,
    pub min_size: u32,
    pub max_size: u32,
    /// Shortest action span.
    pub min_span: usize,
}

impl Default for GenParams {
    fn default() -> Self {
        Self { frames: 40, fps: 2.0, width: 96, height: 64, entities: 3, cuts: 0, min_size: 10, max_size: 18, min_span: 4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Left,
    Right,
    Up,
    Down,
}

impl Direction {
    const ALL: [Direction; 4] = [Direction::Left, Direction::Right, Direction::Up, Direction::Down];

    fn as_str(self) -> &'static str {
        match self {
            Direction::Left => "left",
            Direction::Right => "right",
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }
}

/// Top-left corner of an entity at a given frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Waypoint {
    pub frame: usize,
    pub x: i64,
    pub y: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: u32,
    pub color: String,
    pub rgb: [u8; 3],
    /// Width and height.
    pub size: [u32; 2],
    pub waypoints: Vec<Waypoint>,
    /// Attribute tags; the last one is the entity's behaviour.
    pub tags: Vec<String>,
}

impl Entity {
    /// Integer linear interpolation between waypoints, held constant outside.
    pub fn position(&self, frame: usize) -> (i64, i64) {
        let wp = &self.waypoints;
        if frame <= wp[0].frame {
            return (wp[0].x, wp[0].y);
        }
        for pair in wp.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            if frame <= b.frame {
                let (num, den) = ((frame - a.frame) as i64, (b.frame - a.frame) as i64);
                return (a.x + ((b.x - a.x) * num).div_euclid(den), a.y + ((b.y - a.y) * num).div_euclid(den));
            }
        }
        let last = wp[wp.len() - 1];
        (last.x, last.y)
    }

    pub fn rect(&self, frame: usize) -> BoundingBox {
        let (x, y) = self.position(frame);
        BoundingBox { frame_index: frame, x1: x as u32, y1: y as u32, x2: x as u32 + self.size[0], y2: y as u32 + self.size[1] }
    }

    pub fn behaviour(&self) -> &str {
        self.tags.last().map_or("", String::as_str)
    }

    pub fn description(&self) -> String {
        format!("the {} block {}", self.color, self.behaviour())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub frames: usize,
    pub fps: f64,
    pub width: u32,
    pub height: u32,
    /// First frame of each scene after the first.
    pub cuts: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub clip: ClipSpec,
    /// Drawn back to front; the target is last.
    pub entities: Vec<Entity>,
    pub target_id: u32,
    pub gt_span: TemporalSpan,
    pub query: String,
}

fn sample_start(rng: &mut ChaCha8Rng, room: u32) -> i64 {
    rng.random_range(0..=room) as i64
}

/// Deterministic scenario for `seed`.
pub fn generate(seed: u64, p: &GenParams) -> Result<Scenario, SimError> {
    let bad = |m: String| Err(SimError::Infeasible(m));
    if p.entities == 0 || p.entities > PALETTE.len() {
        return bad(format!("entities must be in 1..={}", PALETTE.len()));
    }
    if p.frames < 4 {
        return bad("need at least 4 frames".into());
    }
    if !(p.fps > 0.0) {
        return bad("fps must be positive".into());
    }
    if p.min_size < 3 || p.min_size > p.max_size || p.max_size >= p.width.min(p.height) {
        return bad(format!("sizes {}..={} do not fit {}x{}", p.min_size, p.max_size, p.width, p.height));
    }
    let min_span = p.min_span.max(2);
    if (p.cuts + 1) * min_span > p.frames {
        return bad(format!("{} cuts leave scenes shorter than {min_span} frames", p.cuts));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // scene boundaries: every scene at least min_span long
    let slack = p.frames - (p.cuts + 1) * min_span;
    let mut extra: Vec<usize> = (0..p.cuts + 1).map(|_| 0).collect();
    for _ in 0..slack {
        let i = rng.random_range(0..extra.len());
        extra[i] += 1;
    }
    let mut cuts = Vec::with_capacity(p.cuts);
    let mut start = 0;
    let mut scenes = Vec::new();
    for (i, e) in extra.iter().enumerate() {
        let len = min_span + e;
        scenes.push(TemporalSpan { st: start, ed: start + len - 1 });
        start += len;
        if i + 1 < extra.len() {
            cuts.push(start);
        }
    }

    let mut palette: Vec<usize> = (0..PALETTE.len()).collect();
    let mut entities = Vec::with_capacity(p.entities);
    for id in 0..p.entities {
        let k = rng.random_range(0..palette.len());
        let (name, rgb) = PALETTE[palette.swap_remove(k)];
        let size = [rng.random_range(p.min_size..=p.max_size), rng.random_range(p.min_size..=p.max_size)];
        entities.push(Entity { id: id as u32, color: name.into(), rgb, size, waypoints: Vec::new(), tags: vec![name.into()] });
    }

    // target: still outside the action span, straight motion inside it
    let scene = *scenes.choose(&mut rng).expect("at least one scene");
    let target = entities.last_mut().expect("at least one entity");
    let (rw, rh) = (p.width - target.size[0], p.height - target.size[1]);
    let speed: u32 = rng.random_range(1..=2);
    let fits = |d: Direction, len: usize| {
        let dist = speed * (len as u32 - 1);
        match d {
            Direction::Left | Direction::Right => dist <= rw,
            Direction::Up | Direction::Down => dist <= rh,
        }
    };
    let dirs: Vec<Direction> = Direction::ALL.iter().copied().filter(|&d| fits(d, min_span)).collect();
    let dir = *dirs
        .choose(&mut rng)
        .ok_or_else(|| SimError::Infeasible("target cannot move for the shortest span".into()))?;
    let max_len = (min_span..=scene.len()).rev().find(|&l| fits(dir, l)).expect("min_span fits");
    let len = rng.random_range(min_span..=max_len);
    let st = scene.st + rng.random_range(0..=scene.len() - len);
    let gt_span = TemporalSpan { st, ed: st + len - 1 };
    let dist = (speed * (len as u32 - 1)) as i64;
    let (x0, y0, x1, y1) = match dir {
        Direction::Right => {
            let x = sample_start(&mut rng, rw - dist as u32);
            let y = sample_start(&mut rng, rh);
            (x, y, x + dist, y)
        }
        Direction::Left => {
            let x = sample_start(&mut rng, rw - dist as u32) + dist;
            let y = sample_start(&mut rng, rh);
            (x, y, x - dist, y)
        }
        Direction::Down => {
            let x = sample_start(&mut rng, rw);
            let y = sample_start(&mut rng, rh - dist as u32);
            (x, y, x, y + dist)
        }
        Direction::Up => {
            let x = sample_start(&mut rng, rw);
            let y = sample_start(&mut rng, rh - dist as u32) + dist;
            (x, y, x, y - dist)
        }
    };
    target.waypoints = vec![
        Waypoint { frame: 0, x: x0, y: y0 },
        Waypoint { frame: gt_span.st, x: x0, y: y0 },
        Waypoint { frame: gt_span.ed, x: x1, y: y1 },
        Waypoint { frame: p.frames - 1, x: x1, y: y1 },
    ];
    // the span may touch either end of the clip
    target.waypoints.dedup_by_key(|w| w.frame);
    target.tags.push(format!("moves {}", dir.as_str()));
    let target_id = target.id;
    let query = format!("the {} block moves {}", target.color, dir.as_str());

    // distractors: wander at most 2 px per frame, or stay put
    for e in entities.iter_mut().take(p.entities - 1) {
        let (rw, rh) = ((p.width - e.size[0]) as i64, (p.height - e.size[1]) as i64);
        let mut x = rng.random_range(0..=rw);
        let mut y = rng.random_range(0..=rh);
        e.waypoints.push(Waypoint { frame: 0, x, y });
        if rng.random_bool(0.3) {
            e.tags.push("stays still".into());
            continue;
        }
        e.tags.push("wanders".into());
        let mut f = 0;
        while f < p.frames - 1 {
            let gap = rng.random_range(4..=10).min(p.frames - 1 - f);
            let reach = 2 * gap as i64;
            x = (x + rng.random_range(-reach..=reach)).clamp(0, rw);
            y = (y + rng.random_range(-reach..=reach)).clamp(0, rh);
            f += gap;
            e.waypoints.push(Waypoint { frame: f, x, y });
        }
    }

    let s = Scenario {
        seed,
        clip: ClipSpec { frames: p.frames, fps: p.fps, width: p.width, height: p.height, cuts },
        entities,
        target_id,
        gt_span,
        query,
    };
    s.validate()?;
    Ok(s)
}

/// Rendered clip plus one ground-truth tube per entity, indexed like
/// `Scenario::entities`.
#[derive(Debug, Clone)]
pub struct World {
    pub scenario: Scenario,
    pub clip: FrameClip,
    pub gt: Vec<Tube>,
}

impl Scenario {
    pub fn target(&self) -> &Entity {
        self.entities.iter().find(|e| e.id == self.target_id).expect("target exists")
    }

    fn target_index(&self) -> usize {
        self.entities.iter().position(|e| e.id == self.target_id).expect("target exists")
    }

    pub fn video_id(&self) -> String {
        format!("sim-{:06}", self.seed)
    }

    pub fn scenes(&self) -> Vec<SceneSegment> {
        let mut bounds = vec![0];
        bounds.extend(&self.clip.cuts);
        bounds.push(self.clip.frames);
        bounds
            .windows(2)
            .enumerate()
            .map(|(i, w)| SceneSegment { index: i, span: TemporalSpan { st: w[0], ed: w[1] - 1 } })
            .collect()
    }

    fn background(&self, frame: usize) -> [u8; 3] {
        let scene = self.clip.cuts.iter().filter(|&&c| c <= frame).count();
        BACKGROUNDS[scene % BACKGROUNDS.len()]
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Invalid(m));
        let c = &self.clip;
        if c.frames < 4 || !(c.fps > 0.0) || c.width == 0 || c.height == 0 {
            return bad("clip spec".into());
        }
        if !c.cuts.windows(2).all(|w| w[0] < w[1]) || c.cuts.iter().any(|&k| k == 0 || k >= c.frames) {
            return bad(format!("cuts {:?}", c.cuts));
        }
        let mut colors: Vec<&str> = self.entities.iter().map(|e| e.color.as_str()).collect();
        colors.sort_unstable();
        colors.dedup();
        if colors.len() != self.entities.len() {
            return bad("entity colors are not distinct".into());
        }
        if self.entities.last().map(|e| e.id) != Some(self.target_id) {
            return bad("target must be drawn last".into());
        }
        for e in &self.entities {
            if e.waypoints.is_empty() || !e.waypoints.windows(2).all(|w| w[0].frame < w[1].frame) {
                return bad(format!("entity {} waypoints", e.id));
            }
            for f in 0..c.frames {
                let (x, y) = e.position(f);
                if x < 0 || y < 0 || x + e.size[0] as i64 > c.width as i64 || y + e.size[1] as i64 > c.height as i64 {
                    return bad(format!("entity {} leaves the frame at {f}", e.id));
                }
            }
        }
        if self.gt_span.ed >= c.frames || !self.scenes().iter().any(|s| s.span.intersect(&self.gt_span) == Some(self.gt_span)) {
            return bad(format!("gt span {} is not inside one scene", self.gt_span));
        }
        Ok(())
    }

    /// Draw back to front; each entity's mask is the pixels it owns after
    /// occlusion.
    pub fn rasterize(&self) -> World {
        let (w, h) = (self.clip.width, self.clip.height);
        let n = w as usize * h as usize;
        let mut frames = Vec::with_capacity(self.clip.frames);
        let mut masks: Vec<Vec<Mask>> = vec![Vec::with_capacity(self.clip.frames); self.entities.len()];
        for f in 0..self.clip.frames {
            let mut owner = vec![usize::MAX; n];
            for (i, e) in self.entities.iter().enumerate() {
                let r = e.rect(f);
                for y in r.y1..r.y2 {
                    let row = y as usize * w as usize;
                    owner[row + r.x1 as usize..row + r.x2 as usize].fill(i);
                }
            }
            let bg = self.background(f);
            let mut pixels = Vec::with_capacity(n * 3);
            for &o in &owner {
                pixels.extend_from_slice(if o == usize::MAX { &bg } else { &self.entities[o].rgb });
            }
            frames.push(Frame::new(f, pixels));
            for (i, m) in masks.iter_mut().enumerate() {
                let bits: Vec<bool> = owner.iter().map(|&o| o == i).collect();
                m.push(Mask::from_bitmap(f, w, h, &bits));
            }
        }
        let gt = masks
            .into_iter()
            .zip(&self.entities)
            .map(|(m, e)| Tube::new(TubeId(e.id), m).expect("contiguous frames"))
            .collect();
        let clip = FrameClip::new(frames, self.clip.fps, w, h).expect("valid clip");
        World { scenario: self.clone(), clip, gt }
    }
}

impl World {
    pub fn target_tube(&self) -> &Tube {
        &self.gt[self.scenario.target_index()]
    }

    /// Ground-truth annotation: the target's boxes over the action span.
    pub fn ground_truth(&self) -> Annotation {
        let t = self.target_tube();
        let boxes = self
            .scenario
            .gt_span
            .frames()
            .filter_map(|f| t.mask(f).and_then(mask_to_box).map(|b| (f, b.coords())))
            .collect();
        Annotation { video_id: self.scenario.video_id(), query: self.scenario.query.clone(), span: self.scenario.gt_span, boxes }
    }

    /// Entities with visible pixels on `frame`.
    pub fn visible(&self, frame: usize) -> Vec<usize> {
        (0..self.gt.len()).filter(|&i| self.gt[i].mask(frame).is_some_and(|m| !m.is_empty())).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultSpec {
    pub sra_wrong_target_prob: f64,
    pub sra_abstain_prob: f64,
    pub tracker_jitter_sigma: f64,
    pub tracker_dropout_prob: f64,
    pub tra_flip_prob: f64,
    pub format_error_prob: f64,
}

impl Default for FaultSpec {
    fn default() -> Self {
        Self {
            sra_wrong_target_prob: 0.0,
            sra_abstain_prob: 0.0,
            tracker_jitter_sigma: 0.0,
            tracker_dropout_prob: 0.0,
            tra_flip_prob: 0.0,
            format_error_prob: 0.0,
        }
    }
}

impl FaultSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        let probs = [
            ("sra_wrong_target_prob", self.sra_wrong_target_prob),
            ("sra_abstain_prob", self.sra_abstain_prob),
            ("tracker_dropout_prob", self.tracker_dropout_prob),
            ("tra_flip_prob", self.tra_flip_prob),
            ("format_error_prob", self.format_error_prob),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::InvalidFaults(format!("{name} = {p} is not in [0, 1]")));
            }
        }
        if !(self.tracker_jitter_sigma >= 0.0 && self.tracker_jitter_sigma.is_finite()) {
            return Err(SimError::InvalidFaults(format!("tracker_jitter_sigma = {}", self.tracker_jitter_sigma)));
        }
        Ok(())
    }
}

fn stable_u64(text: &str) -> u64 {
    let d = Sha256::digest(text.as_bytes());
    u64::from_be_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Agent answering every role from the scenario script.
pub struct OracleAgent {
    world: World,
    faults: FaultSpec,
    seed: u64,
}

impl OracleAgent {
    pub fn new(world: World, faults: FaultSpec, seed: u64) -> Self {
        Self { world, faults, seed }
    }

    fn span_caption(&self) -> String {
        let s = &self.world.scenario;
        format!("{} from #{} to #{}", s.target().description(), s.gt_span.st, s.gt_span.ed)
    }

    fn propose(&self, req: &AgentRequest, rng: &mut ChaCha8Rng) -> WireResponse {
        let clip = req.frames.as_ref().expect("propose carries a frame");
        let frame = clip.first_index();
        let visible = self.world.visible(frame);
        let target = self.world.scenario.target_index();
        if visible.is_empty() || rng.random_bool(self.faults.sra_abstain_prob) {
            return WireResponse::abstain();
        }
        let distractors: Vec<usize> = visible.iter().copied().filter(|&i| i != target).collect();
        let wrong = rng.random_bool(self.faults.sra_wrong_target_prob);
        let pick = match (visible.contains(&target), wrong, distractors.choose(rng)) {
            (true, false, _) | (true, true, None) => target,
            (_, _, Some(&d)) => d,
            (false, _, None) => return WireResponse::abstain(),
        };
        let b = self.world.gt[pick].mask(frame).and_then(Mask::extent).expect("visible entity");
        let [x1, y1, x2, y2] = b.coords();
        WireResponse::with_box([x1 as i64, y1 as i64, x2 as i64, y2 as i64])
    }

    fn verify(&self, req: &AgentRequest, rng: &mut ChaCha8Rng) -> WireResponse {
        let Some(candidate) = &req.candidate else {
            return WireResponse::error("oracle verify needs the candidate tube");
        };
        let against = |t: &Tube| trim(t, candidate.span()).map_or(0.0, |g| tube_iou(candidate, &g));
        let target_iou = against(self.world.target_tube());
        let mut accept = target_iou >= 0.5;
        if rng.random_bool(self.faults.tra_flip_prob) {
            accept = !accept;
        }
        let best = (0..self.world.gt.len())
            .map(|i| (i, against(&self.world.gt[i])))
            .fold((0, f64::MIN), |acc, x| if x.1 > acc.1 { x } else { acc })
            .0;
        let caption = self.world.scenario.entities[best].description();
        WireResponse::decision(if accept { Decision::Accept } else { Decision::Reject }, caption)
    }
}

impl AgentBackend for OracleAgent {
    fn name(&self) -> &str {
        "oracle"
    }

    fn call(&self, req: &AgentRequest) -> Result<WireResponse, BackendError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ req.key_u64());
        if rng.random_bool(self.faults.format_error_prob) {
            // schema-violating but well-formed JSON replies
            return Ok(match req.role {
                Role::Propose => WireResponse::with_box([0, 0, i64::from(u32::MAX), 1]),
                Role::Parse => WireResponse { caption: Some("?".into()), ..WireResponse::abstain() },
                Role::SceneJudge | Role::Verify => {
                    WireResponse { decision: Some("maybe".into()), ..WireResponse::abstain() }
                }
                Role::LocalizeGrounded | Role::LocalizeUngrounded => WireResponse::abstain(),
            });
        }
        let s = &self.world.scenario;
        Ok(match req.role {
            Role::Parse => match split_rule_based(&req.query.raw) {
                Ok(p) => WireResponse::parsed(&p.np, &p.context),
                Err(e) => WireResponse::error(e.to_string()),
            },
            Role::Propose => self.propose(req, &mut rng),
            Role::SceneJudge => {
                let span = req.frames.as_ref().expect("scene judge carries frames").span();
                match span.intersect(&s.gt_span) {
                    Some(_) => WireResponse::decision(Decision::Accept, self.span_caption()),
                    None => WireResponse::decision(Decision::Reject, "the queried action does not happen here"),
                }
            }
            Role::Verify => self.verify(req, &mut rng),
            Role::LocalizeGrounded | Role::LocalizeUngrounded => {
                WireResponse::span(s.gt_span.st as i64, s.gt_span.ed as i64, self.span_caption())
            }
        })
    }
}

/// Tracker returning the ground-truth tube of the entity best matching the
/// seed box, degraded by jitter and dropout on non-seed frames.
pub struct OracleTracker {
    world: World,
    faults: FaultSpec,
    seed: u64,
}

impl OracleTracker {
    pub fn new(world: World, faults: FaultSpec, seed: u64) -> Self {
        Self { world, faults, seed }
    }
}

fn shift(m: &Mask, dx: i64, dy: i64) -> Mask {
    if dx == 0 && dy == 0 {
        return m.clone();
    }
    let (w, h) = (m.width() as i64, m.height() as i64);
    let src = m.to_bitmap();
    let mut out = vec![false; src.len()];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = (x - dx, y - dy);
            if (0..w).contains(&sx) && (0..h).contains(&sy) {
                out[(y * w + x) as usize] = src[(sy * w + sx) as usize];
            }
        }
    }
    Mask::from_bitmap(m.frame_index(), m.width(), m.height(), &out)
}

impl TrackerBackend for OracleTracker {
    fn name(&self) -> &str {
        "oracle"
    }

    fn track(&self, clip: &FrameClip, seed: &BoundingBox) -> Result<TrackReply, BackendError> {
        let f = seed.frame_index;
        let mut best: Option<(usize, f64)> = None;
        for (i, t) in self.world.gt.iter().enumerate() {
            if let Some(ext) = t.mask(f).and_then(Mask::extent) {
                let iou = box_iou(seed, &ext);
                // ties go to the entity drawn later (on top)
                if iou > 0.0 && best.is_none_or(|(_, b)| iou >= b) {
                    best = Some((i, iou));
                }
            }
        }
        let Some((entity, _)) = best else {
            return Ok(TrackReply::Fail("no entity under the seed box".into()));
        };
        let key = format!("{}-{}:{}@{:?}", clip.first_index(), clip.last_index(), f, seed.coords());
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ stable_u64(&key));
        let jitter = (self.faults.tracker_jitter_sigma > 0.0)
            .then(|| Normal::new(0.0, self.faults.tracker_jitter_sigma).expect("finite sigma"));
        let gt = &self.world.gt[entity];
        let masks = clip
            .frames()
            .iter()
            .filter_map(|fr| gt.mask(fr.index))
            .map(|m| {
                if m.frame_index() == f {
                    return m.clone();
                }
                if rng.random_bool(self.faults.tracker_dropout_prob) {
                    return Mask::empty(m.frame_index(), m.width(), m.height());
                }
                match &jitter {
                    Some(n) => {
                        let dx = n.sample(&mut rng).round() as i64;
                        let dy = n.sample(&mut rng).round() as i64;
                        shift(m, dx, dy)
                    }
                    None => m.clone(),
                }
            })
            .collect();
        Ok(TrackReply::Masks(masks))
    }
}

/// Agent and tracker for a rendered world.
pub fn oracle_backends(world: &World, faults: &FaultSpec, seed: u64) -> (OracleAgent, OracleTracker) {
    (
        OracleAgent::new(world.clone(), faults.clone(), seed),
        OracleTracker::new(world.clone(), faults.clone(), seed.rotate_left(17)),
    )
}

/// One simulated episode end to end.
#[derive(Debug, Clone)]
pub struct SimRun {
    pub world: World,
    pub grounding: Grounding,
    pub prediction: Option<Annotation>,
}

#[derive(Debug, Error)]
pub enum SimRunError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

/// Generate, render and ground scenario `seed` with oracle backends.
pub fn run_scenario(seed: u64, params: &GenParams, faults: &FaultSpec, config: &EngineConfig) -> Result<SimRun, SimRunError> {
    faults.validate()?;
    let world = generate(seed, params)?.rasterize();
    let (agent, tracker) = oracle_backends(&world, faults, seed);
    let grounding = ground(&world.clip, &world.scenario.query, &Backends { agent: &agent, tracker: &tracker }, config)?;
    let prediction = match (&grounding.tube, grounding.span) {
        (Some(t), Some(span)) => Some(Annotation::from_tube(world.scenario.video_id(), &world.scenario.query, t, span)),
        _ => None,
    };
    Ok(SimRun { world, grounding, prediction })
}

/// Per-episode counters and scores, one CSV row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeRow {
    pub seed: u64,
    pub video_id: String,
    pub stride: usize,
    pub status: EpisodeStatus,
    pub segments: usize,
    pub retained: usize,
    pub propose: u32,
    pub track: u32,
    pub verify: u32,
    pub advance: u32,
    pub fallback: u32,
    pub duplicates: u32,
    pub agent_calls: u32,
    pub tracker_calls: u32,
    pub tiou: f64,
    pub viou: f64,
}

impl SimRun {
    pub fn row(&self, stride: usize) -> EpisodeRow {
        let g = &self.grounding;
        let sum = |f: fn(&crate::controller::Counters) -> u32| g.episodes.iter().map(|e| f(&e.result.counters)).sum();
        let gt = self.world.ground_truth();
        let (tiou, viou) = self
            .prediction
            .as_ref()
            .map_or((0.0, 0.0), |p| (crate::eval::tiou(&gt.span, &p.span), crate::eval::viou(&gt, p)));
        EpisodeRow {
            seed: self.world.scenario.seed,
            video_id: self.world.scenario.video_id(),
            stride,
            status: g.status,
            segments: g.segments.len(),
            retained: g.retained.len(),
            propose: sum(|c| c.propose),
            track: sum(|c| c.track),
            verify: sum(|c| c.verify),
            advance: sum(|c| c.advance),
            fallback: sum(|c| c.fallback),
            duplicates: sum(|c| c.duplicates),
            agent_calls: sum(|c| c.agent_calls),
            tracker_calls: sum(|c| c.tracker_calls),
            tiou,
            viou,
        }
    }
}
