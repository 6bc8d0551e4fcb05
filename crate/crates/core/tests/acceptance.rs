//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use astg_core::agents::{AgentBackend, AgentRequest, BackendError, Decision, Role, WireResponse};
use astg_core::controller::{run_episode, Action, Backends, EpisodeResult, EpisodeStatus, Observation};
use astg_core::eval::{aggregate, tiou, viou, Annotation, DEFAULT_THRESHOLDS};
use astg_core::geometry::{trim, tube_iou, TemporalSpan};
use astg_core::memory::{Message, MessageKind, Source};
use astg_core::prompting::{clip_digest, label_origin, outline_band, spatial_prompt, temporal_prompt, text_size, index_origin, PromptStyle};
use astg_core::query::ParsedQuery;
use astg_core::simworld::{generate, oracle_backends, run_scenario, FaultSpec, GenParams, OracleAgent, World};
use astg_core::EngineConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn parsed(world: &World) -> ParsedQuery {
    astg_core::query::split_rule_based(&world.scenario.query).expect("templated query parses")
}

/// Oracle pipeline over 200 generated scenarios.
fn oracle_end_to_end() -> Outcome {
    let start = Instant::now();
    let config = EngineConfig::default();
    let mut gts = Vec::new();
    let mut preds = Vec::new();
    for seed in 0..200u64 {
        let params = GenParams { cuts: (seed % 3) as usize, entities: 1 + (seed % 5) as usize, ..Default::default() };
        let run = run_scenario(seed, &params, &FaultSpec::default(), &config).map_err(|e| e.to_string())?;
        gts.push(run.world.ground_truth());
        preds.extend(run.prediction);
    }
    let elapsed = start.elapsed();
    let r = aggregate(&gts, &preds, &DEFAULT_THRESHOLDS).map_err(|e| e.to_string())?;
    check(
        r.m_viou >= 0.99 && r.m_tiou >= 0.99 && elapsed < Duration::from_secs(60),
        format!("m_vIoU={:.4} m_tIoU={:.4} over {} episodes in {:.1}s", r.m_viou, r.m_tiou, r.count, elapsed.as_secs_f64()),
    )
}

fn random_annotation(rng: &mut ChaCha8Rng, id: &str) -> Annotation {
    let st = rng.random_range(0..20);
    let span = TemporalSpan { st, ed: st + rng.random_range(0..12) };
    let mut boxes = std::collections::BTreeMap::new();
    for f in span.frames() {
        if rng.random_bool(0.9) {
            let x1 = rng.random_range(0..28);
            let y1 = rng.random_range(0..28);
            boxes.insert(f, [x1, y1, rng.random_range(x1 + 1..=32), rng.random_range(y1 + 1..=32)]);
        }
    }
    Annotation { video_id: id.into(), query: String::new(), span, boxes }
}

/// Pixel-set IoU of two boxes on a 32x32 canvas.
fn naive_box_iou(a: [u32; 4], b: [u32; 4]) -> f64 {
    let (mut inter, mut union) = (0u32, 0u32);
    for y in 0..32 {
        for x in 0..32 {
            let ina = x >= a[0] && x < a[2] && y >= a[1] && y < a[3];
            let inb = x >= b[0] && x < b[2] && y >= b[1] && y < b[3];
            inter += (ina && inb) as u32;
            union += (ina || inb) as u32;
        }
    }
    inter as f64 / union as f64
}

fn naive_metrics(g: &Annotation, p: &Annotation) -> (f64, f64) {
    let gf: HashSet<usize> = g.span.frames().collect();
    let pf: HashSet<usize> = p.span.frames().collect();
    let union = gf.union(&pf).count();
    let mut shared: Vec<usize> = gf.intersection(&pf).copied().collect();
    shared.sort_unstable();
    let mut sum = 0.0;
    for f in &shared {
        if let (Some(a), Some(b)) = (g.boxes.get(f), p.boxes.get(f)) {
            sum += naive_box_iou(*a, *b);
        }
    }
    (shared.len() as f64 / union as f64, sum / union as f64)
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    let mut ordered = true;
    for i in 0..1000 {
        let id = format!("v{i}");
        let (g, p) = (random_annotation(&mut rng, &id), random_annotation(&mut rng, &id));
        let (nt, nv) = naive_metrics(&g, &p);
        let (t, v) = (tiou(&g.span, &p.span), viou(&g, &p));
        worst = worst.max((t - nt).abs()).max((v - nv).abs());
        ordered &= v <= t;
    }
    check(worst <= 1e-12 && ordered, format!("max |diff|={worst:.2e} over 1000 pairs, vIoU<=tIoU on all: {ordered}"))
}

/// Proposer cycling through the visible entities; verification always rejects.
struct Cycling {
    oracle: OracleAgent,
    world: World,
    stride: usize,
}

impl AgentBackend for Cycling {
    fn name(&self) -> &str {
        "cycling"
    }

    fn call(&self, req: &AgentRequest) -> Result<WireResponse, BackendError> {
        match req.role {
            Role::Propose => {
                let frame = req.frames.as_ref().expect("frame").first_index();
                let visible = self.world.visible(frame);
                let pick = visible[(frame / self.stride) % visible.len()];
                let [x1, y1, x2, y2] = self.world.gt[pick].mask(frame).and_then(|m| m.extent()).expect("visible").coords();
                Ok(WireResponse::with_box([x1 as i64, y1 as i64, x2 as i64, y2 as i64]))
            }
            Role::Verify => Ok(WireResponse::decision(Decision::Reject, "not the queried block")),
            _ => self.oracle.call(req),
        }
    }
}

fn memory_effectiveness() -> Outcome {
    let mut worst_with = 0;
    let mut fewest_without = u32::MAX;
    let mut ok = true;
    for seed in 0..50u64 {
        let world = generate(seed, &GenParams { entities: 5, ..Default::default() }).map_err(|e| e.to_string())?.rasterize();
        let (oracle, tracker) = oracle_backends(&world, &FaultSpec::default(), seed);
        let agent = Cycling { oracle, world: world.clone(), stride: 2 };
        let q = parsed(&world);
        let b = Backends { agent: &agent, tracker: &tracker };
        let with = run_episode(&world.clip, &q, &b, &EngineConfig::default()).map_err(|e| e.to_string())?;
        let off = EngineConfig { memory_enabled: false, ..Default::default() };
        let without = run_episode(&world.clip, &q, &b, &off).map_err(|e| e.to_string())?;
        let bound = world.clip.len().div_ceil(2) as u32;
        let max_with = *with.counters.verify_by_pass.iter().max().expect("two passes");
        worst_with = worst_with.max(max_with);
        fewest_without = fewest_without.min(without.counters.verify_by_pass[0]);
        ok &= max_with <= 5 && without.counters.verify_by_pass[0] >= bound;
    }
    check(
        ok,
        format!("max verifies per pass with memory={worst_with} (<=5), min pass-0 verifies without={fewest_without} (>=ceil(T/2)=20)"),
    )
}

/// Rejects every verification until the ungrounded localizer has been asked,
/// then defers to the oracle. Records the dialogue of every proposal.
struct RejectFirstPass {
    oracle: OracleAgent,
    fallen_back: AtomicBool,
    proposals: Mutex<Vec<Vec<Message>>>,
}

impl AgentBackend for RejectFirstPass {
    fn name(&self) -> &str {
        "reject-first-pass"
    }

    fn call(&self, req: &AgentRequest) -> Result<WireResponse, BackendError> {
        match req.role {
            Role::LocalizeUngrounded => self.fallen_back.store(true, Ordering::SeqCst),
            Role::Propose => self.proposals.lock().expect("lock").push(req.dialogue.clone()),
            Role::Verify if !self.fallen_back.load(Ordering::SeqCst) => {
                return Ok(WireResponse::decision(Decision::Reject, "not yet"))
            }
            _ => {}
        }
        self.oracle.call(req)
    }
}

fn fallback_check(world: &World, r: &EpisodeResult, proposals: &[Vec<Message>]) -> Result<(), String> {
    let gt = world.scenario.gt_span;
    if r.counters.fallback != 1 || r.trace.iter().filter(|t| t.action == Action::Fallback).count() != 1 {
        return Err(format!("fallback count {}", r.counters.fallback));
    }
    let Some(Observation::FallbackApplied { cleared, span, caption }) =
        r.trace.iter().map(|t| &t.observation).find(|o| matches!(o, Observation::FallbackApplied { .. }))
    else {
        return Err("no fallback observation".into());
    };
    if *cleared != r.memory[0].tubes.len() || r.memory[1].tubes.iter().any(|t| t.span() != gt) {
        return Err("memory not emptied at fallback".into());
    }
    let first_pass1 = r.counters.propose_by_pass[0] as usize;
    let seeded = vec![Message { source: Source::Tra, kind: MessageKind::Caption, text: caption.clone() }];
    if proposals.get(first_pass1) != Some(&seeded) {
        return Err(format!("context after fallback: {:?}", proposals.get(first_pass1)));
    }
    if *span != gt || r.clips.get(1) != Some(&gt) {
        return Err(format!("working clip {:?}, expected {gt}", r.clips.get(1)));
    }
    if r.status != EpisodeStatus::Success || r.span != Some(gt) {
        return Err(format!("pass-1 status {:?} span {:?}", r.status, r.span));
    }
    let want = trim(world.target_tube(), gt).map_err(|e| e.to_string())?;
    if tube_iou(r.tube.as_ref().expect("success has a tube"), &want) != 1.0 {
        return Err("pass-1 tube differs from ground truth".into());
    }
    Ok(())
}

fn fallback_correctness() -> Outcome {
    let mut successes = 0;
    for seed in 0..50u64 {
        let world = generate(seed, &GenParams::default()).map_err(|e| e.to_string())?.rasterize();
        let (oracle, tracker) = oracle_backends(&world, &FaultSpec::default(), seed);
        let agent = RejectFirstPass { oracle, fallen_back: AtomicBool::new(false), proposals: Mutex::new(Vec::new()) };
        let q = parsed(&world);
        let r = run_episode(&world.clip, &q, &Backends { agent: &agent, tracker: &tracker }, &EngineConfig::default())
            .map_err(|e| e.to_string())?;
        let proposals = agent.proposals.lock().expect("lock").clone();
        fallback_check(&world, &r, &proposals).map_err(|e| format!("seed {seed}: {e}"))?;
        successes += 1;
    }
    check(successes == 50, format!("{successes}/50 episodes: one fallback, memory and context reset, clip trimmed, pass-1 success"))
}

struct NeverAccept(OracleAgent);

impl AgentBackend for NeverAccept {
    fn name(&self) -> &str {
        "never-accept"
    }

    fn call(&self, req: &AgentRequest) -> Result<WireResponse, BackendError> {
        match req.role {
            Role::Verify => Ok(WireResponse::decision(Decision::Reject, "no")),
            _ => self.0.call(req),
        }
    }
}

fn stride_scaling() -> Outcome {
    let mut totals = [0u64; 3];
    for seed in 0..20u64 {
        let world = generate(seed, &GenParams { frames: 60, ..Default::default() }).map_err(|e| e.to_string())?.rasterize();
        let (oracle, tracker) = oracle_backends(&world, &FaultSpec::default(), seed);
        let agent = NeverAccept(oracle);
        let q = parsed(&world);
        for (i, stride) in [1, 2, 3].into_iter().enumerate() {
            let config = EngineConfig { stride, ..Default::default() };
            let r = run_episode(&world.clip, &q, &Backends { agent: &agent, tracker: &tracker }, &config)
                .map_err(|e| e.to_string())?;
            totals[i] += r.counters.propose as u64;
        }
    }
    let (r2, r3) = (totals[1] as f64 / totals[0] as f64, totals[2] as f64 / totals[0] as f64);
    check(
        (r2 - 0.5).abs() <= 0.05 && (r3 - 0.334).abs() <= 0.05,
        format!("propose calls {totals:?}, ratios 1 : {r2:.3} : {r3:.3}"),
    )
}

fn termination_fuzz() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut max_ratio = 0.0f64;
    for i in 0..1000u64 {
        let params = GenParams {
            frames: rng.random_range(8..=24),
            width: 48,
            height: 40,
            entities: rng.random_range(1..=4),
            cuts: rng.random_range(0..=1),
            min_size: 6,
            max_size: 12,
            min_span: 3,
            ..Default::default()
        };
        let faults = FaultSpec {
            sra_wrong_target_prob: rng.random(),
            sra_abstain_prob: rng.random(),
            tracker_jitter_sigma: rng.random_range(0.0..3.0),
            tracker_dropout_prob: rng.random(),
            tra_flip_prob: rng.random(),
            format_error_prob: rng.random(),
        };
        let config = EngineConfig { stride: rng.random_range(1..=3), ..Default::default() };
        let run = run_scenario(i, &params, &faults, &config).map_err(|e| format!("episode {i}: {e}"))?;
        for ep in &run.grounding.episodes {
            let r = &ep.result;
            let bound = 2 * ep.segment.span.len().div_ceil(config.stride) as u32;
            if r.counters.propose > bound || r.counters.fallback > 1 || r.trace.iter().any(|t| t.pass > 1) {
                return Err(format!("episode {i}: {} proposals (bound {bound}), {} fallbacks", r.counters.propose, r.counters.fallback));
            }
            max_ratio = max_ratio.max(r.counters.propose as f64 / bound as f64);
            for snap in &r.memory {
                for (a, ta) in snap.tubes.iter().enumerate() {
                    for tb in &snap.tubes[a + 1..] {
                        if tube_iou(ta, tb) >= 0.5 {
                            return Err(format!("episode {i}: stored tubes {} and {} overlap", ta.id(), tb.id()));
                        }
                    }
                }
            }
        }
    }
    Ok(format!("1000 episodes halted; max proposals / bound = {max_ratio:.3}; dedup invariant held"))
}

fn run_sweep() -> Result<(Vec<u8>, Vec<u8>), String> {
    let faults = FaultSpec {
        sra_wrong_target_prob: 0.3,
        sra_abstain_prob: 0.1,
        tracker_jitter_sigma: 1.0,
        tracker_dropout_prob: 0.05,
        tra_flip_prob: 0.1,
        format_error_prob: 0.1,
    };
    let mut traces = Vec::new();
    let mut csv = csv::Writer::from_writer(Vec::new());
    for seed in 100..130u64 {
        let params = GenParams { cuts: (seed % 2) as usize, ..Default::default() };
        let run = run_scenario(seed, &params, &faults, &EngineConfig::default()).map_err(|e| e.to_string())?;
        serde_json::to_writer(&mut traces, &run.grounding).map_err(|e| e.to_string())?;
        traces.push(b'\n');
        csv.serialize(run.row(2)).map_err(|e| e.to_string())?;
    }
    Ok((traces, csv.into_inner().map_err(|e| e.to_string())?))
}

fn determinism() -> Outcome {
    let (t1, c1) = run_sweep()?;
    let (t2, c2) = run_sweep()?;
    check(t1 == t2 && c1 == c2, format!("30 faulty episodes: traces {} bytes, CSV {} bytes, identical across runs", t1.len(), c1.len()))
}

/// Pinned digests of the prompt fixture below.
const SPATIAL_DIGEST: &str = "4513b1d5155ee24807f1ce51ea2f0e8c4a0b6ea90f3803da305c96ec2dd7a375";
const TEMPORAL_DIGEST: &str = "5a6aaa79534f3dea11139df6e5ae40fec51a5381634114fc8596df874fd339a4";

fn prompt_rendering() -> Outcome {
    let world = generate(42, &GenParams { frames: 20, entities: 3, ..Default::default() })
        .map_err(|e| e.to_string())?
        .rasterize();
    let style = PromptStyle::default();
    let tube = world.target_tube();
    let sp = spatial_prompt(&world.clip, tube, &style);
    let tp = temporal_prompt(&world.clip, &style);
    let (w, h) = (world.clip.width(), world.clip.height());
    let stable = clip_digest(&sp) == clip_digest(&spatial_prompt(&world.clip, tube, &style))
        && clip_digest(&tp) == clip_digest(&temporal_prompt(&world.clip, &style));
    let pinned = clip_digest(&sp) == SPATIAL_DIGEST && clip_digest(&tp) == TEMPORAL_DIGEST;

    let in_rect = |x: u32, y: u32, o: (u32, u32), size: (u32, u32)| x >= o.0 && x < o.0 + size.0 && y >= o.1 && y < o.1 + size.1;
    let mut stray = 0usize;
    let mut changed = 0usize;
    for (i, orig) in world.clip.frames().iter().enumerate() {
        let mask = tube.mask(orig.index).expect("tube spans the clip");
        let band = outline_band(mask, style.outline_width);
        let label = tube.id().to_string();
        let label_box = mask
            .extent()
            .map(|e| (label_origin(&e, &label, &style, w, h), text_size(&label, style.glyph_size)));
        let stamp = format!("#{}", orig.index);
        let stamp_box = (index_origin(&stamp, &style, w, h), text_size(&stamp, style.glyph_size));
        for y in 0..h {
            for x in 0..w {
                let before = orig.rgb(w, x, y);
                if sp.frames()[i].rgb(w, x, y) != before {
                    changed += 1;
                    let p = (y * w + x) as usize;
                    let in_label = label_box.is_some_and(|(o, s)| in_rect(x, y, o, s));
                    stray += usize::from(!(band[p] || in_label));
                }
                if tp.frames()[i].rgb(w, x, y) != before {
                    changed += 1;
                    stray += usize::from(!in_rect(x, y, stamp_box.0, stamp_box.1));
                }
            }
        }
    }
    check(
        stable && pinned && stray == 0 && changed > 0,
        format!(
            "20 frames: spatial {} temporal {}; pinned digests match: {pinned}; {changed} changed pixels, {stray} outside footprints",
            &clip_digest(&sp)[..12],
            &clip_digest(&tp)[..12]
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("oracle end-to-end", oracle_end_to_end),
        ("metric oracle equivalence", metric_oracle),
        ("memory effectiveness", memory_effectiveness),
        ("fallback correctness", fallback_correctness),
        ("stride scaling", stride_scaling),
        ("termination bound", termination_fuzz),
        ("determinism", determinism),
        ("prompt rendering", prompt_rendering),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS  {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL  {name}: {d} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
