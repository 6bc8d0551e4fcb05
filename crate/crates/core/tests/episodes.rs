//! Whole-episode scenarios with partly scripted backends.

use std::sync::Arc;

use astg_core::agents::{AgentRequest, Role, ScriptedAgent, WireResponse};
use astg_core::config::EngineConfig;
use astg_core::controller::{run_episode, Action, Backends, EpisodeStatus};
use astg_core::geometry::{mask_to_box, trim, tube_iou, TemporalSpan};
use astg_core::memory::{MessageKind, Source};
use astg_core::pipeline::ground;
use astg_core::query::ParsedQuery;
use astg_core::simworld::{generate, oracle_backends, FaultSpec, GenParams, OracleAgent, OracleTracker, World};
use astg_core::AgentBackend;

fn target_index(world: &World) -> usize {
    let s = &world.scenario;
    s.entities.iter().position(|e| e.id == s.target_id).unwrap()
}

/// First seed whose world has every entity visible on every frame.
fn unoccluded_world(params: &GenParams) -> World {
    (0..500)
        .map(|seed| generate(seed, params).unwrap().rasterize())
        .find(|w| (0..w.clip.len()).all(|f| w.visible(f).len() == w.gt.len()))
        .expect("some seed keeps all entities apart")
}

fn box_of(world: &World, entity: usize, frame: usize) -> WireResponse {
    let b = world.gt[entity].mask(frame).and_then(mask_to_box).unwrap();
    let [x1, y1, x2, y2] = b.coords();
    WireResponse::with_box([x1 as i64, y1 as i64, x2 as i64, y2 as i64])
}

/// Oracle agent whose proposer is replaced by `sra`.
fn with_proposer(
    world: &World,
    sra: impl Fn(&AgentRequest, usize) -> WireResponse + Send + Sync + 'static,
) -> (ScriptedAgent, OracleTracker) {
    let (oracle, tracker) = oracle_backends(world, &FaultSpec::default(), 7);
    let oracle: Arc<OracleAgent> = Arc::new(oracle);
    let agent = ScriptedAgent::new("scripted-sra", move |req| match req.role {
        Role::Propose => Ok(sra(req, req.frames.as_ref().unwrap().first_index())),
        _ => oracle.call(req),
    });
    (agent, tracker)
}

fn query(world: &World) -> ParsedQuery {
    astg_core::query::split_rule_based(&world.scenario.query).unwrap()
}

#[test]
fn distractor_is_verified_once_then_fallback_context_finds_target() {
    let params = GenParams { entities: 2, frames: 20, ..GenParams::default() };
    let world = unoccluded_world(&params);
    let target = target_index(&world);
    let distractor = 1 - target;

    let w = world.clone();
    let (agent, tracker) = with_proposer(&world, move |req, frame| {
        // the ungrounded localizer's caption names the action span
        let seeded = req
            .dialogue
            .iter()
            .any(|m| m.source == Source::Tra && m.kind == MessageKind::Caption && m.text.contains(" from #"));
        box_of(&w, if seeded { target } else { distractor }, frame)
    });
    let config = EngineConfig::default();
    let r = run_episode(&world.clip, &query(&world), &Backends { agent: &agent, tracker: &tracker }, &config).unwrap();

    assert_eq!(r.status, EpisodeStatus::Success);
    assert_eq!(r.counters.verify_by_pass[0], 1);
    assert_eq!(r.counters.propose_by_pass[0] as usize, world.clip.len().div_ceil(config.stride));
    assert_eq!(r.counters.duplicates, r.counters.propose_by_pass[0] - 1);
    assert_eq!(r.counters.fallback, 1);
    assert_eq!(r.counters.verify_by_pass[1], 1);

    let gt = world.scenario.gt_span;
    assert_eq!(r.span, Some(gt));
    assert_eq!(r.clips, vec![world.clip.span(), gt]);
    let expected = trim(world.target_tube(), gt).unwrap();
    assert_eq!(tube_iou(r.tube.as_ref().unwrap(), &expected), 1.0);

    // the distractor is what pass 0 remembered
    let pass0 = &r.memory[0];
    assert_eq!(pass0.tubes.len(), 1);
    assert_eq!(tube_iou(&pass0.tubes[0], &world.gt[distractor]), 1.0);
    let fb = r.fallback.as_ref().unwrap();
    assert_eq!(fb.span, gt);
    assert_eq!(r.context[0].text, fb.caption);
    let fallback_steps: Vec<_> = r.trace.iter().filter(|t| t.action == Action::Fallback).collect();
    assert_eq!(fallback_steps.len(), 1);
}

#[test]
fn distractor_with_memory_off_is_verified_every_time() {
    let params = GenParams { entities: 2, frames: 20, ..GenParams::default() };
    let world = unoccluded_world(&params);
    let distractor = 1 - target_index(&world);
    let w = world.clone();
    let (agent, tracker) = with_proposer(&world, move |_, frame| box_of(&w, distractor, frame));
    let config = EngineConfig { memory_enabled: false, ..EngineConfig::default() };
    let r = run_episode(&world.clip, &query(&world), &Backends { agent: &agent, tracker: &tracker }, &config).unwrap();
    assert_eq!(r.counters.verify_by_pass[0] as usize, world.clip.len().div_ceil(config.stride));
    assert_eq!(r.counters.duplicates, 0);
    assert_eq!(r.status, EpisodeStatus::Failure);
}

#[test]
fn absent_target_fails_after_two_passes() {
    let world = generate(3, &GenParams { frames: 16, ..GenParams::default() }).unwrap().rasterize();
    let (_, tracker) = oracle_backends(&world, &FaultSpec::default(), 1);
    let agent = ScriptedAgent::new("absent", |req| {
        Ok(match req.role {
            Role::LocalizeUngrounded => WireResponse::span(0, 99, "no such object"),
            _ => WireResponse::abstain(),
        })
    });
    let q = ParsedQuery::new("the purple giraffe", "the purple giraffe", "").unwrap();
    let config = EngineConfig::default();
    let r = run_episode(&world.clip, &q, &Backends { agent: &agent, tracker: &tracker }, &config).unwrap();

    assert_eq!(r.status, EpisodeStatus::Failure);
    assert_eq!(r.tube, None);
    let passes: std::collections::BTreeSet<u8> = r.trace.iter().map(|t| t.pass).collect();
    assert_eq!(passes.into_iter().collect::<Vec<_>>(), vec![0, 1]);
    assert_eq!(r.counters.fallback, 1);
    assert_eq!(r.counters.track, 0);
    let per_pass = world.clip.len().div_ceil(config.stride) as u32;
    assert_eq!(r.counters.propose_by_pass, [per_pass, per_pass]);
    assert_eq!(r.trace.last().unwrap().action, Action::Terminate);
}

#[test]
fn out_of_bounds_proposal_is_repaired_within_the_episode() {
    let world = unoccluded_world(&GenParams { frames: 12, ..GenParams::default() });
    let target = target_index(&world);
    let w = world.clone();
    let (agent, tracker) = with_proposer(&world, move |req, frame| {
        if req.options.attempt == 0 {
            WireResponse::with_box([-5, 0, 400, 300])
        } else {
            box_of(&w, target, frame)
        }
    });
    let config = EngineConfig::default();
    let r = run_episode(&world.clip, &query(&world), &Backends { agent: &agent, tracker: &tracker }, &config).unwrap();

    let first = &r.trace[0];
    assert_eq!(first.action, Action::Propose);
    assert_eq!(first.agent_calls, 2);
    assert_eq!(first.errors.len(), 1);
    assert!(first.errors[0].starts_with("malformed"));
    assert!(r.context.iter().any(|m| m.kind == MessageKind::Correction));

    assert_eq!(r.status, EpisodeStatus::Success);
    assert_eq!(r.counters.propose, 1);
}

#[test]
fn scene_filter_keeps_only_the_segment_with_the_action() {
    let params = GenParams { frames: 36, cuts: 2, ..GenParams::default() };
    let world = (0..500)
        .map(|seed| generate(seed, &params).unwrap())
        .find(|s| {
            let scenes = s.scenes();
            scenes[1].span.contains(s.gt_span.st) && scenes[1].span.contains(s.gt_span.ed)
        })
        .expect("some seed puts the action in the middle scene")
        .rasterize();
    let (agent, tracker) = oracle_backends(&world, &FaultSpec::default(), 0);
    let g = ground(&world.clip, &world.scenario.query, &Backends { agent: &agent, tracker: &tracker }, &EngineConfig::default())
        .unwrap();
    assert_eq!(g.segments, world.scenario.scenes());
    assert_eq!(g.retained, vec![world.scenario.scenes()[1]]);
    assert_eq!(g.status, EpisodeStatus::Success);
    assert_eq!(g.span, Some(world.scenario.gt_span));
}

#[test]
fn abstentions_advance_the_cursor_in_both_passes() {
    let world = generate(11, &GenParams { frames: 10, ..GenParams::default() }).unwrap().rasterize();
    let (_, tracker) = oracle_backends(&world, &FaultSpec::default(), 0);
    let agent = ScriptedAgent::new("blind", |req| {
        Ok(match req.role {
            Role::Propose => WireResponse::abstain(),
            Role::LocalizeUngrounded => WireResponse::span(2, 5, "something"),
            _ => WireResponse::error("unused"),
        })
    });
    let q = ParsedQuery::new("a block", "a block", "").unwrap();
    let r = run_episode(&world.clip, &q, &Backends { agent: &agent, tracker: &tracker }, &EngineConfig::default())
        .unwrap();
    assert_eq!(r.clips[1], TemporalSpan { st: 2, ed: 5 });
    let frames: Vec<usize> = r.trace.iter().filter(|t| t.action == Action::Propose).filter_map(|t| t.frame).collect();
    assert_eq!(frames, vec![0, 2, 4, 6, 8, 2, 4]);
}
