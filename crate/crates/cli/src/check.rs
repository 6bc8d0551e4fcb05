//! Probe the configured agent and tracker services with one small request each.

use anyhow::{bail, Result};
use astg_core::agents::{AgentRequest, Role};
use astg_core::remote::{RemoteAgent, RemoteTracker};
use astg_core::{AgentBackend, BoundingBox, Frame, FrameClip, ParsedQuery, TrackReply, TrackerBackend};
use clap::Args;

use crate::settings::EngineFlags;

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub engine: EngineFlags,
}

fn probe_clip() -> FrameClip {
    let mut f = Frame::filled(0, 16, 16, [20, 20, 20]);
    for y in 4..10 {
        for x in 4..10 {
            f.set_rgb(16, x, y, [220, 30, 30]);
        }
    }
    FrameClip::new(vec![f], 2.0, 16, 16).expect("valid probe clip")
}

pub fn cmd_check(args: &CheckArgs) -> Result<i32> {
    let config = args.engine.resolve_from_env()?;
    if config.agent_endpoint.is_none() && config.tracker_endpoint.is_none() {
        bail!("no endpoints configured; set agent_endpoint and/or tracker_endpoint");
    }
    let mut healthy = true;
    if let Some(url) = &config.agent_endpoint {
        let agent = RemoteAgent::new(url, config.agent_timeout_ms);
        let query = ParsedQuery::new("the red block", "the red block", "").expect("non-empty query");
        let req = AgentRequest::new(Role::Propose, Some(probe_clip()), query, &config.call_options(Role::Propose));
        match agent.call(&req) {
            Ok(r) => println!("agent   {url}: ok (status {:?})", r.status),
            Err(e) => {
                healthy = false;
                println!("agent   {url}: unreachable ({e})");
            }
        }
    }
    if let Some(url) = &config.tracker_endpoint {
        let tracker = RemoteTracker::new(url, config.tracker_timeout_ms);
        let seed = BoundingBox::new(0, 4, 4, 10, 10).expect("valid probe box");
        match tracker.track(&probe_clip(), &seed) {
            Ok(TrackReply::Masks(m)) => println!("tracker {url}: ok ({} masks)", m.len()),
            Ok(TrackReply::Fail(r)) => println!("tracker {url}: ok (reported failure: {r})"),
            Err(e) => {
                healthy = false;
                println!("tracker {url}: unreachable ({e})");
            }
        }
    }
    Ok(if healthy { 0 } else { 2 })
}
