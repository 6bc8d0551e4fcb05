use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use astg_core::eval::{write_jsonl, Annotation};
use astg_core::recorded::{write_log, Recorder, RecordingAgent, RecordingTracker, Replay};
use astg_core::remote::{RemoteAgent, RemoteTracker};
use astg_core::simworld::{oracle_backends, FaultSpec};
use astg_core::{ground, AgentBackend, Backends, EngineConfig, EpisodeStatus, TrackerBackend};
use clap::{Args, ValueEnum};

use crate::input::{self, Input};
use crate::settings::EngineFlags;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    /// Simworld oracle agents and tracker; needs a scenario input.
    Scripted,
    /// HTTP services at the configured endpoints.
    Remote,
    /// Responses from a recorded log (`--replay`).
    Replay,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Frames directory (numbered PNGs + meta.json) or scenario JSON.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Query text; defaults to the scenario's query.
    #[arg(long)]
    pub query: Option<String>,
    #[arg(long, value_enum, default_value_t = BackendKind::Scripted)]
    pub backend: BackendKind,
    /// Fault spec JSON for the scripted backend.
    #[arg(long, value_name = "FILE")]
    pub faults: Option<PathBuf>,
    /// Noise seed for the scripted backend; defaults to the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Log to serve responses from when `--backend replay`.
    #[arg(long, value_name = "FILE")]
    pub replay: Option<PathBuf>,
    /// Record every backend response to this JSONL log.
    #[arg(long, value_name = "FILE")]
    pub record: Option<PathBuf>,
    /// Full trace as JSON.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// Prediction JSONL (empty when no tube was found).
    #[arg(long, value_name = "FILE")]
    pub pred: Option<PathBuf>,
    #[command(flatten)]
    pub engine: EngineFlags,
}

pub fn read_faults(path: Option<&Path>) -> Result<FaultSpec> {
    let faults = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("malformed fault spec {}", p.display()))?
        }
        None => FaultSpec::default(),
    };
    faults.validate()?;
    Ok(faults)
}

struct Owned {
    agent: Box<dyn AgentBackend>,
    tracker: Box<dyn TrackerBackend>,
}

fn backends(args: &RunArgs, input: &Input, config: &EngineConfig) -> Result<Owned> {
    Ok(match args.backend {
        BackendKind::Scripted => {
            let Input::Scenario(world) = input else {
                bail!("--backend scripted needs a scenario input");
            };
            let faults = read_faults(args.faults.as_deref())?;
            let (a, t) = oracle_backends(world, &faults, args.seed.unwrap_or(world.scenario.seed));
            Owned { agent: Box::new(a), tracker: Box::new(t) }
        }
        BackendKind::Remote => {
            let (Some(a), Some(t)) = (&config.agent_endpoint, &config.tracker_endpoint) else {
                bail!("--backend remote needs agent_endpoint and tracker_endpoint");
            };
            Owned {
                agent: Box::new(RemoteAgent::new(a, config.agent_timeout_ms)),
                tracker: Box::new(RemoteTracker::new(t, config.tracker_timeout_ms)),
            }
        }
        BackendKind::Replay => {
            let Some(log) = &args.replay else {
                bail!("--backend replay needs --replay <log>");
            };
            // agent and tracker entries live in separate queues, so two
            // readers of the same log do not interfere
            let open = || Replay::from_file(log).with_context(|| format!("reading {}", log.display()));
            Owned { agent: Box::new(open()?), tracker: Box::new(open()?) }
        }
    })
}

pub fn cmd_run(args: &RunArgs) -> Result<i32> {
    let config = args.engine.resolve_from_env()?;
    let input = input::load(&args.input, config.sample_fps)?;
    let query = match (&args.query, &input) {
        (Some(q), _) => q.clone(),
        (None, Input::Scenario(w)) => w.scenario.query.clone(),
        (None, Input::Frames { .. }) => bail!("--query is required for a frames directory"),
    };
    let owned = backends(args, &input, &config)?;

    let recorder = Recorder::new();
    let grounding = if args.record.is_some() {
        let agent = RecordingAgent::new(owned.agent.as_ref(), &recorder);
        let tracker = RecordingTracker::new(owned.tracker.as_ref(), &recorder);
        ground(input.clip(), &query, &Backends { agent: &agent, tracker: &tracker }, &config)?
    } else {
        ground(input.clip(), &query, &Backends { agent: owned.agent.as_ref(), tracker: owned.tracker.as_ref() }, &config)?
    };

    if let Some(path) = &args.record {
        write_log(path, &recorder.entries()).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &args.out {
        std::fs::write(path, serde_json::to_string_pretty(&grounding)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let prediction = match (&grounding.tube, grounding.span) {
        (Some(t), Some(span)) => Some(Annotation::from_tube(input.video_id(), &query, t, span)),
        _ => None,
    };
    if let Some(path) = &args.pred {
        write_jsonl(path, prediction.as_slice())?;
    }

    let errors: usize = grounding
        .episodes
        .iter()
        .flat_map(|e| &e.result.trace)
        .map(|t| t.errors.len())
        .sum();
    let span = grounding.span.map_or("-".to_string(), |s| s.to_string());
    println!(
        "{}: {} span {} ({} segments, {} retained, {} agent calls, {} errors)",
        input.video_id(),
        serde_json::to_value(grounding.status)?.as_str().unwrap_or("?"),
        span,
        grounding.segments.len(),
        grounding.retained.len(),
        grounding.agent_calls(),
        errors
    );
    Ok(match grounding.status {
        EpisodeStatus::Success | EpisodeStatus::BestEffort => 0,
        EpisodeStatus::Failure => 2,
    })
}
