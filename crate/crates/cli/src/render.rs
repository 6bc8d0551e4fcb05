//! Dump prompted frames as PNGs.

use std::path::PathBuf;

use anyhow::{anyhow, Context, Result};
use astg_core::prompting::{spatial_prompt, temporal_prompt};
use astg_core::tracker::WireTube;
use astg_core::{Tube, TubeId};
use clap::Args;
use serde::Deserialize;

use crate::input::{self, write_frames_dir, Input};
use crate::settings::EngineFlags;

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Frames directory or scenario JSON.
    #[arg(long, value_name = "PATH")]
    pub input: PathBuf,
    /// Trace from `astg run --out`; its tube gets outlined.
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub engine: EngineFlags,
}

#[derive(Deserialize)]
struct TracedTube {
    id: u32,
    #[serde(flatten)]
    wire: WireTube,
}

#[derive(Deserialize)]
struct Trace {
    tube: Option<TracedTube>,
}

/// Writes `raw/`, `temporal/` and, when a tube is known, `spatial/` (the
/// outlined frames with index stamps). Scenarios outline their target.
pub fn cmd_render(args: &RenderArgs) -> Result<i32> {
    let config = args.engine.resolve_from_env()?;
    let input = input::load(&args.input, config.sample_fps)?;
    let clip = input.clip();
    let style = &config.prompt_style;

    let tube = match (&args.trace, &input) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let trace: Trace = serde_json::from_str(&text).with_context(|| format!("malformed trace {}", path.display()))?;
            match trace.tube {
                Some(t) => {
                    let masks = t.wire.to_masks(clip.width(), clip.height()).map_err(|e| anyhow!("{e}"))?;
                    Some(Tube::new(TubeId(t.id), masks)?)
                }
                None => None,
            }
        }
        (None, Input::Scenario(w)) => Some(w.target_tube().clone()),
        (None, Input::Frames { .. }) => None,
    };

    let id = input.video_id();
    write_frames_dir(&args.out.join("raw"), clip, Some(&id))?;
    write_frames_dir(&args.out.join("temporal"), &temporal_prompt(clip, style), Some(&id))?;
    if let Some(t) = &tube {
        let sub = clip.sub_clip(t.span())?;
        let prompted = temporal_prompt(&spatial_prompt(&sub, t, style), style);
        write_frames_dir(&args.out.join("spatial"), &prompted, Some(&id))?;
    }
    println!("wrote {} frames to {}", clip.len(), args.out.display());
    Ok(0)
}
