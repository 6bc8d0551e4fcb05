//! Clip inputs: a directory of numbered PNGs with `meta.json`, or a
//! simworld scenario file.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use astg_core::pipeline::resample;
use astg_core::simworld::World;
use astg_core::{Frame, FrameClip, Scenario};
use serde::Deserialize;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameMeta {
    pub fps: f64,
    #[serde(default)]
    pub video_id: Option<String>,
}

pub enum Input {
    Frames { video_id: String, clip: FrameClip },
    Scenario(Box<World>),
}

impl Input {
    pub fn clip(&self) -> &FrameClip {
        match self {
            Input::Frames { clip, .. } => clip,
            Input::Scenario(w) => &w.clip,
        }
    }

    pub fn video_id(&self) -> String {
        match self {
            Input::Frames { video_id, .. } => video_id.clone(),
            Input::Scenario(w) => w.scenario.video_id(),
        }
    }
}

/// Frames are resampled to `sample_fps`. Scenarios are rendered at their
/// own rate and used as is, so frame indices stay aligned with their
/// ground truth.
pub fn load(path: &Path, sample_fps: f64) -> Result<Input> {
    if path.is_dir() {
        let (video_id, clip) = read_frames_dir(path)?;
        let clip = resample(&clip, sample_fps)?;
        return Ok(Input::Frames { video_id, clip });
    }
    if !path.exists() {
        bail!("input {} does not exist", path.display());
    }
    Ok(Input::Scenario(Box::new(read_scenario(path)?.rasterize())))
}

pub fn read_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let s: Scenario = serde_json::from_str(&text).with_context(|| format!("malformed scenario {}", path.display()))?;
    s.validate()?;
    Ok(s)
}

fn frame_number(p: &Path) -> Option<usize> {
    let stem = p.file_stem()?.to_str()?;
    let digits: String = stem.chars().rev().take_while(char::is_ascii_digit).collect();
    digits.chars().rev().collect::<String>().parse().ok()
}

pub fn read_frames_dir(dir: &Path) -> Result<(String, FrameClip)> {
    let meta_path = dir.join("meta.json");
    let meta: FrameMeta = serde_json::from_str(
        &std::fs::read_to_string(&meta_path).with_context(|| format!("reading {}", meta_path.display()))?,
    )
    .with_context(|| format!("malformed {}", meta_path.display()))?;

    let mut pngs: Vec<(usize, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let p = entry?.path();
        if p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            let n = frame_number(&p).ok_or_else(|| anyhow!("{} has no frame number", p.display()))?;
            pngs.push((n, p));
        }
    }
    pngs.sort();
    if pngs.is_empty() {
        bail!("no PNG frames in {}", dir.display());
    }
    let mut frames = Vec::with_capacity(pngs.len());
    let mut dims = None;
    for (i, (_, p)) in pngs.iter().enumerate() {
        let img = image::open(p).with_context(|| format!("decoding {}", p.display()))?.to_rgb8();
        let d = (img.width(), img.height());
        if *dims.get_or_insert(d) != d {
            bail!("{} is {}x{}, expected {}x{}", p.display(), d.0, d.1, dims.unwrap().0, dims.unwrap().1);
        }
        frames.push(Frame::new(i, img.into_raw()));
    }
    let (w, h) = dims.expect("at least one frame");
    let video_id = meta
        .video_id
        .or_else(|| dir.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "video".into());
    Ok((video_id, FrameClip::new(frames, meta.fps, w, h)?))
}

/// Write `clip` as `{index:05}.png` plus `meta.json`.
pub fn write_frames_dir(dir: &Path, clip: &FrameClip, video_id: Option<&str>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for f in clip.frames() {
        let img = image::RgbImage::from_raw(clip.width(), clip.height(), f.pixels.clone())
            .ok_or_else(|| anyhow!("frame {} has the wrong size", f.index))?;
        img.save(dir.join(format!("{:05}.png", f.index)))?;
    }
    let meta = serde_json::json!({ "fps": clip.fps(), "video_id": video_id });
    std::fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}
