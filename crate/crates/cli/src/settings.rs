//! Engine config resolution: flag > config file > `ASTG_CONFIG` > default.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use astg_core::EngineConfig;
use clap::Args;

pub const CONFIG_ENV: &str = "ASTG_CONFIG";

/// Engine overrides shared by every command that runs the pipeline.
#[derive(Debug, Clone, Default, Args)]
pub struct EngineFlags {
    /// TOML config file; falls back to $ASTG_CONFIG when absent.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Frames the proposal cursor skips per step.
    #[arg(long)]
    pub stride: Option<usize>,
    #[arg(long)]
    pub dedup_threshold: Option<f64>,
    #[arg(long)]
    pub sample_fps: Option<f64>,
    #[arg(long)]
    pub scene_threshold: Option<f64>,
    #[arg(long)]
    pub context_capacity: Option<usize>,
    /// Disable candidate memory (every candidate is verified).
    #[arg(long)]
    pub no_memory: bool,
    #[arg(long, value_name = "URL")]
    pub agent_endpoint: Option<String>,
    #[arg(long, value_name = "URL")]
    pub tracker_endpoint: Option<String>,
    #[arg(long)]
    pub agent_retries: Option<u32>,
    #[arg(long, value_name = "MS")]
    pub agent_timeout_ms: Option<u64>,
    #[arg(long, value_name = "MS")]
    pub tracker_timeout_ms: Option<u64>,
    #[arg(long)]
    pub sra_resolution: Option<u32>,
    #[arg(long)]
    pub tra_resolution: Option<u32>,
    /// Worker threads for `simulate`.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[command(flatten)]
    pub engine: EngineFlags,
}

pub fn load_file(path: &Path) -> Result<EngineConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("malformed config {}", path.display()))
}

impl EngineFlags {
    /// `env` is the value of `ASTG_CONFIG`, passed in so tests need not touch
    /// the process environment.
    pub fn resolve(&self, env: Option<OsString>) -> Result<EngineConfig> {
        let file = self.config.clone().or_else(|| env.filter(|v| !v.is_empty()).map(PathBuf::from));
        let mut c = match file {
            Some(p) => load_file(&p)?,
            None => EngineConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    c.$field = v.into();
                }
            )*};
        }
        set!(
            stride,
            dedup_threshold,
            sample_fps,
            scene_threshold,
            context_capacity,
            agent_retries,
            agent_timeout_ms,
            tracker_timeout_ms,
            sra_resolution,
            tra_resolution,
            workers
        );
        if let Some(url) = &self.agent_endpoint {
            c.agent_endpoint = Some(url.clone());
        }
        if let Some(url) = &self.tracker_endpoint {
            c.tracker_endpoint = Some(url.clone());
        }
        if self.no_memory {
            c.memory_enabled = false;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn resolve_from_env(&self) -> Result<EngineConfig> {
        self.resolve(std::env::var_os(CONFIG_ENV))
    }
}
