use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{CallOptions, Role};
use crate::prompting::PromptStyle;

#[derive(Debug, Error, PartialEq)]
#[error("invalid config: {0}")]
pub struct ConfigError(pub String);

/// Engine settings. Every field has a default, so a config file only needs
/// the keys it overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    /// Frames skipped by the proposer between proposals.
    pub stride: usize,
    /// Tube IoU at or above which a new candidate counts as already seen.
    pub dedup_threshold: f64,
    /// Sampling rate applied at ingestion.
    pub sample_fps: f64,
    pub sra_resolution: u32,
    pub tra_resolution: u32,
    pub scene_threshold: f64,
    pub context_capacity: usize,
    pub memory_enabled: bool,
    pub agent_endpoint: Option<String>,
    pub tracker_endpoint: Option<String>,
    /// Repair/retry attempts after the first call; capped at 2.
    pub agent_retries: u32,
    pub agent_timeout_ms: u64,
    pub tracker_timeout_ms: u64,
    pub sra_thinking: bool,
    pub tra_thinking: bool,
    /// Opaque prompt templates keyed by role name, forwarded to backends.
    pub prompts: BTreeMap<String, String>,
    pub workers: usize,
    pub prompt_style: PromptStyle,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            stride: 2,
            dedup_threshold: 0.5,
            sample_fps: 2.0,
            sra_resolution: 448,
            tra_resolution: 336,
            scene_threshold: 30.0,
            context_capacity: 16,
            memory_enabled: true,
            agent_endpoint: None,
            tracker_endpoint: None,
            agent_retries: 1,
            agent_timeout_ms: 30_000,
            tracker_timeout_ms: 60_000,
            sra_thinking: false,
            tra_thinking: false,
            prompts: BTreeMap::new(),
            workers: 4,
            prompt_style: PromptStyle::default(),
        }
    }
}

pub const MAX_RETRIES: u32 = 2;

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: &str| Err(ConfigError(m.to_string()));
        if self.stride == 0 {
            return err("stride must be >= 1");
        }
        if !(self.dedup_threshold > 0.0 && self.dedup_threshold <= 1.0) {
            return err("dedup_threshold must be in (0, 1]");
        }
        if !(self.sample_fps > 0.0 && self.sample_fps.is_finite()) {
            return err("sample_fps must be positive");
        }
        if self.sra_resolution == 0 || self.tra_resolution == 0 {
            return err("resolutions must be positive");
        }
        if !(self.scene_threshold > 0.0) {
            return err("scene_threshold must be positive");
        }
        if self.context_capacity == 0 {
            return err("context_capacity must be positive");
        }
        if self.agent_timeout_ms == 0 || self.tracker_timeout_ms == 0 {
            return err("timeouts must be positive");
        }
        if self.workers == 0 {
            return err("workers must be positive");
        }
        if !self.prompt_style.is_valid() {
            return err("prompt_style widths and sizes must be positive");
        }
        for (name, ep) in [("agent_endpoint", &self.agent_endpoint), ("tracker_endpoint", &self.tracker_endpoint)] {
            if let Some(url) = ep {
                if !(url.starts_with("http://") || url.starts_with("https://")) || url.len() <= "http://".len() {
                    return Err(ConfigError(format!("{name} is not an http(s) URL: {url}")));
                }
            }
        }
        Ok(())
    }

    pub fn retries(&self) -> u32 {
        self.agent_retries.min(MAX_RETRIES)
    }

    /// Per-call options for a role: the proposer runs at the SRA settings,
    /// everything visual on the temporal side at the TRA settings.
    pub fn call_options(&self, role: Role) -> CallOptions {
        let (thinking, resolution) = match role {
            Role::Propose => (self.sra_thinking, self.sra_resolution),
            Role::Parse => (false, 0),
            _ => (self.tra_thinking, self.tra_resolution),
        };
        CallOptions {
            retries: self.retries(),
            thinking,
            resolution,
            prompt: self.prompts.get(role.as_str()).cloned(),
        }
    }
}
