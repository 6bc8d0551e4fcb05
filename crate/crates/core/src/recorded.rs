//! Record/replay backends. A recording wraps a live backend and logs every
//! response under the request's replay key; a replay serves those responses
//! back in order per key. Logs are JSON Lines.

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::agents::{AgentBackend, AgentRequest, BackendError, Role, WireResponse};
use crate::geometry::{BoundingBox, FrameClip};
use crate::tracker::{track_key, TrackReply, TrackWireResponse, TrackerBackend, WireSeed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "tool", rename_all = "lowercase")]
pub enum LogEntry {
    Agent { key: String, role: Role, response: WireResponse },
    Track { key: String, response: TrackWireResponse },
}

pub fn write_log(path: &Path, entries: &[LogEntry]) -> std::io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_log(path: &Path) -> std::io::Result<Vec<LogEntry>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("line {}: {e}", n + 1))
        })?;
        out.push(entry);
    }
    Ok(out)
}

/// Shared sink for a recording session.
#[derive(Default)]
pub struct Recorder {
    entries: Mutex<Vec<LogEntry>>,
}

impl Recorder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, e: LogEntry) {
        self.entries.lock().expect("recorder lock").push(e);
    }

    pub fn entries(&self) -> Vec<LogEntry> {
        self.entries.lock().expect("recorder lock").clone()
    }
}

pub struct RecordingAgent<'a, B> {
    inner: B,
    recorder: &'a Recorder,
}

impl<'a, B: AgentBackend> RecordingAgent<'a, B> {
    pub fn new(inner: B, recorder: &'a Recorder) -> Self {
        Self { inner, recorder }
    }
}

impl<B: AgentBackend> AgentBackend for RecordingAgent<'_, B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn roles(&self) -> &[Role] {
        self.inner.roles()
    }

    fn call(&self, request: &AgentRequest) -> Result<WireResponse, BackendError> {
        // transport failures are logged as error responses; both count as a
        // failed attempt without a correction message
        let response = self.inner.call(request).unwrap_or_else(|e| WireResponse::error(e.to_string()));
        self.recorder.push(LogEntry::Agent { key: request.key(), role: request.role, response: response.clone() });
        Ok(response)
    }
}

pub struct RecordingTracker<'a, B> {
    inner: B,
    recorder: &'a Recorder,
}

impl<'a, B: TrackerBackend> RecordingTracker<'a, B> {
    pub fn new(inner: B, recorder: &'a Recorder) -> Self {
        Self { inner, recorder }
    }
}

fn seed_key(clip: &FrameClip, seed: &BoundingBox) -> String {
    let ids = [clip.first_index(), clip.last_index()];
    track_key(&ids, &WireSeed { frame: seed.frame_index, bbox: seed.coords() })
}

impl<B: TrackerBackend> TrackerBackend for RecordingTracker<'_, B> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn track(&self, clip: &FrameClip, seed: &BoundingBox) -> Result<TrackReply, BackendError> {
        let reply = self.inner.track(clip, seed).unwrap_or_else(|e| TrackReply::Fail(e.to_string()));
        self.recorder.push(LogEntry::Track { key: seed_key(clip, seed), response: TrackWireResponse::from_reply(&reply) });
        Ok(reply)
    }
}

/// Serves logged responses keyed by request.
#[derive(Default)]
pub struct Replay {
    agent: Mutex<HashMap<String, VecDeque<WireResponse>>>,
    track: Mutex<HashMap<String, VecDeque<TrackWireResponse>>>,
}

impl Replay {
    pub fn new(entries: Vec<LogEntry>) -> Self {
        let r = Replay::default();
        {
            let mut a = r.agent.lock().expect("replay lock");
            let mut t = r.track.lock().expect("replay lock");
            for e in entries {
                match e {
                    LogEntry::Agent { key, response, .. } => a.entry(key).or_default().push_back(response),
                    LogEntry::Track { key, response } => t.entry(key).or_default().push_back(response),
                }
            }
        }
        r
    }

    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        Ok(Self::new(read_log(path)?))
    }

    pub fn next_agent(&self, key: &str) -> Option<WireResponse> {
        self.agent.lock().expect("replay lock").get_mut(key)?.pop_front()
    }

    pub fn next_track(&self, key: &str) -> Option<TrackWireResponse> {
        self.track.lock().expect("replay lock").get_mut(key)?.pop_front()
    }
}

impl AgentBackend for Replay {
    fn name(&self) -> &str {
        "replay"
    }

    fn call(&self, request: &AgentRequest) -> Result<WireResponse, BackendError> {
        let key = request.key();
        self.next_agent(&key).ok_or(BackendError::Replay(key))
    }
}

impl TrackerBackend for Replay {
    fn name(&self) -> &str {
        "replay"
    }

    fn track(&self, clip: &FrameClip, seed: &BoundingBox) -> Result<TrackReply, BackendError> {
        let key = seed_key(clip, seed);
        self.next_track(&key)
            .ok_or(BackendError::Replay(key))?
            .into_reply(clip.width(), clip.height())
    }
}
