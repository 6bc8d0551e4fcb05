//! Candidate memory (geometric dedup of investigated tubes) and the bounded
//! dialogue context shared between the agents.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::geometry::{tube_iou, Tube, TubeId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Admission {
    Added,
    Duplicate { of: TubeId, iou: f64 },
}

/// Tubes already sent for verification in the current pass.
///
/// Invariant: every stored pair has `tube_iou < threshold`.
#[derive(Debug, Clone)]
pub struct CandidateMemory {
    tubes: Vec<Tube>,
    threshold: f64,
}

impl CandidateMemory {
    pub fn new(threshold: f64) -> Self {
        Self { tubes: Vec::new(), threshold }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn tubes(&self) -> &[Tube] {
        &self.tubes
    }

    pub fn len(&self) -> usize {
        self.tubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tubes.is_empty()
    }

    pub fn clear(&mut self) {
        self.tubes.clear();
    }

    /// Best match among stored tubes, if any.
    pub fn closest(&self, t: &Tube) -> Option<(TubeId, f64)> {
        self.tubes
            .iter()
            .map(|s| (s.id(), tube_iou(t, s)))
            .fold(None, |best, cur| match best {
                Some((_, b)) if b >= cur.1 => best,
                _ => Some(cur),
            })
    }

    pub fn check_and_add(&mut self, t: Tube) -> Admission {
        if let Some((of, iou)) = self.closest(&t) {
            if iou >= self.threshold {
                return Admission::Duplicate { of, iou };
            }
        }
        self.tubes.push(t);
        Admission::Added
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Sra,
    Tra,
    Controller,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MessageKind {
    Caption,
    Correction,
    Status,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub source: Source,
    pub kind: MessageKind,
    pub text: String,
}

/// Chronological message log with oldest-first eviction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DialogueContext {
    messages: VecDeque<Message>,
    capacity: usize,
}

impl DialogueContext {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "context capacity must be positive");
        Self { messages: VecDeque::with_capacity(capacity), capacity }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn update(&mut self, source: Source, kind: MessageKind, text: impl Into<String>) {
        if self.messages.len() == self.capacity {
            self.messages.pop_front();
        }
        self.messages.push_back(Message { source, kind, text: text.into() });
    }

    /// Drop everything and start over from one message.
    pub fn reset_with(&mut self, source: Source, kind: MessageKind, text: impl Into<String>) {
        self.messages.clear();
        self.update(source, kind, text);
    }

    pub fn messages(&self) -> impl Iterator<Item = &Message> {
        self.messages.iter()
    }

    pub fn to_vec(&self) -> Vec<Message> {
        self.messages.iter().cloned().collect()
    }
}
