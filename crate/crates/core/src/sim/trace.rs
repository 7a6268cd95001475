//! Structured run traces.
//!
//! One record per event, serialized as a JSON line with a stable field
//! order, so identical runs produce byte-identical files. The first record
//! carries run metadata so a stored trace can be checked offline.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::model::{SimTime, SystemParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// Run metadata header.
    Meta,
    /// A transaction entered the system (client emission or reactive-actor
    /// output during execution).
    Emit,
    Send,
    Deliver,
    /// A message intentionally not delivered (Byzantine-involved only).
    Drop,
    Timer,
    /// An agreement instance became active at one entity.
    Activate,
    /// A fast-path or slow-path lock was recorded.
    Lock,
    /// A block was proposed into the failover consensus.
    QcPropose,
    Decide,
    Execute,
    /// Effects of a recipient-bearing transaction applied at its sender.
    Settle,
    Error,
    /// Entity state dump at the end of a run.
    Snapshot,
    /// Final record: quiescent or horizon-exhausted.
    End,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceEvent {
    pub id: u64,
    pub time: SimTime,
    pub kind: EventKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub from: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub to: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub payload_digest: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub instance: Option<String>,
    /// Id of the event being processed when this one was generated.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cause: Option<u64>,
    #[serde(default, skip_serializing_if = "Map::is_empty")]
    pub details: Map<String, Value>,
}

impl TraceEvent {
    pub fn detail_str(&self, key: &str) -> Option<&str> {
        self.details.get(key).and_then(|v| v.as_str())
    }

    pub fn detail_u64(&self, key: &str) -> Option<u64> {
        self.details.get(key).and_then(|v| v.as_u64())
    }

    pub fn detail_bool(&self, key: &str) -> Option<bool> {
        self.details.get(key).and_then(|v| v.as_bool())
    }

    pub fn detail_strs(&self, key: &str) -> Vec<String> {
        self.details
            .get(key)
            .and_then(|v| v.as_array())
            .map(|a| a.iter().filter_map(|v| v.as_str().map(str::to_string)).collect())
            .unwrap_or_default()
    }
}

/// Metadata mirrored into the trace header so checkers can run offline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceMeta {
    pub params: SystemParams,
    pub byzantine: Vec<u32>,
    pub seed: u64,
    pub horizon: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunOutcome {
    /// Event queue drained before the horizon.
    Quiescent,
    /// Horizon reached with events still pending; liveness checks treat
    /// this as a distinct failure signal.
    HorizonExhausted,
}

#[derive(Debug, Clone)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new() -> Self {
        Trace { events: Vec::new() }
    }

    pub fn meta(&self) -> Option<TraceMeta> {
        let first = self.events.first()?;
        if first.kind != EventKind::Meta {
            return None;
        }
        serde_json::from_value(Value::Object(first.details.clone())).ok()
    }

    pub fn outcome(&self) -> Option<RunOutcome> {
        self.events.iter().rev().find(|e| e.kind == EventKind::End).and_then(|e| {
            e.detail_str("outcome").and_then(|s| match s {
                "quiescent" => Some(RunOutcome::Quiescent),
                "horizon_exhausted" => Some(RunOutcome::HorizonExhausted),
                _ => None,
            })
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("trace event serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Trace, serde_json::Error> {
        let mut events = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            events.push(serde_json::from_str(line)?);
        }
        Ok(Trace { events })
    }

    pub fn iter_kind(&self, kind: EventKind) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }
}

impl Default for Trace {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip_is_stable() {
        let mut details = Map::new();
        details.insert("x".into(), Value::from(3));
        let trace = Trace {
            events: vec![TraceEvent {
                id: 0,
                time: 5,
                kind: EventKind::Send,
                from: Some("v0.A:alice".into()),
                to: Some("v1.A:alice".into()),
                payload_digest: Some("UaTx".into()),
                instance: Some("pob:alice/0".into()),
                cause: None,
                details,
            }],
        };
        let text = trace.to_jsonl();
        let parsed = Trace::from_jsonl(&text).unwrap();
        assert_eq!(parsed.to_jsonl(), text);
    }
}
