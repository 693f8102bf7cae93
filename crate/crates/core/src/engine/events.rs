//! Run events and the sinks that receive them.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde_json::{json, Value as Json};

use crate::graph::PipelineGraph;
use crate::module::PortValues;

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    JobQueued { position: u64 },
    NodeStarted { node_id: String },
    NodeFinished {
        node_id: String,
        /// Output port → value digest.
        outputs: BTreeMap<String, String>,
        elapsed_ms: u64,
        cache_hit: bool,
    },
    JobFinished,
    JobFailed { node_id: Option<String>, error: String },
    JobCancelled,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::JobQueued { .. } => "JobQueued",
            EventKind::NodeStarted { .. } => "NodeStarted",
            EventKind::NodeFinished { .. } => "NodeFinished",
            EventKind::JobFinished => "JobFinished",
            EventKind::JobFailed { .. } => "JobFailed",
            EventKind::JobCancelled => "JobCancelled",
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, EventKind::JobFinished | EventKind::JobFailed { .. } | EventKind::JobCancelled)
    }

    fn payload(&self) -> Json {
        match self {
            EventKind::JobQueued { position } => json!({ "position": position }),
            EventKind::NodeStarted { node_id } => json!({ "node_id": node_id }),
            EventKind::NodeFinished {
                node_id,
                outputs,
                elapsed_ms,
                cache_hit,
            } => json!({
                "node_id": node_id,
                "outputs": outputs,
                "elapsed_ms": elapsed_ms,
                "cache_hit": cache_hit,
            }),
            EventKind::JobFinished | EventKind::JobCancelled => json!({}),
            EventKind::JobFailed { node_id, error } => json!({ "node_id": node_id, "error": error }),
        }
    }
}

/// One entry of a job's event log. Serialized as `{seq, kind, payload}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunEvent {
    pub seq: u64,
    pub kind: EventKind,
}

impl RunEvent {
    pub fn to_json(&self) -> Json {
        json!({ "seq": self.seq, "kind": self.kind.name(), "payload": self.kind.payload() })
    }

    pub fn from_json(doc: &Json) -> Result<Self, String> {
        let seq = doc["seq"].as_u64().ok_or("missing seq")?;
        let p = &doc["payload"];
        let text = |key: &str| p[key].as_str().map(str::to_string).ok_or(format!("missing payload.{key}"));
        let kind = match doc["kind"].as_str().ok_or("missing kind")? {
            "JobQueued" => EventKind::JobQueued {
                position: p["position"].as_u64().ok_or("missing payload.position")?,
            },
            "NodeStarted" => EventKind::NodeStarted { node_id: text("node_id")? },
            "NodeFinished" => EventKind::NodeFinished {
                node_id: text("node_id")?,
                outputs: serde_json::from_value(p["outputs"].clone()).map_err(|e| e.to_string())?,
                elapsed_ms: p["elapsed_ms"].as_u64().unwrap_or(0),
                cache_hit: p["cache_hit"].as_bool().unwrap_or(false),
            },
            "JobFinished" => EventKind::JobFinished,
            "JobFailed" => EventKind::JobFailed {
                node_id: p["node_id"].as_str().map(str::to_string),
                error: text("error")?,
            },
            "JobCancelled" => EventKind::JobCancelled,
            other => return Err(format!("unknown event kind `{other}`")),
        };
        Ok(RunEvent { seq, kind })
    }
}

/// Receives a job's events. Implementations assign `seq`.
pub trait EventSink: Send + Sync {
    /// Appends the event and returns its sequence number.
    fn emit(&self, kind: EventKind) -> u64;

    /// Called with a node's outputs just before its `NodeFinished` event.
    fn record_outputs(&self, _node_id: &str, _outputs: &PortValues) {}
}

/// Discards events while still numbering them.
#[derive(Debug, Default)]
pub struct NullSink {
    next: Mutex<u64>,
}

impl EventSink for NullSink {
    fn emit(&self, _kind: EventKind) -> u64 {
        let mut next = self.next.lock().unwrap();
        *next += 1;
        *next - 1
    }
}

/// Keeps every event in memory; readers can wait for new ones.
#[derive(Debug, Default)]
pub struct VecSink {
    events: Mutex<Vec<RunEvent>>,
    changed: Condvar,
}

impl VecSink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn events(&self) -> Vec<RunEvent> {
        self.events.lock().unwrap().clone()
    }

    /// Blocks until an event satisfying `pred` has been emitted or `timeout`
    /// passes. Returns whether it was seen.
    pub fn wait_for(&self, timeout: Duration, pred: impl Fn(&RunEvent) -> bool) -> bool {
        let guard = self.events.lock().unwrap();
        let (guard, _) = self
            .changed
            .wait_timeout_while(guard, timeout, |events| !events.iter().any(&pred))
            .unwrap();
        guard.iter().any(pred)
    }
}

impl EventSink for VecSink {
    fn emit(&self, kind: EventKind) -> u64 {
        let mut events = self.events.lock().unwrap();
        let seq = events.len() as u64;
        events.push(RunEvent { seq, kind });
        self.changed.notify_all();
        seq
    }
}

/// Checks a complete job log: seq gap-free from 0, an optional leading
/// `JobQueued`, each node started at most once and only after all of its
/// predecessors finished, finished only after it started, and exactly one
/// terminal event, which comes last.
pub fn check_event_grammar(events: &[RunEvent], graph: &PipelineGraph) -> Result<(), String> {
    let preds = crate::graph::predecessors(graph);
    let mut started = BTreeSet::new();
    let mut finished = BTreeSet::new();
    for (i, event) in events.iter().enumerate() {
        if event.seq != i as u64 {
            return Err(format!("event {i} has seq {}", event.seq));
        }
        let last = i + 1 == events.len();
        match &event.kind {
            EventKind::JobQueued { .. } if i == 0 => {}
            EventKind::JobQueued { .. } => return Err(format!("JobQueued at seq {i}")),
            EventKind::NodeStarted { node_id } => {
                if !started.insert(node_id.clone()) {
                    return Err(format!("{node_id} started twice"));
                }
                if let Some(missing) = preds
                    .get(node_id.as_str())
                    .into_iter()
                    .flatten()
                    .find(|p| !finished.contains(**p))
                {
                    return Err(format!("{node_id} started before predecessor {missing} finished"));
                }
            }
            EventKind::NodeFinished { node_id, .. } => {
                if !started.contains(node_id) || !finished.insert(node_id.clone()) {
                    return Err(format!("unexpected NodeFinished for {node_id} at seq {i}"));
                }
            }
            kind if kind.is_terminal() => {
                if !last {
                    return Err(format!("terminal {} at seq {i} is not last", kind.name()));
                }
                if matches!(kind, EventKind::JobFinished) && finished.len() != graph.nodes.len() {
                    return Err("JobFinished with unfinished nodes".into());
                }
            }
            _ => unreachable!(),
        }
    }
    match events.last() {
        Some(e) if e.kind.is_terminal() => Ok(()),
        _ => Err("log has no terminal event".into()),
    }
}
