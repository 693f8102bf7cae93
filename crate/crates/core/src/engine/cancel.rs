use std::sync::{Arc, Mutex};

use super::events::{EventKind, EventSink};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CancelOutcome {
    /// Cancellation recorded. `marker` is the seq of the last event emitted
    /// before acknowledgment (`None` if nothing was emitted yet); no
    /// `NodeStarted` will carry a larger seq.
    Acknowledged { marker: Option<u64> },
    /// The run had already ended; nothing changed.
    AlreadyTerminal,
}

#[derive(Debug, Default)]
struct State {
    cancelled: bool,
    terminal: bool,
    last_seq: Option<u64>,
}

/// Shared between a running job and whoever may cancel it. Every engine
/// event passes through the token's lock, which is what orders
/// acknowledgment against `NodeStarted`.
#[derive(Debug, Clone, Default)]
pub struct CancelToken {
    state: Arc<Mutex<State>>,
}

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) -> CancelOutcome {
        let mut s = self.state.lock().unwrap();
        if s.terminal {
            return CancelOutcome::AlreadyTerminal;
        }
        s.cancelled = true;
        CancelOutcome::Acknowledged { marker: s.last_seq }
    }

    pub fn is_cancelled(&self) -> bool {
        self.state.lock().unwrap().cancelled
    }

    pub fn is_terminal(&self) -> bool {
        self.state.lock().unwrap().terminal
    }

    pub(crate) fn emit(&self, sink: &dyn EventSink, kind: EventKind) -> u64 {
        let mut s = self.state.lock().unwrap();
        if kind.is_terminal() {
            s.terminal = true;
        }
        let seq = sink.emit(kind);
        s.last_seq = Some(seq);
        seq
    }

    /// Emits `NodeStarted` unless cancellation was already acknowledged.
    pub(crate) fn start_if_live(&self, sink: &dyn EventSink, node_id: &str) -> bool {
        let mut s = self.state.lock().unwrap();
        if s.cancelled {
            return false;
        }
        s.last_seq = Some(sink.emit(EventKind::NodeStarted {
            node_id: node_id.to_string(),
        }));
        true
    }

    /// Marks the token finished without emitting; used when a job ends
    /// outside the engine (for example cancelled while still queued).
    pub fn mark_terminal(&self) {
        self.state.lock().unwrap().terminal = true;
    }
}

impl CancelToken {
    /// Emits the terminal event: `failure` if given, otherwise
    /// `JobCancelled` when cancellation was acknowledged, else `JobFinished`.
    pub(crate) fn finish(&self, sink: &dyn EventSink, failure: Option<EventKind>) -> EventKind {
        let mut s = self.state.lock().unwrap();
        let kind = match failure {
            Some(f) => f,
            None if s.cancelled => EventKind::JobCancelled,
            None => EventKind::JobFinished,
        };
        s.terminal = true;
        s.last_seq = Some(sink.emit(kind.clone()));
        kind
    }
}
