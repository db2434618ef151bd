use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::graph::GraphDelta;
use crate::ids::SnippetId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SnippetStatus {
    Streaming,
    /// Extracted but never executed.
    Analyzed,
    Ok,
    Failed,
    /// An upstream snippet was re-run; needs an explicit re-run.
    Stale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TurnStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload")]
pub enum SessionEvent {
    TurnStarted {
        turn: usize,
    },
    TextToken {
        turn: usize,
        text: String,
    },
    SnippetStarted {
        snippet_id: SnippetId,
    },
    GraphDelta(GraphDelta),
    Diagnostic {
        snippet_id: Option<SnippetId>,
        message: String,
    },
    SnippetFinished {
        snippet_id: SnippetId,
        status: SnippetStatus,
    },
    SnippetStale {
        snippet_id: SnippetId,
    },
    TurnComplete {
        turn: usize,
        status: TurnStatus,
        error: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventEnvelope {
    pub seq: u64,
    #[serde(flatten)]
    pub event: SessionEvent,
}

/// Ordered, replayable event log with live fan-out.
#[derive(Debug)]
pub struct EventBus {
    history: Mutex<Vec<EventEnvelope>>,
    tx: broadcast::Sender<EventEnvelope>,
}

impl Default for EventBus {
    fn default() -> Self {
        Self::new()
    }
}

impl EventBus {
    pub fn new() -> Self {
        let (tx, _) = broadcast::channel(4096);
        EventBus {
            history: Mutex::new(Vec::new()),
            tx,
        }
    }

    pub fn publish(&self, event: SessionEvent) -> u64 {
        let mut history = self.history.lock().expect("event history lock");
        let seq = history.len() as u64 + 1;
        let env = EventEnvelope { seq, event };
        history.push(env.clone());
        // no receivers is fine
        let _ = self.tx.send(env);
        seq
    }

    /// Events published so far plus a receiver for every later one, with no
    /// gap or overlap between the two.
    pub fn subscribe(&self) -> (Vec<EventEnvelope>, broadcast::Receiver<EventEnvelope>) {
        let history = self.history.lock().expect("event history lock");
        (history.clone(), self.tx.subscribe())
    }

    pub fn history(&self) -> Vec<EventEnvelope> {
        self.history.lock().expect("event history lock").clone()
    }

    pub fn len(&self) -> usize {
        self.history.lock().expect("event history lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn envelope_shape() {
        let env = EventEnvelope {
            seq: 3,
            event: SessionEvent::TurnStarted { turn: 0 },
        };
        let v = serde_json::to_value(&env).unwrap();
        assert_eq!(v, serde_json::json!({"seq": 3, "type": "TurnStarted", "payload": {"turn": 0}}));
        let back: EventEnvelope = serde_json::from_value(v).unwrap();
        assert_eq!(back, env);
    }

    #[test]
    fn subscribe_has_no_gaps() {
        let bus = EventBus::new();
        bus.publish(SessionEvent::TurnStarted { turn: 0 });
        let (past, mut rx) = bus.subscribe();
        bus.publish(SessionEvent::TurnStarted { turn: 1 });
        assert_eq!(past.len(), 1);
        assert_eq!(rx.try_recv().unwrap().seq, 2);
    }
}
