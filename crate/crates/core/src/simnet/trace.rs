use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    TxSubmitted,
    MsgSent,
    MsgDelivered,
    BlockProposed,
    BlockEndorsed,
    BlockCommitted,
    NodeDown,
    NodeUp,
    SessionOpened,
    SessionExpired,
    Decision,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::TxSubmitted => "tx_submitted",
            EventKind::MsgSent => "msg_sent",
            EventKind::MsgDelivered => "msg_delivered",
            EventKind::BlockProposed => "block_proposed",
            EventKind::BlockEndorsed => "block_endorsed",
            EventKind::BlockCommitted => "block_committed",
            EventKind::NodeDown => "node_down",
            EventKind::NodeUp => "node_up",
            EventKind::SessionOpened => "session_opened",
            EventKind::SessionExpired => "session_expired",
            EventKind::Decision => "decision",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioEvent {
    pub seq: u64,
    pub at: u64,
    pub kind: EventKind,
    /// Space-separated `key=value` pairs.
    pub detail: String,
}

impl ScenarioEvent {
    /// Value of `key` in the detail, if present.
    pub fn field(&self, key: &str) -> Option<&str> {
        self.detail.split(' ').find_map(|kv| {
            let (k, v) = kv.split_once('=')?;
            (k == key).then_some(v)
        })
    }
}

impl fmt::Display for ScenarioEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t{}\t{}\t{}", self.seq, self.at, self.kind, self.detail)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    events: Vec<ScenarioEvent>,
}

impl Trace {
    pub fn push(&mut self, at: u64, kind: EventKind, detail: String) {
        let seq = self.events.len() as u64 + 1;
        self.events.push(ScenarioEvent { seq, at, kind, detail });
    }

    pub fn events(&self) -> &[ScenarioEvent] {
        &self.events
    }

    pub fn of_kind(&self, kind: EventKind) -> impl Iterator<Item = &ScenarioEvent> {
        self.events.iter().filter(move |e| e.kind == kind)
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// One event per line: seq, at, kind, detail, tab-separated.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.to_string());
            out.push('\n');
        }
        out
    }
}
