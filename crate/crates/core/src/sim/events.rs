//! Run event log: one line-delimited JSON record per decision instant, plus
//! one per delivered agent message.

use crate::net::{IntersectionId, Phase};
use serde::{Deserialize, Serialize};
use std::io::{self, Write};

/// A single event-log record. Serialized untagged; the two record kinds are
/// distinguished by their field sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RunEvent {
    Decision {
        time: u32,
        intersection: IntersectionId,
        phase: Phase,
        early_queued: u32,
    },
    Message {
        step: u64,
        half_step: u8,
        sender: IntersectionId,
        recipient: IntersectionId,
        body: String,
    },
}

/// Line-delimited JSON sink for run events.
pub struct EventLog {
    sink: Box<dyn Write + Send>,
}

impl EventLog {
    pub fn new(sink: Box<dyn Write + Send>) -> Self {
        EventLog { sink }
    }

    /// In-memory log, mostly for tests; pair with [`EventLog::to_writer`].
    pub fn to_vec() -> (Self, std::sync::Arc<std::sync::Mutex<Vec<u8>>>) {
        let buf = std::sync::Arc::new(std::sync::Mutex::new(Vec::new()));
        let handle = buf.clone();
        (EventLog::new(Box::new(SharedVec(buf))), handle)
    }

    pub fn record(&mut self, event: &RunEvent) -> io::Result<()> {
        serde_json::to_writer(&mut self.sink, event)?;
        self.sink.write_all(b"\n")
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.sink.flush()
    }
}

struct SharedVec(std::sync::Arc<std::sync::Mutex<Vec<u8>>>);

impl Write for SharedVec {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Parse an event log back from its line-delimited JSON form.
pub fn parse_event_log(text: &str) -> Result<Vec<RunEvent>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}
