use std::collections::BTreeMap;
use std::io::{self, Write};
use std::sync::{Arc, Mutex};

use serde::Serialize;

use crate::model::{TraceEvent, WireEvent};

#[derive(Serialize)]
struct SandboxLine<'a> {
    event: WireEvent<'a>,
    reason: &'a str,
    verdict_ts: f64,
}

/// Renders one sandbox capture line (no trailing newline).
pub fn sandbox_record_line(event: &TraceEvent, reason: &str) -> String {
    serde_json::to_string(&SandboxLine {
        event: WireEvent::new(event),
        reason,
        verdict_ts: event.ts,
    })
    .expect("sandbox records always serialize")
}

/// Append-only capture stream for sandboxed events.
pub struct SandboxSink {
    out: Box<dyn Write + Send>,
    by_reason: BTreeMap<String, u64>,
    records: u64,
}

impl std::fmt::Debug for SandboxSink {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SandboxSink")
            .field("records", &self.records)
            .field("by_reason", &self.by_reason)
            .finish()
    }
}

impl SandboxSink {
    pub fn new(out: impl Write + Send + 'static) -> Self {
        SandboxSink {
            out: Box::new(out),
            by_reason: BTreeMap::new(),
            records: 0,
        }
    }

    /// A sink that keeps counts but throws the records away.
    pub fn discard() -> Self {
        SandboxSink::new(io::sink())
    }

    pub fn capture(&mut self, event: &TraceEvent, reason: &str) -> io::Result<()> {
        let mut line = sandbox_record_line(event, reason);
        line.push('\n');
        self.out.write_all(line.as_bytes())?;
        self.records += 1;
        *self.by_reason.entry(reason.to_owned()).or_insert(0) += 1;
        Ok(())
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }

    pub fn records(&self) -> u64 {
        self.records
    }

    pub fn by_reason(&self) -> &BTreeMap<String, u64> {
        &self.by_reason
    }
}

/// Cloneable in-memory writer, handy for capturing output in tests.
#[derive(Debug, Clone, Default)]
pub struct SharedBuffer(Arc<Mutex<Vec<u8>>>);

impl SharedBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contents(&self) -> Vec<u8> {
        self.0.lock().expect("buffer lock").clone()
    }

    pub fn text(&self) -> String {
        String::from_utf8(self.contents()).expect("utf-8 output")
    }
}

impl Write for SharedBuffer {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.lock().expect("buffer lock").extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}
