//! JSONL codec for trace events and verdict records.

use std::net::Ipv4Addr;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::Serialize;
use serde_json::{Map, Value};

use super::{EventBody, HttpInfo, TcpFlags, TcpInfo, TraceEvent, UdpInfo, Verdict};

/// A trace line that could not be turned into a [`TraceEvent`].
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {field}: {message}")]
pub struct TraceError {
    pub line: usize,
    /// Offending key, or `"json"` when the line is not a JSON object at all.
    pub field: String,
    pub message: String,
}

struct Fields<'a> {
    obj: &'a Map<String, Value>,
    line: usize,
}

impl<'a> Fields<'a> {
    fn err(&self, field: &str, message: impl Into<String>) -> TraceError {
        TraceError {
            line: self.line,
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn get(&self, field: &str) -> Result<&'a Value, TraceError> {
        self.obj
            .get(field)
            .filter(|v| !v.is_null())
            .ok_or_else(|| self.err(field, "missing required field"))
    }

    fn u64(&self, field: &str) -> Result<u64, TraceError> {
        self.get(field)?
            .as_u64()
            .ok_or_else(|| self.err(field, "expected a non-negative integer"))
    }

    fn bounded(&self, field: &str, max: u64) -> Result<u64, TraceError> {
        let v = self.get(field)?;
        match v.as_u64() {
            Some(n) if n <= max => Ok(n),
            Some(_) => Err(self.err(field, format!("{field} out of range"))),
            None if v.as_i64().is_some() => Err(self.err(field, format!("{field} out of range"))),
            None => Err(self.err(field, "expected an integer")),
        }
    }

    fn str(&self, field: &str) -> Result<&'a str, TraceError> {
        self.get(field)?
            .as_str()
            .ok_or_else(|| self.err(field, "expected a string"))
    }

    fn ipv4(&self, field: &str) -> Result<Ipv4Addr, TraceError> {
        let s = self.str(field)?;
        s.parse()
            .map_err(|_| self.err(field, format!("bad IPv4 address {s:?}")))
    }

    fn b64(&self, field: &str) -> Result<Vec<u8>, TraceError> {
        // Absent payloads are treated as empty.
        match self.obj.get(field) {
            None | Some(Value::Null) => Ok(Vec::new()),
            Some(Value::String(s)) => B64
                .decode(s)
                .map_err(|e| self.err(field, format!("bad base64: {e}"))),
            Some(_) => Err(self.err(field, "expected a base64 string")),
        }
    }
}

/// Parses one trace line. `line_no` is 1-based and only used for error
/// reporting. Unknown keys are ignored.
pub fn parse_trace_event(line: &str, line_no: usize) -> Result<TraceEvent, TraceError> {
    let value: Value = serde_json::from_str(line).map_err(|e| TraceError {
        line: line_no,
        field: "json".into(),
        message: e.to_string(),
    })?;
    let obj = value.as_object().ok_or_else(|| TraceError {
        line: line_no,
        field: "json".into(),
        message: "expected a JSON object".into(),
    })?;
    let f = Fields { obj, line: line_no };

    let event_id = f.u64("event_id")?;
    let ts = f
        .get("ts")?
        .as_f64()
        .ok_or_else(|| f.err("ts", "expected a number"))?;
    if !(ts.is_finite() && ts >= 0.0) {
        return Err(f.err("ts", "must be a finite number >= 0"));
    }
    let kind = f.str("kind")?;
    let src_ip = f.ipv4("src_ip")?;
    let dst_ip = f.ipv4("dst_ip")?;
    let src_port = f.bounded("src_port", u16::MAX.into())? as u16;
    let dst_port = f.bounded("dst_port", u16::MAX.into())? as u16;

    let body = match kind {
        "tcp" => {
            let letters = f.str("flags")?;
            let flags = TcpFlags::from_letters(letters)
                .ok_or_else(|| f.err("flags", format!("unknown flag letter in {letters:?}")))?;
            EventBody::Tcp(TcpInfo {
                flags,
                seq: f.bounded("seq", u32::MAX.into())? as u32,
                ack: f.bounded("ack", u32::MAX.into())? as u32,
                urgent_ptr: f.bounded("urgent_ptr", u16::MAX.into())? as u16,
                payload: f.b64("payload_b64")?,
            })
        }
        "udp" => EventBody::Udp(UdpInfo {
            length: f.bounded("length", u16::MAX.into())? as u16,
            checksum: f.bounded("checksum", u16::MAX.into())? as u16,
            payload: f.b64("payload_b64")?,
        }),
        "http" => {
            let method = f.str("method")?;
            if method.is_empty() {
                return Err(f.err("method", "must not be empty"));
            }
            let headers = match obj.get("headers") {
                None | Some(Value::Null) => Vec::new(),
                Some(v) => serde_json::from_value::<Vec<(String, String)>>(v.clone())
                    .map_err(|_| f.err("headers", "expected an array of [name, value] pairs"))?,
            };
            EventBody::Http(HttpInfo {
                method: method.to_string(),
                uri: f.str("uri")?.to_string(),
                version: f.str("version")?.to_string(),
                headers,
                body: f.b64("body_b64")?,
                duration_ms: f.u64("duration_ms")?,
            })
        }
        other => return Err(f.err("kind", format!("unknown kind {other:?}"))),
    };

    let label = match obj.get("label") {
        None | Some(Value::Null) => None,
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => return Err(f.err("label", "expected a string")),
    };

    Ok(TraceEvent {
        event_id,
        ts,
        src_ip,
        dst_ip,
        src_port,
        dst_port,
        body,
        label,
    })
}

/// Flat wire layout; field order here is the on-disk key order.
#[derive(Serialize)]
pub(crate) struct WireEvent<'a> {
    event_id: u64,
    ts: f64,
    kind: &'static str,
    src_ip: String,
    dst_ip: String,
    src_port: u16,
    dst_port: u16,
    #[serde(skip_serializing_if = "Option::is_none")]
    flags: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seq: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ack: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    urgent_ptr: Option<u16>,
    #[serde(skip_serializing_if = "Option::is_none")]
    length: Option<u16>,
    #[serde(skip_serializing_if = "Option::is_none")]
    checksum: Option<u16>,
    #[serde(skip_serializing_if = "Option::is_none")]
    payload_b64: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    method: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    uri: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    version: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    headers: Option<&'a [(String, String)]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    body_b64: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    duration_ms: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<&'a str>,
}

impl<'a> WireEvent<'a> {
    pub(crate) fn new(e: &'a TraceEvent) -> Self {
        let mut w = WireEvent {
            event_id: e.event_id,
            ts: e.ts,
            kind: e.kind().as_str(),
            src_ip: e.src_ip.to_string(),
            dst_ip: e.dst_ip.to_string(),
            src_port: e.src_port,
            dst_port: e.dst_port,
            flags: None,
            seq: None,
            ack: None,
            urgent_ptr: None,
            length: None,
            checksum: None,
            payload_b64: None,
            method: None,
            uri: None,
            version: None,
            headers: None,
            body_b64: None,
            duration_ms: None,
            label: e.label.as_deref(),
        };
        match &e.body {
            EventBody::Tcp(t) => {
                w.flags = Some(t.flags.to_letters());
                w.seq = Some(t.seq);
                w.ack = Some(t.ack);
                w.urgent_ptr = Some(t.urgent_ptr);
                w.payload_b64 = Some(B64.encode(&t.payload));
            }
            EventBody::Udp(u) => {
                w.length = Some(u.length);
                w.checksum = Some(u.checksum);
                w.payload_b64 = Some(B64.encode(&u.payload));
            }
            EventBody::Http(h) => {
                w.method = Some(&h.method);
                w.uri = Some(&h.uri);
                w.version = Some(&h.version);
                w.headers = Some(&h.headers);
                w.body_b64 = Some(B64.encode(&h.body));
                w.duration_ms = Some(h.duration_ms);
            }
        }
        w
    }
}

/// Serializes an event as one JSONL line (no trailing newline).
pub fn serialize_trace_event(event: &TraceEvent) -> String {
    serde_json::to_string(&WireEvent::new(event)).expect("trace events always serialize")
}

#[derive(Serialize)]
struct WireVerdict<'a> {
    event_id: u64,
    decision: &'static str,
    layer: u8,
    reason: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    rule_id: Option<u64>,
}

/// Serializes one verdict log line (no trailing newline). Key order is fixed.
pub fn serialize_verdict_record(event: &TraceEvent, verdict: &Verdict) -> String {
    serde_json::to_string(&WireVerdict {
        event_id: event.event_id,
        decision: verdict.decision.as_str(),
        layer: verdict.layer,
        reason: &verdict.reason,
        rule_id: verdict.rule_id,
    })
    .expect("verdicts always serialize")
}

/// A processed event paired with its verdict.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerdictRecord {
    pub event_id: u64,
    pub verdict: Verdict,
    /// Bit `k-1` is set when layer `k` examined the event.
    pub layers_consulted: u8,
}

impl VerdictRecord {
    pub fn consulted(&self, layer: u8) -> bool {
        self.layers_consulted & (1 << (layer - 1)) != 0
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(&WireVerdict {
            event_id: self.event_id,
            decision: self.verdict.decision.as_str(),
            layer: self.verdict.layer,
            reason: &self.verdict.reason,
            rule_id: self.verdict.rule_id,
        })
        .expect("verdicts always serialize")
    }
}
