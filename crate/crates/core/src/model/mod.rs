//! Event and verdict data model shared by every defense layer.
//!
//! A trace is a sequence of [`TraceEvent`]s: individual TCP segments, UDP
//! datagrams, or fully assembled HTTP requests. Events carry their own
//! timestamps; no layer ever consults a wall clock.

mod checksum;
mod trace;

use std::fmt;
use std::net::Ipv4Addr;

pub use checksum::{compute_udp_checksum, validate_udp_checksum, ChecksumError};
pub use trace::{
    parse_trace_event, serialize_trace_event, serialize_verdict_record, TraceError, VerdictRecord,
};

pub(crate) use trace::WireEvent;

/// TCP control flags, stored as a bit set.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct TcpFlags(u8);

impl TcpFlags {
    pub const SYN: TcpFlags = TcpFlags(0x01);
    pub const ACK: TcpFlags = TcpFlags(0x02);
    pub const FIN: TcpFlags = TcpFlags(0x04);
    pub const RST: TcpFlags = TcpFlags(0x08);
    pub const PSH: TcpFlags = TcpFlags(0x10);
    pub const URG: TcpFlags = TcpFlags(0x20);

    /// Trace letters in canonical order.
    const LETTERS: [(char, TcpFlags); 6] = [
        ('S', Self::SYN),
        ('A', Self::ACK),
        ('F', Self::FIN),
        ('R', Self::RST),
        ('P', Self::PSH),
        ('U', Self::URG),
    ];

    pub const fn empty() -> Self {
        TcpFlags(0)
    }

    pub const fn bits(self) -> u8 {
        self.0
    }

    pub const fn contains(self, other: TcpFlags) -> bool {
        self.0 & other.0 == other.0
    }

    pub const fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Parses the `"SAFRPU"` letter notation. Order does not matter, repeats are
    /// tolerated, and the empty string is the empty set.
    pub fn from_letters(s: &str) -> Option<TcpFlags> {
        let mut flags = TcpFlags::empty();
        for c in s.chars() {
            let (_, f) = Self::LETTERS.iter().find(|(l, _)| *l == c)?;
            flags = flags | *f;
        }
        Some(flags)
    }

    pub fn to_letters(self) -> String {
        Self::LETTERS
            .iter()
            .filter(|(_, f)| self.contains(*f))
            .map(|(l, _)| *l)
            .collect()
    }
}

impl std::ops::BitOr for TcpFlags {
    type Output = TcpFlags;
    fn bitor(self, rhs: TcpFlags) -> TcpFlags {
        TcpFlags(self.0 | rhs.0)
    }
}

impl fmt::Debug for TcpFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TcpFlags({})", self.to_letters())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TcpInfo {
    pub flags: TcpFlags,
    pub seq: u32,
    pub ack: u32,
    pub urgent_ptr: u16,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UdpInfo {
    /// UDP length field (header plus payload). May disagree with the payload.
    pub length: u16,
    pub checksum: u16,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpInfo {
    pub method: String,
    pub uri: String,
    pub version: String,
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
    /// Time the client took to deliver the complete request.
    pub duration_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    Tcp,
    Udp,
    Http,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Tcp => "tcp",
            EventKind::Udp => "udp",
            EventKind::Http => "http",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EventBody {
    Tcp(TcpInfo),
    Udp(UdpInfo),
    Http(HttpInfo),
}

impl EventBody {
    pub fn kind(&self) -> EventKind {
        match self {
            EventBody::Tcp(_) => EventKind::Tcp,
            EventBody::Udp(_) => EventKind::Udp,
            EventBody::Http(_) => EventKind::Http,
        }
    }
}

/// One timestamped packet or request entering the system.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub event_id: u64,
    /// Seconds since the start of the trace.
    pub ts: f64,
    pub src_ip: Ipv4Addr,
    pub dst_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_port: u16,
    pub body: EventBody,
    /// Generator ground truth. Defense layers never look at this.
    pub label: Option<String>,
}

impl TraceEvent {
    pub fn kind(&self) -> EventKind {
        self.body.kind()
    }

    pub fn tcp(&self) -> Option<&TcpInfo> {
        match &self.body {
            EventBody::Tcp(t) => Some(t),
            _ => None,
        }
    }

    pub fn udp(&self) -> Option<&UdpInfo> {
        match &self.body {
            EventBody::Udp(u) => Some(u),
            _ => None,
        }
    }

    pub fn http(&self) -> Option<&HttpInfo> {
        match &self.body {
            EventBody::Http(h) => Some(h),
            _ => None,
        }
    }

    /// Directional 5-tuple of a TCP or UDP event.
    pub fn flow_key(&self) -> Result<FlowKey, UnsupportedKind> {
        let proto = match self.kind() {
            EventKind::Tcp => Proto::Tcp,
            EventKind::Udp => Proto::Udp,
            EventKind::Http => return Err(UnsupportedKind(EventKind::Http)),
        };
        Ok(FlowKey {
            src_ip: self.src_ip,
            src_port: self.src_port,
            dst_ip: self.dst_ip,
            dst_port: self.dst_port,
            proto,
        })
    }
}

/// Convenience wrapper around [`TraceEvent::flow_key`].
pub fn flow_key(event: &TraceEvent) -> Result<FlowKey, UnsupportedKind> {
    event.flow_key()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("flow keys are only defined for tcp and udp events, got {0}")]
pub struct UnsupportedKind(pub EventKind);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Proto {
    Tcp,
    Udp,
}

/// Directional transport 5-tuple. `a -> b` and `b -> a` are different keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlowKey {
    pub src_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_ip: Ipv4Addr,
    pub dst_port: u16,
    pub proto: Proto,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Decision {
    Forward,
    DropRateLimited,
    RejectBlacklisted,
    Sandbox,
}

impl Decision {
    pub const ALL: [Decision; 4] = [
        Decision::Forward,
        Decision::DropRateLimited,
        Decision::RejectBlacklisted,
        Decision::Sandbox,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Forward => "forward",
            Decision::DropRateLimited => "drop_rate_limited",
            Decision::RejectBlacklisted => "reject_blacklisted",
            Decision::Sandbox => "sandbox",
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The pipeline's decision for one event.
///
/// `layer` is 0 for [`Decision::Forward`] and 1..=4 otherwise.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub decision: Decision,
    pub layer: u8,
    pub reason: String,
    pub rule_id: Option<u64>,
}

impl Verdict {
    pub fn forward() -> Self {
        Verdict {
            decision: Decision::Forward,
            layer: 0,
            reason: String::new(),
            rule_id: None,
        }
    }

    pub fn rate_limited() -> Self {
        Verdict {
            decision: Decision::DropRateLimited,
            layer: 1,
            reason: "rate_limited".into(),
            rule_id: None,
        }
    }

    pub fn blacklisted() -> Self {
        Verdict {
            decision: Decision::RejectBlacklisted,
            layer: 2,
            reason: "blacklisted".into(),
            rule_id: None,
        }
    }

    /// # Panics
    ///
    /// Panics if `reason` is empty or `layer` is outside 1..=4.
    pub fn sandbox(layer: u8, reason: impl Into<String>, rule_id: Option<u64>) -> Self {
        let reason = reason.into();
        assert!(!reason.is_empty(), "sandbox verdicts always carry a reason");
        assert!((1..=4).contains(&layer), "sandbox layer must be 1..=4");
        Verdict {
            decision: Decision::Sandbox,
            layer,
            reason,
            rule_id,
        }
    }
}
