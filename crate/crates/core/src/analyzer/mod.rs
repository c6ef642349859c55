//! TCP/UDP header analysis. Third line of defense.
//!
//! TCP analysis is stateful: a handshake table tracks flows from SYN to the
//! completing ACK, and per-source sliding windows count anomaly classes
//! (incomplete handshakes, bare ACKs, RSTs, empty PSH segments, odd URG use).
//! Each packet yields exactly one finding, taken from the first check that
//! fires in this order:
//!
//! 1. payload signature on a PSH segment
//! 2. SYN without ACK: half-open threshold (skipped in cookie mode)
//! 3. ACK completing a pending handshake, or a SYN-cookie check in cookie mode
//! 4. bare ACK flood
//! 5. RST flood
//! 6. PSH with empty payload
//! 7. URG with a zero urgent pointer, or URG without ACK
//!
//! The incomplete-handshake count for a source is the number of its SYNs
//! inside the window that never completed: entries still pending in the table
//! plus expired (or evicted, or reset) entries folded into the window at the
//! time of their last SYN.
//!
//! Cookie mode is entered when the global half-open count reaches
//! `syn_half_open_global` and left when it drops below half of that.
//!
//! UDP analysis is stateless: blocked destination port, then size, then
//! checksum.

mod cookie;
mod signatures;
mod window;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::net::Ipv4Addr;

pub use cookie::{
    check_syn_cookie, cookie_counter, cookie_hash, make_syn_cookie, MssIndexOutOfRange,
    COOKIE_PERIOD_SECS,
};
pub use signatures::{default_signatures, parse_signatures, Signature, SignatureError};
pub use window::{AnomalyClass, SourceWindow};

use crate::model::{validate_udp_checksum, FlowKey, TcpFlags, TraceEvent};

pub(crate) use cookie::mix64;

/// Converts trace seconds to integer microseconds.
pub fn ts_to_micros(ts: f64) -> u64 {
    (ts * 1e6).round() as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyzerConfig {
    pub window_secs: f64,
    pub bucket_count: u32,
    pub syn_half_open_per_source: u32,
    pub syn_half_open_global: u32,
    pub ack_flood_per_source: u32,
    pub rst_flood_per_source: u32,
    pub psh_anomaly_per_source: u32,
    pub urg_anomaly_per_source: u32,
    pub handshake_timeout_secs: f64,
    pub conn_table_max_entries: usize,
    pub udp_min_len: u16,
    pub udp_max_len: u16,
    pub udp_validate_checksum: bool,
    pub udp_blocked_ports: BTreeSet<u16>,
    pub syncookie_secret: u64,
    pub payload_signatures: Vec<Signature>,
}

pub const DEFAULT_SYNCOOKIE_SECRET: u64 = 0x5EED_C0DE_D00D_F00D;
/// Chargen, SSDP and memcached: classic UDP reflection ports.
pub const DEFAULT_UDP_BLOCKED_PORTS: [u16; 3] = [19, 1900, 11211];

impl Default for AnalyzerConfig {
    fn default() -> Self {
        AnalyzerConfig {
            window_secs: 10.0,
            bucket_count: 10,
            syn_half_open_per_source: 50,
            syn_half_open_global: 500,
            ack_flood_per_source: 100,
            rst_flood_per_source: 100,
            psh_anomaly_per_source: 50,
            urg_anomaly_per_source: 20,
            handshake_timeout_secs: 5.0,
            conn_table_max_entries: 65536,
            udp_min_len: 8,
            udp_max_len: 1480,
            udp_validate_checksum: true,
            udp_blocked_ports: DEFAULT_UDP_BLOCKED_PORTS.into_iter().collect(),
            syncookie_secret: DEFAULT_SYNCOOKIE_SECRET,
            payload_signatures: default_signatures(),
        }
    }
}

impl AnalyzerConfig {
    pub fn validate(&self) -> Result<(), AnalyzerError> {
        let bad = |m: &'static str| Err(AnalyzerError::InvalidConfig(m));
        if !(self.window_secs.is_finite() && self.window_secs > 0.0) {
            return bad("window_secs must be > 0");
        }
        if self.bucket_count < 1 {
            return bad("bucket_count must be >= 1");
        }
        if ts_to_micros(self.window_secs) < u64::from(self.bucket_count) {
            return bad("window too small for bucket_count");
        }
        let thresholds = [
            self.syn_half_open_per_source,
            self.syn_half_open_global,
            self.ack_flood_per_source,
            self.rst_flood_per_source,
            self.psh_anomaly_per_source,
            self.urg_anomaly_per_source,
        ];
        if thresholds.iter().any(|t| *t < 1) {
            return bad("thresholds must be >= 1");
        }
        if !(self.handshake_timeout_secs.is_finite() && self.handshake_timeout_secs > 0.0) {
            return bad("handshake_timeout_secs must be > 0");
        }
        if self.conn_table_max_entries < 1 {
            return bad("conn_table_max_entries must be >= 1");
        }
        if self.udp_min_len < 8 {
            return bad("udp_min_len must be >= 8");
        }
        if self.udp_max_len < self.udp_min_len {
            return bad("udp_max_len must be >= udp_min_len");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalyzerError {
    #[error("invalid analyzer config: {0}")]
    InvalidConfig(&'static str),
    #[error("clock regression: event at {now_us}us after {last_us}us")]
    ClockRegression { now_us: u64, last_us: u64 },
    #[error("expected a {expected} event")]
    WrongKind { expected: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TcpFinding {
    None,
    SynHalfOpenExceeded,
    AckFlood,
    RstFlood,
    PshAnomaly,
    UrgAnomaly,
    PayloadSignature(u32),
    CookieInvalid,
}

impl TcpFinding {
    pub fn reason(&self) -> &'static str {
        match self {
            TcpFinding::None => "",
            TcpFinding::SynHalfOpenExceeded => "syn_half_open",
            TcpFinding::AckFlood => "ack_flood",
            TcpFinding::RstFlood => "rst_flood",
            TcpFinding::PshAnomaly => "psh_anomaly",
            TcpFinding::UrgAnomaly => "urg_anomaly",
            TcpFinding::PayloadSignature(_) => "payload_signature",
            TcpFinding::CookieInvalid => "cookie_invalid",
        }
    }

    pub fn rule_id(&self) -> Option<u64> {
        match self {
            TcpFinding::PayloadSignature(id) => Some(u64::from(*id)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UdpFinding {
    None,
    SizeViolation,
    BadChecksum,
    BlockedPort,
}

impl UdpFinding {
    pub fn reason(&self) -> &'static str {
        match self {
            UdpFinding::None => "",
            UdpFinding::SizeViolation => "udp_size",
            UdpFinding::BadChecksum => "udp_bad_checksum",
            UdpFinding::BlockedPort => "udp_blocked_port",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HandshakeState {
    SynSeen,
    Established,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HandshakeEntry {
    pub flow: FlowKey,
    pub state: HandshakeState,
    pub created_us: u64,
    pub last_us: u64,
    order_key: (u64, u64),
}

impl HandshakeEntry {
    pub fn created_ts(&self) -> f64 {
        self.created_us as f64 / 1e6
    }

    pub fn last_ts(&self) -> f64 {
        self.last_us as f64 / 1e6
    }
}

/// Running totals kept for reporting.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AnalyzerCounters {
    pub handshakes_completed: u64,
    pub handshakes_expired: u64,
    pub table_evictions: u64,
    pub cookie_mode_entries: u64,
    pub cookies_accepted: u64,
}

pub struct AnalyzerState {
    cfg: AnalyzerConfig,
    bucket_us: u64,
    timeout_us: u64,
    flows: HashMap<FlowKey, HandshakeEntry>,
    /// Pending handshakes ordered by last SYN time.
    syn_order: BTreeMap<(u64, u64), FlowKey>,
    /// Established flows ordered by creation time.
    est_order: BTreeMap<(u64, u64), FlowKey>,
    pending_by_src: HashMap<Ipv4Addr, u32>,
    windows: HashMap<Ipv4Addr, SourceWindow>,
    cookie_mode: bool,
    last_us: u64,
    next_seq: u64,
    last_prune_epoch: u64,
    counters: AnalyzerCounters,
}

impl fmt::Debug for AnalyzerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AnalyzerState")
            .field("flows", &self.flows.len())
            .field("half_open", &self.syn_order.len())
            .field("sources", &self.windows.len())
            .field("cookie_mode", &self.cookie_mode)
            .finish()
    }
}

impl AnalyzerState {
    pub fn new(cfg: AnalyzerConfig) -> Result<Self, AnalyzerError> {
        cfg.validate()?;
        let bucket_us = ts_to_micros(cfg.window_secs) / u64::from(cfg.bucket_count);
        let timeout_us = ts_to_micros(cfg.handshake_timeout_secs);
        Ok(AnalyzerState {
            cfg,
            bucket_us,
            timeout_us,
            flows: HashMap::new(),
            syn_order: BTreeMap::new(),
            est_order: BTreeMap::new(),
            pending_by_src: HashMap::new(),
            windows: HashMap::new(),
            cookie_mode: false,
            last_us: 0,
            next_seq: 0,
            last_prune_epoch: 0,
            counters: AnalyzerCounters::default(),
        })
    }

    pub fn config(&self) -> &AnalyzerConfig {
        &self.cfg
    }

    pub fn counters(&self) -> AnalyzerCounters {
        self.counters
    }

    pub fn cookie_mode(&self) -> bool {
        self.cookie_mode
    }

    pub fn table_len(&self) -> usize {
        self.flows.len()
    }

    pub fn entry(&self, flow: &FlowKey) -> Option<&HandshakeEntry> {
        self.flows.get(flow)
    }

    pub fn entries(&self) -> impl Iterator<Item = &HandshakeEntry> {
        self.flows.values()
    }

    /// Pending (SynSeen) handshakes, globally or for one source.
    pub fn half_open_count(&self, source: Option<Ipv4Addr>) -> usize {
        match source {
            None => self.syn_order.len(),
            Some(src) => self.pending_by_src.get(&src).copied().unwrap_or(0) as usize,
        }
    }

    /// Current windowed count of `class` for `source`, as of the last packet.
    pub fn window_count(&self, source: Ipv4Addr, class: AnomalyClass) -> u32 {
        self.windows
            .get(&source)
            .map_or(0, |w| w.count(class, self.epoch(self.last_us)))
    }

    fn epoch(&self, us: u64) -> u64 {
        us / self.bucket_us
    }

    fn advance_clock(&mut self, ts: f64) -> Result<u64, AnalyzerError> {
        let now = ts_to_micros(ts);
        if now < self.last_us {
            return Err(AnalyzerError::ClockRegression {
                now_us: now,
                last_us: self.last_us,
            });
        }
        self.last_us = now;
        Ok(now)
    }

    fn bump(&mut self, src: Ipv4Addr, class: AnomalyClass, at_us: u64, now_us: u64) -> u32 {
        let (epoch, now_epoch) = (self.epoch(at_us), self.epoch(now_us));
        let n = self.cfg.bucket_count as usize;
        let w = self
            .windows
            .entry(src)
            .or_insert_with(|| SourceWindow::new(n));
        w.add(class, epoch, now_epoch);
        w.count(class, now_epoch)
    }

    fn next_order_key(&mut self, at_us: u64) -> (u64, u64) {
        self.next_seq += 1;
        (at_us, self.next_seq)
    }

    /// Removes a flow from the table. A pending handshake is folded into its
    /// source's incomplete-handshake window.
    fn remove_flow(&mut self, flow: &FlowKey, now_us: u64) -> Option<HandshakeEntry> {
        let entry = self.flows.remove(flow)?;
        match entry.state {
            HandshakeState::SynSeen => {
                self.syn_order.remove(&entry.order_key);
                self.release_pending(flow.src_ip);
                self.bump(
                    flow.src_ip,
                    AnomalyClass::SynIncomplete,
                    entry.last_us,
                    now_us,
                );
            }
            HandshakeState::Established => {
                self.est_order.remove(&entry.order_key);
            }
        }
        Some(entry)
    }

    fn release_pending(&mut self, src: Ipv4Addr) {
        if let Some(n) = self.pending_by_src.get_mut(&src) {
            *n -= 1;
            if *n == 0 {
                self.pending_by_src.remove(&src);
            }
        }
    }

    fn expire(&mut self, now_us: u64) {
        while let Some((&(last_us, _), &flow)) = self.syn_order.first_key_value() {
            if last_us + self.timeout_us >= now_us {
                break;
            }
            self.remove_flow(&flow, now_us);
            self.counters.handshakes_expired += 1;
        }
        let now_epoch = self.epoch(now_us);
        if now_epoch >= self.last_prune_epoch + u64::from(self.cfg.bucket_count) {
            self.last_prune_epoch = now_epoch;
            self.windows.retain(|_, w| !w.is_stale(now_epoch));
        }
    }

    fn make_room(&mut self, now_us: u64) {
        while self.flows.len() >= self.cfg.conn_table_max_entries {
            let victim = self
                .syn_order
                .first_key_value()
                .or_else(|| self.est_order.first_key_value())
                .map(|(_, f)| *f);
            match victim {
                Some(flow) => {
                    self.remove_flow(&flow, now_us);
                    self.counters.table_evictions += 1;
                }
                None => break,
            }
        }
    }

    fn update_cookie_mode(&mut self) {
        let global = self.syn_order.len() as u64;
        let threshold = u64::from(self.cfg.syn_half_open_global);
        if !self.cookie_mode && global >= threshold {
            self.cookie_mode = true;
            self.counters.cookie_mode_entries += 1;
        } else if self.cookie_mode && global * 2 < threshold {
            self.cookie_mode = false;
        }
    }

    /// Creates or refreshes a pending handshake.
    fn record_syn(&mut self, flow: FlowKey, now_us: u64) {
        if let Some(entry) = self.flows.get(&flow).copied() {
            match entry.state {
                HandshakeState::SynSeen => {
                    self.syn_order.remove(&entry.order_key);
                    let key = self.next_order_key(now_us);
                    self.syn_order.insert(key, flow);
                    let e = self.flows.get_mut(&flow).expect("entry present");
                    e.last_us = now_us;
                    e.order_key = key;
                    return;
                }
                // A fresh SYN on an established 4-tuple starts over.
                HandshakeState::Established => {
                    self.remove_flow(&flow, now_us);
                }
            }
        }
        self.make_room(now_us);
        let key = self.next_order_key(now_us);
        self.syn_order.insert(key, flow);
        *self.pending_by_src.entry(flow.src_ip).or_insert(0) += 1;
        self.flows.insert(
            flow,
            HandshakeEntry {
                flow,
                state: HandshakeState::SynSeen,
                created_us: now_us,
                last_us: now_us,
                order_key: key,
            },
        );
    }

    fn establish(&mut self, flow: FlowKey, now_us: u64) {
        if let Some(entry) = self.flows.get(&flow).copied() {
            if entry.state == HandshakeState::SynSeen {
                self.syn_order.remove(&entry.order_key);
                self.release_pending(flow.src_ip);
            } else {
                return;
            }
        } else {
            self.make_room(now_us);
        }
        let key = self.next_order_key(now_us);
        self.est_order.insert(key, flow);
        let created_us = self.flows.get(&flow).map_or(now_us, |e| e.created_us);
        self.flows.insert(
            flow,
            HandshakeEntry {
                flow,
                state: HandshakeState::Established,
                created_us,
                last_us: now_us,
                order_key: key,
            },
        );
        self.counters.handshakes_completed += 1;
    }

    fn signature_hit(&self, payload: &[u8]) -> Option<u32> {
        self.cfg
            .payload_signatures
            .iter()
            .find(|s| s.matches(payload))
            .map(|s| s.id)
    }

    /// Runs the TCP checks on one packet. The event's `ts` is the clock.
    pub fn observe_tcp(&mut self, pkt: &TraceEvent) -> Result<TcpFinding, AnalyzerError> {
        let tcp = pkt
            .tcp()
            .ok_or(AnalyzerError::WrongKind { expected: "tcp" })?;
        let flow = pkt
            .flow_key()
            .map_err(|_| AnalyzerError::WrongKind { expected: "tcp" })?;
        let now = self.advance_clock(pkt.ts)?;
        self.expire(now);
        self.update_cookie_mode();

        let src = pkt.src_ip;
        let flags = tcp.flags;
        let has = |f: TcpFlags| flags.contains(f);
        let empty_payload = tcp.payload.is_empty();

        // 1. payload signature
        if has(TcpFlags::PSH) && !empty_payload {
            if let Some(id) = self.signature_hit(&tcp.payload) {
                return Ok(TcpFinding::PayloadSignature(id));
            }
        }

        let mut finding = TcpFinding::None;

        // 2. connection attempt
        if has(TcpFlags::SYN) && !has(TcpFlags::ACK) && !self.cookie_mode {
            self.record_syn(flow, now);
            self.update_cookie_mode();
            let incomplete = self.half_open_count(Some(src)) as u32
                + self.window_count(src, AnomalyClass::SynIncomplete);
            if incomplete >= self.cfg.syn_half_open_per_source {
                finding = TcpFinding::SynHalfOpenExceeded;
            }
        }

        // 3./4. handshake completion and bare ACKs
        let plain_ack = has(TcpFlags::ACK) && !has(TcpFlags::SYN) && !has(TcpFlags::RST);
        if finding == TcpFinding::None && plain_ack {
            match self.flows.get(&flow).map(|e| e.state) {
                Some(HandshakeState::SynSeen) => {
                    self.establish(flow, now);
                    if has(TcpFlags::FIN) {
                        self.remove_flow(&flow, now);
                    }
                    return Ok(TcpFinding::None);
                }
                Some(HandshakeState::Established) => {
                    if let Some(e) = self.flows.get_mut(&flow) {
                        e.last_us = now;
                    }
                }
                None if self.cookie_mode => {
                    let counter = now / (COOKIE_PERIOD_SECS * 1_000_000);
                    let isn = tcp.ack.wrapping_sub(1);
                    if check_syn_cookie(self.cfg.syncookie_secret, &flow, counter, isn).is_some() {
                        self.counters.cookies_accepted += 1;
                        self.establish(flow, now);
                        if has(TcpFlags::FIN) {
                            self.remove_flow(&flow, now);
                        }
                        return Ok(TcpFinding::None);
                    } else {
                        return Ok(TcpFinding::CookieInvalid);
                    }
                }
                None => {
                    if empty_payload {
                        let n = self.bump(src, AnomalyClass::BareAck, now, now);
                        if n >= self.cfg.ack_flood_per_source {
                            finding = TcpFinding::AckFlood;
                        }
                    }
                }
            }
        }

        // 5. resets
        if finding == TcpFinding::None && has(TcpFlags::RST) {
            let n = self.bump(src, AnomalyClass::Rst, now, now);
            if n >= self.cfg.rst_flood_per_source {
                finding = TcpFinding::RstFlood;
            }
        }

        // 6. push without data
        if finding == TcpFinding::None && has(TcpFlags::PSH) && empty_payload {
            let n = self.bump(src, AnomalyClass::PshAnomaly, now, now);
            if n >= self.cfg.psh_anomaly_per_source {
                finding = TcpFinding::PshAnomaly;
            }
        }

        // 7. urgent pointer misuse
        if finding == TcpFinding::None
            && has(TcpFlags::URG)
            && (tcp.urgent_ptr == 0 || !has(TcpFlags::ACK))
        {
            let n = self.bump(src, AnomalyClass::UrgAnomaly, now, now);
            if n >= self.cfg.urg_anomaly_per_source {
                finding = TcpFinding::UrgAnomaly;
            }
        }

        if (has(TcpFlags::FIN) || has(TcpFlags::RST)) && !has(TcpFlags::SYN) {
            self.remove_flow(&flow, now);
        }

        Ok(finding)
    }

    /// Runs the UDP checks: blocked port, size, checksum.
    pub fn observe_udp(&self, pkt: &TraceEvent) -> Result<UdpFinding, AnalyzerError> {
        let udp = pkt
            .udp()
            .ok_or(AnalyzerError::WrongKind { expected: "udp" })?;
        if self.cfg.udp_blocked_ports.contains(&pkt.dst_port) {
            return Ok(UdpFinding::BlockedPort);
        }
        if udp.length < self.cfg.udp_min_len
            || udp.length > self.cfg.udp_max_len
            || usize::from(udp.length) != udp.payload.len() + 8
        {
            return Ok(UdpFinding::SizeViolation);
        }
        if self.cfg.udp_validate_checksum
            && udp.checksum != 0
            && !validate_udp_checksum(
                pkt.src_ip,
                pkt.dst_ip,
                pkt.src_port,
                pkt.dst_port,
                udp.length,
                udp.checksum,
                &udp.payload,
            )
        {
            return Ok(UdpFinding::BadChecksum);
        }
        Ok(UdpFinding::None)
    }
}

#[cfg(test)]
mod tests;
