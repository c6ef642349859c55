//! Seeded synthetic traffic.
//!
//! Every scenario is a pure function of `(name, params, seed, duration)`.
//! Attack schedules are exact arithmetic sequences in integer microseconds;
//! benign traffic draws shifted-exponential gaps from [`SplitMix64`].
//!
//! Source pools are disjoint by second octet:
//!
//! | pool            | addresses   |
//! |-----------------|-------------|
//! | benign          | 10.10.x.y   |
//! | syn_flood       | 10.20.x.y   |
//! | ack_flood       | 10.30.x.y   |
//! | udp_flood       | 10.40.x.y   |
//! | low_rate_pulse  | 10.50.x.y   |
//! | http_attack     | 10.60.x.y   |
//!
//! blacklist_mix attackers are drawn from the supplied feed instead.
//!
//! Benign sources keep every gap at or above 0.2 s, complete every TCP
//! handshake 0.2 s after the SYN, and answer with the ACK number a SYN-cookie
//! server would expect (default secret), so they stay clean whether or not
//! the analyzer is in cookie mode.

mod rng;

use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use serde::Serialize;

pub use rng::SplitMix64;

use crate::analyzer::{make_syn_cookie, COOKIE_PERIOD_SECS, DEFAULT_SYNCOOKIE_SECRET};
use crate::blacklist::{parse_feed, Cidr};
use crate::model::{
    compute_udp_checksum, EventBody, HttpInfo, TcpFlags, TcpInfo, TraceEvent, UdpInfo,
};

pub const VICTIM: Ipv4Addr = Ipv4Addr::new(192, 0, 2, 10);
const MICROS: u64 = 1_000_000;
/// Smallest gap between two benign events from one source.
const MIN_BENIGN_GAP_US: u64 = 200_000;
const BENIGN_MSS_IDX: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScenarioName {
    Normal,
    SynFlood,
    AckFlood,
    UdpFlood,
    LowRatePulse,
    BlacklistMix,
    HttpAttack,
    Mixed,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 8] = [
        ScenarioName::Normal,
        ScenarioName::SynFlood,
        ScenarioName::AckFlood,
        ScenarioName::UdpFlood,
        ScenarioName::LowRatePulse,
        ScenarioName::BlacklistMix,
        ScenarioName::HttpAttack,
        ScenarioName::Mixed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::Normal => "normal",
            ScenarioName::SynFlood => "syn_flood",
            ScenarioName::AckFlood => "ack_flood",
            ScenarioName::UdpFlood => "udp_flood",
            ScenarioName::LowRatePulse => "low_rate_pulse",
            ScenarioName::BlacklistMix => "blacklist_mix",
            ScenarioName::HttpAttack => "http_attack",
            ScenarioName::Mixed => "mixed",
        }
    }

    /// Default parameters; any key not listed here is rejected.
    pub fn default_params(self) -> BTreeMap<&'static str, f64> {
        let attack = |sources: f64, rate: f64| {
            BTreeMap::from([
                ("sources", sources),
                ("rate", rate),
                ("benign_sources", 0.0),
                ("benign_rate", 2.0),
            ])
        };
        match self {
            ScenarioName::Normal => BTreeMap::from([("sources", 20.0), ("rate", 2.0)]),
            ScenarioName::SynFlood => attack(1.0, 100.0),
            ScenarioName::AckFlood => attack(1.0, 200.0),
            ScenarioName::UdpFlood => attack(1.0, 200.0),
            ScenarioName::LowRatePulse => {
                let mut p = attack(1.0, 200.0);
                p.insert("period", 5.0);
                p.insert("width", 0.2);
                p
            }
            ScenarioName::BlacklistMix => {
                BTreeMap::from([("sources", 20.0), ("fraction", 0.5), ("rate", 2.0)])
            }
            ScenarioName::HttpAttack => attack(1.0, 1.0),
            ScenarioName::Mixed => BTreeMap::from([
                ("benign_sources", 50.0),
                ("benign_rate", 2.0),
                ("syn_sources", 10.0),
                ("syn_rate", 100.0),
                ("ack_sources", 10.0),
                ("ack_rate", 200.0),
                ("udp_sources", 2.0),
                ("udp_rate", 100.0),
                ("pulse_sources", 10.0),
                ("pulse_rate", 200.0),
                ("pulse_period", 5.0),
                ("pulse_width", 0.2),
                ("http_sources", 5.0),
                ("http_rate", 1.0),
                ("blacklist_sources", 0.0),
                ("blacklist_rate", 2.0),
            ]),
        }
    }

    fn label(self) -> String {
        format!("attack:{}", self.as_str())
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = GenError;

    fn from_str(s: &str) -> Result<Self, GenError> {
        ScenarioName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| GenError::UnknownScenario(s.to_owned()))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GenError {
    #[error("unknown scenario {0:?}")]
    UnknownScenario(String),
    #[error("scenario {scenario} has no parameter {key:?}")]
    UnknownParam { scenario: ScenarioName, key: String },
    #[error("parameter {key}: {message}")]
    InvalidParam { key: String, message: String },
    #[error("duration must be a positive number of seconds")]
    InvalidDuration,
    #[error("scenario {0} needs a blacklist feed")]
    MissingFeed(ScenarioName),
    #[error("blacklist feed has no usable entries")]
    EmptyFeed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: ScenarioName,
    /// Overrides on top of [`ScenarioName::default_params`].
    pub params: BTreeMap<String, f64>,
    pub seed: u64,
    pub duration_secs: f64,
    /// Feed text; required by blacklist_mix, and by mixed when it has
    /// blacklist sources.
    pub feed: Option<String>,
}

impl Scenario {
    pub fn new(name: ScenarioName, seed: u64, duration_secs: f64) -> Self {
        Scenario {
            name,
            params: BTreeMap::new(),
            seed,
            duration_secs,
            feed: None,
        }
    }

    pub fn param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_owned(), value);
        self
    }

    pub fn with_feed(mut self, feed: impl Into<String>) -> Self {
        self.feed = Some(feed.into());
        self
    }

    /// Defaults merged with overrides, validated.
    pub fn resolved_params(&self) -> Result<BTreeMap<String, f64>, GenError> {
        let mut p: BTreeMap<String, f64> = self
            .name
            .default_params()
            .into_iter()
            .map(|(k, v)| (k.to_owned(), v))
            .collect();
        for (k, v) in &self.params {
            match p.get_mut(k) {
                Some(slot) => *slot = *v,
                None => {
                    return Err(GenError::UnknownParam {
                        scenario: self.name,
                        key: k.clone(),
                    })
                }
            }
        }
        for (k, v) in &p {
            let invalid = |message: &str| GenError::InvalidParam {
                key: k.clone(),
                message: message.to_owned(),
            };
            if !v.is_finite() || *v < 0.0 {
                return Err(invalid("must be a finite non-negative number"));
            }
            if k.ends_with("sources") && v.fract() != 0.0 {
                return Err(invalid("must be a whole number"));
            }
            if k.ends_with("sources") && *v > 62_500.0 {
                return Err(invalid("at most 62500 sources per pool"));
            }
            if (k.ends_with("rate") || k.ends_with("period") || k.ends_with("width")) && *v <= 0.0 {
                return Err(invalid("must be positive"));
            }
            if k == "fraction" && *v > 1.0 {
                return Err(invalid("must be in [0, 1]"));
            }
        }
        Ok(p)
    }
}

/// Per-label ground truth for a generated trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Manifest {
    pub scenario: String,
    pub seed: u64,
    pub duration_secs: f64,
    pub params: BTreeMap<String, f64>,
    pub total_events: u64,
    pub label_counts: BTreeMap<String, u64>,
    pub sources: BTreeMap<Ipv4Addr, String>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest always serializes")
    }

    pub fn label_of(&self, ip: Ipv4Addr) -> Option<&str> {
        self.sources.get(&ip).map(String::as_str)
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub events: Vec<TraceEvent>,
    pub manifest: Manifest,
}

/// Builds the trace for `scenario`.
pub fn generate(scenario: &Scenario) -> Result<Generated, GenError> {
    if !(scenario.duration_secs.is_finite() && scenario.duration_secs > 0.0) {
        return Err(GenError::InvalidDuration);
    }
    let params = scenario.resolved_params()?;
    let mut g = Builder {
        rng: SplitMix64::new(scenario.seed),
        end_us: (scenario.duration_secs * 1e6).round() as u64,
        pending: Vec::new(),
        sources: BTreeMap::new(),
        stream: 0,
    };
    let p = |k: &str| params[k];
    let n = |k: &str| params[k] as u32;
    use ScenarioName::*;
    match scenario.name {
        Normal => g.benign(n("sources"), p("rate"), &[]),
        BlacklistMix => {
            let feed = load_feed(scenario)?;
            let total = n("sources");
            let attackers = (f64::from(total) * p("fraction")).round() as u32;
            g.blacklisted(attackers, p("rate"), &feed, BlacklistMix.label());
            g.benign(total - attackers, p("rate"), &feed);
        }
        Mixed => {
            let feed = if p("blacklist_sources") > 0.0 {
                Some(load_feed(scenario)?)
            } else {
                None
            };
            let blocked = feed.clone().unwrap_or_default();
            g.benign(n("benign_sources"), p("benign_rate"), &blocked);
            g.syn_flood(n("syn_sources"), p("syn_rate"), SynFlood.label());
            g.ack_flood(n("ack_sources"), p("ack_rate"));
            g.udp_flood(n("udp_sources"), p("udp_rate"));
            g.pulse(
                n("pulse_sources"),
                p("pulse_rate"),
                p("pulse_period"),
                p("pulse_width"),
            );
            g.http_attack(n("http_sources"), p("http_rate"));
            if let Some(feed) = feed {
                let label = BlacklistMix.label();
                g.blacklisted(n("blacklist_sources"), p("blacklist_rate"), &feed, label);
            }
        }
        attack => {
            g.benign(n("benign_sources"), p("benign_rate"), &[]);
            let (count, rate) = (n("sources"), p("rate"));
            match attack {
                SynFlood => g.syn_flood(count, rate, SynFlood.label()),
                AckFlood => g.ack_flood(count, rate),
                UdpFlood => g.udp_flood(count, rate),
                LowRatePulse => g.pulse(count, rate, p("period"), p("width")),
                HttpAttack => g.http_attack(count, rate),
                Normal | BlacklistMix | Mixed => unreachable!(),
            }
        }
    }
    Ok(g.finish(scenario, params))
}

fn load_feed(scenario: &Scenario) -> Result<Vec<Cidr>, GenError> {
    let text = scenario
        .feed
        .as_deref()
        .ok_or(GenError::MissingFeed(scenario.name))?;
    let (snap, _) = parse_feed(text);
    if snap.is_empty() {
        return Err(GenError::EmptyFeed);
    }
    Ok(snap.entries().to_vec())
}

/// Address `index` of the pool `10.<octet>.0.0/16`, skipping `.0` hosts.
pub fn pool_addr(octet: u8, index: u32) -> Ipv4Addr {
    Ipv4Addr::new(10, octet, (index / 250) as u8, (index % 250 + 1) as u8)
}

struct Pending {
    t_us: u64,
    stream: u64,
    seq: u64,
    event: TraceEvent,
}

struct Builder {
    rng: SplitMix64,
    end_us: u64,
    pending: Vec<Pending>,
    sources: BTreeMap<Ipv4Addr, String>,
    stream: u64,
}

fn base_event(src: Ipv4Addr, sport: u16, dport: u16, body: EventBody, label: &str) -> TraceEvent {
    TraceEvent {
        event_id: 0,
        ts: 0.0,
        src_ip: src,
        dst_ip: VICTIM,
        src_port: sport,
        dst_port: dport,
        body,
        label: Some(label.to_owned()),
    }
}

fn tcp_body(flags: TcpFlags, seq: u32, ack: u32, payload: &[u8]) -> EventBody {
    EventBody::Tcp(TcpInfo {
        flags,
        seq,
        ack,
        urgent_ptr: 0,
        payload: payload.to_vec(),
    })
}

fn udp_body(src: Ipv4Addr, sport: u16, dport: u16, payload: Vec<u8>) -> EventBody {
    let length = (payload.len() + 8) as u16;
    let checksum = compute_udp_checksum(src, VICTIM, sport, dport, length, &payload)
        .expect("length matches payload");
    EventBody::Udp(UdpInfo {
        length,
        checksum,
        payload,
    })
}

fn http_body(
    method: &str,
    uri: String,
    headers: Vec<(String, String)>,
    body: &[u8],
    duration_ms: u64,
) -> EventBody {
    EventBody::Http(HttpInfo {
        method: method.to_owned(),
        uri,
        version: "HTTP/1.1".to_owned(),
        headers,
        body: body.to_vec(),
        duration_ms,
    })
}

fn browser_headers() -> Vec<(String, String)> {
    vec![
        ("Host".into(), "shop.example".into()),
        (
            "User-Agent".into(),
            "Mozilla/5.0 (X11; Linux x86_64; rv:128.0) Gecko/20100101 Firefox/128.0".into(),
        ),
        (
            "Accept".into(),
            "text/html,application/xhtml+xml,*/*;q=0.8".into(),
        ),
    ]
}

const BENIGN_URIS: [&str; 10] = [
    "/",
    "/index.html",
    "/products?id=42",
    "/products?id=7&sort=price",
    "/search?q=blue+running+shoes",
    "/api/v1/items/17",
    "/static/app.js",
    "/static/style.css",
    "/about",
    "/cart?step=2",
];

const DNS_QUERY_TAIL: &[u8] =
    b"\x01\x00\x00\x01\x00\x00\x00\x00\x00\x00\x04shop\x07example\x00\x00\x01\x00\x01";

/// Requests built to trip default WAF rules 1001..=1007, in order.
fn waf_attack_request(rule_idx: u64) -> EventBody {
    let h = browser_headers;
    match rule_idx % 7 {
        0 => http_body(
            "GET",
            "/products?id=1%20UNION%20SELECT%20username,password%20FROM%20users".into(),
            h(),
            b"",
            40,
        ),
        1 => http_body(
            "GET",
            "/search?q=%3Cscript%3Ealert(document.cookie)%3C/script%3E".into(),
            h(),
            b"",
            40,
        ),
        2 => http_body("GET", "/static/../../../etc/passwd".into(), h(), b"", 40),
        3 => http_body(
            "POST",
            "/login".into(),
            h(),
            b"user=admin&pass=x%27%20OR%201%3D1--",
            40,
        ),
        4 => http_body(
            "GET",
            format!("/search?q={}", "A".repeat(3000)),
            h(),
            b"",
            40,
        ),
        5 => http_body("POST", "/upload".into(), h(), b"partial", 45_000),
        _ => {
            let mut headers = h();
            headers[1].1 = "() { :; }; /bin/bash -c 'cat /etc/passwd'".into();
            http_body("GET", "/cgi-bin/status".into(), headers, b"", 40)
        }
    }
}

impl Builder {
    fn push(&mut self, t_us: u64, seq: u64, event: TraceEvent) {
        self.pending.push(Pending {
            t_us,
            stream: self.stream,
            seq,
            event,
        });
    }

    fn register(&mut self, src: Ipv4Addr, label: &str) {
        self.stream += 1;
        self.sources.insert(src, label.to_owned());
    }

    /// Exact schedule `offset + round(k * 1e6 / rate)` for `k` in `0..`.
    fn schedule(&self, rate: f64, offset_us: u64) -> impl Iterator<Item = u64> {
        let end = self.end_us;
        (0u64..)
            .map(move |k| offset_us + (k as f64 * 1e6 / rate).round() as u64)
            .take_while(move |t| *t < end)
    }

    fn benign(&mut self, count: u32, rate: f64, avoid: &[Cidr]) {
        let label = "benign";
        let cap = (rate * self.end_us as f64 / 1e6).floor() as u64;
        let mean_extra = (1e6 / rate - MIN_BENIGN_GAP_US as f64).max(0.0);
        let mut index = 0u32;
        for _ in 0..count {
            let src = loop {
                let a = pool_addr(10, index);
                index += 1;
                if !avoid.iter().any(|c| c.contains(a)) {
                    break a;
                }
            };
            self.register(src, label);
            let mut t = self.rng.exp(1e6 / rate).round() as u64;
            let mut emitted = 0u64;
            let mut port_seq = 0u16;
            let gap = |rng: &mut SplitMix64| MIN_BENIGN_GAP_US + rng.exp(mean_extra).round() as u64;
            while emitted < cap && t < self.end_us {
                let sport = 32768 + port_seq % 28000;
                port_seq = port_seq.wrapping_add(1);
                let kind = self.rng.below(10);
                if kind < 4 && emitted + 4 <= cap {
                    // SYN, ACK, data, FIN.
                    let times = [
                        t,
                        t + MIN_BENIGN_GAP_US,
                        t + MIN_BENIGN_GAP_US + gap(&mut self.rng),
                    ];
                    let fin_t = times[2] + gap(&mut self.rng);
                    if fin_t < self.end_us {
                        self.tcp_session(
                            src,
                            sport,
                            [times[0], times[1], times[2], fin_t],
                            emitted,
                            label,
                        );
                        emitted += 4;
                        t = fin_t + gap(&mut self.rng);
                        continue;
                    }
                }
                let ev = if kind < 8 {
                    let uri = BENIGN_URIS[self.rng.below(BENIGN_URIS.len() as u64) as usize];
                    let (method, body): (&str, &[u8]) = if kind == 7 {
                        ("POST", b"name=alice&qty=2")
                    } else {
                        ("GET", b"")
                    };
                    let dur = 5 + self.rng.below(400);
                    base_event(
                        src,
                        sport,
                        80,
                        http_body(method, uri.into(), browser_headers(), body, dur),
                        label,
                    )
                } else {
                    let id = self.rng.next_u32() as u16;
                    let mut payload = id.to_be_bytes().to_vec();
                    payload.extend_from_slice(DNS_QUERY_TAIL);
                    base_event(src, sport, 53, udp_body(src, sport, 53, payload), label)
                };
                self.push(t, emitted, ev);
                emitted += 1;
                t += gap(&mut self.rng);
            }
        }
    }

    fn tcp_session(&mut self, src: Ipv4Addr, sport: u16, times: [u64; 4], seq0: u64, label: &str) {
        let isn = self.rng.next_u32();
        let flow = crate::model::FlowKey {
            src_ip: src,
            src_port: sport,
            dst_ip: VICTIM,
            dst_port: 80,
            proto: crate::model::Proto::Tcp,
        };
        let counter = times[0] / (COOKIE_PERIOD_SECS * MICROS);
        let server_isn = make_syn_cookie(DEFAULT_SYNCOOKIE_SECRET, &flow, counter, BENIGN_MSS_IDX)
            .expect("mss index in range");
        let ack = server_isn.wrapping_add(1);
        let request = b"GET /index.html HTTP/1.1\r\nHost: shop.example\r\n\r\n";
        let segs: [(TcpFlags, u32, u32, &[u8]); 4] = [
            (TcpFlags::SYN, isn, 0, b""),
            (TcpFlags::ACK, isn.wrapping_add(1), ack, b""),
            (
                TcpFlags::PSH | TcpFlags::ACK,
                isn.wrapping_add(1),
                ack,
                request,
            ),
            (
                TcpFlags::FIN | TcpFlags::ACK,
                isn.wrapping_add(1 + request.len() as u32),
                ack,
                b"",
            ),
        ];
        for (i, (flags, seq, ack, payload)) in segs.into_iter().enumerate() {
            let ev = base_event(src, sport, 80, tcp_body(flags, seq, ack, payload), label);
            self.push(times[i], seq0 + i as u64, ev);
        }
    }

    fn syn_flood(&mut self, count: u32, rate: f64, label: String) {
        let period = 1e6 / rate;
        for i in 0..count {
            let src = pool_addr(20, i);
            self.register(src, &label);
            let offset = (period * f64::from(i) / f64::from(count)).floor() as u64;
            let times: Vec<u64> = self.schedule(rate, offset).collect();
            for (k, t) in times.into_iter().enumerate() {
                let sport = 1024 + (k % 64_000) as u16;
                let seq = self.rng.next_u32();
                let ev = base_event(src, sport, 80, tcp_body(TcpFlags::SYN, seq, 0, b""), &label);
                self.push(t, k as u64, ev);
            }
        }
    }

    fn ack_flood(&mut self, count: u32, rate: f64) {
        let label = ScenarioName::AckFlood.label();
        let period = 1e6 / rate;
        for i in 0..count {
            let src = pool_addr(30, i);
            self.register(src, &label);
            let offset = (period * f64::from(i) / f64::from(count)).floor() as u64;
            let times: Vec<u64> = self.schedule(rate, offset).collect();
            for (k, t) in times.into_iter().enumerate() {
                let sport = 1024 + (k % 64_000) as u16;
                let (seq, ack) = (self.rng.next_u32(), self.rng.next_u32());
                let ev = base_event(
                    src,
                    sport,
                    80,
                    tcp_body(TcpFlags::ACK, seq, ack, b""),
                    &label,
                );
                self.push(t, k as u64, ev);
            }
        }
    }

    /// Alternates oversized datagrams with ones corrupted after checksumming.
    fn udp_flood(&mut self, count: u32, rate: f64) {
        let label = ScenarioName::UdpFlood.label();
        let period = 1e6 / rate;
        for i in 0..count {
            let src = pool_addr(40, i);
            self.register(src, &label);
            let offset = (period * f64::from(i) / f64::from(count)).floor() as u64;
            let times: Vec<u64> = self.schedule(rate, offset).collect();
            for (k, t) in times.into_iter().enumerate() {
                let sport = 1024 + (k % 64_000) as u16;
                let dport = 9000 + (k % 100) as u16;
                let body = if k % 2 == 0 {
                    let fill = (self.rng.next_u32() & 0xFF) as u8;
                    udp_body(src, sport, dport, vec![fill; 1500])
                } else {
                    let payload: Vec<u8> = (0..32).map(|_| self.rng.next_u32() as u8).collect();
                    let mut body = udp_body(src, sport, dport, payload);
                    if let EventBody::Udp(u) = &mut body {
                        let pos = (k / 2) % u.payload.len();
                        u.payload[pos] ^= 0x5A;
                    }
                    body
                };
                self.push(t, k as u64, base_event(src, sport, dport, body, &label));
            }
        }
    }

    /// Square-wave SYN bursts: `width` seconds at `rate` every `period`.
    fn pulse(&mut self, count: u32, rate: f64, period: f64, width: f64) {
        let label = ScenarioName::LowRatePulse.label();
        let period_us = (period * 1e6).round() as u64;
        let width_us = (width * 1e6).round() as u64;
        let per_burst = (rate * width).round() as u64;
        for i in 0..count {
            let src = pool_addr(50, i);
            self.register(src, &label);
            let phase = period_us * u64::from(i) / u64::from(count.max(1));
            let mut k = 0u64;
            let mut start = phase;
            while start < self.end_us {
                for j in 0..per_burst {
                    let t = start + (j as f64 * 1e6 / rate).round() as u64;
                    if t >= self.end_us || t >= start + width_us.max(1) {
                        break;
                    }
                    let sport = 1024 + (k % 64_000) as u16;
                    let seq = self.rng.next_u32();
                    let ev =
                        base_event(src, sport, 80, tcp_body(TcpFlags::SYN, seq, 0, b""), &label);
                    self.push(t, k, ev);
                    k += 1;
                }
                start += period_us;
            }
        }
    }

    fn http_attack(&mut self, count: u32, rate: f64) {
        let label = ScenarioName::HttpAttack.label();
        let period = 1e6 / rate;
        for i in 0..count {
            let src = pool_addr(60, i);
            self.register(src, &label);
            let offset = (period * f64::from(i) / f64::from(count)).floor() as u64;
            let times: Vec<u64> = self.schedule(rate, offset).collect();
            for (k, t) in times.into_iter().enumerate() {
                let sport = 40000 + (k % 20_000) as u16;
                let ev = base_event(src, sport, 80, waf_attack_request(k as u64), &label);
                self.push(t, k as u64, ev);
            }
        }
    }

    /// Sources taken from the feed sending otherwise ordinary requests.
    fn blacklisted(&mut self, count: u32, rate: f64, feed: &[Cidr], label: String) {
        let period = 1e6 / rate;
        let mut used = std::collections::BTreeSet::new();
        for i in 0..count {
            let src = loop {
                let c = feed[self.rng.below(feed.len() as u64) as usize];
                let span = u64::from(c.last() - c.first()) + 1;
                let a = Ipv4Addr::from(c.first() + self.rng.below(span) as u32);
                if used.insert(a) || used.len() as u64 >= feed_size(feed) {
                    break a;
                }
            };
            self.register(src, &label);
            let offset = (period * f64::from(i) / f64::from(count)).floor() as u64;
            let times: Vec<u64> = self.schedule(rate, offset).collect();
            for (k, t) in times.into_iter().enumerate() {
                let uri = BENIGN_URIS[k % BENIGN_URIS.len()];
                let sport = 40000 + (k % 20_000) as u16;
                let ev = base_event(
                    src,
                    sport,
                    80,
                    http_body("GET", uri.into(), browser_headers(), b"", 30),
                    &label,
                );
                self.push(t, k as u64, ev);
            }
        }
    }

    fn finish(mut self, scenario: &Scenario, params: BTreeMap<String, f64>) -> Generated {
        self.pending.sort_by_key(|e| (e.t_us, e.stream, e.seq));
        let mut label_counts: BTreeMap<String, u64> = BTreeMap::new();
        label_counts.insert("benign".into(), 0);
        for l in self.sources.values() {
            label_counts.entry(l.clone()).or_insert(0);
        }
        if scenario.name != ScenarioName::Normal && scenario.name != ScenarioName::Mixed {
            label_counts.entry(scenario.name.label()).or_insert(0);
        }
        let events: Vec<TraceEvent> = self
            .pending
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                let mut ev = p.event;
                ev.event_id = i as u64;
                ev.ts = p.t_us as f64 / 1e6;
                if let Some(l) = &ev.label {
                    *label_counts.get_mut(l).expect("label registered") += 1;
                }
                ev
            })
            .collect();
        let manifest = Manifest {
            scenario: scenario.name.as_str().to_owned(),
            seed: scenario.seed,
            duration_secs: scenario.duration_secs,
            params,
            total_events: events.len() as u64,
            label_counts,
            sources: self.sources,
        };
        Generated { events, manifest }
    }
}

fn feed_size(feed: &[Cidr]) -> u64 {
    feed.iter()
        .map(|c| u64::from(c.last() - c.first()) + 1)
        .sum()
}

/// Convenience wrapper returning only the manifest.
pub fn scenario_manifest(scenario: &Scenario) -> Result<Manifest, GenError> {
    generate(scenario).map(|g| g.manifest)
}
