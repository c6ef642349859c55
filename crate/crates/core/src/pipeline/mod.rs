//! The four-layer zero-trust engine.
//!
//! Every event passes through the layers in a fixed order and stops at the
//! first one that objects:
//!
//! 1. per-source rate limit: drop (or sandbox when configured)
//! 2. blacklist: reject
//! 3. TCP/UDP header analysis (tcp and udp events): sandbox
//! 4. WAF (http events): sandbox
//!
//! Anything that survives is forwarded. Sandboxed events are written to the
//! sandbox sink before their verdict is returned.

mod sink;
mod stats;

use std::collections::HashMap;
use std::io::{self, BufRead, Write};
use std::net::Ipv4Addr;

pub use sink::{sandbox_record_line, SandboxSink, SharedBuffer};
pub use stats::{
    top_offenders, AnalyzerStats, BlacklistStats, LayerCounters, LayerStats, Offender, Stats,
    VerdictTotals,
};

use crate::analyzer::{AnalyzerConfig, AnalyzerError, AnalyzerState, TcpFinding, UdpFinding};
use crate::blacklist::{BlacklistState, CidrSnapshot, FeedSource, DEFAULT_REFRESH_SECS};
use crate::model::{parse_trace_event, EventKind, TraceError, TraceEvent, Verdict, VerdictRecord};
use crate::rate_limit::{LimiterConfig, LimiterTable, RateLimitError};
use crate::waf::{RuleSet, WafOutcome};

pub const LAYER_NAMES: [&str; 4] = ["rate_limit", "blacklist", "header_analyzer", "waf"];

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub limiter: LimiterConfig,
    /// Send rate-limited events to the sandbox instead of dropping them.
    pub drop_to_sandbox: bool,
    pub blacklist_refresh_secs: f64,
    pub analyzer: AnalyzerConfig,
    pub top_n: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            limiter: LimiterConfig::default(),
            drop_to_sandbox: false,
            blacklist_refresh_secs: DEFAULT_REFRESH_SECS,
            analyzer: AnalyzerConfig::default(),
            top_n: 10,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    RateLimit(#[from] RateLimitError),
    #[error(transparent)]
    Analyzer(#[from] AnalyzerError),
    #[error("invalid blacklist refresh interval")]
    InvalidRefresh,
    #[error("event {event_id} is out of order: ts {ts} < {last_ts}")]
    OutOfOrder {
        event_id: u64,
        ts: f64,
        last_ts: f64,
    },
    #[error("sandbox write failed: {0}")]
    Sandbox(#[source] io::Error),
}

pub struct Engine {
    limiter: LimiterTable,
    drop_to_sandbox: bool,
    blacklist: BlacklistState,
    feed: Option<Box<dyn FeedSource>>,
    analyzer: AnalyzerState,
    waf: RuleSet,
    sandbox: SandboxSink,
    stats: Stats,
    blocked_by_src: HashMap<Ipv4Addr, u64>,
    top_n: usize,
    last_ts: Option<f64>,
    last_evict_ts: f64,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("events", &self.stats.events)
            .field("analyzer", &self.analyzer)
            .field("sandbox", &self.sandbox)
            .finish()
    }
}

impl Engine {
    /// Builds an engine with an empty blacklist and no feed.
    pub fn new(
        cfg: EngineConfig,
        waf: RuleSet,
        sandbox: SandboxSink,
    ) -> Result<Engine, EngineError> {
        if !(cfg.blacklist_refresh_secs.is_finite() && cfg.blacklist_refresh_secs > 0.0) {
            return Err(EngineError::InvalidRefresh);
        }
        Ok(Engine {
            limiter: LimiterTable::new(cfg.limiter)?,
            drop_to_sandbox: cfg.drop_to_sandbox,
            blacklist: BlacklistState::new(CidrSnapshot::empty(), cfg.blacklist_refresh_secs),
            feed: None,
            analyzer: AnalyzerState::new(cfg.analyzer)?,
            waf,
            sandbox,
            stats: Stats::default(),
            blocked_by_src: HashMap::new(),
            top_n: cfg.top_n,
            last_ts: None,
            last_evict_ts: 0.0,
        })
    }

    /// Installs the starting blacklist and, optionally, a feed that is
    /// re-fetched every refresh interval of trace time.
    pub fn with_blacklist(
        mut self,
        initial: CidrSnapshot,
        feed: Option<Box<dyn FeedSource>>,
    ) -> Self {
        let interval = self.blacklist.refresh_interval_secs();
        self.blacklist = BlacklistState::new(initial, interval);
        self.feed = feed;
        self
    }

    pub fn blacklist(&self) -> &BlacklistState {
        &self.blacklist
    }

    pub fn analyzer(&self) -> &AnalyzerState {
        &self.analyzer
    }

    pub fn limiter(&self) -> &LimiterTable {
        &self.limiter
    }

    pub fn waf(&self) -> &RuleSet {
        &self.waf
    }

    pub fn sandbox(&self) -> &SandboxSink {
        &self.sandbox
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.sandbox.flush()
    }

    pub(crate) fn note_skipped(&mut self) {
        self.stats.skipped_lines += 1;
    }

    /// Point-in-time copy of the counters.
    pub fn stats_snapshot(&self) -> Stats {
        let mut s = self.stats.clone();
        s.top_offenders = top_offenders(&self.blocked_by_src, self.top_n);
        s.sandbox_reasons = self.sandbox.by_reason().clone();
        let snap = self.blacklist.current();
        s.blacklist = BlacklistStats {
            version: snap.version(),
            entries: snap.len() as u64,
            refresh_errors: self.blacklist.error_count(),
        };
        let c = self.analyzer.counters();
        s.analyzer = AnalyzerStats {
            handshakes_completed: c.handshakes_completed,
            handshakes_expired: c.handshakes_expired,
            table_evictions: c.table_evictions,
            cookie_mode_entries: c.cookie_mode_entries,
            cookies_accepted: c.cookies_accepted,
        };
        s
    }

    fn maybe_refresh(&mut self, now: f64) {
        if let Some(feed) = self.feed.as_mut() {
            if self.blacklist.refresh_due(now) {
                let fetched = feed.fetch();
                self.blacklist = self.blacklist.refresh(fetched, now);
            }
        }
    }

    fn maybe_evict(&mut self, now: f64) {
        if now - self.last_evict_ts >= self.limiter.config().idle_evict_secs {
            self.limiter.evict_idle(now);
            self.last_evict_ts = now;
        }
    }

    fn examine(&mut self, layer: u8, consulted: &mut u8) {
        *consulted |= 1 << (layer - 1);
        self.stats.layers.get_mut(layer).examined += 1;
    }

    fn decide(&mut self, ev: &TraceEvent, consulted: &mut u8) -> Result<Verdict, EngineError> {
        self.examine(1, consulted);
        if !self.limiter.acquire(ev.src_ip, ev.ts)?.is_allowed() {
            return Ok(if self.drop_to_sandbox {
                Verdict::sandbox(1, "rate_limited", None)
            } else {
                Verdict::rate_limited()
            });
        }

        self.maybe_refresh(ev.ts);
        self.examine(2, consulted);
        if self.blacklist.contains(ev.src_ip) {
            return Ok(Verdict::blacklisted());
        }

        match ev.kind() {
            EventKind::Tcp => {
                self.examine(3, consulted);
                let f = self.analyzer.observe_tcp(ev)?;
                if f != TcpFinding::None {
                    return Ok(Verdict::sandbox(3, f.reason(), f.rule_id()));
                }
            }
            EventKind::Udp => {
                self.examine(3, consulted);
                let f = self.analyzer.observe_udp(ev)?;
                if f != UdpFinding::None {
                    return Ok(Verdict::sandbox(3, f.reason(), None));
                }
            }
            EventKind::Http => {
                self.examine(4, consulted);
                let req = ev.http().expect("http event carries a request");
                let d = self.waf.evaluate(req);
                for id in &d.logged {
                    *self.stats.waf_logged.entry(*id).or_insert(0) += 1;
                }
                if let WafOutcome::Match { rule_id, .. } = d.outcome {
                    return Ok(Verdict::sandbox(
                        4,
                        format!("waf_rule_{rule_id}"),
                        Some(rule_id),
                    ));
                }
            }
        }
        Ok(Verdict::forward())
    }

    /// Runs one event through the layers and returns its verdict.
    pub fn process_event(&mut self, ev: &TraceEvent) -> Result<VerdictRecord, EngineError> {
        if let Some(last) = self.last_ts {
            if ev.ts < last {
                return Err(EngineError::OutOfOrder {
                    event_id: ev.event_id,
                    ts: ev.ts,
                    last_ts: last,
                });
            }
        }
        self.last_ts = Some(ev.ts);
        self.maybe_evict(ev.ts);

        let mut consulted = 0u8;
        let verdict = self.decide(ev, &mut consulted)?;
        debug_assert!(
            verdict.layer != 0
                || consulted == 0b0111 && ev.kind() != EventKind::Http
                || consulted == 0b1011 && ev.kind() == EventKind::Http,
            "forwarded event {} skipped a layer",
            ev.event_id
        );

        if verdict.decision == crate::model::Decision::Sandbox {
            self.sandbox
                .capture(ev, &verdict.reason)
                .map_err(EngineError::Sandbox)?;
        }
        if verdict.layer != 0 {
            self.stats.layers.get_mut(verdict.layer).blocked += 1;
            *self.blocked_by_src.entry(ev.src_ip).or_insert(0) += 1;
        }
        self.stats.verdicts.bump(verdict.decision);
        self.stats.events += 1;
        self.stats.first_ts.get_or_insert(ev.ts);
        self.stats.last_ts = Some(ev.ts);

        Ok(VerdictRecord {
            event_id: ev.event_id,
            verdict,
            layers_consulted: consulted,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RunMode {
    /// Abort on the first malformed or out-of-order line.
    #[default]
    Strict,
    /// Skip malformed and out-of-order lines, counting them.
    Lenient,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Parse(#[from] TraceError),
    #[error("line {line}: {source}")]
    Engine {
        line: usize,
        #[source]
        source: EngineError,
    },
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

/// Processes a JSONL trace, writing one verdict line per event.
/// Whitespace-only lines are ignored.
pub fn run_trace(
    engine: &mut Engine,
    input: impl BufRead,
    mut verdicts: impl Write,
    mode: RunMode,
) -> Result<Stats, RunError> {
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev = match parse_trace_event(&line, line_no) {
            Ok(ev) => ev,
            Err(e) if mode == RunMode::Strict => return Err(e.into()),
            Err(_) => {
                engine.note_skipped();
                continue;
            }
        };
        let rec = match engine.process_event(&ev) {
            Ok(rec) => rec,
            Err(EngineError::OutOfOrder { .. }) if mode == RunMode::Lenient => {
                engine.note_skipped();
                continue;
            }
            Err(source) => {
                return Err(RunError::Engine {
                    line: line_no,
                    source,
                })
            }
        };
        let mut out = rec.to_json_line();
        out.push('\n');
        verdicts.write_all(out.as_bytes())?;
    }
    verdicts.flush()?;
    engine.flush()?;
    Ok(engine.stats_snapshot())
}
