//! Layered mitigation of low-rate DDoS traffic.
//!
//! Every event in a trace passes the layers in a fixed order until one of
//! them renders a verdict:
//!
//! 1. [`rate_limit`]: per-source token buckets.
//! 2. [`blacklist`]: CIDR reputation lookups against a refreshable feed.
//! 3. [`analyzer`]: TCP/UDP header checks for TCP and UDP events.
//! 4. [`waf`]: request rules for HTTP events.
//!
//! [`pipeline`] wires the layers together and [`trafficgen`] produces
//! seeded, labeled traces to drive them.

pub mod analyzer;
pub mod blacklist;
pub mod model;
pub mod pipeline;
pub mod rate_limit;
pub mod trafficgen;
pub mod waf;

pub use model::{
    Decision, EventBody, EventKind, FlowKey, HttpInfo, Proto, TcpFlags, TcpInfo, TraceEvent,
    UdpInfo, Verdict, VerdictRecord,
};
pub use pipeline::{run_trace, Engine, EngineConfig, RunMode, Stats};
