//! `key = value` configuration with dotted keys.
//!
//! Precedence, lowest first: built-in defaults, the config file, `--set`
//! overrides. Unknown keys are errors.

use std::collections::BTreeSet;
use std::fmt;
use std::path::PathBuf;
use std::time::Duration;

use ddosgate_core::blacklist::FeedLocator;
use ddosgate_core::pipeline::EngineConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub engine: EngineConfig,
    pub blacklist_path: Option<PathBuf>,
    pub blacklist_url: Option<String>,
    pub blacklist_timeout_secs: f64,
    pub signatures_path: Option<PathBuf>,
    pub ruleset_path: Option<PathBuf>,
    pub sandbox_log_path: Option<PathBuf>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            engine: EngineConfig::default(),
            blacklist_path: None,
            blacklist_url: None,
            blacklist_timeout_secs: 10.0,
            signatures_path: None,
            ruleset_path: None,
            sandbox_log_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    /// Line in the config file; `None` for command-line overrides.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "config line {l}: {}", self.message),
            None => write!(f, "config override: {}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Every recognised key, in documentation order.
pub const KEYS: &[&str] = &[
    "rate.rps",
    "rate.burst",
    "rate.idle_evict_secs",
    "rate.drop_to_sandbox",
    "blacklist.path",
    "blacklist.url",
    "blacklist.refresh_secs",
    "blacklist.timeout_secs",
    "tcp.window_secs",
    "tcp.bucket_count",
    "tcp.half_open_per_source",
    "tcp.half_open_global",
    "tcp.ack_flood_per_source",
    "tcp.rst_flood_per_source",
    "tcp.psh_anomaly_per_source",
    "tcp.urg_anomaly_per_source",
    "tcp.handshake_timeout_secs",
    "tcp.conn_table_max",
    "tcp.syncookie_secret",
    "tcp.signatures_path",
    "udp.min_len",
    "udp.max_len",
    "udp.validate_checksum",
    "udp.blocked_ports",
    "waf.ruleset_path",
    "sandbox.log_path",
    "stats.top_n",
];

fn num<T: std::str::FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("invalid number {v:?}"))
}

fn float(v: &str) -> Result<f64, String> {
    let x: f64 = num(v)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("invalid number {v:?}"))
    }
}

fn boolean(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("invalid boolean {v:?}")),
    }
}

fn hex_u64(v: &str) -> Result<u64, String> {
    let digits = v
        .strip_prefix("0x")
        .or_else(|| v.strip_prefix("0X"))
        .unwrap_or(v);
    if digits.is_empty() || digits.len() > 16 {
        return Err(format!("invalid hex secret {v:?}"));
    }
    u64::from_str_radix(digits, 16).map_err(|_| format!("invalid hex secret {v:?}"))
}

fn ports(v: &str) -> Result<BTreeSet<u16>, String> {
    v.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| num::<u16>(p).map_err(|_| format!("invalid port {p:?}")))
        .collect()
}

fn unknown_key(key: &str) -> String {
    let section = key.split_once('.').map_or(key, |(s, _)| s);
    let near: Vec<&str> = KEYS
        .iter()
        .copied()
        .filter(|k| k.split_once('.').is_some_and(|(s, _)| s == section))
        .collect();
    if near.is_empty() {
        format!("unknown key {key:?}")
    } else {
        format!("unknown key {key:?} (known: {})", near.join(", "))
    }
}

fn opt_path(v: &str) -> Option<PathBuf> {
    (!v.is_empty()).then(|| PathBuf::from(v))
}

impl Config {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        let e = &mut self.engine;
        let a = &mut e.analyzer;
        match key {
            "rate.rps" => e.limiter.rps = float(v)?,
            "rate.burst" => e.limiter.burst = num(v)?,
            "rate.idle_evict_secs" => e.limiter.idle_evict_secs = float(v)?,
            "rate.drop_to_sandbox" => e.drop_to_sandbox = boolean(v)?,
            "blacklist.path" => self.blacklist_path = opt_path(v),
            "blacklist.url" => self.blacklist_url = (!v.is_empty()).then(|| v.to_owned()),
            "blacklist.refresh_secs" => e.blacklist_refresh_secs = float(v)?,
            "blacklist.timeout_secs" => self.blacklist_timeout_secs = float(v)?,
            "tcp.window_secs" => a.window_secs = float(v)?,
            "tcp.bucket_count" => a.bucket_count = num(v)?,
            "tcp.half_open_per_source" => a.syn_half_open_per_source = num(v)?,
            "tcp.half_open_global" => a.syn_half_open_global = num(v)?,
            "tcp.ack_flood_per_source" => a.ack_flood_per_source = num(v)?,
            "tcp.rst_flood_per_source" => a.rst_flood_per_source = num(v)?,
            "tcp.psh_anomaly_per_source" => a.psh_anomaly_per_source = num(v)?,
            "tcp.urg_anomaly_per_source" => a.urg_anomaly_per_source = num(v)?,
            "tcp.handshake_timeout_secs" => a.handshake_timeout_secs = float(v)?,
            "tcp.conn_table_max" => a.conn_table_max_entries = num(v)?,
            "tcp.syncookie_secret" => a.syncookie_secret = hex_u64(v)?,
            "tcp.signatures_path" => self.signatures_path = opt_path(v),
            "udp.min_len" => a.udp_min_len = num(v)?,
            "udp.max_len" => a.udp_max_len = num(v)?,
            "udp.validate_checksum" => a.udp_validate_checksum = boolean(v)?,
            "udp.blocked_ports" => a.udp_blocked_ports = ports(v)?,
            "waf.ruleset_path" => self.ruleset_path = opt_path(v),
            "sandbox.log_path" => self.sandbox_log_path = opt_path(v),
            "stats.top_n" => e.top_n = num(v)?,
            _ => return Err(unknown_key(key)),
        }
        Ok(())
    }

    /// Applies a config file on top of the current values.
    pub fn apply_file(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| ConfigError {
                line: Some(i + 1),
                message,
            };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            self.set(k.trim(), v).map_err(err)?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), ConfigError> {
        let err = |message: String| ConfigError {
            line: None,
            message,
        };
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, got {kv:?}")))?;
        self.set(k.trim(), v).map_err(err)
    }

    /// Checks cross-field constraints that single keys cannot.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |m: &str| ConfigError {
            line: None,
            message: m.to_owned(),
        };
        if self.blacklist_path.is_some() && self.blacklist_url.is_some() {
            return Err(err("set only one of blacklist.path and blacklist.url"));
        }
        if !(self.blacklist_timeout_secs.is_finite() && self.blacklist_timeout_secs > 0.0) {
            return Err(err("blacklist.timeout_secs must be > 0"));
        }
        self.engine
            .limiter
            .validate()
            .map_err(|e| err(&e.to_string()))?;
        self.engine
            .analyzer
            .validate()
            .map_err(|e| err(&e.to_string()))?;
        if !(self.engine.blacklist_refresh_secs.is_finite()
            && self.engine.blacklist_refresh_secs > 0.0)
        {
            return Err(err("blacklist.refresh_secs must be > 0"));
        }
        Ok(())
    }

    pub fn feed_locator(&self) -> Option<FeedLocator> {
        if let Some(url) = &self.blacklist_url {
            return Some(FeedLocator::Url {
                url: url.clone(),
                timeout: Duration::from_secs_f64(self.blacklist_timeout_secs),
            });
        }
        self.blacklist_path.clone().map(FeedLocator::Path)
    }
}
