//! Dynamic IP blacklisting against a periodically refreshed CIDR feed.
//! Second line of defense.
//!
//! The feed is fetched from a file or an HTTP(S) URL, parsed into an immutable
//! [`CidrSnapshot`], and swapped in whole. A failed fetch keeps serving the
//! previous snapshot.

mod cidr;
mod snapshot;

use std::fmt;
use std::net::Ipv4Addr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::Duration;

pub use cidr::{Cidr, CidrParseError};
pub use snapshot::{parse_feed, CidrSnapshot, SkippedLine};

pub const DEFAULT_REFRESH_SECS: f64 = 300.0;
pub const DEFAULT_FETCH_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, thiserror::Error)]
pub enum FetchError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("fetching {url}: {message}")]
    Http { url: String, message: String },
}

/// Something that can produce the current feed text.
pub trait FeedSource: Send {
    fn fetch(&mut self) -> Result<String, FetchError>;
}

/// Where the feed lives: a local file or an HTTP(S) URL.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FeedLocator {
    Path(PathBuf),
    Url { url: String, timeout: Duration },
}

impl FeedLocator {
    /// `http://` and `https://` strings become URLs; anything else is a path.
    pub fn parse(s: &str) -> FeedLocator {
        if s.starts_with("http://") || s.starts_with("https://") {
            FeedLocator::Url {
                url: s.to_string(),
                timeout: DEFAULT_FETCH_TIMEOUT,
            }
        } else {
            FeedLocator::Path(PathBuf::from(s))
        }
    }

    pub fn fetch(&self) -> Result<String, FetchError> {
        match self {
            FeedLocator::Path(path) => {
                std::fs::read_to_string(path).map_err(|source| FetchError::Io {
                    path: path.clone(),
                    source,
                })
            }
            FeedLocator::Url { url, timeout } => fetch_url(url, *timeout),
        }
    }
}

impl fmt::Display for FeedLocator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeedLocator::Path(p) => write!(f, "{}", p.display()),
            FeedLocator::Url { url, .. } => f.write_str(url),
        }
    }
}

impl FeedSource for FeedLocator {
    fn fetch(&mut self) -> Result<String, FetchError> {
        FeedLocator::fetch(self)
    }
}

fn fetch_url(url: &str, timeout: Duration) -> Result<String, FetchError> {
    let http_err = |message: String| FetchError::Http {
        url: url.to_string(),
        message,
    };
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .build()
        .into();
    let mut resp = agent.get(url).call().map_err(|e| http_err(e.to_string()))?;
    resp.body_mut()
        .read_to_string()
        .map_err(|e| http_err(e.to_string()))
}

/// Blacklist layer state. `current` is always a complete snapshot.
#[derive(Debug, Clone)]
pub struct BlacklistState {
    current: Arc<CidrSnapshot>,
    refresh_interval_secs: f64,
    error_count: u64,
    last_attempt_ts: f64,
}

impl BlacklistState {
    pub fn new(initial: CidrSnapshot, refresh_interval_secs: f64) -> Self {
        let last_attempt_ts = initial.loaded_at_ts();
        BlacklistState {
            current: Arc::new(initial),
            refresh_interval_secs,
            error_count: 0,
            last_attempt_ts,
        }
    }

    pub fn current(&self) -> &Arc<CidrSnapshot> {
        &self.current
    }

    pub fn error_count(&self) -> u64 {
        self.error_count
    }

    pub fn refresh_interval_secs(&self) -> f64 {
        self.refresh_interval_secs
    }

    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        self.current.contains(ip)
    }

    /// True once a full refresh interval has passed since the last attempt.
    pub fn refresh_due(&self, now: f64) -> bool {
        now - self.last_attempt_ts >= self.refresh_interval_secs
    }

    /// Applies a fetch result. Success installs a new snapshot with the next
    /// version number; failure keeps the old one and bumps `error_count`.
    pub fn refresh(&self, fetched: Result<String, FetchError>, now: f64) -> BlacklistState {
        match fetched {
            Ok(text) => {
                let (parsed, _skipped) = parse_feed(&text);
                let next =
                    CidrSnapshot::new(parsed.entries().to_vec(), self.current.version() + 1, now);
                BlacklistState {
                    current: Arc::new(next),
                    refresh_interval_secs: self.refresh_interval_secs,
                    error_count: self.error_count,
                    last_attempt_ts: now,
                }
            }
            Err(_) => BlacklistState {
                current: Arc::clone(&self.current),
                refresh_interval_secs: self.refresh_interval_secs,
                error_count: self.error_count + 1,
                last_attempt_ts: now,
            },
        }
    }
}

/// Snapshot slot shared between one refresher and any number of readers.
///
/// Readers clone the inner `Arc` and then query without holding the lock, so
/// the lock is only ever held for a pointer copy or a pointer swap.
#[derive(Debug, Clone, Default)]
pub struct SharedSnapshot {
    inner: Arc<RwLock<Arc<CidrSnapshot>>>,
}

impl Default for CidrSnapshot {
    fn default() -> Self {
        CidrSnapshot::empty()
    }
}

impl SharedSnapshot {
    pub fn new(snapshot: Arc<CidrSnapshot>) -> Self {
        SharedSnapshot {
            inner: Arc::new(RwLock::new(snapshot)),
        }
    }

    pub fn load(&self) -> Arc<CidrSnapshot> {
        Arc::clone(&self.inner.read().unwrap_or_else(|e| e.into_inner()))
    }

    pub fn store(&self, snapshot: Arc<CidrSnapshot>) {
        *self.inner.write().unwrap_or_else(|e| e.into_inner()) = snapshot;
    }
}
