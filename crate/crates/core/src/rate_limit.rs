//! Per-source token buckets. First line of defense.
//!
//! Every source IP owns one bucket of capacity `burst` that refills
//! continuously at `rps` tokens per second. A first-contact source starts
//! with a full bucket, so it may send `burst` events back to back.

use std::collections::HashMap;
use std::net::Ipv4Addr;

/// Slack for float round-off when the refill lands exactly on a whole token.
const TOKEN_EPSILON: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct LimiterConfig {
    /// Refill rate in tokens per second.
    pub rps: f64,
    /// Bucket capacity in tokens.
    pub burst: u32,
    /// Buckets idle for longer than this are discarded by [`LimiterTable::evict_idle`].
    pub idle_evict_secs: f64,
}

impl Default for LimiterConfig {
    fn default() -> Self {
        LimiterConfig {
            rps: 5.0,
            burst: 10,
            idle_evict_secs: 60.0,
        }
    }
}

impl LimiterConfig {
    pub fn validate(&self) -> Result<(), RateLimitError> {
        if !(self.rps.is_finite() && self.rps > 0.0) {
            return Err(RateLimitError::InvalidConfig("rps must be > 0"));
        }
        if self.burst < 1 {
            return Err(RateLimitError::InvalidConfig("burst must be >= 1"));
        }
        if !(self.idle_evict_secs.is_finite() && self.idle_evict_secs > 0.0) {
            return Err(RateLimitError::InvalidConfig("idle_evict_secs must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RateLimitError {
    #[error("invalid limiter config: {0}")]
    InvalidConfig(&'static str),
    #[error("clock regression for {src}: now {now} < last update {last}")]
    ClockRegression { src: Ipv4Addr, now: f64, last: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceBucket {
    pub tokens: f64,
    pub last_update_ts: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateDecision {
    Allowed { tokens_remaining: f64 },
    Limited { retry_after_secs: f64 },
}

impl RateDecision {
    pub fn is_allowed(&self) -> bool {
        matches!(self, RateDecision::Allowed { .. })
    }
}

#[derive(Debug, Clone)]
pub struct LimiterTable {
    config: LimiterConfig,
    buckets: HashMap<Ipv4Addr, SourceBucket>,
}

impl LimiterTable {
    pub fn new(config: LimiterConfig) -> Result<Self, RateLimitError> {
        config.validate()?;
        Ok(LimiterTable {
            config,
            buckets: HashMap::new(),
        })
    }

    pub fn config(&self) -> &LimiterConfig {
        &self.config
    }

    pub fn bucket(&self, src: Ipv4Addr) -> Option<&SourceBucket> {
        self.buckets.get(&src)
    }

    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }

    /// Refills `src`'s bucket up to `now` and tries to take one token.
    pub fn acquire(&mut self, src: Ipv4Addr, now: f64) -> Result<RateDecision, RateLimitError> {
        let burst = f64::from(self.config.burst);
        let rps = self.config.rps;
        let bucket = self.buckets.entry(src).or_insert(SourceBucket {
            tokens: burst,
            last_update_ts: now,
        });
        if now < bucket.last_update_ts {
            return Err(RateLimitError::ClockRegression {
                src,
                now,
                last: bucket.last_update_ts,
            });
        }
        let elapsed = now - bucket.last_update_ts;
        bucket.tokens = (bucket.tokens + elapsed * rps).min(burst);
        bucket.last_update_ts = now;

        if bucket.tokens >= 1.0 - TOKEN_EPSILON {
            bucket.tokens = (bucket.tokens - 1.0).max(0.0);
            Ok(RateDecision::Allowed {
                tokens_remaining: bucket.tokens,
            })
        } else {
            Ok(RateDecision::Limited {
                retry_after_secs: (1.0 - bucket.tokens) / rps,
            })
        }
    }

    /// Drops buckets idle for strictly longer than `idle_evict_secs`.
    pub fn evict_idle(&mut self, now: f64) -> usize {
        let limit = self.config.idle_evict_secs;
        let before = self.buckets.len();
        self.buckets.retain(|_, b| now - b.last_update_ts <= limit);
        before - self.buckets.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const A: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 1);
    const B: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 2);
    const C: Ipv4Addr = Ipv4Addr::new(10, 0, 0, 3);

    fn table() -> LimiterTable {
        LimiterTable::new(LimiterConfig::default()).unwrap()
    }

    /// Reference bucket: integer milli-tokens advanced in 1 ms steps.
    struct MsOracle {
        millitokens: u64,
        cap: u64,
        per_ms: u64,
        at_ms: u64,
    }

    impl MsOracle {
        fn new(rps_milli_per_ms: u64, burst: u64) -> Self {
            MsOracle {
                millitokens: burst * 1000,
                cap: burst * 1000,
                per_ms: rps_milli_per_ms,
                at_ms: 0,
            }
        }
        fn request(&mut self, t_ms: u64) -> bool {
            while self.at_ms < t_ms {
                self.millitokens = (self.millitokens + self.per_ms).min(self.cap);
                self.at_ms += 1;
            }
            if self.millitokens >= 1000 {
                self.millitokens -= 1000;
                true
            } else {
                false
            }
        }
    }

    #[test]
    fn eleven_instantaneous_requests() {
        let mut t = table();
        let mut oracle = MsOracle::new(5, 10);
        let got: Vec<bool> = (0..11)
            .map(|_| t.acquire(A, 0.0).unwrap().is_allowed())
            .collect();
        let want: Vec<bool> = (0..11).map(|_| oracle.request(0)).collect();
        assert_eq!(got, want);
        assert_eq!(got.iter().filter(|a| **a).count(), 10);
        assert!(!got[10]);
    }

    #[test]
    fn empty_bucket_retry_after() {
        let mut t = table();
        for _ in 0..10 {
            t.acquire(A, 0.0).unwrap();
        }
        match t.acquire(A, 0.0).unwrap() {
            RateDecision::Limited { retry_after_secs } => {
                assert!((retry_after_secs - 0.2).abs() < 1e-12)
            }
            d => panic!("expected limited, got {d:?}"),
        }
    }

    #[test]
    fn one_second_idle_refills_five() {
        let mut t = table();
        let mut oracle = MsOracle::new(5, 10);
        for _ in 0..10 {
            t.acquire(A, 0.0).unwrap();
            oracle.request(0);
        }
        let got: Vec<bool> = (0..6)
            .map(|_| t.acquire(A, 1.0).unwrap().is_allowed())
            .collect();
        let want: Vec<bool> = (0..6).map(|_| oracle.request(1000)).collect();
        assert_eq!(got, want);
        assert_eq!(got, vec![true, true, true, true, true, false]);
    }

    #[test]
    fn clock_regression_is_an_error() {
        let mut t = table();
        t.acquire(A, 5.0).unwrap();
        assert!(matches!(
            t.acquire(A, 4.0),
            Err(RateLimitError::ClockRegression { .. })
        ));
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            LimiterConfig {
                rps: 0.0,
                ..Default::default()
            },
            LimiterConfig {
                burst: 0,
                ..Default::default()
            },
            LimiterConfig {
                idle_evict_secs: 0.0,
                ..Default::default()
            },
        ] {
            assert!(LimiterTable::new(cfg).is_err());
        }
    }

    #[test]
    fn eviction() {
        let mut t = table();
        assert_eq!(t.evict_idle(100.0), 0);

        t.acquire(A, 0.0).unwrap();
        assert_eq!(t.evict_idle(120.0), 1);
        assert!(t.is_empty());

        t.acquire(A, 0.0).unwrap();
        t.acquire(B, 50.0).unwrap();
        t.acquire(C, 55.0).unwrap();
        let before_b = *t.bucket(B).unwrap();
        assert_eq!(t.evict_idle(61.0), 1);
        assert!(t.bucket(A).is_none());
        assert_eq!(*t.bucket(B).unwrap(), before_b);
        assert!(t.bucket(C).is_some());

        // A re-enters with a full bucket.
        for _ in 0..10 {
            assert!(t.acquire(A, 61.0).unwrap().is_allowed());
        }
    }

    proptest! {
        #[test]
        fn per_source_independence(
            steps in proptest::collection::vec((any::<bool>(), 0u32..300), 1..200)
        ) {
            let mut mixed = table();
            let mut alone = table();
            let mut now = 0.0;
            let mut a_mixed = Vec::new();
            let mut a_alone = Vec::new();
            for (is_a, gap_ms) in steps {
                now += f64::from(gap_ms) / 1000.0;
                if is_a {
                    a_mixed.push(mixed.acquire(A, now).unwrap());
                    a_alone.push(alone.acquire(A, now).unwrap());
                } else {
                    mixed.acquire(B, now).unwrap();
                }
            }
            prop_assert_eq!(a_mixed, a_alone);
        }

        #[test]
        fn tokens_stay_in_range_and_window_bound_holds(
            gaps in proptest::collection::vec(0u32..400, 1..300),
            rps in 1u32..20,
            burst in 1u32..20,
        ) {
            let cfg = LimiterConfig { rps: f64::from(rps), burst, idle_evict_secs: 60.0 };
            let mut t = LimiterTable::new(cfg).unwrap();
            let mut now = 0.0;
            let mut allowed_at = Vec::new();
            for g in gaps {
                now += f64::from(g) / 1000.0;
                if t.acquire(A, now).unwrap().is_allowed() {
                    allowed_at.push(now);
                }
                let b = t.bucket(A).unwrap();
                prop_assert!(b.tokens >= 0.0 && b.tokens <= f64::from(burst));
            }
            for (i, &start) in allowed_at.iter().enumerate() {
                for (j, &end) in allowed_at.iter().enumerate().skip(i) {
                    let n = (j - i + 1) as f64;
                    prop_assert!(n <= f64::from(burst) + f64::from(rps) * (end - start) + 1e-6);
                }
            }
        }

        #[test]
        fn deterministic(gaps in proptest::collection::vec(0u32..400, 1..100)) {
            let mut x = table();
            let mut y = table();
            let mut now = 0.0;
            for g in gaps {
                now += f64::from(g) / 1000.0;
                prop_assert_eq!(x.acquire(A, now).unwrap(), y.acquire(A, now).unwrap());
            }
        }
    }
}
