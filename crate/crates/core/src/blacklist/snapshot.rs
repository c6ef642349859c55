use std::net::Ipv4Addr;

use super::cidr::{Cidr, CidrParseError};

/// Immutable blacklist contents.
///
/// Besides the entry list, the snapshot keeps the union of all prefixes as
/// sorted, disjoint, inclusive address ranges so a lookup is one binary search.
#[derive(Debug, Clone, PartialEq)]
pub struct CidrSnapshot {
    entries: Vec<Cidr>,
    ranges: Vec<(u32, u32)>,
    version: u64,
    loaded_at_ts: f64,
}

impl CidrSnapshot {
    pub fn empty() -> Self {
        CidrSnapshot::new(Vec::new(), 0, 0.0)
    }

    pub fn new(mut entries: Vec<Cidr>, version: u64, loaded_at_ts: f64) -> Self {
        entries.sort_unstable();
        entries.dedup();

        let mut spans: Vec<(u32, u32)> = entries.iter().map(|c| (c.first(), c.last())).collect();
        spans.sort_unstable();
        let mut ranges: Vec<(u32, u32)> = Vec::with_capacity(spans.len());
        for (lo, hi) in spans {
            match ranges.last_mut() {
                Some((_, prev_hi)) if lo <= prev_hi.saturating_add(1) => {
                    *prev_hi = (*prev_hi).max(hi);
                }
                _ => ranges.push((lo, hi)),
            }
        }

        CidrSnapshot {
            entries,
            ranges,
            version,
            loaded_at_ts,
        }
    }

    pub fn entries(&self) -> &[Cidr] {
        &self.entries
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn loaded_at_ts(&self) -> f64 {
        self.loaded_at_ts
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// True iff some entry covers `ip`. O(log n).
    pub fn contains(&self, ip: Ipv4Addr) -> bool {
        let ip = u32::from(ip);
        let idx = self.ranges.partition_point(|&(lo, _)| lo <= ip);
        idx > 0 && ip <= self.ranges[idx - 1].1
    }

    /// Feed text for this snapshot: one normalized prefix per line.
    pub fn to_feed(&self) -> String {
        let mut out = String::with_capacity(self.entries.len() * 19);
        for c in &self.entries {
            out.push_str(&c.to_string());
            out.push('\n');
        }
        out
    }
}

/// A feed line that was not a valid prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedLine {
    pub line_no: usize,
    pub reason: CidrParseError,
    pub text: String,
}

/// Parses feed text into a snapshot (version 0, loaded at 0.0).
///
/// One prefix or bare address per line. Blank lines and `#` comment lines are
/// ignored; anything after a `#` or `;` on a line is treated as a comment.
/// Invalid lines are reported and skipped, never fatal.
pub fn parse_feed(text: &str) -> (CidrSnapshot, Vec<SkippedLine>) {
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let content = raw.split(['#', ';']).next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        match content.parse::<Cidr>() {
            Ok(c) => entries.push(c),
            Err(reason) => skipped.push(SkippedLine {
                line_no: i + 1,
                reason,
                text: raw.to_string(),
            }),
        }
    }
    (CidrSnapshot::new(entries, 0, 0.0), skipped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cidrs(list: &[&str]) -> Vec<Cidr> {
        list.iter().map(|s| s.parse().unwrap()).collect()
    }

    #[test]
    fn feed_examples() {
        let (s, skipped) = parse_feed("10.0.0.0/8\n# c\n192.0.2.7\n");
        assert_eq!(
            s.entries(),
            cidrs(&["10.0.0.0/8", "192.0.2.7/32"]).as_slice()
        );
        assert!(skipped.is_empty());

        let (s, _) = parse_feed("10.0.1.0/8");
        assert_eq!(s.entries(), cidrs(&["10.0.0.0/8"]).as_slice());

        let (s, skipped) = parse_feed("300.1.1.1/8\n10.0.0.0/8");
        assert_eq!(s.len(), 1);
        assert_eq!(skipped.len(), 1);
        assert_eq!(
            (skipped[0].line_no, skipped[0].reason),
            (1, CidrParseError::BadAddress)
        );
    }

    #[test]
    fn duplicates_and_trailing_comments() {
        let (s, skipped) = parse_feed("1.2.3.0/24 ; SBL1\n1.2.3.9/24\n\n  5.6.7.8 # host\n");
        assert_eq!(s.entries(), cidrs(&["1.2.3.0/24", "5.6.7.8/32"]).as_slice());
        assert!(skipped.is_empty());
    }

    #[test]
    fn garbage_yields_empty_snapshot() {
        let (s, skipped) = parse_feed("hello\nworld/8\n\u{0}\n");
        assert!(s.is_empty());
        assert_eq!(skipped.len(), 3);
        assert!(!s.contains(Ipv4Addr::new(1, 2, 3, 4)));
    }

    #[test]
    fn contains_examples() {
        let s = CidrSnapshot::new(cidrs(&["10.0.0.0/8"]), 1, 0.0);
        assert!(s.contains(Ipv4Addr::new(10, 1, 2, 3)));
        let s = CidrSnapshot::new(cidrs(&["192.168.1.0/24"]), 1, 0.0);
        assert!(!s.contains(Ipv4Addr::new(192, 168, 2, 5)));
        let s = CidrSnapshot::new(cidrs(&["0.0.0.0/0"]), 1, 0.0);
        assert!(s.contains(Ipv4Addr::new(255, 255, 255, 255)));
        let s = CidrSnapshot::new(cidrs(&["255.255.255.255/32", "0.0.0.0/32"]), 1, 0.0);
        assert!(s.contains(Ipv4Addr::new(255, 255, 255, 255)));
        assert!(s.contains(Ipv4Addr::new(0, 0, 0, 0)));
        assert!(!s.contains(Ipv4Addr::new(0, 0, 0, 1)));
    }

    fn arb_cidr() -> impl Strategy<Value = Cidr> {
        (any::<u32>(), 0u8..=32).prop_map(|(a, l)| Cidr::new(a.into(), l).unwrap())
    }

    proptest! {
        #[test]
        fn contains_matches_linear_scan(
            entries in proptest::collection::vec(arb_cidr(), 0..40),
            probes in proptest::collection::vec(any::<u32>(), 1..200),
        ) {
            let s = CidrSnapshot::new(entries.clone(), 1, 0.0);
            for p in probes {
                let ip = Ipv4Addr::from(p);
                let brute = entries.iter().any(|c| u32::from(ip) & (u64::MAX << (32 - u32::from(c.prefix_len()))) as u32 == c.first());
                prop_assert_eq!(s.contains(ip), brute);
            }
            for c in &entries {
                prop_assert!(s.contains(c.first().into()));
                prop_assert!(s.contains(c.last().into()));
            }
        }

        #[test]
        fn feed_roundtrip(entries in proptest::collection::vec(arb_cidr(), 0..40)) {
            let s = CidrSnapshot::new(entries, 0, 0.0);
            let (back, skipped) = parse_feed(&s.to_feed());
            prop_assert!(skipped.is_empty());
            prop_assert_eq!(back.entries(), s.entries());
        }
    }
}
