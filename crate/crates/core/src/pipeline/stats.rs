use std::collections::{BTreeMap, HashMap};
use std::net::Ipv4Addr;

use serde::Serialize;

use crate::model::Decision;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LayerCounters {
    pub examined: u64,
    pub blocked: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LayerStats {
    pub rate_limit: LayerCounters,
    pub blacklist: LayerCounters,
    pub header_analyzer: LayerCounters,
    pub waf: LayerCounters,
}

impl LayerStats {
    pub fn get(&self, layer: u8) -> &LayerCounters {
        match layer {
            1 => &self.rate_limit,
            2 => &self.blacklist,
            3 => &self.header_analyzer,
            4 => &self.waf,
            _ => panic!("no layer {layer}"),
        }
    }

    pub(crate) fn get_mut(&mut self, layer: u8) -> &mut LayerCounters {
        match layer {
            1 => &mut self.rate_limit,
            2 => &mut self.blacklist,
            3 => &mut self.header_analyzer,
            4 => &mut self.waf,
            _ => panic!("no layer {layer}"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct VerdictTotals {
    pub forward: u64,
    pub drop_rate_limited: u64,
    pub reject_blacklisted: u64,
    pub sandbox: u64,
}

impl VerdictTotals {
    pub fn get(&self, d: Decision) -> u64 {
        match d {
            Decision::Forward => self.forward,
            Decision::DropRateLimited => self.drop_rate_limited,
            Decision::RejectBlacklisted => self.reject_blacklisted,
            Decision::Sandbox => self.sandbox,
        }
    }

    pub(crate) fn bump(&mut self, d: Decision) {
        match d {
            Decision::Forward => self.forward += 1,
            Decision::DropRateLimited => self.drop_rate_limited += 1,
            Decision::RejectBlacklisted => self.reject_blacklisted += 1,
            Decision::Sandbox => self.sandbox += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.forward + self.drop_rate_limited + self.reject_blacklisted + self.sandbox
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Offender {
    pub src_ip: Ipv4Addr,
    pub blocked: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BlacklistStats {
    pub version: u64,
    pub entries: u64,
    pub refresh_errors: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct AnalyzerStats {
    pub handshakes_completed: u64,
    pub handshakes_expired: u64,
    pub table_evictions: u64,
    pub cookie_mode_entries: u64,
    pub cookies_accepted: u64,
}

/// Run summary. Field order is the JSON key order.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Stats {
    pub events: u64,
    pub skipped_lines: u64,
    pub first_ts: Option<f64>,
    pub last_ts: Option<f64>,
    pub verdicts: VerdictTotals,
    pub layers: LayerStats,
    pub sandbox_reasons: BTreeMap<String, u64>,
    pub waf_logged: BTreeMap<u64, u64>,
    pub top_offenders: Vec<Offender>,
    pub blacklist: BlacklistStats,
    pub analyzer: AnalyzerStats,
}

impl Stats {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats always serialize")
    }
}

/// Sources with the most non-forward verdicts; ties go to the lower address.
pub fn top_offenders(blocked: &HashMap<Ipv4Addr, u64>, n: usize) -> Vec<Offender> {
    let mut all: Vec<Offender> = blocked
        .iter()
        .map(|(ip, c)| Offender {
            src_ip: *ip,
            blocked: *c,
        })
        .collect();
    all.sort_by(|a, b| b.blocked.cmp(&a.blocked).then(a.src_ip.cmp(&b.src_ip)));
    all.truncate(n);
    all
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_stats_json_shape() {
        let s = Stats::default();
        let v: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys.len(), 11);
        assert_eq!(v["verdicts"]["forward"], 0);
        assert_eq!(v["layers"]["waf"]["examined"], 0);
        assert!(v["first_ts"].is_null());
    }

    #[test]
    fn offender_ordering() {
        let ip = |d| Ipv4Addr::new(10, 0, 0, d);
        let m: HashMap<_, _> = [(ip(3), 5), (ip(1), 5), (ip(2), 9), (ip(4), 1)].into();
        let top = top_offenders(&m, 3);
        let got: Vec<_> = top.iter().map(|o| (o.src_ip, o.blocked)).collect();
        assert_eq!(got, [(ip(2), 9), (ip(1), 5), (ip(3), 5)]);
    }
}
