use super::*;
use crate::model::{compute_udp_checksum, EventBody, TcpInfo, UdpInfo};
use proptest::prelude::*;

const VICTIM: Ipv4Addr = Ipv4Addr::new(192, 0, 2, 10);

fn tcp(ts: f64, src: Ipv4Addr, sport: u16, flags: &str) -> TraceEvent {
    tcp_full(ts, src, sport, flags, 0, 0, b"")
}

fn tcp_full(
    ts: f64,
    src: Ipv4Addr,
    sport: u16,
    flags: &str,
    ack: u32,
    urgent_ptr: u16,
    payload: &[u8],
) -> TraceEvent {
    TraceEvent {
        event_id: 0,
        ts,
        src_ip: src,
        dst_ip: VICTIM,
        src_port: sport,
        dst_port: 80,
        body: EventBody::Tcp(TcpInfo {
            flags: TcpFlags::from_letters(flags).unwrap(),
            seq: 1,
            ack,
            urgent_ptr,
            payload: payload.to_vec(),
        }),
        label: None,
    }
}

fn udp(dport: u16, payload: &[u8]) -> TraceEvent {
    let src = Ipv4Addr::new(10, 0, 0, 1);
    let length = (payload.len() + 8) as u16;
    let checksum = compute_udp_checksum(src, VICTIM, 5353, dport, length, payload).unwrap();
    TraceEvent {
        event_id: 0,
        ts: 0.0,
        src_ip: src,
        dst_ip: VICTIM,
        src_port: 5353,
        dst_port: dport,
        body: EventBody::Udp(UdpInfo {
            length,
            checksum,
            payload: payload.to_vec(),
        }),
        label: None,
    }
}

fn src(n: u8) -> Ipv4Addr {
    Ipv4Addr::new(203, 0, 113, n)
}

fn analyzer() -> AnalyzerState {
    AnalyzerState::new(AnalyzerConfig::default()).unwrap()
}

#[test]
fn config_validation() {
    assert!(AnalyzerConfig::default().validate().is_ok());
    let bad = [
        AnalyzerConfig {
            bucket_count: 0,
            ..Default::default()
        },
        AnalyzerConfig {
            ack_flood_per_source: 0,
            ..Default::default()
        },
        AnalyzerConfig {
            udp_min_len: 7,
            ..Default::default()
        },
        AnalyzerConfig {
            udp_min_len: 100,
            udp_max_len: 50,
            ..Default::default()
        },
        AnalyzerConfig {
            handshake_timeout_secs: 0.0,
            ..Default::default()
        },
        AnalyzerConfig {
            window_secs: f64::NAN,
            ..Default::default()
        },
        AnalyzerConfig {
            conn_table_max_entries: 0,
            ..Default::default()
        },
    ];
    for cfg in bad {
        assert!(
            matches!(cfg.validate(), Err(AnalyzerError::InvalidConfig(_))),
            "{cfg:?}"
        );
    }
}

#[test]
fn benign_handshake() {
    let mut a = analyzer();
    assert_eq!(
        a.observe_tcp(&tcp(1.0, src(1), 4000, "S")).unwrap(),
        TcpFinding::None
    );
    assert_eq!(a.half_open_count(None), 1);
    assert_eq!(
        a.observe_tcp(&tcp(1.1, src(1), 4000, "A")).unwrap(),
        TcpFinding::None
    );
    let flow = tcp(0.0, src(1), 4000, "A").flow_key().unwrap();
    assert_eq!(a.entry(&flow).unwrap().state, HandshakeState::Established);
    assert_eq!(a.half_open_count(None), 0);
    assert_eq!(a.half_open_count(Some(src(1))), 0);
    assert_eq!(
        a.observe_tcp(&tcp_full(1.2, src(1), 4000, "PA", 0, 0, b"GET /"))
            .unwrap(),
        TcpFinding::None
    );
    assert_eq!(
        a.observe_tcp(&tcp(1.3, src(1), 4000, "FA")).unwrap(),
        TcpFinding::None
    );
    assert_eq!(a.table_len(), 0);
    assert_eq!(a.counters().handshakes_completed, 1);
}

#[test]
fn clock_regression_is_an_error() {
    let mut a = analyzer();
    a.observe_tcp(&tcp(2.0, src(1), 1, "S")).unwrap();
    assert!(matches!(
        a.observe_tcp(&tcp(1.0, src(1), 2, "S")),
        Err(AnalyzerError::ClockRegression { .. })
    ));
}

#[test]
fn wrong_kind_rejected() {
    let mut a = analyzer();
    assert!(a.observe_tcp(&udp(53, b"x")).is_err());
    assert!(a.observe_udp(&tcp(0.0, src(1), 1, "S")).is_err());
}

#[test]
fn half_open_counts() {
    let mut a = analyzer();
    for i in 0..100u16 {
        a.observe_tcp(&tcp(f64::from(i) * 0.01, src(1), 1000 + i, "S"))
            .unwrap();
    }
    assert_eq!(a.half_open_count(None), 100);
    assert_eq!(a.half_open_count(Some(src(1))), 100);
    assert_eq!(a.half_open_count(Some(src(2))), 0);
}

#[test]
fn syn_threshold_after_timeout() {
    let mut a = analyzer();
    let mut first_hit = None;
    for i in 0..50u16 {
        let f = a
            .observe_tcp(&tcp(f64::from(i) * 0.01, src(1), 1000 + i, "S"))
            .unwrap();
        if f != TcpFinding::None && first_hit.is_none() {
            first_hit = Some(i);
        }
    }
    assert_eq!(first_hit, Some(49));
    // Timeout elapses: entries expire into the window.
    let f = a.observe_tcp(&tcp(6.0, src(1), 2000, "S")).unwrap();
    assert_eq!(f, TcpFinding::SynHalfOpenExceeded);
    assert_eq!(a.half_open_count(Some(src(1))), 1);
    assert_eq!(a.window_count(src(1), AnomalyClass::SynIncomplete), 50);
    assert_eq!(a.counters().handshakes_expired, 50);
    // Once the window slides past, the source is clean again.
    let f = a.observe_tcp(&tcp(16.0, src(1), 2001, "S")).unwrap();
    assert_eq!(f, TcpFinding::None);
}

#[test]
fn completed_handshakes_never_count() {
    let mut a = analyzer();
    for i in 0..500u16 {
        let t = f64::from(i) * 0.02;
        assert_eq!(
            a.observe_tcp(&tcp(t, src(1), 1000 + i, "S")).unwrap(),
            TcpFinding::None
        );
        assert_eq!(
            a.observe_tcp(&tcp(t + 0.01, src(1), 1000 + i, "A"))
                .unwrap(),
            TcpFinding::None
        );
    }
    assert_eq!(a.half_open_count(None), 0);
}

#[test]
fn ack_flood_on_crossing_packet() {
    let mut a = analyzer();
    let mut hits = Vec::new();
    for i in 0..150u16 {
        let f = a
            .observe_tcp(&tcp(f64::from(i) * 0.005, src(3), 3000 + i, "A"))
            .unwrap();
        if f == TcpFinding::AckFlood {
            hits.push(i);
        }
    }
    // Oracle: bare ACK i is the (i+1)-th in a window that has not slid yet.
    assert_eq!(hits.first(), Some(&99));
    assert_eq!(hits.len(), 51);
}

#[test]
fn rst_psh_urg_thresholds() {
    let cfg = AnalyzerConfig {
        rst_flood_per_source: 3,
        psh_anomaly_per_source: 2,
        urg_anomaly_per_source: 2,
        ..Default::default()
    };
    let mut a = AnalyzerState::new(cfg).unwrap();
    let f: Vec<_> = (0..3)
        .map(|i| {
            a.observe_tcp(&tcp(0.1 * f64::from(i), src(4), 10, "R"))
                .unwrap()
        })
        .collect();
    assert_eq!(
        f,
        [TcpFinding::None, TcpFinding::None, TcpFinding::RstFlood]
    );

    assert_eq!(
        a.observe_tcp(&tcp(1.0, src(5), 10, "P")).unwrap(),
        TcpFinding::None
    );
    assert_eq!(
        a.observe_tcp(&tcp(1.1, src(5), 10, "P")).unwrap(),
        TcpFinding::PshAnomaly
    );

    // URG with ACK and a pointer is fine; zero pointer or missing ACK is not.
    let ok = tcp_full(2.0, src(6), 10, "AU", 0, 5, b"x");
    assert_eq!(a.observe_tcp(&ok).unwrap(), TcpFinding::None);
    assert_eq!(
        a.observe_tcp(&tcp_full(2.1, src(6), 10, "AU", 0, 0, b"x"))
            .unwrap(),
        TcpFinding::None
    );
    assert_eq!(
        a.observe_tcp(&tcp_full(2.2, src(6), 10, "U", 0, 9, b""))
            .unwrap(),
        TcpFinding::UrgAnomaly
    );
}

#[test]
fn signature_beats_everything() {
    let mut a = analyzer();
    let ev = tcp_full(0.0, src(7), 10, "PA", 0, 0, b"GET /?x=;/bin/sh");
    assert_eq!(a.observe_tcp(&ev).unwrap(), TcpFinding::PayloadSignature(1));
    assert_eq!(TcpFinding::PayloadSignature(1).rule_id(), Some(1));
    assert_eq!(
        TcpFinding::PayloadSignature(1).reason(),
        "payload_signature"
    );
    // Without PSH the payload is not inspected.
    let ev = tcp_full(0.1, src(7), 11, "A", 0, 0, b"/bin/sh");
    assert_eq!(a.observe_tcp(&ev).unwrap(), TcpFinding::None);
}

fn cookie_cfg() -> AnalyzerConfig {
    AnalyzerConfig {
        syn_half_open_global: 4,
        syn_half_open_per_source: 1000,
        ..Default::default()
    }
}

#[test]
fn cookie_mode_enter_and_exit() {
    let mut a = AnalyzerState::new(cookie_cfg()).unwrap();
    for i in 0..4u16 {
        a.observe_tcp(&tcp(0.01 * f64::from(i), src(8), 100 + i, "S"))
            .unwrap();
    }
    assert!(a.cookie_mode());
    // Stateless while in cookie mode.
    assert_eq!(
        a.observe_tcp(&tcp(0.1, src(9), 1, "S")).unwrap(),
        TcpFinding::None
    );
    assert_eq!(a.half_open_count(None), 4);

    let flow = tcp(0.0, src(9), 1, "A").flow_key().unwrap();
    let c = make_syn_cookie(DEFAULT_SYNCOOKIE_SECRET, &flow, 0, 2).unwrap();
    let good = tcp_full(0.2, src(9), 1, "A", c.wrapping_add(1), 0, b"");
    assert_eq!(a.observe_tcp(&good).unwrap(), TcpFinding::None);
    assert_eq!(a.entry(&flow).unwrap().state, HandshakeState::Established);
    assert_eq!(a.counters().cookies_accepted, 1);

    let forged = tcp_full(0.3, src(9), 2, "A", c.wrapping_add(1), 0, b"");
    assert_eq!(a.observe_tcp(&forged).unwrap(), TcpFinding::CookieInvalid);

    // Hysteresis: 2 pending is not below half of 4; 1 is.
    a.observe_tcp(&tcp(0.4, src(8), 100, "A")).unwrap();
    a.observe_tcp(&tcp(0.5, src(8), 101, "A")).unwrap();
    assert!(a.cookie_mode());
    a.observe_tcp(&tcp(0.6, src(8), 102, "A")).unwrap();
    a.observe_tcp(&tcp(0.7, src(9), 3, "S")).unwrap();
    assert!(!a.cookie_mode());
    assert_eq!(a.half_open_count(None), 2);
}

#[test]
fn table_eviction_prefers_pending() {
    let cfg = AnalyzerConfig {
        conn_table_max_entries: 3,
        ..Default::default()
    };
    let mut a = AnalyzerState::new(cfg).unwrap();
    a.observe_tcp(&tcp(0.0, src(1), 1, "S")).unwrap();
    a.observe_tcp(&tcp(0.1, src(1), 1, "A")).unwrap();
    a.observe_tcp(&tcp(0.2, src(2), 1, "S")).unwrap();
    a.observe_tcp(&tcp(0.3, src(3), 1, "S")).unwrap();
    a.observe_tcp(&tcp(0.4, src(4), 1, "S")).unwrap();
    assert_eq!(a.table_len(), 3);
    let f2 = tcp(0.0, src(2), 1, "S").flow_key().unwrap();
    let f1 = tcp(0.0, src(1), 1, "S").flow_key().unwrap();
    assert!(a.entry(&f2).is_none());
    assert!(a.entry(&f1).is_some());
    assert_eq!(a.window_count(src(2), AnomalyClass::SynIncomplete), 1);
    // With only established flows left, the oldest goes.
    let cfg = AnalyzerConfig {
        conn_table_max_entries: 1,
        ..Default::default()
    };
    let mut a = AnalyzerState::new(cfg).unwrap();
    a.observe_tcp(&tcp(0.0, src(1), 1, "S")).unwrap();
    a.observe_tcp(&tcp(0.1, src(1), 1, "A")).unwrap();
    a.observe_tcp(&tcp(0.2, src(2), 1, "S")).unwrap();
    assert!(a.entry(&f1).is_none());
    assert_eq!(a.table_len(), 1);
}

#[test]
fn udp_examples() {
    let a = analyzer();
    assert_eq!(a.observe_udp(&udp(53, b"query")).unwrap(), UdpFinding::None);

    let mut short = udp(53, b"");
    if let EventBody::Udp(u) = &mut short.body {
        u.length = 6;
    }
    assert_eq!(a.observe_udp(&short).unwrap(), UdpFinding::SizeViolation);

    let mut mismatch = udp(53, b"abc");
    if let EventBody::Udp(u) = &mut mismatch.body {
        u.length = 20;
    }
    assert_eq!(a.observe_udp(&mismatch).unwrap(), UdpFinding::SizeViolation);

    let big = udp(53, &vec![0u8; 1473]);
    assert_eq!(a.observe_udp(&big).unwrap(), UdpFinding::SizeViolation);

    let mut flipped = udp(53, b"payload");
    if let EventBody::Udp(u) = &mut flipped.body {
        u.payload[3] ^= 0x40;
    }
    assert_eq!(a.observe_udp(&flipped).unwrap(), UdpFinding::BadChecksum);

    if let EventBody::Udp(u) = &mut flipped.body {
        u.checksum = 0;
    }
    assert_eq!(a.observe_udp(&flipped).unwrap(), UdpFinding::None);

    // Port check runs before everything else.
    let mut blocked = udp(1900, b"");
    if let EventBody::Udp(u) = &mut blocked.body {
        u.length = 3;
    }
    assert_eq!(a.observe_udp(&blocked).unwrap(), UdpFinding::BlockedPort);

    let lax = AnalyzerState::new(AnalyzerConfig {
        udp_validate_checksum: false,
        ..Default::default()
    })
    .unwrap();
    if let EventBody::Udp(u) = &mut flipped.body {
        u.checksum = 1;
    }
    assert_eq!(lax.observe_udp(&flipped).unwrap(), UdpFinding::None);
}

#[derive(Debug, Clone)]
enum Step {
    Syn(u8, u16),
    Ack(u8, u16),
    Fin(u8, u16),
}

fn step() -> impl Strategy<Value = (u32, Step)> {
    let s = (0u8..4, 0u16..6);
    (
        1u32..400_000,
        prop_oneof![
            s.clone().prop_map(|(a, p)| Step::Syn(a, p)),
            s.clone().prop_map(|(a, p)| Step::Ack(a, p)),
            s.prop_map(|(a, p)| Step::Fin(a, p)),
        ],
    )
}

fn to_event(t_us: u64, s: &Step) -> TraceEvent {
    let ts = t_us as f64 / 1e6;
    match *s {
        Step::Syn(a, p) => tcp(ts, src(a), p, "S"),
        Step::Ack(a, p) => tcp(ts, src(a), p, "A"),
        Step::Fin(a, p) => tcp(ts, src(a), p, "FA"),
    }
}

proptest! {
    /// SYN-started flows that never complete end up either pending or in
    /// the incomplete window, as long as nothing ages out of the window.
    #[test]
    fn conservation(steps in prop::collection::vec(step(), 1..120)) {
        let cfg = AnalyzerConfig {
            window_secs: 1000.0,
            bucket_count: 10,
            syn_half_open_global: 100_000,
            handshake_timeout_secs: 0.5,
            ..Default::default()
        };
        let mut a = AnalyzerState::new(cfg).unwrap();
        let mut t = 0u64;
        let mut started = [0i64; 4];
        let mut completed = [0i64; 4];
        for (dt, s) in &steps {
            t += u64::from(*dt);
            let ev = to_event(t, s);
            let flow = ev.flow_key().unwrap();
            let live = a.entry(&flow).is_some_and(|e| {
                e.state == HandshakeState::SynSeen && e.last_us + a.timeout_us >= t
            });
            match *s {
                Step::Syn(x, _) if !live => started[x as usize] += 1,
                Step::Ack(x, _) | Step::Fin(x, _) if live => completed[x as usize] += 1,
                _ => {}
            }
            a.observe_tcp(&ev).unwrap();
        }
        for x in 0..4u8 {
            let in_table = a.half_open_count(Some(src(x))) as i64;
            let in_window = i64::from(a.window_count(src(x), AnomalyClass::SynIncomplete));
            prop_assert_eq!(in_window, started[x as usize] - completed[x as usize] - in_table);
        }
        let recount = a.entries().filter(|e| e.state == HandshakeState::SynSeen).count();
        prop_assert_eq!(a.half_open_count(None), recount);
    }

    #[test]
    fn table_bounded(steps in prop::collection::vec(step(), 1..200), cap in 1usize..6) {
        let cfg = AnalyzerConfig { conn_table_max_entries: cap, ..Default::default() };
        let mut a = AnalyzerState::new(cfg).unwrap();
        let mut t = 0u64;
        for (dt, s) in &steps {
            t += u64::from(*dt);
            a.observe_tcp(&to_event(t, s)).unwrap();
            prop_assert!(a.table_len() <= cap);
        }
    }

    /// Dropping everything older than the window does not change a
    /// bare-ACK finding.
    #[test]
    fn window_correctness(gaps in prop::collection::vec(1u32..300_000, 1..300)) {
        let cfg = AnalyzerConfig { ack_flood_per_source: 20, ..Default::default() };
        let mut times = Vec::new();
        let mut t = 0u64;
        for g in &gaps {
            t += u64::from(*g);
            times.push(t);
        }
        let run = |ts: &[u64]| {
            let mut a = AnalyzerState::new(cfg.clone()).unwrap();
            let mut last = TcpFinding::None;
            for (i, t) in ts.iter().enumerate() {
                last = a
                    .observe_tcp(&tcp(*t as f64 / 1e6, src(1), i as u16, "A"))
                    .unwrap();
            }
            last
        };
        let full = run(&times);
        let end = *times.last().unwrap();
        let bucket = 1_000_000u64;
        // Keep only events in buckets that can still count at `end`.
        let floor = (end / bucket).saturating_sub(9) * bucket;
        let recent: Vec<u64> = times.iter().copied().filter(|t| *t >= floor).collect();
        prop_assert_eq!(full, run(&recent));
    }
}
