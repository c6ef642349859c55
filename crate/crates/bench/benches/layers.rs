use std::hint::black_box;
use std::net::Ipv4Addr;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use ddosgate_bench::{of_kind, scenario_events};
use ddosgate_core::analyzer::{AnalyzerConfig, AnalyzerState, UdpFinding};
use ddosgate_core::blacklist::{Cidr, CidrSnapshot};
use ddosgate_core::model::{compute_udp_checksum, EventKind};
use ddosgate_core::rate_limit::{LimiterConfig, LimiterTable};
use ddosgate_core::trafficgen::{ScenarioName, SplitMix64};
use ddosgate_core::waf::default_ruleset;

fn rate_limit(c: &mut Criterion) {
    let mut g = c.benchmark_group("rate_limit");
    g.throughput(Throughput::Elements(10_000));
    g.bench_function("acquire_1000_sources", |b| {
        b.iter_batched_ref(
            || LimiterTable::new(LimiterConfig::default()).unwrap(),
            |t| {
                for i in 0..10_000u32 {
                    let src = Ipv4Addr::from(0x0A00_0000 | (i % 1000));
                    black_box(t.acquire(src, f64::from(i) * 0.001).unwrap());
                }
            },
            BatchSize::SmallInput,
        )
    });
    g.finish();
}

fn blacklist(c: &mut Criterion) {
    let mut rng = SplitMix64::new(3);
    let mut g = c.benchmark_group("blacklist_contains");
    for n in [50usize, 5_000, 100_000] {
        let entries: Vec<Cidr> = (0..n)
            .map(|_| Cidr::new(Ipv4Addr::from(rng.next_u32()), 16 + rng.below(17) as u8).unwrap())
            .collect();
        let snap = CidrSnapshot::new(entries, 1, 0.0);
        let probes: Vec<Ipv4Addr> = (0..1024).map(|_| Ipv4Addr::from(rng.next_u32())).collect();
        g.throughput(Throughput::Elements(probes.len() as u64));
        g.bench_function(format!("{n}_entries"), |b| {
            b.iter(|| probes.iter().filter(|ip| snap.contains(**ip)).count())
        });
    }
    g.finish();
}

fn header_analyzer(c: &mut Criterion) {
    let mixed = scenario_events(ScenarioName::Mixed, 1, 5.0);
    let tcp = of_kind(&mixed, EventKind::Tcp);
    let udp = of_kind(&mixed, EventKind::Udp);
    let mut g = c.benchmark_group("header_analyzer");
    g.throughput(Throughput::Elements(tcp.len() as u64));
    g.bench_function("observe_tcp_mixed", |b| {
        b.iter_batched_ref(
            || AnalyzerState::new(AnalyzerConfig::default()).unwrap(),
            |a| {
                for ev in &tcp {
                    black_box(a.observe_tcp(ev).unwrap());
                }
            },
            BatchSize::LargeInput,
        )
    });
    let a = AnalyzerState::new(AnalyzerConfig::default()).unwrap();
    g.throughput(Throughput::Elements(udp.len() as u64));
    g.bench_function("observe_udp_mixed", |b| {
        b.iter(|| {
            udp.iter()
                .map(|ev| a.observe_udp(ev).unwrap())
                .filter(|f| *f != UdpFinding::None)
                .count()
        })
    });
    let payload = vec![0xA5u8; 1472];
    g.throughput(Throughput::Bytes(payload.len() as u64));
    g.bench_function("udp_checksum_1472", |b| {
        b.iter(|| {
            compute_udp_checksum(
                Ipv4Addr::new(198, 51, 100, 1),
                Ipv4Addr::new(192, 0, 2, 10),
                5353,
                53,
                1480,
                black_box(&payload),
            )
        })
    });
    g.finish();
}

fn waf(c: &mut Criterion) {
    let rules = default_ruleset();
    let normal = scenario_events(ScenarioName::Normal, 2, 30.0);
    let benign = of_kind(&normal, EventKind::Http);
    let attacks = scenario_events(ScenarioName::HttpAttack, 2, 7.0);
    let mut g = c.benchmark_group("waf_evaluate");
    for (name, reqs) in [("benign", &benign), ("attack", &attacks)] {
        g.throughput(Throughput::Elements(reqs.len() as u64));
        g.bench_function(name, |b| {
            b.iter(|| {
                reqs.iter()
                    .filter(|e| !rules.evaluate(e.http().unwrap()).is_pass())
                    .count()
            })
        });
    }
    g.finish();
}

criterion_group!(benches, rate_limit, blacklist, header_analyzer, waf);
criterion_main!(benches);
