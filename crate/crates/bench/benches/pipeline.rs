use std::io::{self, Cursor};

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use ddosgate_bench::{scenario_events, trace_text};
use ddosgate_core::pipeline::{run_trace, Engine, EngineConfig, RunMode, SandboxSink};
use ddosgate_core::trafficgen::ScenarioName;
use ddosgate_core::waf::RuleSet;

fn engine() -> Engine {
    Engine::new(
        EngineConfig::default(),
        RuleSet::default_rules(),
        SandboxSink::discard(),
    )
    .unwrap()
}

fn end_to_end(c: &mut Criterion) {
    let mut g = c.benchmark_group("pipeline");
    g.sample_size(10);
    for (name, secs) in [(ScenarioName::Normal, 60.0), (ScenarioName::Mixed, 10.0)] {
        let events = scenario_events(name, 7, secs);
        let text = trace_text(&events);
        g.throughput(Throughput::Elements(events.len() as u64));
        g.bench_function(format!("process_event/{}", name.as_str()), |b| {
            b.iter_batched_ref(
                engine,
                |e| {
                    for ev in &events {
                        e.process_event(ev).unwrap();
                    }
                },
                BatchSize::LargeInput,
            )
        });
        g.bench_function(format!("run_trace/{}", name.as_str()), |b| {
            b.iter_batched_ref(
                engine,
                |e| {
                    run_trace(e, Cursor::new(text.as_bytes()), io::sink(), RunMode::Strict).unwrap()
                },
                BatchSize::LargeInput,
            )
        });
    }
    g.finish();
}

criterion_group!(benches, end_to_end);
criterion_main!(benches);
