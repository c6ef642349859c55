//! Shared fixtures for the benchmarks.

use ddosgate_core::model::{serialize_trace_event, TraceEvent};
use ddosgate_core::trafficgen::{generate, Scenario, ScenarioName};

/// Events of a generated scenario with default parameters.
pub fn scenario_events(name: ScenarioName, seed: u64, duration_secs: f64) -> Vec<TraceEvent> {
    generate(&Scenario::new(name, seed, duration_secs))
        .expect("default scenarios generate")
        .events
}

/// The same events rendered as trace JSONL.
pub fn trace_text(events: &[TraceEvent]) -> String {
    let mut out = String::with_capacity(events.len() * 200);
    for ev in events {
        out.push_str(&serialize_trace_event(ev));
        out.push('\n');
    }
    out
}

/// Events of one kind, for benchmarking a single layer.
pub fn of_kind(events: &[TraceEvent], kind: ddosgate_core::model::EventKind) -> Vec<TraceEvent> {
    events
        .iter()
        .filter(|e| e.kind() == kind)
        .cloned()
        .collect()
}
