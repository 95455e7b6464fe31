use std::path::Path;

use edgesim::engine::{run, RequestRecord, RunOutput, Status};
use edgesim::policies::Outcome;
use edgesim::scenario::{parse_scenario, parse_scenario_str, run_scenario, Scenario};
use edgesim::topology::TierKind;
use edgesim::workload::{EmbeddingVector, Request, WorkloadClass};

fn request(id: u64, arrival_ms: f64, output_tokens: u32, direction: usize) -> Request {
    let mut v = vec![0.0f32; 64];
    v[direction] = 1.0;
    Request {
        id,
        arrival_ms,
        class: WorkloadClass::LatencyTolerant,
        prompt_tokens: 16,
        output_tokens,
        embedding: EmbeddingVector::normalized(v).unwrap(),
        prompt_key: 1000 + direction as u64,
        population_rank: 1 + direction as u64,
    }
}

/// Fixed-RTT scenario body; `rest` supplies tiers, cache and architecture.
fn scenario(rest: &str) -> Scenario {
    let raw = format!(
        "seed = 5\n[workload]\nduration_ms = 0.0\n[latency.quantization]\nint4 = 0.25\n\
         [models.edge12]\nheads = 32\nembed_dim = 128\nlayers = 32\nparam_count = 7000000000\n\
         precision = \"INT4\"\nbase_per_token_ms = 48.0\n\
         [models.ten]\nheads = 32\nembed_dim = 128\nlayers = 32\nparam_count = 7000000000\n\
         precision = \"FP32\"\nbase_per_token_ms = 10.0\n{rest}"
    );
    parse_scenario_str(&raw).unwrap_or_else(|e| panic!("{e}\n{raw}"))
}

fn simulate(s: &Scenario, requests: &[Request]) -> RunOutput {
    let (sim, _) = s.build().unwrap();
    run(sim, requests).unwrap()
}

const EDGE_AND_CLOUD: &str = r#"
[[topology.tiers]]
kind = "NearRAN"
rtt_ms = [2.0, 2.0]
hardware = "l4"
vector_cache_capacity = 16
max_concurrent = 4

[[topology.tiers]]
kind = "Cloud"
rtt_ms = [100.0, 100.0]
hardware = "a100"
model = "gpt3-175b"
max_concurrent = 4

[cache]
prompt_enabled = false
"#;

fn stage_sum(r: &RequestRecord) -> f64 {
    r.stages.iter().map(|s| s.latency_ms + s.queue_ms).sum()
}

#[test]
fn forced_miss_then_hit() {
    let s = scenario(&format!("{EDGE_AND_CLOUD}[architecture]\nkind = \"vector_cache_only\"\n"));
    let out = simulate(&s, &[request(0, 0.0, 10, 0), request(1, 5000.0, 10, 0)]);
    let miss = &out.records[0];
    assert_eq!(miss.outcome, Outcome::Fallback);
    assert_eq!(miss.total_ms, 3607.0);
    assert_eq!(miss.stages.iter().map(|s| s.label).collect::<Vec<_>>(), ["edge_rtt", "vector_lookup", "cloud_rtt", "generate"]);
    let hit = &out.records[1];
    assert_eq!(hit.outcome, Outcome::CacheHit);
    assert_eq!(hit.total_ms, 7.0);
    assert_eq!(out.report.overall.completed_count, 2);
    assert_eq!(out.report.overall.semantic_hit_ratio, 0.5);
}

#[test]
fn threshold_above_one_never_hits() {
    let body = EDGE_AND_CLOUD.replace("prompt_enabled = false", "prompt_enabled = false\nsimilarity_threshold = 1.0");
    let s = scenario(&format!("{body}[architecture]\nkind = \"vector_cache_only\"\n"));
    let (mut sim, _) = s.build().unwrap();
    sim.cache_policy.similarity_threshold = 1.0 + 1e-9;
    let requests: Vec<Request> = (0..20).map(|i| request(i, i as f64 * 4000.0, 1, 0)).collect();
    let out = run(sim, &requests).unwrap();
    assert_eq!(out.report.overall.semantic_hit_ratio, 0.0);
    assert!(out.records.iter().all(|r| r.outcome == Outcome::Fallback));
}

#[test]
fn single_slot_queues_second_request_by_exact_compute_time() {
    let s = scenario(
        r#"
[[topology.tiers]]
kind = "MEC"
rtt_ms = [0.0, 0.0]
hardware = "l4"
model = "ten"
max_concurrent = 1

[architecture]
kind = "full_edge_inference"
edge_tier = "MEC"
"#,
    );
    let out = simulate(&s, &[request(0, 0.0, 1, 0), request(1, 0.0, 1, 1)]);
    let (a, b) = (&out.records[0], &out.records[1]);
    assert_eq!(a.total_ms, 10.0);
    assert_eq!(b.total_ms - a.total_ms, 10.0);
    assert_eq!(b.queue_ms, 10.0);
}

#[test]
fn bounded_queue_rejects_overflow() {
    let s = scenario(
        r#"
[[topology.tiers]]
kind = "MEC"
rtt_ms = [0.0, 0.0]
hardware = "l4"
model = "ten"
max_concurrent = 1
max_queue = 1

[architecture]
kind = "full_edge_inference"
edge_tier = "MEC"
"#,
    );
    let requests: Vec<Request> = (0..3).map(|i| request(i, 0.0, 1, i as usize)).collect();
    let out = simulate(&s, &requests);
    let statuses: Vec<Status> = out.records.iter().map(|r| r.status).collect();
    assert_eq!(statuses, [Status::Completed, Status::Completed, Status::Rejected]);
    assert_eq!(out.report.overall.rejected_count, 1);
    assert_eq!(out.report.overall.completed_count, 2);
}

#[test]
fn full_edge_sums_rtt_and_generation() {
    let s = scenario(
        r#"
[[topology.tiers]]
kind = "RegionalDC"
rtt_ms = [10.0, 10.0]
hardware = "a100"
model = "edge12"
max_concurrent = 8

[architecture]
kind = "full_edge_inference"
"#,
    );
    let out = simulate(&s, &[request(0, 0.0, 5, 0), request(1, 100.0, 0, 1)]);
    assert_eq!(out.records[0].total_ms, 70.0);
    assert_eq!(out.records[0].outcome, Outcome::FullGeneration);
    assert_eq!(out.records[1].total_ms, 10.0);
}

#[test]
fn rag_stage_sum() {
    let s = scenario(
        r#"
[[topology.tiers]]
kind = "MEC"
rtt_ms = [0.0, 0.0]
hardware = "l4"
max_concurrent = 8

[[topology.tiers]]
kind = "RegionalDC"
rtt_ms = [5.0, 5.0]
hardware = "a100"
model = "gpt3-175b"
max_concurrent = 8

[cache]
prompt_enabled = false
semantic_enabled = false

[architecture]
kind = "rag_over_cdn"
k = 1
n_documents = 1
doc_ann_mode = "exact"
"#,
    );
    let out = simulate(&s, &[request(0, 0.0, 10, 0), request(1, 10_000.0, 10, 7)]);
    for r in &out.records {
        assert_eq!(r.total_ms, 3516.0);
        assert_eq!(r.stages.len(), 4);
        assert_eq!(r.retrieved_docs, [0]);
    }
}

#[test]
fn split_fallback_spends_at_least_75ms_before_generation() {
    let s = scenario(
        r#"
[[topology.tiers]]
kind = "MEC"
rtt_ms = [0.0, 0.0]
hardware = "l4"
vector_cache_capacity = 16
max_concurrent = 8

[[topology.tiers]]
kind = "Cloud"
rtt_ms = [50.0, 50.0]
hardware = "a100"
model = "gpt3-175b"
max_concurrent = 8

[cache]
prompt_enabled = false
semantic_enabled = false

[architecture]
kind = "split_inference"
confidence_threshold = 1.0
"#,
    );
    let requests: Vec<Request> = (0..10).map(|i| request(i, i as f64 * 10_000.0, 2, i as usize)).collect();
    let out = simulate(&s, &requests);
    for r in &out.records {
        assert_eq!(r.outcome, Outcome::Fallback);
        let before: f64 = r.stages.iter().take_while(|s| s.label != "generate").map(|s| s.latency_ms).sum();
        assert!(before >= 75.0, "{before}");
        assert_eq!(r.total_ms, 775.0);
    }
}

#[test]
fn empty_workload_reports_zero_counts() {
    let s = scenario(&format!("{EDGE_AND_CLOUD}[architecture]\nkind = \"vector_cache_only\"\n"));
    let out = simulate(&s, &[]);
    assert_eq!(out.report.overall.request_count, 0);
    assert_eq!(out.report.overall.completed_count, 0);
    assert!(out.report.overall.latency_ms.is_none());
    assert!(out.records.is_empty());
}

fn bundled(name: &str) -> Scenario {
    parse_scenario(&Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)).unwrap()
}

#[test]
fn records_are_causal_and_consistent() {
    for name in ["default.toml", "split_inference.toml", "rag_over_cdn.toml", "hierarchy_sync.toml"] {
        let out = run_scenario(&bundled(name)).unwrap();
        for r in out.records.iter().filter(|r| r.status == Status::Completed) {
            let mut t = r.arrival_ms;
            for st in &r.stages {
                assert!(st.end_ms >= t, "{name}: request {} stage {} ends before it starts", r.id, st.label);
                t = st.end_ms;
            }
            assert!((t - r.arrival_ms - r.total_ms).abs() < 1e-6, "{name}: request {}", r.id);
            assert!((stage_sum(r) - r.total_ms).abs() < 1e-6, "{name}: request {}", r.id);
        }
    }
}

#[test]
fn sync_tick_does_not_lower_child_hit_ratio() {
    let s = bundled("hierarchy_sync.toml");
    let out = run_scenario(&s).unwrap();
    let period = s.cache.sync_period_ms.unwrap();
    let edge_ratio = |from: f64, to: f64| {
        let window: Vec<&RequestRecord> =
            out.records.iter().filter(|r| r.arrival_ms >= from && r.arrival_ms < to && r.status == Status::Completed).collect();
        let hits = window.iter().filter(|r| r.cache_hit.is_some_and(|h| h.tier == TierKind::NearRAN)).count();
        hits as f64 / window.len() as f64
    };
    assert_eq!(out.sync_tick_times.first(), Some(&period));
    let tick = out.sync_tick_times[0];
    assert!(edge_ratio(tick, tick + period) >= edge_ratio(tick - period, tick));

    let (mut before, mut after) = (0.0, 0.0);
    for &t in &out.sync_tick_times[..out.sync_tick_times.len() - 1] {
        before += edge_ratio(t - period, t);
        after += edge_ratio(t, t + period);
    }
    assert!(after >= before, "{after} < {before}");
}

#[test]
fn higher_load_does_not_reduce_latency() {
    let mut means = Vec::new();
    for rate in [50.0, 200.0, 800.0] {
        let mut s = bundled("full_edge.toml");
        s.workload.rate_per_sec = rate;
        s.workload.duration_ms = 20_000.0;
        let out = run_scenario(&s).unwrap();
        let queue: f64 = out.records.iter().map(|r| r.queue_ms).sum::<f64>() / out.records.len() as f64;
        means.push(queue);
    }
    assert!(means.windows(2).all(|w| w[1] >= w[0]), "{means:?}");
}

#[test]
fn runs_repeat_exactly() {
    let s = bundled("split_inference.toml");
    let a = run_scenario(&s).unwrap();
    let b = run_scenario(&s).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.report, b.report);
}
