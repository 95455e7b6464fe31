//! Single-threaded discrete-event engine.
//!
//! Each request is planned on arrival, then walks its stages. A stage first
//! waits out its network and lookup delay, then (if it has compute) takes a
//! slot at its tier, queueing FIFO when the tier is saturated. Cache fills are
//! applied on completion; sync ticks copy popular entries down the hierarchy.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};

use serde::Serialize;

use crate::cache::{sync_from_parent, VectorIndex};
use crate::error::{Result, SimError};
use crate::latency_model::QuantizationTable;
use crate::policies::{
    dispatch, Architecture, CacheHitInfo, CacheKind, CachePolicy, ExecutionPlan, Outcome, PlanContext, TierCaches,
};
use crate::rng::{splitmix64, stream_rng, Stream};
use crate::topology::{TierKind, Topology};
use crate::workload::{Request, WorkloadClass};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SyncConfig {
    /// `None` disables synchronization.
    pub period_ms: Option<f64>,
    pub top_n: usize,
}

/// Everything a run needs besides the request stream.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub seed: u64,
    pub topology: Topology,
    pub architecture: Architecture,
    pub caches: BTreeMap<TierKind, TierCaches>,
    pub cache_policy: CachePolicy,
    pub quantization: QuantizationTable,
    pub documents: Option<VectorIndex>,
    pub population: u64,
    pub sync: SyncConfig,
    /// End of the simulated window; sync ticks are scheduled up to it.
    pub horizon_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Completed,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageRecord {
    pub label: &'static str,
    pub tier: TierKind,
    pub network_ms: f64,
    pub lookup_ms: f64,
    pub compute_ms: f64,
    pub queue_ms: f64,
    pub latency_ms: f64,
    pub upstream_bytes: u64,
    pub end_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RequestRecord {
    pub id: u64,
    pub class: WorkloadClass,
    pub architecture: &'static str,
    pub arrival_ms: f64,
    pub status: Status,
    pub outcome: Outcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_hit: Option<CacheHitInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub retrieved_docs: Vec<u64>,
    pub stages: Vec<StageRecord>,
    pub queue_ms: f64,
    pub total_ms: f64,
    pub sla_violated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencySummary {
    pub mean: f64,
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupMetrics {
    pub request_count: usize,
    pub completed_count: usize,
    pub rejected_count: usize,
    /// `None` when nothing completed.
    pub latency_ms: Option<LatencySummary>,
    pub prompt_hit_ratio: f64,
    pub semantic_hit_ratio: f64,
    pub early_exit_fraction: f64,
    pub sla_violation_fraction: f64,
    pub upstream_bytes_total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub architecture: &'static str,
    pub seed: u64,
    pub overall: GroupMetrics,
    pub per_class: BTreeMap<WorkloadClass, GroupMetrics>,
    pub outcome_counts: BTreeMap<Outcome, usize>,
    pub per_tier_compute_ms: BTreeMap<TierKind, f64>,
    pub sync_ticks: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub records: Vec<RequestRecord>,
    pub sync_tick_times: Vec<f64>,
    /// Cache state at the end of the run.
    pub caches: BTreeMap<TierKind, TierCaches>,
}

/// Nearest-rank percentile of `samples`; `p` in `[0, 100]`.
pub fn percentile(samples: &[f64], p: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(SimError::EmptySamples);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&sorted, p))
}

fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p.clamp(0.0, 100.0) / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

/// Tick times `period, 2·period, …` not after `horizon_ms`.
pub fn schedule_sync_ticks(period_ms: Option<f64>, horizon_ms: f64) -> Vec<f64> {
    let Some(period) = period_ms.filter(|p| *p > 0.0 && p.is_finite()) else {
        return Vec::new();
    };
    (1..).map(|k| k as f64 * period).take_while(|t| *t <= horizon_ms).collect()
}

#[derive(Debug, Clone, Copy)]
enum EventKind {
    Arrival(usize),
    /// Network and lookup delay of the request's current stage has elapsed.
    StageReady(usize),
    /// Compute of the request's current stage has finished.
    StageComplete(usize),
    SyncTick,
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time_ms: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // Reversed: BinaryHeap is a max-heap and we want the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other.time_ms.total_cmp(&self.time_ms).then(other.seq.cmp(&self.seq))
    }
}

#[derive(Default)]
struct EventQueue {
    heap: BinaryHeap<Event>,
    next_seq: u64,
}

impl EventQueue {
    fn push(&mut self, time_ms: f64, kind: EventKind) {
        self.heap.push(Event { time_ms, seq: self.next_seq, kind });
        self.next_seq += 1;
    }

    fn pop(&mut self) -> Option<Event> {
        self.heap.pop()
    }
}

struct InFlight {
    plan: ExecutionPlan,
    stage: usize,
    ready_ms: f64,
    stage_queue: Vec<f64>,
    stage_end: Vec<f64>,
}

#[derive(Default)]
struct TierSlots {
    busy: usize,
    waiting: VecDeque<usize>,
}

struct Engine<'a> {
    sim: &'a mut Simulation,
    requests: &'a [Request],
    events: EventQueue,
    inflight: Vec<Option<InFlight>>,
    slots: BTreeMap<TierKind, TierSlots>,
    records: Vec<Option<RequestRecord>>,
    rtt_rng: crate::rng::SimRng,
    confidence_seed: u64,
}

/// Runs `requests` (sorted by arrival) through `sim`. Cache state in `sim` is
/// consumed and returned in the output.
pub fn run(mut sim: Simulation, requests: &[Request]) -> Result<RunOutput> {
    validate(&sim, requests)?;
    let ticks = schedule_sync_ticks(sim.sync.period_ms, sim.horizon_ms);
    let mut engine = Engine {
        rtt_rng: stream_rng(sim.seed, Stream::Rtt),
        confidence_seed: splitmix64(sim.seed ^ Stream::Confidence as u64),
        sim: &mut sim,
        requests,
        events: EventQueue::default(),
        inflight: (0..requests.len()).map(|_| None).collect(),
        slots: BTreeMap::new(),
        records: vec![None; requests.len()],
    };
    for (i, r) in requests.iter().enumerate() {
        engine.events.push(r.arrival_ms, EventKind::Arrival(i));
    }
    for &t in &ticks {
        engine.events.push(t, EventKind::SyncTick);
    }
    while let Some(ev) = engine.events.pop() {
        engine.handle(ev)?;
    }
    let records: Vec<RequestRecord> = engine.records.into_iter().map(|r| r.expect("every request resolved")).collect();
    let report = summarize(&sim, &records, ticks.len());
    Ok(RunOutput { report, records, sync_tick_times: ticks, caches: sim.caches })
}

fn validate(sim: &Simulation, requests: &[Request]) -> Result<()> {
    if requests.windows(2).any(|w| w[1].arrival_ms < w[0].arrival_ms) {
        return Err(SimError::InvalidScenario("requests must be sorted by arrival time".into()));
    }
    if let Some(r) = requests.iter().find(|r| !(r.arrival_ms.is_finite() && r.arrival_ms >= 0.0)) {
        return Err(SimError::InvalidScenario(format!("request {} has an invalid arrival time", r.id)));
    }
    for tier in sim.caches.keys() {
        sim.topology.tier(*tier)?;
    }
    Ok(())
}

impl Engine<'_> {
    fn handle(&mut self, ev: Event) -> Result<()> {
        let now = ev.time_ms;
        match ev.kind {
            EventKind::Arrival(i) => {
                let req = &self.requests[i];
                let sim = &mut *self.sim;
                let mut ctx = PlanContext {
                    topology: &sim.topology,
                    caches: &mut sim.caches,
                    cache_policy: sim.cache_policy,
                    quantization: &sim.quantization,
                    rtt_rng: &mut self.rtt_rng,
                    confidence_seed: self.confidence_seed,
                    population: sim.population,
                    documents: sim.documents.as_ref(),
                };
                let plan = dispatch(req, &sim.architecture, &mut ctx)?;
                let n = plan.stages.len();
                self.inflight[i] =
                    Some(InFlight { plan, stage: 0, ready_ms: now, stage_queue: vec![0.0; n], stage_end: vec![0.0; n] });
                self.begin_stage(i, now)?;
            }
            EventKind::StageReady(i) => self.stage_ready(i, now)?,
            EventKind::StageComplete(i) => {
                let tier = self.current_stage_tier(i);
                let slots = self.slots.get_mut(&tier).expect("slot state exists for a busy tier");
                slots.busy -= 1;
                if let Some(next) = slots.waiting.pop_front() {
                    self.start_compute(next, now);
                }
                self.finish_stage(i, now)?;
            }
            EventKind::SyncTick => self.sync(now)?,
        }
        Ok(())
    }

    fn current_stage_tier(&self, i: usize) -> TierKind {
        let f = self.inflight[i].as_ref().expect("request in flight");
        f.plan.stages[f.stage].tier
    }

    fn begin_stage(&mut self, i: usize, now: f64) -> Result<()> {
        let f = self.inflight[i].as_ref().expect("request in flight");
        if f.stage >= f.plan.stages.len() {
            return self.complete(i, now);
        }
        let s = &f.plan.stages[f.stage];
        self.events.push(now + s.network_ms + s.lookup_ms, EventKind::StageReady(i));
        Ok(())
    }

    fn stage_ready(&mut self, i: usize, now: f64) -> Result<()> {
        let f = self.inflight[i].as_mut().expect("request in flight");
        let (tier, compute_ms) = (f.plan.stages[f.stage].tier, f.plan.stages[f.stage].compute_ms);
        if compute_ms <= 0.0 {
            return self.finish_stage(i, now);
        }
        f.ready_ms = now;
        let spec = self.sim.topology.tier(tier).expect("plan tiers exist");
        let (cap, max_queue) = (spec.max_concurrent, spec.max_queue);
        let slots = self.slots.entry(tier).or_default();
        if slots.busy < cap {
            self.start_compute(i, now);
        } else if max_queue.is_some_and(|q| slots.waiting.len() >= q) {
            self.reject(i, now);
        } else {
            slots.waiting.push_back(i);
        }
        Ok(())
    }

    fn start_compute(&mut self, i: usize, now: f64) {
        let f = self.inflight[i].as_mut().expect("request in flight");
        let stage = &f.plan.stages[f.stage];
        f.stage_queue[f.stage] = now - f.ready_ms;
        let done = now + stage.compute_ms;
        self.slots.entry(stage.tier).or_default().busy += 1;
        self.events.push(done, EventKind::StageComplete(i));
    }

    fn finish_stage(&mut self, i: usize, now: f64) -> Result<()> {
        let f = self.inflight[i].as_mut().expect("request in flight");
        f.stage_end[f.stage] = now;
        f.stage += 1;
        self.begin_stage(i, now)
    }

    fn complete(&mut self, i: usize, now: f64) -> Result<()> {
        let f = self.inflight[i].take().expect("request in flight");
        let req = &self.requests[i];
        for fill in &f.plan.fills {
            let Some(c) = self.sim.caches.get_mut(&fill.tier) else { continue };
            match fill.kind {
                CacheKind::Prompt => {
                    if let Some(pc) = c.prompt.as_mut() {
                        pc.insert(req.prompt_key, req.output_tokens, now);
                    }
                }
                CacheKind::Semantic => {
                    if let Some(sc) = c.semantic.as_mut() {
                        sc.insert(req.prompt_key, req.embedding.as_slice(), req.output_tokens, now)?;
                    }
                }
            }
        }
        self.records[i] = Some(self.record(req, f, Status::Completed, now));
        Ok(())
    }

    fn reject(&mut self, i: usize, now: f64) {
        let f = self.inflight[i].take().expect("request in flight");
        let req = &self.requests[i];
        self.records[i] = Some(self.record(req, f, Status::Rejected, now));
    }

    fn record(&self, req: &Request, f: InFlight, status: Status, now: f64) -> RequestRecord {
        let reached = match status {
            Status::Completed => f.plan.stages.len(),
            Status::Rejected => f.stage,
        };
        let stages: Vec<StageRecord> = f.plan.stages[..reached]
            .iter()
            .enumerate()
            .map(|(k, s)| StageRecord {
                label: s.label,
                tier: s.tier,
                network_ms: s.network_ms,
                lookup_ms: s.lookup_ms,
                compute_ms: s.compute_ms,
                queue_ms: f.stage_queue[k],
                latency_ms: s.latency_ms + f.stage_queue[k],
                upstream_bytes: s.upstream_bytes,
                end_ms: f.stage_end[k],
            })
            .collect();
        let total_ms = now - req.arrival_ms;
        RequestRecord {
            id: req.id,
            class: req.class,
            architecture: self.sim.architecture.tag(),
            arrival_ms: req.arrival_ms,
            status,
            outcome: f.plan.outcome,
            cache_hit: f.plan.cache_hit,
            confidence: f.plan.confidence,
            retrieved_docs: f.plan.retrieved_docs,
            queue_ms: f.stage_queue.iter().sum(),
            total_ms,
            sla_violated: status == Status::Completed && total_ms > req.class.sla_upper_ms(),
            stages,
        }
    }

    /// Copies popular entries from each cached tier into the cached tier
    /// below it, top-down.
    fn sync(&mut self, now: f64) -> Result<()> {
        let top_n = self.sim.sync.top_n;
        let tiers: Vec<TierKind> = self.sim.caches.keys().rev().copied().collect();
        for pair in tiers.windows(2) {
            let (parent_kind, child_kind) = (pair[0], pair[1]);
            let mut child = self.sim.caches.remove(&child_kind).expect("listed tier");
            let parent = &self.sim.caches[&parent_kind];
            if let (Some(c), Some(p)) = (child.prompt.as_mut(), parent.prompt.as_ref()) {
                sync_from_parent(c, p, top_n, now)?;
            }
            if let (Some(c), Some(p)) = (child.semantic.as_mut(), parent.semantic.as_ref()) {
                sync_from_parent(c, p, top_n, now)?;
            }
            self.sim.caches.insert(child_kind, child);
        }
        Ok(())
    }
}

fn group(records: &[&RequestRecord]) -> GroupMetrics {
    let completed: Vec<&RequestRecord> = records.iter().copied().filter(|r| r.status == Status::Completed).collect();
    let n = completed.len();
    let ratio = |pred: &dyn Fn(&RequestRecord) -> bool| {
        if n == 0 {
            0.0
        } else {
            completed.iter().filter(|r| pred(r)).count() as f64 / n as f64
        }
    };
    let hit_kind = |r: &RequestRecord, k: CacheKind| r.cache_hit.is_some_and(|h| h.kind == k);
    let latency_ms = (n > 0).then(|| {
        let mut lat: Vec<f64> = completed.iter().map(|r| r.total_ms).collect();
        lat.sort_by(f64::total_cmp);
        LatencySummary {
            mean: lat.iter().sum::<f64>() / n as f64,
            p50: percentile_sorted(&lat, 50.0),
            p90: percentile_sorted(&lat, 90.0),
            p99: percentile_sorted(&lat, 99.0),
            min: lat[0],
            max: lat[n - 1],
        }
    });
    GroupMetrics {
        request_count: records.len(),
        completed_count: n,
        rejected_count: records.len() - n,
        latency_ms,
        prompt_hit_ratio: ratio(&|r| hit_kind(r, CacheKind::Prompt)),
        semantic_hit_ratio: ratio(&|r| hit_kind(r, CacheKind::Semantic)),
        early_exit_fraction: ratio(&|r| r.outcome == Outcome::EarlyExit),
        sla_violation_fraction: ratio(&|r| r.sla_violated),
        upstream_bytes_total: records.iter().flat_map(|r| &r.stages).map(|s| s.upstream_bytes).sum(),
    }
}

fn summarize(sim: &Simulation, records: &[RequestRecord], sync_ticks: usize) -> MetricsReport {
    let all: Vec<&RequestRecord> = records.iter().collect();
    let per_class = WorkloadClass::ALL
        .iter()
        .map(|&c| (c, group(&all.iter().copied().filter(|r| r.class == c).collect::<Vec<_>>())))
        .collect();
    let mut outcome_counts: BTreeMap<Outcome, usize> = Outcome::ALL.iter().map(|&o| (o, 0)).collect();
    let mut per_tier_compute_ms: BTreeMap<TierKind, f64> =
        sim.topology.tiers().iter().map(|t| (t.kind, 0.0)).collect();
    for r in records.iter().filter(|r| r.status == Status::Completed) {
        *outcome_counts.entry(r.outcome).or_default() += 1;
        for s in &r.stages {
            *per_tier_compute_ms.entry(s.tier).or_default() += s.compute_ms;
        }
    }
    MetricsReport {
        architecture: sim.architecture.tag(),
        seed: sim.seed,
        overall: group(&all),
        per_class,
        outcome_counts,
        per_tier_compute_ms,
        sync_ticks,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0], 50.0).unwrap(), 2.0);
        for p in [0.0, 37.0, 100.0] {
            assert_eq!(percentile(&[5.0], p).unwrap(), 5.0);
        }
        let hundred: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(percentile(&hundred, 99.0).unwrap(), 99.0);
        assert_eq!(percentile(&hundred, 100.0).unwrap(), 100.0);
        assert_eq!(percentile(&hundred, 0.0).unwrap(), 1.0);
        assert!(matches!(percentile(&[], 50.0), Err(SimError::EmptySamples)));
    }

    #[test]
    fn sync_tick_schedule() {
        assert_eq!(schedule_sync_ticks(Some(1000.0), 3500.0), vec![1000.0, 2000.0, 3000.0]);
        assert!(schedule_sync_ticks(None, 3500.0).is_empty());
        assert!(schedule_sync_ticks(Some(0.0), 3500.0).is_empty());
        assert_eq!(schedule_sync_ticks(Some(500.0), 1000.0), vec![500.0, 1000.0]);
    }

    #[test]
    fn events_pop_in_time_then_seq_order() {
        let mut q = EventQueue::default();
        q.push(5.0, EventKind::SyncTick);
        q.push(1.0, EventKind::Arrival(0));
        q.push(5.0, EventKind::Arrival(1));
        q.push(0.0, EventKind::Arrival(2));
        let order: Vec<(f64, u64)> = std::iter::from_fn(|| q.pop()).map(|e| (e.time_ms, e.seq)).collect();
        assert_eq!(order, vec![(0.0, 3), (1.0, 1), (5.0, 0), (5.0, 2)]);
    }
}
