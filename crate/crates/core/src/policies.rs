//! The four deployment architectures as routing policies.
//!
//! A policy turns one request into an [`ExecutionPlan`]: an ordered list of
//! latency-bearing stages plus the outcome. Planning performs the cache
//! lookups (which update recency and hit counts) but defers cache fills; the
//! engine applies [`CacheFill`]s when the request completes.
//!
//! Each stage is split into a network part, a cache-lookup part and a compute
//! part, executed in that order. Only the compute part occupies a slot at the
//! stage's tier.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cache::{PromptCache, SemanticCache, VectorIndex};
use crate::error::{Result, SimError};
use crate::latency_model::{
    generation_latency_ms, per_token_latency_ms, HardwareProfile, LatencyBreakdown, ModelProfile, QuantizationTable,
};
use crate::rng::{splitmix64, unit_f64, SimRng};
use crate::topology::{path_latency_ms, TierKind, TierSpec, Topology};
use crate::workload::Request;

/// Bytes per transmitted embedding component or document token.
pub const BYTES_PER_VALUE: u64 = 4;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissMode {
    /// Forward the miss straight to the top tier and generate there.
    #[default]
    CloudGeneration,
    /// Try the caches of the tiers above the edge first; generate at the top
    /// tier only if none of them hits.
    ParentFetch,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorCacheParams {
    pub edge_tier: TierKind,
    pub miss_mode: MissMode,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EncoderLatency {
    /// Constant edge-stage latency.
    Flat { ms: f64 },
    /// `edge_layers / model.layers` of one forward pass of `model` on `hardware`.
    LayerFraction { edge_layers: u32, model: ModelProfile, hardware: HardwareProfile },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitParams {
    pub edge_tier: TierKind,
    pub confidence_threshold: f64,
    pub encoder: EncoderLatency,
    pub fallback_tier: TierKind,
    /// Blend weight in `[0, 1]` pulling confidence toward prompt popularity.
    pub confidence_rank_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullEdgeParams {
    pub edge_tier: TierKind,
    pub model: ModelProfile,
    pub hardware: HardwareProfile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RagParams {
    pub k: usize,
    pub embed_tier: TierKind,
    pub embed_ms: f64,
    pub retrieval_tier: TierKind,
    pub retrieval_ms: f64,
    pub generation_tier: TierKind,
    pub per_doc_tokens: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Architecture {
    VectorCacheOnly(VectorCacheParams),
    SplitInference(SplitParams),
    FullEdgeInference(FullEdgeParams),
    RagOverCdn(RagParams),
}

impl Architecture {
    pub fn tag(&self) -> &'static str {
        match self {
            Architecture::VectorCacheOnly(_) => "vector_cache_only",
            Architecture::SplitInference(_) => "split_inference",
            Architecture::FullEdgeInference(_) => "full_edge_inference",
            Architecture::RagOverCdn(_) => "rag_over_cdn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    CacheHit,
    EarlyExit,
    Fallback,
    FullGeneration,
    RagGeneration,
}

impl Outcome {
    pub const ALL: [Outcome; 5] =
        [Outcome::CacheHit, Outcome::EarlyExit, Outcome::Fallback, Outcome::FullGeneration, Outcome::RagGeneration];

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::CacheHit => "CacheHit",
            Outcome::EarlyExit => "EarlyExit",
            Outcome::Fallback => "Fallback",
            Outcome::FullGeneration => "FullGeneration",
            Outcome::RagGeneration => "RagGeneration",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CacheKind {
    Prompt,
    Semantic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CacheHitInfo {
    pub kind: CacheKind,
    pub tier: TierKind,
    /// Cosine similarity for semantic hits, 1 for prompt hits.
    pub similarity: f64,
}

/// A cache write performed when the request completes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CacheFill {
    pub tier: TierKind,
    pub kind: CacheKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stage {
    pub label: &'static str,
    pub tier: TierKind,
    pub network_ms: f64,
    pub lookup_ms: f64,
    pub compute_ms: f64,
    pub latency_ms: f64,
    pub upstream_bytes: u64,
}

impl Stage {
    pub fn new(label: &'static str, tier: TierKind, network_ms: f64, lookup_ms: f64, compute_ms: f64) -> Self {
        Stage {
            label,
            tier,
            network_ms,
            lookup_ms,
            compute_ms,
            latency_ms: network_ms + lookup_ms + compute_ms,
            upstream_bytes: 0,
        }
    }

    fn network(label: &'static str, tier: TierKind, ms: f64) -> Self {
        Stage::new(label, tier, ms, 0.0, 0.0)
    }

    fn lookup(label: &'static str, tier: TierKind, ms: f64) -> Self {
        Stage::new(label, tier, 0.0, ms, 0.0)
    }

    fn compute(label: &'static str, tier: TierKind, ms: f64) -> Self {
        Stage::new(label, tier, 0.0, 0.0, ms)
    }

    fn with_bytes(mut self, bytes: u64) -> Self {
        self.upstream_bytes = bytes;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExecutionPlan {
    pub stages: Vec<Stage>,
    pub outcome: Outcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache_hit: Option<CacheHitInfo>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub retrieved_docs: Vec<u64>,
    #[serde(skip)]
    pub fills: Vec<CacheFill>,
}

impl ExecutionPlan {
    fn new(stages: Vec<Stage>, outcome: Outcome) -> Self {
        ExecutionPlan { stages, outcome, cache_hit: None, confidence: None, retrieved_docs: Vec::new(), fills: Vec::new() }
    }

    /// Sum of stage latencies, in stage order.
    pub fn total_ms(&self) -> f64 {
        self.stages.iter().map(|s| s.latency_ms).sum()
    }

    pub fn upstream_bytes(&self) -> u64 {
        self.stages.iter().map(|s| s.upstream_bytes).sum()
    }

    pub fn breakdown(&self) -> LatencyBreakdown {
        LatencyBreakdown::new(
            self.stages.iter().map(|s| s.compute_ms).sum(),
            self.stages.iter().map(|s| s.network_ms).sum(),
            self.stages.iter().map(|s| s.lookup_ms).sum(),
        )
    }
}

/// Caches hosted at one tier. Either may be absent.
#[derive(Debug, Clone, Default)]
pub struct TierCaches {
    pub prompt: Option<PromptCache>,
    pub semantic: Option<SemanticCache>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CachePolicy {
    pub prompt_enabled: bool,
    pub semantic_enabled: bool,
    pub similarity_threshold: f64,
}

impl Default for CachePolicy {
    fn default() -> Self {
        CachePolicy { prompt_enabled: true, semantic_enabled: true, similarity_threshold: 0.85 }
    }
}

/// Everything a policy reads or mutates while planning one request.
pub struct PlanContext<'a> {
    pub topology: &'a Topology,
    pub caches: &'a mut BTreeMap<TierKind, TierCaches>,
    pub cache_policy: CachePolicy,
    pub quantization: &'a QuantizationTable,
    pub rtt_rng: &'a mut SimRng,
    pub confidence_seed: u64,
    /// Population size used to turn a Zipf rank into a popularity in `[0, 1)`.
    pub population: u64,
    pub documents: Option<&'a VectorIndex>,
}

/// Per-request RTT samples, drawn lazily so each tier is sampled at most once.
struct Rtts<'c, 'a> {
    ctx: &'c mut PlanContext<'a>,
    drawn: BTreeMap<TierKind, f64>,
}

impl<'c, 'a> Rtts<'c, 'a> {
    fn new(ctx: &'c mut PlanContext<'a>) -> Self {
        Rtts { ctx, drawn: BTreeMap::new() }
    }

    fn get(&mut self, tier: TierKind) -> Result<f64> {
        if let Some(&v) = self.drawn.get(&tier) {
            return Ok(v);
        }
        let v = self.ctx.topology.sample_rtt_ms(tier, self.ctx.rtt_rng)?;
        self.drawn.insert(tier, v);
        Ok(v)
    }

    fn path_ms(&mut self, from: TierKind, to: TierKind) -> Result<f64> {
        let path = self.ctx.topology.path_between(from, to)?;
        for &t in &path {
            self.get(t)?;
        }
        Ok(path_latency_ms(&path, |t| self.drawn[&t]))
    }
}

fn tier_model(tier: &TierSpec) -> Result<&ModelProfile> {
    tier.model
        .as_ref()
        .ok_or_else(|| SimError::InvalidScenario(format!("tier {} hosts no model but is asked to generate", tier.kind)))
}

fn generation_at(ctx: &PlanContext<'_>, tier: TierKind, n_ctx: u64, n_out: u64) -> Result<f64> {
    let spec = ctx.topology.tier(tier)?;
    Ok(generation_latency_ms(tier_model(spec)?, &spec.hardware, n_ctx, n_out, ctx.quantization))
}

/// Deterministic confidence in `[0, 1)` for a request.
pub fn confidence_for(seed: u64, req: &Request, rank_weight: f64, population: u64) -> f64 {
    let u = unit_f64(splitmix64(seed ^ splitmix64(req.id)));
    if rank_weight <= 0.0 || population == 0 {
        return u;
    }
    let rank = req.population_rank.clamp(1, population);
    let popularity = (population - rank) as f64 / population as f64;
    ((1.0 - rank_weight) * u + rank_weight * popularity).min(1.0 - f64::EPSILON)
}

enum LookupResult {
    Hit(CacheHitInfo),
    Miss,
}

/// Prompt then semantic lookup at `tier`, appending a stage per lookup made.
fn lookup_at(ctx: &mut PlanContext<'_>, tier: TierKind, req: &Request, stages: &mut Vec<Stage>) -> Result<LookupResult> {
    let spec = ctx.topology.tier(tier)?;
    let (prompt_ms, vector_ms) = (spec.prompt_lookup_ms, spec.vector_lookup_ms);
    let policy = ctx.cache_policy;
    let Some(caches) = ctx.caches.get_mut(&tier) else {
        return Ok(LookupResult::Miss);
    };
    if policy.prompt_enabled {
        if let Some(pc) = caches.prompt.as_mut() {
            stages.push(Stage::lookup("prompt_lookup", tier, prompt_ms));
            if pc.prompt_lookup(req.prompt_key, req.arrival_ms).is_some() {
                return Ok(LookupResult::Hit(CacheHitInfo { kind: CacheKind::Prompt, tier, similarity: 1.0 }));
            }
        }
    }
    if policy.semantic_enabled {
        if let Some(sc) = caches.semantic.as_mut() {
            stages.push(Stage::lookup("vector_lookup", tier, vector_ms));
            if let Some(hit) = sc.semantic_lookup(req.embedding.as_slice(), policy.similarity_threshold, req.arrival_ms)? {
                return Ok(LookupResult::Hit(CacheHitInfo {
                    kind: CacheKind::Semantic,
                    tier,
                    similarity: hit.similarity,
                }));
            }
        }
    }
    Ok(LookupResult::Miss)
}

/// Fills for every enabled cache present at `tier`.
fn fills_at(ctx: &PlanContext<'_>, tier: TierKind) -> Vec<CacheFill> {
    let mut out = Vec::new();
    if let Some(c) = ctx.caches.get(&tier) {
        if ctx.cache_policy.prompt_enabled && c.prompt.is_some() {
            out.push(CacheFill { tier, kind: CacheKind::Prompt });
        }
        if ctx.cache_policy.semantic_enabled && c.semantic.is_some() {
            out.push(CacheFill { tier, kind: CacheKind::Semantic });
        }
    }
    out
}

fn has_enabled_cache(ctx: &PlanContext<'_>, tier: TierKind) -> bool {
    !fills_at(ctx, tier).is_empty()
}

/// Edge lookup; on a miss either go straight to the top tier or walk up
/// through the cached tiers first.
pub fn plan_vector_cache_only(req: &Request, params: &VectorCacheParams, ctx: &mut PlanContext<'_>) -> Result<ExecutionPlan> {
    let edge = params.edge_tier;
    let mut rtts = Rtts::new(ctx);
    let mut stages = vec![Stage::network("edge_rtt", edge, rtts.get(edge)?)];

    if let LookupResult::Hit(hit) = lookup_at(rtts.ctx, edge, req, &mut stages)? {
        let mut plan = ExecutionPlan::new(stages, Outcome::CacheHit);
        plan.cache_hit = Some(hit);
        return Ok(plan);
    }
    let mut fills = fills_at(rtts.ctx, edge);
    let top = rtts.ctx.topology.top();

    match params.miss_mode {
        MissMode::CloudGeneration => {
            if top != edge {
                stages.push(Stage::network("cloud_rtt", top, rtts.get(top)?));
            }
        }
        MissMode::ParentFetch => {
            let mut current = edge;
            let path = rtts.ctx.topology.path_between(edge, top)?;
            for &tier in &path[1..path.len().saturating_sub(1)] {
                if !has_enabled_cache(rtts.ctx, tier) {
                    continue;
                }
                stages.push(Stage::network("parent_hop", tier, rtts.path_ms(current, tier)?));
                current = tier;
                if let LookupResult::Hit(hit) = lookup_at(rtts.ctx, tier, req, &mut stages)? {
                    let mut plan = ExecutionPlan::new(stages, Outcome::CacheHit);
                    plan.cache_hit = Some(hit);
                    plan.fills = fills;
                    return Ok(plan);
                }
                fills.extend(fills_at(rtts.ctx, tier));
            }
            if current != top {
                stages.push(Stage::network("cloud_hop", top, rtts.path_ms(current, top)?));
            }
        }
    }
    let gen = generation_at(rtts.ctx, top, req.prompt_tokens as u64, req.output_tokens as u64)?;
    stages.push(Stage::compute("generate", top, gen));
    let mut plan = ExecutionPlan::new(stages, Outcome::Fallback);
    plan.fills = fills;
    Ok(plan)
}

/// Edge encoder with early exit; low-confidence requests try the edge
/// semantic cache and otherwise forward their embedding upstream.
pub fn plan_split_inference(req: &Request, params: &SplitParams, ctx: &mut PlanContext<'_>) -> Result<ExecutionPlan> {
    let edge = params.edge_tier;
    let encoder_ms = match &params.encoder {
        EncoderLatency::Flat { ms } => *ms,
        EncoderLatency::LayerFraction { edge_layers, model, hardware } => {
            let frac = *edge_layers as f64 / model.layers as f64;
            frac * per_token_latency_ms(model, hardware, req.prompt_tokens as u64, ctx.quantization)
        }
    };
    let confidence = confidence_for(ctx.confidence_seed, req, params.confidence_rank_weight, ctx.population);

    let mut rtts = Rtts::new(ctx);
    let mut stages = vec![Stage::network("edge_rtt", edge, rtts.get(edge)?), Stage::compute("encode", edge, encoder_ms)];

    if confidence >= params.confidence_threshold {
        let mut plan = ExecutionPlan::new(stages, Outcome::EarlyExit);
        plan.confidence = Some(confidence);
        return Ok(plan);
    }

    let policy = rtts.ctx.cache_policy;
    let vector_ms = rtts.ctx.topology.tier(edge)?.vector_lookup_ms;
    let mut fills = Vec::new();
    if policy.semantic_enabled {
        if let Some(sc) = rtts.ctx.caches.get_mut(&edge).and_then(|c| c.semantic.as_mut()) {
            stages.push(Stage::lookup("vector_lookup", edge, vector_ms));
            if let Some(hit) = sc.semantic_lookup(req.embedding.as_slice(), policy.similarity_threshold, req.arrival_ms)? {
                let mut plan = ExecutionPlan::new(stages, Outcome::CacheHit);
                plan.confidence = Some(confidence);
                plan.cache_hit = Some(CacheHitInfo { kind: CacheKind::Semantic, tier: edge, similarity: hit.similarity });
                return Ok(plan);
            }
            fills.push(CacheFill { tier: edge, kind: CacheKind::Semantic });
        }
    }

    let uplink = rtts.path_ms(edge, params.fallback_tier)?;
    let bytes = req.embedding.dim() as u64 * BYTES_PER_VALUE;
    stages.push(Stage::network("uplink", params.fallback_tier, uplink).with_bytes(bytes));
    let gen = generation_at(rtts.ctx, params.fallback_tier, req.prompt_tokens as u64, req.output_tokens as u64)?;
    stages.push(Stage::compute("generate", params.fallback_tier, gen));

    let mut plan = ExecutionPlan::new(stages, Outcome::Fallback);
    plan.confidence = Some(confidence);
    plan.fills = fills;
    Ok(plan)
}

/// Whole model at the edge tier; nothing leaves it.
pub fn plan_full_edge(req: &Request, params: &FullEdgeParams, ctx: &mut PlanContext<'_>) -> Result<ExecutionPlan> {
    let edge = params.edge_tier;
    let rtt = Rtts::new(ctx).get(edge)?;
    let gen = generation_latency_ms(
        &params.model,
        &params.hardware,
        req.prompt_tokens as u64,
        req.output_tokens as u64,
        ctx.quantization,
    );
    Ok(ExecutionPlan::new(
        vec![Stage::network("edge_rtt", edge, rtt), Stage::compute("generate", edge, gen)],
        Outcome::FullGeneration,
    ))
}

/// Embed at the edge, retrieve top-k documents at the CDN tier, ship them to
/// the generation tier and generate with the enlarged context.
pub fn plan_rag_over_cdn(req: &Request, params: &RagParams, ctx: &mut PlanContext<'_>) -> Result<ExecutionPlan> {
    let docs = match ctx.documents {
        Some(d) if !d.is_empty() => d,
        _ => return Err(SimError::EmptyDocumentIndex),
    };
    let retrieved: Vec<u64> = docs.ann_query(req.embedding.as_slice(), params.k)?.into_iter().map(|(id, _)| id).collect();
    let doc_tokens = retrieved.len() as u64 * params.per_doc_tokens as u64;

    let mut rtts = Rtts::new(ctx);
    let embed = Stage::new("embed", params.embed_tier, rtts.get(params.embed_tier)?, 0.0, params.embed_ms);
    let to_retriever = rtts.path_ms(params.embed_tier, params.retrieval_tier)?;
    let retrieve = Stage::new("retrieve", params.retrieval_tier, to_retriever, params.retrieval_ms, 0.0);
    let transfer = Stage::network("transfer", params.generation_tier, rtts.path_ms(params.retrieval_tier, params.generation_tier)?)
        .with_bytes(doc_tokens * BYTES_PER_VALUE);
    let n_ctx = req.prompt_tokens as u64 + doc_tokens;
    let gen = generation_at(rtts.ctx, params.generation_tier, n_ctx, req.output_tokens as u64)?;
    let generate = Stage::compute("generate", params.generation_tier, gen);

    let mut plan = ExecutionPlan::new(vec![embed, retrieve, transfer, generate], Outcome::RagGeneration);
    plan.retrieved_docs = retrieved;
    Ok(plan)
}

pub fn dispatch(req: &Request, architecture: &Architecture, ctx: &mut PlanContext<'_>) -> Result<ExecutionPlan> {
    match architecture {
        Architecture::VectorCacheOnly(p) => plan_vector_cache_only(req, p, ctx),
        Architecture::SplitInference(p) => plan_split_inference(req, p, ctx),
        Architecture::FullEdgeInference(p) => plan_full_edge(req, p, ctx),
        Architecture::RagOverCdn(p) => plan_rag_over_cdn(req, p, ctx),
    }
}
