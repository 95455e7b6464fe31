//! Scenario files: a TOML document describing one simulation run.
//!
//! ```toml
//! seed = 42
//!
//! [workload]
//! rate_per_sec = 100.0
//!
//! [[topology.tiers]]
//! kind = "NearRAN"
//! hardware = "l4"
//! vector_cache_capacity = 4096
//!
//! [cache]
//! similarity_threshold = 0.85
//!
//! [architecture]
//! kind = "vector_cache_only"
//! edge_tier = "NearRAN"
//! ```
//!
//! `architecture` may also be given as a bare tag (`architecture = "rag_over_cdn"`),
//! which selects that architecture with default parameters. Hardware and model
//! names resolve against the `[hardware.*]` and `[models.*]` tables first and
//! the built-in presets second.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize};

use crate::cache::{AnnMode, HnswParams, PromptCache, SemanticCache, SemanticCacheConfig, VectorIndex};
use crate::engine::{self, RunOutput, Simulation, SyncConfig};
use crate::error::{ConfigError, Result, SimError};
use crate::latency_model::{HardwareProfile, ModelProfile, Precision, QuantizationTable};
use crate::policies::{
    Architecture, CachePolicy, EncoderLatency, FullEdgeParams, MissMode, RagParams, SplitParams, TierCaches,
    VectorCacheParams,
};
use crate::rng::{splitmix64, stream_rng, Stream};
use crate::topology::{build_topology, RttMode, RttRange, TierKind, TierSpec, Topology};
use crate::workload::{cluster_centers, generate_stream, EmbeddingVector, Request, WorkloadSpec};

/// The accepted architecture tags.
pub const ARCHITECTURE_TAGS: [&str; 4] = ["vector_cache_only", "split_inference", "full_edge_inference", "rag_over_cdn"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LatencyConfig {
    pub quantization: QuantizationTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TierConfig {
    pub kind: TierKind,
    /// Defaults to the tier's standard range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rtt_ms: Option<RttRange>,
    pub hardware: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default)]
    pub vector_cache_capacity: usize,
    #[serde(default)]
    pub prompt_cache_capacity: usize,
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_queue: Option<usize>,
    #[serde(default = "default_vector_lookup_ms")]
    pub vector_lookup_ms: f64,
    #[serde(default = "default_prompt_lookup_ms")]
    pub prompt_lookup_ms: f64,
}

fn default_max_concurrent() -> usize {
    1
}

fn default_vector_lookup_ms() -> f64 {
    5.0
}

fn default_prompt_lookup_ms() -> f64 {
    1.0
}

impl TierConfig {
    pub fn new(kind: TierKind, hardware: &str) -> Self {
        TierConfig {
            kind,
            rtt_ms: None,
            hardware: hardware.into(),
            model: None,
            vector_cache_capacity: 0,
            prompt_cache_capacity: 0,
            max_concurrent: default_max_concurrent(),
            max_queue: None,
            vector_lookup_ms: default_vector_lookup_ms(),
            prompt_lookup_ms: default_prompt_lookup_ms(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopologyConfig {
    pub rtt_mode: RttMode,
    pub tiers: Vec<TierConfig>,
}

impl Default for TopologyConfig {
    /// All five tiers. Edge tiers run `l4` accelerators and cache; the data
    /// centers run `a100`s; the two outermost tiers host the large model.
    fn default() -> Self {
        let tier = |kind, hw: &str, model: Option<&str>, vcap, pcap, conc| TierConfig {
            model: model.map(str::to_string),
            vector_cache_capacity: vcap,
            prompt_cache_capacity: pcap,
            max_concurrent: conc,
            ..TierConfig::new(kind, hw)
        };
        TopologyConfig {
            rtt_mode: RttMode::Uniform,
            tiers: vec![
                tier(TierKind::NearRAN, "l4", None, 4096, 4096, 64),
                tier(TierKind::MEC, "l4", Some("llama2-7b-int4"), 8192, 8192, 64),
                tier(TierKind::RegionalDC, "a100", Some("llama2-7b-int4"), 16384, 16384, 256),
                tier(TierKind::CoreDC, "a100", Some("gpt3-175b"), 0, 0, 512),
                tier(TierKind::Cloud, "a100", Some("gpt3-175b"), 0, 0, 4096),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CacheConfig {
    pub similarity_threshold: f64,
    pub prompt_enabled: bool,
    pub semantic_enabled: bool,
    pub ann_mode: AnnMode,
    pub hnsw: HnswParams,
    /// Absent disables parent→child synchronization.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sync_period_ms: Option<f64>,
    pub sync_top_n: usize,
}

impl Default for CacheConfig {
    fn default() -> Self {
        CacheConfig {
            similarity_threshold: 0.85,
            prompt_enabled: true,
            semantic_enabled: true,
            ann_mode: AnnMode::Exact,
            hnsw: HnswParams::default(),
            sync_period_ms: None,
            sync_top_n: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VectorCacheConfig {
    pub edge_tier: TierKind,
    pub miss_mode: MissMode,
}

impl Default for VectorCacheConfig {
    fn default() -> Self {
        VectorCacheConfig { edge_tier: TierKind::NearRAN, miss_mode: MissMode::CloudGeneration }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    #[default]
    Flat,
    LayerFraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub edge_tier: TierKind,
    pub confidence_threshold: f64,
    pub edge_encoder_latency_ms: f64,
    pub encoder_mode: EncoderMode,
    /// Layers run at the edge in `layer_fraction` mode.
    pub edge_layers: u32,
    /// Model whose layers are split; defaults to the fallback tier's model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoder_model: Option<String>,
    pub fallback_tier: TierKind,
    pub confidence_rank_weight: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            edge_tier: TierKind::MEC,
            confidence_threshold: 0.5,
            edge_encoder_latency_ms: 25.0,
            encoder_mode: EncoderMode::Flat,
            edge_layers: 6,
            encoder_model: None,
            fallback_tier: TierKind::Cloud,
            confidence_rank_weight: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FullEdgeConfig {
    pub edge_tier: TierKind,
    /// Override of the tier's own model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Override of the tier's own hardware.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hardware: Option<String>,
}

impl Default for FullEdgeConfig {
    fn default() -> Self {
        FullEdgeConfig { edge_tier: TierKind::RegionalDC, model: None, hardware: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RagConfig {
    pub k: usize,
    pub embed_tier: TierKind,
    pub embed_ms: f64,
    pub retrieval_tier: TierKind,
    pub retrieval_ms: f64,
    pub generation_tier: TierKind,
    pub per_doc_tokens: u32,
    pub n_documents: usize,
    pub doc_ann_mode: AnnMode,
    /// Spread of document embeddings around the workload's cluster centers.
    pub doc_noise_sigma: f64,
}

impl Default for RagConfig {
    fn default() -> Self {
        RagConfig {
            k: 10,
            embed_tier: TierKind::MEC,
            embed_ms: 3.0,
            retrieval_tier: TierKind::MEC,
            retrieval_ms: 8.0,
            generation_tier: TierKind::RegionalDC,
            per_doc_tokens: 256,
            n_documents: 5000,
            doc_ann_mode: AnnMode::Approximate,
            doc_noise_sigma: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ArchitectureConfig {
    VectorCacheOnly(VectorCacheConfig),
    SplitInference(SplitConfig),
    FullEdgeInference(FullEdgeConfig),
    RagOverCdn(RagConfig),
}

impl ArchitectureConfig {
    /// The architecture named by `tag` with default parameters.
    pub fn from_tag(tag: &str) -> Option<Self> {
        Some(match tag {
            "vector_cache_only" => ArchitectureConfig::VectorCacheOnly(VectorCacheConfig::default()),
            "split_inference" => ArchitectureConfig::SplitInference(SplitConfig::default()),
            "full_edge_inference" => ArchitectureConfig::FullEdgeInference(FullEdgeConfig::default()),
            "rag_over_cdn" => ArchitectureConfig::RagOverCdn(RagConfig::default()),
            _ => return None,
        })
    }

    pub fn tag(&self) -> &'static str {
        match self {
            ArchitectureConfig::VectorCacheOnly(_) => ARCHITECTURE_TAGS[0],
            ArchitectureConfig::SplitInference(_) => ARCHITECTURE_TAGS[1],
            ArchitectureConfig::FullEdgeInference(_) => ARCHITECTURE_TAGS[2],
            ArchitectureConfig::RagOverCdn(_) => ARCHITECTURE_TAGS[3],
        }
    }
}

fn de_architecture<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<ArchitectureConfig, D::Error> {
    use serde::de::Error;
    let value = toml::Value::deserialize(d)?;
    let value = match value {
        toml::Value::String(tag) => {
            let mut t = toml::Table::new();
            t.insert("kind".into(), toml::Value::String(tag));
            toml::Value::Table(t)
        }
        other => other,
    };
    ArchitectureConfig::deserialize(value).map_err(|e| D::Error::custom(e.message()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub workload: WorkloadSpec,
    #[serde(default)]
    pub latency: LatencyConfig,
    #[serde(default)]
    pub hardware: BTreeMap<String, HardwareProfile>,
    #[serde(default)]
    pub models: BTreeMap<String, ModelProfile>,
    #[serde(default)]
    pub topology: TopologyConfig,
    #[serde(default)]
    pub cache: CacheConfig,
    #[serde(deserialize_with = "de_architecture")]
    pub architecture: ArchitectureConfig,
}

/// Built-in hardware presets.
pub fn hardware_presets() -> BTreeMap<String, HardwareProfile> {
    let l4 = HardwareProfile { name: "l4".into(), flops_per_sec: 121e12, mem_bandwidth_bytes_per_sec: 300e9 };
    [HardwareProfile::a100(), l4].into_iter().map(|h| (h.name.clone(), h)).collect()
}

/// Built-in model presets.
pub fn model_presets() -> BTreeMap<String, ModelProfile> {
    let llama = ModelProfile {
        name: "llama2-7b-int4".into(),
        heads: 32,
        embed_dim: 128,
        layers: 32,
        param_count: 7_000_000_000,
        precision: Precision::INT4,
        base_per_token_ms: Some(40.0),
    };
    [ModelProfile::gpt3_175b(), llama].into_iter().map(|m| (m.name.clone(), m)).collect()
}

/// Reads and validates a scenario file.
pub fn parse_scenario(path: &Path) -> Result<Scenario> {
    let raw = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
    parse_scenario_str(&raw)
}

/// Parses and validates scenario text. Diagnostics name the offending key and,
/// when it appears in `raw`, its line.
pub fn parse_scenario_str(raw: &str) -> Result<Scenario> {
    let scenario: Scenario = toml::from_str(raw).map_err(|e| toml_diagnostic(raw, &e))?;
    scenario.check().map_err(|mut e| {
        e.line = find_key_line(raw, &e.key);
        SimError::Config(e)
    })?;
    Ok(scenario)
}

impl Scenario {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario values are representable in TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(SimError::Config)
    }

    fn hardware_catalog(&self) -> BTreeMap<String, HardwareProfile> {
        let mut all = hardware_presets();
        for (name, hw) in &self.hardware {
            all.insert(name.clone(), HardwareProfile { name: name.clone(), ..hw.clone() });
        }
        all
    }

    fn model_catalog(&self) -> BTreeMap<String, ModelProfile> {
        let mut all = model_presets();
        for (name, m) in &self.models {
            all.insert(name.clone(), ModelProfile { name: name.clone(), ..m.clone() });
        }
        all
    }

    fn check(&self) -> std::result::Result<(), ConfigError> {
        let bad = |key: String, msg: String| ConfigError::new(key, msg);

        self.workload.check().map_err(|(field, reason)| bad(format!("workload.{field}"), reason))?;
        self.latency
            .quantization
            .validate()
            .map_err(|f| bad(format!("latency.quantization.{f}"), "must be finite and positive".into()))?;
        for (name, hw) in &self.hardware {
            HardwareProfile { name: name.clone(), ..hw.clone() }
                .validate()
                .map_err(|e| bad(format!("hardware.{name}"), e.to_string()))?;
        }
        for (name, m) in &self.models {
            ModelProfile { name: name.clone(), ..m.clone() }
                .validate()
                .map_err(|e| bad(format!("models.{name}"), e.to_string()))?;
        }

        let hardware = self.hardware_catalog();
        let models = self.model_catalog();
        if self.topology.tiers.is_empty() {
            return Err(bad("topology.tiers".into(), "at least one tier is required".into()));
        }
        let mut seen = BTreeMap::new();
        for (i, t) in self.topology.tiers.iter().enumerate() {
            let key = |f: &str| format!("topology.tiers[{i}].{f}");
            if let Some(prev) = seen.insert(t.kind, i) {
                return Err(bad(key("kind"), format!("tier {} already defined by topology.tiers[{prev}]", t.kind)));
            }
            if !hardware.contains_key(&t.hardware) {
                return Err(bad(key("hardware"), unknown_name("hardware", &t.hardware, hardware.keys())));
            }
            if let Some(m) = &t.model {
                if !models.contains_key(m) {
                    return Err(bad(key("model"), unknown_name("model", m, models.keys())));
                }
            }
            if let Some(r) = t.rtt_ms {
                if !r.is_valid() {
                    return Err(bad(key("rtt_ms"), "needs 0 <= lower <= upper, both finite".into()));
                }
            }
            if t.max_concurrent == 0 {
                return Err(bad(key("max_concurrent"), "must be at least 1".into()));
            }
            for (f, v) in [("vector_lookup_ms", t.vector_lookup_ms), ("prompt_lookup_ms", t.prompt_lookup_ms)] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(bad(key(f), "must be finite and non-negative".into()));
                }
            }
        }
        let has = |k: TierKind| seen.contains_key(&k);
        let tier_cfg = |k: TierKind| &self.topology.tiers[seen[&k]];

        let c = &self.cache;
        if !(c.similarity_threshold.is_finite() && (-1.0..=1.0).contains(&c.similarity_threshold)) {
            return Err(bad("cache.similarity_threshold".into(), format!("{} is outside [-1, 1]", c.similarity_threshold)));
        }
        if c.hnsw.m < 2 {
            return Err(bad("cache.hnsw.m".into(), "must be at least 2".into()));
        }
        if c.hnsw.ef_search == 0 {
            return Err(bad("cache.hnsw.ef_search".into(), "must be at least 1".into()));
        }
        if c.hnsw.ef_construction == 0 {
            return Err(bad("cache.hnsw.ef_construction".into(), "must be at least 1".into()));
        }
        if let Some(p) = c.sync_period_ms {
            if !(p.is_finite() && p > 0.0) {
                return Err(bad("cache.sync_period_ms".into(), "must be positive; omit it to disable sync".into()));
            }
        }
        if c.sync_top_n == 0 {
            return Err(bad("cache.sync_top_n".into(), "must be at least 1".into()));
        }

        let missing_tier = |field: &str, k: TierKind| bad(format!("architecture.{field}"), format!("tier {k} is not in the topology"));
        let needs_model = |field: &str, k: TierKind| -> std::result::Result<(), ConfigError> {
            if !has(k) {
                return Err(missing_tier(field, k));
            }
            if tier_cfg(k).model.is_none() {
                return Err(bad(format!("architecture.{field}"), format!("tier {k} hosts no model")));
            }
            Ok(())
        };
        let upstream = |lo_field: &str, lo: TierKind, hi: TierKind| -> std::result::Result<(), ConfigError> {
            if hi < lo {
                return Err(bad(format!("architecture.{lo_field}"), format!("tier {lo} must not sit above {hi}")));
            }
            Ok(())
        };
        match &self.architecture {
            ArchitectureConfig::VectorCacheOnly(v) => {
                if !has(v.edge_tier) {
                    return Err(missing_tier("edge_tier", v.edge_tier));
                }
                let top = *seen.keys().next_back().expect("non-empty");
                if v.edge_tier != top && tier_cfg(top).model.is_none() {
                    return Err(bad("topology.tiers".into(), format!("top tier {top} must host a model")));
                }
                let t = tier_cfg(v.edge_tier);
                let usable = (c.semantic_enabled && t.vector_cache_capacity > 0)
                    || (c.prompt_enabled && t.prompt_cache_capacity > 0);
                if (c.semantic_enabled || c.prompt_enabled) && !usable {
                    return Err(bad(
                        "architecture.edge_tier".into(),
                        format!("tier {} has no capacity for any enabled cache", v.edge_tier),
                    ));
                }
            }
            ArchitectureConfig::SplitInference(s) => {
                if !has(s.edge_tier) {
                    return Err(missing_tier("edge_tier", s.edge_tier));
                }
                needs_model("fallback_tier", s.fallback_tier)?;
                upstream("edge_tier", s.edge_tier, s.fallback_tier)?;
                if !(0.0..=1.0).contains(&s.confidence_threshold) {
                    return Err(bad(
                        "architecture.confidence_threshold".into(),
                        format!("{} is outside [0, 1]", s.confidence_threshold),
                    ));
                }
                if !(0.0..=1.0).contains(&s.confidence_rank_weight) {
                    return Err(bad("architecture.confidence_rank_weight".into(), "must lie in [0, 1]".into()));
                }
                if !(s.edge_encoder_latency_ms.is_finite() && s.edge_encoder_latency_ms >= 0.0) {
                    return Err(bad("architecture.edge_encoder_latency_ms".into(), "must be finite and non-negative".into()));
                }
                if let Some(m) = &s.encoder_model {
                    if !models.contains_key(m) {
                        return Err(bad("architecture.encoder_model".into(), unknown_name("model", m, models.keys())));
                    }
                }
                if s.encoder_mode == EncoderMode::LayerFraction {
                    let model_name = s.encoder_model.clone().or_else(|| tier_cfg(s.fallback_tier).model.clone());
                    let layers = model_name.and_then(|n| models.get(&n).map(|m| m.layers)).unwrap_or(0);
                    if s.edge_layers > layers {
                        return Err(bad("architecture.edge_layers".into(), format!("exceeds the model's {layers} layers")));
                    }
                }
            }
            ArchitectureConfig::FullEdgeInference(f) => {
                if !has(f.edge_tier) {
                    return Err(missing_tier("edge_tier", f.edge_tier));
                }
                match &f.model {
                    Some(m) if !models.contains_key(m) => {
                        return Err(bad("architecture.model".into(), unknown_name("model", m, models.keys())));
                    }
                    None if tier_cfg(f.edge_tier).model.is_none() => {
                        return Err(bad("architecture.model".into(), format!("tier {} hosts no model", f.edge_tier)));
                    }
                    _ => {}
                }
                if let Some(h) = &f.hardware {
                    if !hardware.contains_key(h) {
                        return Err(bad("architecture.hardware".into(), unknown_name("hardware", h, hardware.keys())));
                    }
                }
            }
            ArchitectureConfig::RagOverCdn(r) => {
                if r.k == 0 {
                    return Err(bad("architecture.k".into(), "must be at least 1".into()));
                }
                if r.n_documents == 0 {
                    return Err(bad("architecture.n_documents".into(), "the document index must not be empty".into()));
                }
                for (f, k) in [("embed_tier", r.embed_tier), ("retrieval_tier", r.retrieval_tier)] {
                    if !has(k) {
                        return Err(missing_tier(f, k));
                    }
                }
                needs_model("generation_tier", r.generation_tier)?;
                upstream("embed_tier", r.embed_tier, r.retrieval_tier)?;
                upstream("retrieval_tier", r.retrieval_tier, r.generation_tier)?;
                for (f, v) in [("embed_ms", r.embed_ms), ("retrieval_ms", r.retrieval_ms), ("doc_noise_sigma", r.doc_noise_sigma)] {
                    if !(v.is_finite() && v >= 0.0) {
                        return Err(bad(format!("architecture.{f}"), "must be finite and non-negative".into()));
                    }
                }
            }
        }
        Ok(())
    }

    /// Resolves names, builds the topology, caches and document index, and
    /// generates the request stream.
    pub fn build(&self) -> Result<(Simulation, Vec<Request>)> {
        self.validate()?;
        let hardware = self.hardware_catalog();
        let models = self.model_catalog();

        let specs = self
            .topology
            .tiers
            .iter()
            .map(|t| TierSpec {
                kind: t.kind,
                rtt_ms: t.rtt_ms.unwrap_or_else(|| t.kind.default_rtt_ms()),
                hardware: hardware[&t.hardware].clone(),
                model: t.model.as_ref().map(|m| models[m].clone()),
                vector_cache_capacity: t.vector_cache_capacity,
                prompt_cache_capacity: t.prompt_cache_capacity,
                max_concurrent: t.max_concurrent,
                max_queue: t.max_queue,
                vector_lookup_ms: t.vector_lookup_ms,
                prompt_lookup_ms: t.prompt_lookup_ms,
            })
            .collect();
        let topology = build_topology(specs, self.topology.rtt_mode)?;
        let caches = self.build_caches(&topology)?;
        let architecture = self.resolve_architecture(&topology, &hardware, &models)?;
        let documents = match &self.architecture {
            ArchitectureConfig::RagOverCdn(r) => Some(self.build_documents(r)?),
            _ => None,
        };
        let requests = generate_stream(self.seed, &self.workload)?;
        let sim = Simulation {
            seed: self.seed,
            topology,
            architecture,
            caches,
            cache_policy: CachePolicy {
                prompt_enabled: self.cache.prompt_enabled,
                semantic_enabled: self.cache.semantic_enabled,
                similarity_threshold: self.cache.similarity_threshold,
            },
            quantization: self.latency.quantization,
            documents,
            population: self.workload.n_prompts,
            sync: SyncConfig { period_ms: self.cache.sync_period_ms, top_n: self.cache.sync_top_n },
            horizon_ms: self.workload.duration_ms,
        };
        Ok((sim, requests))
    }

    fn build_caches(&self, topology: &Topology) -> Result<BTreeMap<TierKind, TierCaches>> {
        let mut out = BTreeMap::new();
        for t in topology.tiers() {
            let prompt = (t.prompt_cache_capacity > 0).then(|| PromptCache::new(t.prompt_cache_capacity)).transpose()?;
            let semantic = if t.vector_cache_capacity > 0 {
                let cfg = SemanticCacheConfig {
                    similarity_threshold: self.cache.similarity_threshold,
                    capacity: t.vector_cache_capacity,
                    ann_mode: self.cache.ann_mode,
                    hnsw: self.cache.hnsw,
                };
                let rng = stream_rng(splitmix64(self.seed ^ t.kind as u64), Stream::IndexBuild);
                Some(SemanticCache::new(self.workload.embedding_dim, cfg, rng)?)
            } else {
                None
            };
            if prompt.is_some() || semantic.is_some() {
                out.insert(t.kind, TierCaches { prompt, semantic });
            }
        }
        Ok(out)
    }

    fn resolve_architecture(
        &self,
        topology: &Topology,
        hardware: &BTreeMap<String, HardwareProfile>,
        models: &BTreeMap<String, ModelProfile>,
    ) -> Result<Architecture> {
        Ok(match &self.architecture {
            ArchitectureConfig::VectorCacheOnly(v) => {
                Architecture::VectorCacheOnly(VectorCacheParams { edge_tier: v.edge_tier, miss_mode: v.miss_mode })
            }
            ArchitectureConfig::SplitInference(s) => {
                let encoder = match s.encoder_mode {
                    EncoderMode::Flat => EncoderLatency::Flat { ms: s.edge_encoder_latency_ms },
                    EncoderMode::LayerFraction => {
                        let model = match &s.encoder_model {
                            Some(m) => models[m].clone(),
                            None => topology.tier(s.fallback_tier)?.model.clone().expect("validated"),
                        };
                        let hardware = topology.tier(s.edge_tier)?.hardware.clone();
                        EncoderLatency::LayerFraction { edge_layers: s.edge_layers, model, hardware }
                    }
                };
                Architecture::SplitInference(SplitParams {
                    edge_tier: s.edge_tier,
                    confidence_threshold: s.confidence_threshold,
                    encoder,
                    fallback_tier: s.fallback_tier,
                    confidence_rank_weight: s.confidence_rank_weight,
                })
            }
            ArchitectureConfig::FullEdgeInference(f) => {
                let tier = topology.tier(f.edge_tier)?;
                Architecture::FullEdgeInference(FullEdgeParams {
                    edge_tier: f.edge_tier,
                    model: match &f.model {
                        Some(m) => models[m].clone(),
                        None => tier.model.clone().expect("validated"),
                    },
                    hardware: match &f.hardware {
                        Some(h) => hardware[h].clone(),
                        None => tier.hardware.clone(),
                    },
                })
            }
            ArchitectureConfig::RagOverCdn(r) => Architecture::RagOverCdn(RagParams {
                k: r.k,
                embed_tier: r.embed_tier,
                embed_ms: r.embed_ms,
                retrieval_tier: r.retrieval_tier,
                retrieval_ms: r.retrieval_ms,
                generation_tier: r.generation_tier,
                per_doc_tokens: r.per_doc_tokens,
            }),
        })
    }

    /// Documents are spread around the workload's cluster centers so queries
    /// find topical neighbors.
    fn build_documents(&self, r: &RagConfig) -> Result<VectorIndex> {
        let dim = self.workload.embedding_dim;
        let centers = cluster_centers(self.seed, self.workload.n_clusters, dim);
        let mut rng = stream_rng(self.seed, Stream::Documents);
        let mut index =
            VectorIndex::with_mode(dim, r.doc_ann_mode, self.cache.hnsw, stream_rng(self.seed, Stream::IndexBuild));
        for id in 0..r.n_documents {
            let center = &centers[id % centers.len()];
            let values: Vec<f32> = center
                .iter()
                .map(|&c| (c as f64 + r.doc_noise_sigma * rng.sample::<f64, _>(StandardNormal)) as f32)
                .collect();
            let v = EmbeddingVector::normalized(values).map(|e| e.as_slice().to_vec()).unwrap_or_else(|_| center.clone());
            index.insert(id as u64, &v)?;
        }
        Ok(index)
    }
}

/// Builds and runs a scenario.
pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput> {
    let (sim, requests) = scenario.build()?;
    engine::run(sim, &requests)
}

fn unknown_name<'a>(what: &str, name: &str, known: impl Iterator<Item = &'a String>) -> String {
    let known: Vec<&str> = known.map(String::as_str).collect();
    format!("unknown {what} `{name}` (known: {})", known.join(", "))
}

/// Turns a TOML deserialization error into a keyed diagnostic.
fn toml_diagnostic(raw: &str, e: &toml::de::Error) -> SimError {
    let message = e.message().trim().to_string();
    let offset = e.span().map(|s| s.start);
    let (section, key_on_line) = offset.map(|o| key_at_offset(raw, o)).unwrap_or_default();
    let quoted = ["missing field `", "unknown field `"]
        .iter()
        .find_map(|prefix| message.strip_prefix(prefix).and_then(|rest| rest.split('`').next()));
    let key = match quoted {
        Some(field) => join_key(&section, field),
        None => key_on_line.unwrap_or_else(|| if section.is_empty() { "scenario".into() } else { section.clone() }),
    };
    let key = if message.contains("unknown variant") && key.starts_with("architecture") && !key.ends_with(".kind") {
        "architecture".to_string()
    } else {
        key
    };
    let line = find_key_line(raw, &key).or_else(|| offset.map(|o| line_of(raw, o)));
    SimError::Config(ConfigError { key, line, message })
}

fn join_key(section: &str, key: &str) -> String {
    if section.is_empty() {
        key.to_string()
    } else {
        format!("{section}.{key}")
    }
}

fn line_of(raw: &str, offset: usize) -> usize {
    raw[..offset.min(raw.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

/// Walks `raw` line by line, tracking the current table header. Array-of-table
/// entries are numbered, e.g. `topology.tiers[2]`.
fn for_each_line(raw: &str, mut f: impl FnMut(usize, usize, &str, &str) -> bool) {
    let mut section = String::new();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut offset = 0;
    for (i, line) in raw.split('\n').enumerate() {
        let t = line.trim();
        if let Some(name) = t.strip_prefix("[[").and_then(|r| r.split("]]").next()) {
            let name = name.trim().to_string();
            let n = counts.entry(name.clone()).or_insert(0);
            section = format!("{name}[{n}]");
            *n += 1;
        } else if let Some(name) = t.strip_prefix('[').and_then(|r| r.split(']').next()) {
            section = name.trim().to_string();
        }
        if f(i + 1, offset, &section, t) {
            return;
        }
        offset += line.len() + 1;
    }
}

fn key_of_line(t: &str) -> Option<&str> {
    if t.starts_with('[') || t.starts_with('#') {
        return None;
    }
    t.split_once('=').map(|(k, _)| k.trim().trim_matches('"'))
}

/// `(section, dotted key)` of the line containing byte `offset`.
fn key_at_offset(raw: &str, offset: usize) -> (String, Option<String>) {
    let mut found = (String::new(), None);
    for_each_line(raw, |_, start, section, t| {
        found = (section.to_string(), key_of_line(t).map(|k| join_key(section, k)));
        start + t.len() >= offset
    });
    found
}

/// 1-based line of the dotted `key`, if it is spelled out in `raw`.
pub fn find_key_line(raw: &str, key: &str) -> Option<usize> {
    let mut found = None;
    for_each_line(raw, |line, _, section, t| {
        let header_match = t.starts_with('[') && section == key;
        let key_match = key_of_line(t).is_some_and(|k| join_key(section, k) == key);
        if header_match || key_match {
            found = Some(line);
        }
        found.is_some()
    });
    found
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "seed = 7\narchitecture = \"vector_cache_only\"\n";

    fn config_err(raw: &str) -> ConfigError {
        match parse_scenario_str(raw) {
            Err(SimError::Config(e)) => e,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_scenario_uses_defaults() {
        let s = parse_scenario_str(MINIMAL).unwrap();
        assert_eq!(s.seed, 7);
        assert_eq!(s.workload, WorkloadSpec::default());
        assert_eq!(s.cache, CacheConfig::default());
        assert_eq!(s.topology, TopologyConfig::default());
        assert_eq!(s.architecture, ArchitectureConfig::VectorCacheOnly(VectorCacheConfig::default()));
    }

    #[test]
    fn round_trip() {
        let s = parse_scenario_str(MINIMAL).unwrap();
        assert_eq!(parse_scenario_str(&s.to_toml()).unwrap(), s);
        for tag in ARCHITECTURE_TAGS {
            let s = Scenario { architecture: ArchitectureConfig::from_tag(tag).unwrap(), ..s.clone() };
            assert_eq!(parse_scenario_str(&s.to_toml()).unwrap(), s, "{tag}");
        }
    }

    #[test]
    fn threshold_out_of_range_names_key_and_line() {
        let e = config_err("seed = 1\narchitecture = \"vector_cache_only\"\n[cache]\nsimilarity_threshold = 1.5\n");
        assert_eq!(e.key, "cache.similarity_threshold");
        assert_eq!(e.line, Some(4));
    }

    #[test]
    fn unknown_architecture_lists_tags() {
        let e = config_err("seed = 1\narchitecture = \"hybrid\"\n");
        assert_eq!(e.key, "architecture");
        for tag in ARCHITECTURE_TAGS {
            assert!(e.message.contains(tag), "{}", e.message);
        }
        let e = config_err("seed = 1\n[architecture]\nkind = \"hybrid\"\n");
        assert!(e.key.starts_with("architecture"));
        assert!(e.message.contains("rag_over_cdn"));
    }

    #[test]
    fn missing_and_unknown_keys() {
        let e = config_err("architecture = \"vector_cache_only\"\n");
        assert_eq!(e.key, "seed");
        let e = config_err("seed = 1\narchitecture = \"vector_cache_only\"\n[workload]\nzipf_exponent = 2.0\n");
        assert_eq!(e.key, "workload.zipf_exponent");
        assert_eq!(e.line, Some(4));
        let e = config_err("seed = 1\n[architecture]\nkind = \"split_inference\"\nconfidence_threshhold = 0.3\n");
        assert_eq!(e.key, "architecture.confidence_threshhold");
        assert_eq!(e.line, Some(4));
    }

    #[test]
    fn tier_errors_are_indexed() {
        let raw = "seed = 1\narchitecture = \"full_edge_inference\"\n\
                   [[topology.tiers]]\nkind = \"MEC\"\nhardware = \"l4\"\nmodel = \"llama2-7b-int4\"\n\
                   [[topology.tiers]]\nkind = \"RegionalDC\"\nhardware = \"a100\"\nmax_concurrent = 0\n";
        let e = config_err(raw);
        assert_eq!(e.key, "topology.tiers[1].max_concurrent");
        assert_eq!(e.line, Some(10));
    }

    #[test]
    fn semantic_checks() {
        let e = config_err("seed = 1\n[architecture]\nkind = \"split_inference\"\nconfidence_threshold = 1.01\n");
        assert_eq!(e.key, "architecture.confidence_threshold");
        let e = config_err("seed = 1\n[architecture]\nkind = \"rag_over_cdn\"\nk = 0\n");
        assert_eq!(e.key, "architecture.k");
        let e = config_err("seed = 1\narchitecture = \"vector_cache_only\"\n[workload]\nrate_per_sec = -3.0\n");
        assert_eq!(e.key, "workload.rate_per_sec");
        let e = config_err("seed = 1\n[architecture]\nkind = \"full_edge_inference\"\nedge_tier = \"NearRAN\"\n");
        assert_eq!(e.key, "architecture.model");
    }

    #[test]
    fn builds_simulation() {
        let mut s = parse_scenario_str(MINIMAL).unwrap();
        s.workload.duration_ms = 500.0;
        let (sim, reqs) = s.build().unwrap();
        assert_eq!(sim.topology.tiers().len(), 5);
        assert_eq!(sim.caches.len(), 3);
        assert!(!reqs.is_empty());
    }
}
