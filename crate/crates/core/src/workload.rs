//! Synthetic inference workloads.
//!
//! A stream is a Poisson arrival process. Each request draws a latency class
//! from a weighted mix, a prompt from a Zipf popularity law over a fixed
//! population, and an embedding placed around the prompt's cluster center with
//! Gaussian noise. Prompts that share a cluster are paraphrases of each other;
//! the noise level sets how similar they look to a semantic cache.

use std::fmt;
use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::rng::{splitmix64, stream_rng, SimRng, Stream};
use crate::topology::TierKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WorkloadClass {
    UltraLow,
    Moderate,
    LatencyTolerant,
}

impl WorkloadClass {
    pub const ALL: [WorkloadClass; 3] = [WorkloadClass::UltraLow, WorkloadClass::Moderate, WorkloadClass::LatencyTolerant];

    pub fn as_str(self) -> &'static str {
        match self {
            WorkloadClass::UltraLow => "UltraLow",
            WorkloadClass::Moderate => "Moderate",
            WorkloadClass::LatencyTolerant => "LatencyTolerant",
        }
    }

    /// Latency target interval `(lower, upper)`; the tolerant class is unbounded.
    pub fn latency_target_ms(self) -> (f64, f64) {
        match self {
            WorkloadClass::UltraLow => (1.0, 10.0),
            WorkloadClass::Moderate => (10.0, 100.0),
            WorkloadClass::LatencyTolerant => (100.0, f64::INFINITY),
        }
    }

    /// A completed request slower than this violates its SLA.
    pub fn sla_upper_ms(self) -> f64 {
        self.latency_target_ms().1
    }
}

impl fmt::Display for WorkloadClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for WorkloadClass {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        WorkloadClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| SimError::InvalidWorkload(format!("unknown workload class `{s}`")))
    }
}

/// Classifies a latency target: `(0,10]` ultra-low, `(10,100]` moderate,
/// anything above is latency tolerant.
pub fn class_of(latency_target_ms: f64) -> Result<WorkloadClass> {
    if latency_target_ms.is_nan() || latency_target_ms <= 0.0 {
        return Err(SimError::NonPositiveTarget(latency_target_ms));
    }
    Ok(if latency_target_ms <= 10.0 {
        WorkloadClass::UltraLow
    } else if latency_target_ms <= 100.0 {
        WorkloadClass::Moderate
    } else {
        WorkloadClass::LatencyTolerant
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkloadKind {
    Conversational,
    SemanticSearch,
    Recommendation,
    BatchEmbedding,
    PromptCaching,
}

/// Default placement tier. Each workload kind has a preferred tier; a stricter
/// latency class caps placement at the highest tier whose default RTT range
/// fits inside the class target (MEC for ultra-low, Regional DC for moderate).
pub fn default_tier_for(class: WorkloadClass, kind: WorkloadKind) -> TierKind {
    let preferred = match kind {
        WorkloadKind::Conversational => TierKind::MEC,
        WorkloadKind::SemanticSearch | WorkloadKind::Recommendation => TierKind::RegionalDC,
        WorkloadKind::BatchEmbedding => TierKind::CoreDC,
        WorkloadKind::PromptCaching => TierKind::RegionalDC,
    };
    let cap = match class {
        WorkloadClass::UltraLow => TierKind::MEC,
        WorkloadClass::Moderate => TierKind::RegionalDC,
        WorkloadClass::LatencyTolerant => TierKind::Cloud,
    };
    preferred.min(cap)
}

/// Unit-norm embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f32>);

/// Tolerance on the L2 norm of a stored embedding.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

impl EmbeddingVector {
    /// Scales `values` to unit length. Fails on an empty or all-zero vector.
    pub fn normalized(values: Vec<f32>) -> Result<Self> {
        let norm = l2_norm(&values);
        if values.is_empty() || norm == 0.0 || !norm.is_finite() {
            return Err(SimError::InvalidWorkload("cannot normalize an empty or zero vector".into()));
        }
        let inv = 1.0 / norm;
        Ok(EmbeddingVector(values.into_iter().map(|v| (v as f64 * inv) as f32).collect()))
    }

    /// Accepts values that are already unit length.
    pub fn from_unit(values: Vec<f32>) -> Result<Self> {
        let norm = l2_norm(&values);
        if values.is_empty() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(SimError::InvalidWorkload(format!("embedding norm {norm} is not 1")));
        }
        Ok(EmbeddingVector(values))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.0)
    }
}

fn l2_norm(values: &[f32]) -> f64 {
    values.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub id: u64,
    pub arrival_ms: f64,
    pub class: WorkloadClass,
    pub prompt_tokens: u32,
    pub output_tokens: u32,
    pub embedding: EmbeddingVector,
    pub prompt_key: u64,
    pub population_rank: u64,
}

/// Stable 64-bit identity of the prompt at popularity `rank`.
pub fn prompt_key_for_rank(rank: u64) -> u64 {
    splitmix64(rank ^ 0x7072_6f6d_7074_6b65)
}

/// Inclusive token-count range.
pub type TokenRange = [u32; 2];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputTokenRanges {
    pub ultra_low: TokenRange,
    pub moderate: TokenRange,
    pub latency_tolerant: TokenRange,
}

impl Default for OutputTokenRanges {
    fn default() -> Self {
        OutputTokenRanges { ultra_low: [1, 20], moderate: [20, 100], latency_tolerant: [100, 500] }
    }
}

impl OutputTokenRanges {
    pub fn for_class(&self, class: WorkloadClass) -> TokenRange {
        match class {
            WorkloadClass::UltraLow => self.ultra_low,
            WorkloadClass::Moderate => self.moderate,
            WorkloadClass::LatencyTolerant => self.latency_tolerant,
        }
    }
}

/// Parameters of a synthetic stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadSpec {
    pub duration_ms: f64,
    pub rate_per_sec: f64,
    /// Weights for ultra-low, moderate and latency-tolerant requests.
    pub class_mix: [f64; 3],
    pub zipf_s: f64,
    pub n_prompts: u64,
    pub n_clusters: u64,
    pub cluster_noise_sigma: f64,
    pub embedding_dim: usize,
    pub prompt_tokens: TokenRange,
    pub output_tokens: OutputTokenRanges,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            duration_ms: 60_000.0,
            rate_per_sec: 100.0,
            class_mix: [0.3, 0.5, 0.2],
            zipf_s: 1.1,
            n_prompts: 1000,
            n_clusters: 200,
            cluster_noise_sigma: 0.04,
            embedding_dim: 64,
            prompt_tokens: [16, 512],
            output_tokens: OutputTokenRanges::default(),
        }
    }
}

impl WorkloadSpec {
    /// Returns `(field, reason)` for the first invalid parameter.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.duration_ms) {
            return Err(("duration_ms", "must be finite and >= 0".into()));
        }
        if !(self.rate_per_sec.is_finite() && self.rate_per_sec > 0.0) {
            return Err(("rate_per_sec", "must be finite and > 0".into()));
        }
        if !self.class_mix.iter().all(|&w| finite_nonneg(w)) {
            return Err(("class_mix", "weights must be finite and >= 0".into()));
        }
        if self.class_mix.iter().sum::<f64>() <= 0.0 {
            return Err(("class_mix", "weights must not all be zero".into()));
        }
        if !finite_nonneg(self.zipf_s) {
            return Err(("zipf_s", "must be finite and >= 0".into()));
        }
        if self.n_prompts == 0 {
            return Err(("n_prompts", "population must hold at least one prompt".into()));
        }
        if self.n_clusters == 0 {
            return Err(("n_clusters", "must be at least 1".into()));
        }
        if !finite_nonneg(self.cluster_noise_sigma) {
            return Err(("cluster_noise_sigma", "must be finite and >= 0".into()));
        }
        if self.embedding_dim == 0 {
            return Err(("embedding_dim", "must be at least 1".into()));
        }
        let [lo, hi] = self.prompt_tokens;
        if lo == 0 || lo > hi {
            return Err(("prompt_tokens", format!("range [{lo}, {hi}] must satisfy 1 <= lower <= upper")));
        }
        for (name, [lo, hi]) in [
            ("output_tokens.ultra_low", self.output_tokens.ultra_low),
            ("output_tokens.moderate", self.output_tokens.moderate),
            ("output_tokens.latency_tolerant", self.output_tokens.latency_tolerant),
        ] {
            if lo > hi {
                return Err((name, format!("range [{lo}, {hi}] is inverted")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|(field, reason)| SimError::InvalidWorkload(format!("{field}: {reason}")))
    }
}

/// Inverse-CDF sampler over ranks `1..=n` with mass proportional to `r^-s`.
#[derive(Debug, Clone)]
pub struct ZipfTable {
    cdf: Vec<f64>,
}

impl ZipfTable {
    pub fn new(n: u64, s: f64) -> Result<Self> {
        if n == 0 {
            return Err(SimError::InvalidWorkload("n_prompts: population must hold at least one prompt".into()));
        }
        let weights: Vec<f64> = (1..=n).map(|r| (r as f64).powf(-s)).collect();
        let total: f64 = weights.iter().sum();
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = weights
            .iter()
            .map(|w| {
                acc += w / total;
                acc
            })
            .collect();
        *cdf.last_mut().expect("n >= 1") = 1.0;
        Ok(ZipfTable { cdf })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let u: f64 = rng.random();
        let idx = self.cdf.partition_point(|&c| c <= u);
        idx.min(self.cdf.len() - 1) as u64 + 1
    }
}

/// Unit cluster centers, one per cluster, drawn from their own stream.
pub fn cluster_centers(seed: u64, n_clusters: u64, dim: usize) -> Vec<Vec<f32>> {
    let mut rng = stream_rng(seed, Stream::ClusterCenters);
    (0..n_clusters).map(|_| random_unit_vector(&mut rng, dim)).collect()
}

/// Direction drawn uniformly from the unit sphere.
pub fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f32> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect();
        if let Ok(e) = EmbeddingVector::normalized(v) {
            return e.0;
        }
    }
}

/// Generates the request stream for `spec`; a pure function of its arguments.
pub fn generate_stream(seed: u64, spec: &WorkloadSpec) -> Result<Vec<Request>> {
    spec.validate()?;
    let mut rng: SimRng = stream_rng(seed, Stream::Workload);
    let centers = cluster_centers(seed, spec.n_clusters, spec.embedding_dim);
    let zipf = ZipfTable::new(spec.n_prompts, spec.zipf_s)?;
    let classes = WeightedIndex::new(spec.class_mix)
        .map_err(|e| SimError::InvalidWorkload(format!("class_mix: {e}")))?;
    let gaps = Exp::new(spec.rate_per_sec / 1000.0)
        .map_err(|e| SimError::InvalidWorkload(format!("rate_per_sec: {e}")))?;

    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        t += gaps.sample(&mut rng);
        if t >= spec.duration_ms {
            break;
        }
        let class = WorkloadClass::ALL[classes.sample(&mut rng)];
        let rank = zipf.sample(&mut rng);
        let [in_lo, in_hi] = spec.prompt_tokens;
        let prompt_tokens = rng.random_range(in_lo..=in_hi);
        let [out_lo, out_hi] = spec.output_tokens.for_class(class);
        let output_tokens = rng.random_range(out_lo..=out_hi);

        let center = &centers[(rank % spec.n_clusters) as usize];
        let mut values = Vec::with_capacity(spec.embedding_dim);
        for &c in center {
            let noise: f64 = rng.sample(StandardNormal);
            values.push((c as f64 + spec.cluster_noise_sigma * noise) as f32);
        }
        let embedding = match EmbeddingVector::normalized(values) {
            Ok(e) => e,
            Err(_) => EmbeddingVector(center.clone()),
        };

        out.push(Request {
            id: out.len() as u64,
            arrival_ms: t,
            class,
            prompt_tokens,
            output_tokens,
            embedding,
            prompt_key: prompt_key_for_rank(rank),
            population_rank: rank,
        });
    }
    Ok(out)
}

const STREAM_HEADER: &str = "# id\tarrival_ms\tclass\tprompt_tokens\toutput_tokens\trank\tprompt_key\tembedding";

/// Writes one request per line. Floats use the shortest representation that
/// parses back to the same value.
pub fn write_stream<W: Write>(mut w: W, requests: &[Request]) -> std::io::Result<()> {
    writeln!(w, "{STREAM_HEADER}")?;
    for r in requests {
        write!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}\t{:016x}\t",
            r.id, r.arrival_ms, r.class, r.prompt_tokens, r.output_tokens, r.population_rank, r.prompt_key
        )?;
        for (i, v) in r.embedding.as_slice().iter().enumerate() {
            if i > 0 {
                w.write_all(b",")?;
            }
            write!(w, "{v}")?;
        }
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_stream<R: BufRead>(r: R) -> Result<Vec<Request>> {
    let mut out: Vec<Request> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| SimError::MalformedRecord { line: line_no, reason: e.to_string() })?;
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: &str| SimError::MalformedRecord { line: line_no, reason: reason.to_string() };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 8 {
            return Err(bad("expected 8 tab-separated fields"));
        }
        let values = fields[7]
            .split(',')
            .map(|v| v.parse::<f32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad("bad embedding value"))?;
        let req = Request {
            id: fields[0].parse().map_err(|_| bad("bad id"))?,
            arrival_ms: fields[1].parse().map_err(|_| bad("bad arrival_ms"))?,
            class: fields[2].parse().map_err(|_| bad("bad class"))?,
            prompt_tokens: fields[3].parse().map_err(|_| bad("bad prompt_tokens"))?,
            output_tokens: fields[4].parse().map_err(|_| bad("bad output_tokens"))?,
            population_rank: fields[5].parse().map_err(|_| bad("bad rank"))?,
            prompt_key: u64::from_str_radix(fields[6], 16).map_err(|_| bad("bad prompt_key"))?,
            embedding: EmbeddingVector::from_unit(values).map_err(|e| bad(&e.to_string()))?,
        };
        if !(req.arrival_ms.is_finite() && req.arrival_ms >= 0.0) {
            return Err(bad("arrival_ms must be finite and >= 0"));
        }
        if req.prompt_tokens == 0 {
            return Err(bad("prompt_tokens must be positive"));
        }
        if let Some(prev) = out.last() {
            if req.arrival_ms < prev.arrival_ms {
                return Err(bad("arrival times must be non-decreasing"));
            }
            if req.embedding.dim() != prev.embedding.dim() {
                return Err(bad("embedding dimension changed"));
            }
        }
        out.push(req);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(duration_ms: f64) -> WorkloadSpec {
        WorkloadSpec { duration_ms, rate_per_sec: 1000.0, ..WorkloadSpec::default() }
    }

    #[test]
    fn class_boundaries() {
        assert_eq!(class_of(5.0).unwrap(), WorkloadClass::UltraLow);
        assert_eq!(class_of(10.0).unwrap(), WorkloadClass::UltraLow);
        assert_eq!(class_of(10.5).unwrap(), WorkloadClass::Moderate);
        assert_eq!(class_of(100.0).unwrap(), WorkloadClass::Moderate);
        assert_eq!(class_of(350.0).unwrap(), WorkloadClass::LatencyTolerant);
        assert!(class_of(0.0).is_err());
        assert!(class_of(-3.0).is_err());
        assert!(class_of(f64::NAN).is_err());
    }

    #[test]
    fn placement_defaults() {
        assert_eq!(default_tier_for(WorkloadClass::UltraLow, WorkloadKind::Conversational), TierKind::MEC);
        assert_eq!(default_tier_for(WorkloadClass::Moderate, WorkloadKind::SemanticSearch), TierKind::RegionalDC);
        assert_eq!(default_tier_for(WorkloadClass::Moderate, WorkloadKind::Recommendation), TierKind::RegionalDC);
        assert_eq!(default_tier_for(WorkloadClass::LatencyTolerant, WorkloadKind::BatchEmbedding), TierKind::CoreDC);
        assert_eq!(default_tier_for(WorkloadClass::UltraLow, WorkloadKind::BatchEmbedding), TierKind::MEC);
    }

    #[test]
    fn empty_when_no_time() {
        assert!(generate_stream(1, &spec(0.0)).unwrap().is_empty());
    }

    #[test]
    fn rejects_bad_parameters() {
        let zero_mix = WorkloadSpec { class_mix: [0.0; 3], ..spec(10.0) };
        assert!(generate_stream(1, &zero_mix).is_err());
        let zero_pop = WorkloadSpec { n_prompts: 0, ..spec(10.0) };
        assert!(generate_stream(1, &zero_pop).is_err());
        let zero_rate = WorkloadSpec { rate_per_sec: 0.0, ..spec(10.0) };
        assert!(generate_stream(1, &zero_rate).is_err());
    }

    #[test]
    fn stream_invariants() {
        let s = spec(2000.0);
        let stream = generate_stream(3, &s).unwrap();
        assert!(stream.len() > 1000);
        assert_eq!(stream, generate_stream(3, &s).unwrap());
        assert_ne!(stream, generate_stream(4, &s).unwrap());
        for w in stream.windows(2) {
            assert!(w[0].arrival_ms <= w[1].arrival_ms);
        }
        for r in &stream {
            assert_eq!(r.embedding.dim(), s.embedding_dim);
            assert!((r.embedding.norm() - 1.0).abs() < UNIT_NORM_TOLERANCE);
            assert_eq!(r.prompt_key, prompt_key_for_rank(r.population_rank));
            let [lo, hi] = s.output_tokens.for_class(r.class);
            assert!((lo..=hi).contains(&r.output_tokens));
        }
    }

    #[test]
    fn same_rank_same_cluster() {
        let s = WorkloadSpec { cluster_noise_sigma: 0.0, n_prompts: 20, n_clusters: 7, ..spec(1000.0) };
        let stream = generate_stream(9, &s).unwrap();
        let centers = cluster_centers(9, 7, s.embedding_dim);
        for r in &stream {
            let c = EmbeddingVector::normalized(centers[(r.population_rank % 7) as usize].clone()).unwrap();
            assert_eq!(&r.embedding, &c);
        }
    }

    #[test]
    fn record_round_trip() {
        let stream = generate_stream(5, &spec(200.0)).unwrap();
        let mut buf = Vec::new();
        write_stream(&mut buf, &stream).unwrap();
        let back = read_stream(&buf[..]).unwrap();
        assert_eq!(back, stream);
    }

    #[test]
    fn read_rejects_garbage() {
        assert!(matches!(read_stream(&b"1\t2\n"[..]), Err(SimError::MalformedRecord { line: 1, .. })));
        let unnormalized = "0\t1\tUltraLow\t4\t4\t1\t00000000000000ff\t1,1\n";
        assert!(read_stream(unnormalized.as_bytes()).is_err());
    }

    #[test]
    fn zipf_table_edges() {
        let t = ZipfTable::new(1, 2.0).unwrap();
        let mut rng = stream_rng(0, Stream::Workload);
        assert!((0..100).all(|_| t.sample(&mut rng) == 1));
        assert!(ZipfTable::new(0, 1.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn generation_is_pure(seed in any::<u64>(), s in 0.0f64..2.0, n in 1u64..500, k in 1u64..50) {
            let spec = WorkloadSpec { duration_ms: 100.0, zipf_s: s, n_prompts: n, n_clusters: k, ..spec(0.0) };
            let a = generate_stream(seed, &spec).unwrap();
            prop_assert_eq!(&a, &generate_stream(seed, &spec).unwrap());
            prop_assert!(a.iter().all(|r| (1..=n).contains(&r.population_rank)));
        }
    }
}
