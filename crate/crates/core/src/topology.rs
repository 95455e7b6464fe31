//! The tier hierarchy: Near-RAN → MEC → Regional DC → Core DC → Cloud.
//!
//! Each tier carries a user↔tier RTT range, its accelerator, optional hosted
//! model and cache capacities. There is exactly one node per tier. Inter-tier
//! hop latency is derived from user RTTs: `max(rtt(upper) - rtt(lower), 0.5)`.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::latency_model::{HardwareProfile, ModelProfile};

/// Floor applied to every derived inter-tier hop.
pub const MIN_HOP_MS: f64 = 0.5;

/// Tiers ordered by distance from the user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TierKind {
    NearRAN,
    MEC,
    RegionalDC,
    CoreDC,
    Cloud,
}

impl TierKind {
    pub const ALL: [TierKind; 5] =
        [TierKind::NearRAN, TierKind::MEC, TierKind::RegionalDC, TierKind::CoreDC, TierKind::Cloud];

    pub fn as_str(self) -> &'static str {
        match self {
            TierKind::NearRAN => "NearRAN",
            TierKind::MEC => "MEC",
            TierKind::RegionalDC => "RegionalDC",
            TierKind::CoreDC => "CoreDC",
            TierKind::Cloud => "Cloud",
        }
    }

    /// Default user↔tier RTT interval in milliseconds.
    pub fn default_rtt_ms(self) -> RttRange {
        let (lower, upper) = match self {
            TierKind::NearRAN => (1.0, 5.0),
            TierKind::MEC => (1.0, 10.0),
            TierKind::RegionalDC => (10.0, 50.0),
            TierKind::CoreDC => (50.0, 200.0),
            TierKind::Cloud => (50.0, 150.0),
        };
        RttRange { lower, upper }
    }
}

impl fmt::Display for TierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Closed interval `[lower, upper]` in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct RttRange {
    pub lower: f64,
    pub upper: f64,
}

impl RttRange {
    pub fn new(lower: f64, upper: f64) -> Self {
        RttRange { lower, upper }
    }

    pub fn fixed(ms: f64) -> Self {
        RttRange { lower: ms, upper: ms }
    }

    pub fn is_valid(&self) -> bool {
        self.lower.is_finite() && self.upper.is_finite() && self.lower >= 0.0 && self.lower <= self.upper
    }

    pub fn midpoint(&self) -> f64 {
        self.lower + (self.upper - self.lower) / 2.0
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }
}

impl From<[f64; 2]> for RttRange {
    fn from([lower, upper]: [f64; 2]) -> Self {
        RttRange { lower, upper }
    }
}

impl From<RttRange> for [f64; 2] {
    fn from(r: RttRange) -> Self {
        [r.lower, r.upper]
    }
}

/// How RTTs are drawn from their ranges.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RttMode {
    #[default]
    Uniform,
    /// Always the interval midpoint; for deterministic hand-checked runs.
    Midpoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TierSpec {
    pub kind: TierKind,
    pub rtt_ms: RttRange,
    pub hardware: HardwareProfile,
    pub model: Option<ModelProfile>,
    pub vector_cache_capacity: usize,
    pub prompt_cache_capacity: usize,
    pub max_concurrent: usize,
    /// Requests waiting beyond this many are rejected. `None` is unbounded.
    pub max_queue: Option<usize>,
    pub vector_lookup_ms: f64,
    pub prompt_lookup_ms: f64,
}

impl TierSpec {
    /// A tier with the default RTT range, no model and no caches.
    pub fn new(kind: TierKind, hardware: HardwareProfile) -> Self {
        TierSpec {
            kind,
            rtt_ms: kind.default_rtt_ms(),
            hardware,
            model: None,
            vector_cache_capacity: 0,
            prompt_cache_capacity: 0,
            max_concurrent: 1,
            max_queue: None,
            vector_lookup_ms: 5.0,
            prompt_lookup_ms: 1.0,
        }
    }

    pub fn with_rtt(mut self, rtt_ms: RttRange) -> Self {
        self.rtt_ms = rtt_ms;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    tiers: Vec<TierSpec>,
    rtt_mode: RttMode,
}

/// Validates tier specs and links each tier to the next one up.
pub fn build_topology(tiers: Vec<TierSpec>, rtt_mode: RttMode) -> Result<Topology> {
    if tiers.is_empty() {
        return Err(SimError::EmptyTopology);
    }
    let mut by_kind: BTreeMap<TierKind, TierSpec> = BTreeMap::new();
    for tier in tiers {
        if !tier.rtt_ms.is_valid() {
            return Err(SimError::InvalidRttRange {
                kind: tier.kind,
                lower: tier.rtt_ms.lower,
                upper: tier.rtt_ms.upper,
            });
        }
        if tier.max_concurrent == 0 {
            return Err(SimError::InvalidScenario(format!("tier {} needs max_concurrent >= 1", tier.kind)));
        }
        tier.hardware.validate()?;
        if let Some(model) = &tier.model {
            model.validate()?;
        }
        let kind = tier.kind;
        if by_kind.insert(kind, tier).is_some() {
            return Err(SimError::DuplicateTier(kind));
        }
    }
    Ok(Topology { tiers: by_kind.into_values().collect(), rtt_mode })
}

impl Topology {
    pub fn tiers(&self) -> &[TierSpec] {
        &self.tiers
    }

    pub fn rtt_mode(&self) -> RttMode {
        self.rtt_mode
    }

    pub fn contains(&self, kind: TierKind) -> bool {
        self.index_of(kind).is_some()
    }

    pub fn tier(&self, kind: TierKind) -> Result<&TierSpec> {
        self.index_of(kind).map(|i| &self.tiers[i]).ok_or(SimError::TierAbsent(kind))
    }

    /// The next tier upward, or `None` for the topmost tier.
    pub fn parent(&self, kind: TierKind) -> Option<TierKind> {
        let i = self.index_of(kind)?;
        self.tiers.get(i + 1).map(|t| t.kind)
    }

    pub fn top(&self) -> TierKind {
        self.tiers.last().expect("topology is never empty").kind
    }

    /// Tiers from `from` up to `to`, both inclusive, following parent links.
    pub fn path_between(&self, from: TierKind, to: TierKind) -> Result<Vec<TierKind>> {
        let start = self.index_of(from).ok_or(SimError::TierAbsent(from))?;
        let end = self.index_of(to).ok_or(SimError::TierAbsent(to))?;
        if end < start {
            return Err(SimError::NotUpstream { lower: from, upper: to });
        }
        Ok(self.tiers[start..=end].iter().map(|t| t.kind).collect())
    }

    pub fn sample_rtt_ms<R: Rng + ?Sized>(&self, kind: TierKind, rng: &mut R) -> Result<f64> {
        Ok(sample_rtt_ms(self.tier(kind)?, self.rtt_mode, rng))
    }

    fn index_of(&self, kind: TierKind) -> Option<usize> {
        self.tiers.iter().position(|t| t.kind == kind)
    }
}

/// Draws a user↔tier RTT. A degenerate interval returns its single point
/// without consuming randomness.
pub fn sample_rtt_ms<R: Rng + ?Sized>(tier: &TierSpec, mode: RttMode, rng: &mut R) -> f64 {
    let RttRange { lower, upper } = tier.rtt_ms;
    if lower == upper {
        return lower;
    }
    match mode {
        RttMode::Midpoint => tier.rtt_ms.midpoint(),
        RttMode::Uniform => {
            let u: f64 = rng.random();
            (lower + (upper - lower) * u).min(upper)
        }
    }
}

pub fn hop_latency_ms(lower_rtt_ms: f64, upper_rtt_ms: f64) -> f64 {
    (upper_rtt_ms - lower_rtt_ms).max(MIN_HOP_MS)
}

/// Sum of hop latencies along `path`, given each tier's user RTT.
pub fn path_latency_ms(path: &[TierKind], mut rtt_of: impl FnMut(TierKind) -> f64) -> f64 {
    path.windows(2).map(|w| hop_latency_ms(rtt_of(w[0]), rtt_of(w[1]))).sum()
}
