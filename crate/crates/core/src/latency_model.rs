//! Compute- and memory-side latency estimates for transformer inference.
//!
//! FLOP counts follow the attention cost `2·n²·d` per head, multiplied by the
//! number of heads and layers. Counts are exact `u128` integers (saturating at
//! `u128::MAX`). Latencies are `f64` milliseconds.
//!
//! A per-token latency is the larger of the compute-bound and memory-bound
//! estimates, scaled by a precision-dependent retention factor. Profiles that
//! carry a calibrated `base_per_token_ms` skip the roofline estimate entirely.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Precision {
    FP32,
    FP16,
    INT8,
    INT4,
}

impl Precision {
    pub const ALL: [Precision; 4] = [Precision::FP32, Precision::FP16, Precision::INT8, Precision::INT4];

    pub fn bytes_per_param(self) -> f64 {
        match self {
            Precision::FP32 => 4.0,
            Precision::FP16 => 2.0,
            Precision::INT8 => 1.0,
            Precision::INT4 => 0.5,
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl std::str::FromStr for Precision {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FP32" => Ok(Precision::FP32),
            "FP16" => Ok(Precision::FP16),
            "INT8" => Ok(Precision::INT8),
            "INT4" => Ok(Precision::INT4),
            other => Err(SimError::InvalidModel {
                name: String::new(),
                reason: format!("unknown precision `{other}` (expected FP32, FP16, INT8 or INT4)"),
            }),
        }
    }
}

/// Latency retention factor per precision. The defaults are the midpoints of
/// the published reduction ranges: FP16 30–50 %, INT8 60–75 %, INT4 75–80 %.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantizationTable {
    pub fp32: f64,
    pub fp16: f64,
    pub int8: f64,
    pub int4: f64,
}

impl Default for QuantizationTable {
    fn default() -> Self {
        QuantizationTable { fp32: 1.0, fp16: 0.6, int8: 0.325, int4: 0.225 }
    }
}

impl QuantizationTable {
    pub fn multiplier(&self, precision: Precision) -> f64 {
        match precision {
            Precision::FP32 => self.fp32,
            Precision::FP16 => self.fp16,
            Precision::INT8 => self.int8,
            Precision::INT4 => self.int4,
        }
    }

    /// Every factor must be finite and strictly positive. Returns the name of
    /// the first offending entry.
    pub fn validate(&self) -> std::result::Result<(), &'static str> {
        for (name, v) in [("fp32", self.fp32), ("fp16", self.fp16), ("int8", self.int8), ("int4", self.int4)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(name);
            }
        }
        Ok(())
    }
}

/// Retention factor from the default table.
pub fn quantization_multiplier(precision: Precision) -> f64 {
    QuantizationTable::default().multiplier(precision)
}

/// A simulated foundational model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelProfile {
    #[serde(default)]
    pub name: String,
    pub heads: u32,
    pub embed_dim: u32,
    pub layers: u32,
    pub param_count: u64,
    pub precision: Precision,
    /// Calibrated per-token latency on reference hardware. When present it
    /// replaces the roofline estimate.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_per_token_ms: Option<f64>,
}

impl ModelProfile {
    pub fn new(
        name: impl Into<String>,
        heads: u32,
        embed_dim: u32,
        layers: u32,
        param_count: u64,
        precision: Precision,
        base_per_token_ms: Option<f64>,
    ) -> Result<Self> {
        let profile = ModelProfile {
            name: name.into(),
            heads,
            embed_dim,
            layers,
            param_count,
            precision,
            base_per_token_ms,
        };
        profile.validate()?;
        Ok(profile)
    }

    /// GPT-3 175B, FP32, calibrated to 350 ms per generated token on an A100.
    pub fn gpt3_175b() -> Self {
        ModelProfile {
            name: "gpt3-175b".into(),
            heads: 96,
            embed_dim: 128,
            layers: 96,
            param_count: 175_000_000_000,
            precision: Precision::FP32,
            base_per_token_ms: Some(350.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| SimError::InvalidModel { name: self.name.clone(), reason: reason.into() };
        if self.heads == 0 {
            return Err(bad("heads must be at least 1"));
        }
        if self.embed_dim == 0 {
            return Err(bad("embed_dim must be at least 1"));
        }
        if self.layers == 0 {
            return Err(bad("layers must be at least 1"));
        }
        if self.param_count == 0 {
            return Err(bad("param_count must be at least 1"));
        }
        if let Some(base) = self.base_per_token_ms {
            if !(base.is_finite() && base > 0.0) {
                return Err(bad("base_per_token_ms must be finite and positive"));
            }
        }
        Ok(())
    }

    pub fn bytes_per_param(&self) -> f64 {
        self.precision.bytes_per_param()
    }

    pub fn weight_bytes(&self) -> f64 {
        self.param_count as f64 * self.bytes_per_param()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareProfile {
    #[serde(default)]
    pub name: String,
    /// Sustained throughput, FLOP/s.
    pub flops_per_sec: f64,
    /// Device memory bandwidth, bytes/s.
    pub mem_bandwidth_bytes_per_sec: f64,
}

impl HardwareProfile {
    pub fn new(name: impl Into<String>, flops_per_sec: f64, mem_bandwidth_bytes_per_sec: f64) -> Result<Self> {
        let hw = HardwareProfile { name: name.into(), flops_per_sec, mem_bandwidth_bytes_per_sec };
        hw.validate()?;
        Ok(hw)
    }

    /// NVIDIA A100: 312 TFLOP/s dense FP16, 1.6 TB/s HBM.
    pub fn a100() -> Self {
        HardwareProfile { name: "a100".into(), flops_per_sec: 312e12, mem_bandwidth_bytes_per_sec: 1.6e12 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: &str| SimError::InvalidHardware { name: self.name.clone(), reason: reason.into() };
        if !(self.flops_per_sec.is_finite() && self.flops_per_sec > 0.0) {
            return Err(bad("flops_per_sec must be finite and positive"));
        }
        if !(self.mem_bandwidth_bytes_per_sec.is_finite() && self.mem_bandwidth_bytes_per_sec > 0.0) {
            return Err(bad("mem_bandwidth_bytes_per_sec must be finite and positive"));
        }
        Ok(())
    }
}

/// Where a request's latency went. `total_ms` is always
/// `compute_ms + network_ms + cache_lookup_ms`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub compute_ms: f64,
    pub network_ms: f64,
    pub cache_lookup_ms: f64,
    pub total_ms: f64,
}

impl LatencyBreakdown {
    pub fn new(compute_ms: f64, network_ms: f64, cache_lookup_ms: f64) -> Self {
        debug_assert!(compute_ms >= 0.0 && network_ms >= 0.0 && cache_lookup_ms >= 0.0);
        LatencyBreakdown {
            compute_ms,
            network_ms,
            cache_lookup_ms,
            total_ms: compute_ms + network_ms + cache_lookup_ms,
        }
    }
}

/// FLOPs for one attention head over `n` tokens: `2·n²·d`.
pub fn attention_flops_per_head(n: u64, d: u64) -> Result<u128> {
    if d == 0 {
        return Err(SimError::ZeroDimension);
    }
    let n = n as u128;
    Ok(2u128.saturating_mul(n).saturating_mul(n).saturating_mul(d as u128))
}

/// FLOPs for `h` heads: `2·h·n²·d`.
pub fn multihead_flops(n: u64, d: u64, h: u64) -> Result<u128> {
    if h == 0 {
        return Err(SimError::ZeroHeads);
    }
    Ok(attention_flops_per_head(n, d)?.saturating_mul(h as u128))
}

/// Attention FLOPs across every layer of `profile` for an `n`-token sequence.
pub fn model_forward_flops(profile: &ModelProfile, n: u64) -> u128 {
    // A validated profile has non-zero heads and embed_dim.
    multihead_flops(n, profile.embed_dim as u64, profile.heads as u64)
        .unwrap_or(0)
        .saturating_mul(profile.layers as u128)
}

/// Time to stream every weight through memory once.
pub fn memory_bound_per_token_ms(profile: &ModelProfile, hw: &HardwareProfile) -> f64 {
    profile.weight_bytes() / hw.mem_bandwidth_bytes_per_sec * 1000.0
}

pub fn compute_bound_per_token_ms(profile: &ModelProfile, hw: &HardwareProfile, n_ctx: u64) -> f64 {
    model_forward_flops(profile, n_ctx) as f64 / hw.flops_per_sec * 1000.0
}

pub fn per_token_latency_ms(
    profile: &ModelProfile,
    hw: &HardwareProfile,
    n_ctx: u64,
    quant: &QuantizationTable,
) -> f64 {
    let base = match profile.base_per_token_ms {
        Some(calibrated) => calibrated,
        None => compute_bound_per_token_ms(profile, hw, n_ctx).max(memory_bound_per_token_ms(profile, hw)),
    };
    base * quant.multiplier(profile.precision)
}

/// Decode time for `n_out` tokens; linear in the output length.
pub fn generation_latency_ms(
    profile: &ModelProfile,
    hw: &HardwareProfile,
    n_ctx: u64,
    n_out: u64,
    quant: &QuantizationTable,
) -> f64 {
    n_out as f64 * per_token_latency_ms(profile, hw, n_ctx, quant)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny(precision: Precision, params: u64) -> ModelProfile {
        ModelProfile::new("tiny", 1, 1, 1, params, precision, None).unwrap()
    }

    #[test]
    fn per_head_examples() {
        assert_eq!(attention_flops_per_head(2048, 128).unwrap(), 1_073_741_824);
        assert_eq!(attention_flops_per_head(0, 64).unwrap(), 0);
        assert_eq!(attention_flops_per_head(1, 1).unwrap(), 2);
        assert!(matches!(attention_flops_per_head(4, 0), Err(SimError::ZeroDimension)));
    }

    #[test]
    fn multihead_examples() {
        assert_eq!(multihead_flops(2048, 128, 96).unwrap(), 103_079_215_104);
        assert_eq!(multihead_flops(2048, 128, 1).unwrap(), 1_073_741_824);
        assert_eq!(multihead_flops(512, 64, 8).unwrap(), 268_435_456);
        assert!(multihead_flops(8, 8, 0).is_err());
        assert!(multihead_flops(8, 0, 8).is_err());
    }

    #[test]
    fn forward_examples() {
        let gpt3 = ModelProfile::gpt3_175b();
        assert_eq!(model_forward_flops(&gpt3, 2048), 9_895_604_649_984);
        assert_eq!(model_forward_flops(&gpt3, 0), 0);
        let small = ModelProfile::new("s", 2, 4, 2, 10, Precision::FP32, None).unwrap();
        assert_eq!(model_forward_flops(&small, 3), 288);
    }

    #[test]
    fn memory_bound_examples() {
        let a100 = HardwareProfile::a100();
        let int8 = tiny(Precision::INT8, 175_000_000_000);
        assert_eq!(memory_bound_per_token_ms(&int8, &a100), 109.375);
        let fp32 = tiny(Precision::FP32, 175_000_000_000);
        assert_eq!(memory_bound_per_token_ms(&fp32, &a100), 437.5);
        let hw = HardwareProfile::new("slow", 1.0, 4000.0).unwrap();
        assert_eq!(memory_bound_per_token_ms(&tiny(Precision::FP32, 1), &hw), 1.0);
    }

    #[test]
    fn calibrated_per_token() {
        let q = QuantizationTable::default();
        let hw = HardwareProfile::a100();
        let mut gpt3 = ModelProfile::gpt3_175b();
        assert_eq!(per_token_latency_ms(&gpt3, &hw, 2048, &q), 350.0);
        gpt3.precision = Precision::INT8;
        assert_eq!(per_token_latency_ms(&gpt3, &hw, 2048, &q), 113.75);
        assert_eq!(generation_latency_ms(&gpt3, &hw, 0, 4, &q), 455.0);
        gpt3.precision = Precision::FP32;
        assert_eq!(generation_latency_ms(&gpt3, &hw, 0, 10, &q), 3500.0);
        assert_eq!(generation_latency_ms(&gpt3, &hw, 0, 0, &q), 0.0);
    }

    #[test]
    fn uncalibrated_zero_context_is_memory_bound() {
        let q = QuantizationTable::default();
        let hw = HardwareProfile::new("h", 1e9, 1e6).unwrap();
        let m = tiny(Precision::FP32, 1000);
        assert_eq!(per_token_latency_ms(&m, &hw, 0, &q), memory_bound_per_token_ms(&m, &hw));
    }

    #[test]
    fn multiplier_defaults() {
        assert_eq!(quantization_multiplier(Precision::FP32), 1.0);
        assert_eq!(quantization_multiplier(Precision::FP16), 0.6);
        assert_eq!(quantization_multiplier(Precision::INT8), 0.325);
        assert_eq!(quantization_multiplier(Precision::INT4), 0.225);
        assert!("fp8".parse::<Precision>().is_err());
        assert_eq!("int4".parse::<Precision>().unwrap(), Precision::INT4);
    }

    #[test]
    fn profile_validation() {
        assert!(ModelProfile::new("m", 0, 1, 1, 1, Precision::FP16, None).is_err());
        assert!(ModelProfile::new("m", 1, 1, 0, 1, Precision::FP16, None).is_err());
        assert!(ModelProfile::new("m", 1, 1, 1, 0, Precision::FP16, None).is_err());
        assert!(ModelProfile::new("m", 1, 1, 1, 1, Precision::FP16, Some(-1.0)).is_err());
        assert!(HardwareProfile::new("h", 0.0, 1.0).is_err());
        assert!(HardwareProfile::new("h", 1.0, f64::NAN).is_err());
    }

    #[test]
    fn breakdown_total_is_sum() {
        let b = LatencyBreakdown::new(0.1, 0.2, 0.3);
        assert_eq!(b.total_ms, 0.1 + 0.2 + 0.3);
    }

    proptest! {
        #[test]
        fn multihead_is_heads_times_per_head(n in 0u64..100_000, d in 1u64..4096, h in 1u64..256) {
            prop_assert_eq!(multihead_flops(n, d, h).unwrap(), h as u128 * attention_flops_per_head(n, d).unwrap());
        }

        #[test]
        fn per_head_is_quadratic_in_n(n in 1u64..1_000_000, d in 1u64..4096) {
            let a = attention_flops_per_head(n, d).unwrap();
            prop_assert_eq!(attention_flops_per_head(2 * n, d).unwrap(), 4 * a);
            prop_assert!(attention_flops_per_head(n + 1, d).unwrap() > a);
            prop_assert!(attention_flops_per_head(n, d + 1).unwrap() > a);
        }

        #[test]
        fn per_token_respects_both_bounds(
            heads in 1u32..128, dim in 1u32..256, layers in 1u32..128,
            params in 1u64..1_000_000_000_000u64, n_ctx in 0u64..16_384,
            flops in 1e9f64..1e16, bw in 1e6f64..1e13, p in 0usize..4,
        ) {
            let precision = Precision::ALL[p];
            let m = ModelProfile::new("p", heads, dim, layers, params, precision, None).unwrap();
            let hw = HardwareProfile::new("h", flops, bw).unwrap();
            let q = QuantizationTable::default();
            let lat = per_token_latency_ms(&m, &hw, n_ctx, &q);
            let mult = q.multiplier(precision);
            prop_assert!(lat.is_finite() && lat >= 0.0);
            prop_assert!(lat >= memory_bound_per_token_ms(&m, &hw) * mult);
            prop_assert!(lat >= compute_bound_per_token_ms(&m, &hw, n_ctx) * mult);
        }
    }
}
