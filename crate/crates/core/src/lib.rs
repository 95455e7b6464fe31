//! Discrete-event simulator for tiered Telco "AI edge" inference.
//!
//! The crate models a Near-RAN → MEC → Regional DC → Core DC → Cloud hierarchy,
//! synthetic foundational-model workloads, per-tier prompt and semantic caches,
//! and four deployment architectures (vector cache only, split inference, full
//! edge inference, RAG over CDN). Runs are deterministic for a given seed.

pub mod cache;
pub mod engine;
pub mod error;
pub mod latency_model;
pub mod policies;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod topology;
pub mod workload;

pub use error::{ConfigError, Result, SimError};
