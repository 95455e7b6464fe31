//! Per-tier response caches.
//!
//! [`PromptCache`] is an exact-match cache keyed by the 64-bit prompt hash.
//! [`SemanticCache`] stores one embedding per cached response and answers a
//! query when its nearest stored neighbor reaches the cosine threshold. Both
//! evict least-recently-used entries and record per-entry hit counts, which
//! drive parent→child synchronization.

mod hnsw;
mod lru;
mod vector_index;

use std::collections::HashMap;
use std::io::Write;

use serde::Serialize;

pub use hnsw::{Hnsw, HnswParams};
pub use lru::LruOrder;
pub use vector_index::{AnnMode, VectorIndex};

use crate::error::{Result, SimError};
use crate::rng::SimRng;

/// Inner product accumulated in `f64`, left to right.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CacheEntry {
    pub id: u64,
    /// Identity of the cached response (the originating prompt key). A cache
    /// holds at most one entry per content id.
    pub content_id: u64,
    pub payload_tokens: u32,
    pub inserted_at_ms: f64,
    pub last_access_ms: f64,
    pub hit_count: u64,
}

impl CacheEntry {
    fn new(id: u64, content_id: u64, payload_tokens: u32, now_ms: f64) -> Self {
        CacheEntry { id, content_id, payload_tokens, inserted_at_ms: now_ms, last_access_ms: now_ms, hit_count: 0 }
    }

    fn record_hit(&mut self, now_ms: f64) {
        self.hit_count += 1;
        self.last_access_ms = self.last_access_ms.max(now_ms);
    }
}

fn by_popularity(a: &CacheEntry, b: &CacheEntry) -> std::cmp::Ordering {
    b.hit_count.cmp(&a.hit_count).then(a.content_id.cmp(&b.content_id))
}

/// Exact prompt-hash cache with LRU eviction.
#[derive(Debug, Clone)]
pub struct PromptCache {
    capacity: usize,
    entries: HashMap<u64, CacheEntry>,
    lru: LruOrder,
}

impl PromptCache {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(SimError::InvalidCache("prompt cache capacity must be at least 1".into()));
        }
        Ok(PromptCache { capacity, entries: HashMap::new(), lru: LruOrder::new() })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: u64) -> bool {
        self.entries.contains_key(&key)
    }

    pub fn get(&self, key: u64) -> Option<&CacheEntry> {
        self.entries.get(&key)
    }

    pub fn prompt_lookup(&mut self, key: u64, now_ms: f64) -> Option<&CacheEntry> {
        let entry = self.entries.get_mut(&key)?;
        entry.record_hit(now_ms);
        self.lru.touch(key);
        Some(entry)
    }

    /// Stores `key`, evicting the least recently used entry when full. A key
    /// already present is refreshed in place.
    pub fn insert(&mut self, key: u64, payload_tokens: u32, now_ms: f64) -> Option<CacheEntry> {
        if let Some(entry) = self.entries.get_mut(&key) {
            entry.payload_tokens = payload_tokens;
            entry.last_access_ms = entry.last_access_ms.max(now_ms);
            self.lru.touch(key);
            return None;
        }
        let evicted = if self.entries.len() >= self.capacity {
            self.lru.pop_lru().and_then(|old| self.entries.remove(&old))
        } else {
            None
        };
        self.entries.insert(key, CacheEntry::new(key, key, payload_tokens, now_ms));
        self.lru.push(key);
        evicted
    }

    /// Entries from most to least recently used.
    pub fn entries(&self) -> impl Iterator<Item = &CacheEntry> + '_ {
        self.lru.iter().map(|k| &self.entries[&k])
    }

    pub fn dump<W: Write>(&self, w: W, tier: &str) -> std::io::Result<()> {
        dump_entries(w, tier, "prompt", self.entries())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SemanticCacheConfig {
    pub similarity_threshold: f64,
    pub capacity: usize,
    pub ann_mode: AnnMode,
    pub hnsw: HnswParams,
}

impl Default for SemanticCacheConfig {
    fn default() -> Self {
        SemanticCacheConfig {
            similarity_threshold: 0.85,
            capacity: 1024,
            ann_mode: AnnMode::Exact,
            hnsw: HnswParams::default(),
        }
    }
}

impl SemanticCacheConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.similarity_threshold) {
            return Err(SimError::InvalidCache(format!(
                "similarity_threshold {} outside [-1, 1]",
                self.similarity_threshold
            )));
        }
        if self.capacity == 0 {
            return Err(SimError::InvalidCache("semantic cache capacity must be at least 1".into()));
        }
        if self.hnsw.m < 2 || self.hnsw.ef_search == 0 || self.hnsw.ef_construction == 0 {
            return Err(SimError::InvalidCache("hnsw needs m >= 2 and positive ef values".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticHit {
    pub entry: CacheEntry,
    pub similarity: f64,
}

/// Embedding-keyed response cache.
#[derive(Debug, Clone)]
pub struct SemanticCache {
    config: SemanticCacheConfig,
    index: VectorIndex,
    entries: HashMap<u64, CacheEntry>,
    by_content: HashMap<u64, u64>,
    lru: LruOrder,
    next_id: u64,
}

impl SemanticCache {
    pub fn new(dim: usize, config: SemanticCacheConfig, rng: SimRng) -> Result<Self> {
        config.validate()?;
        if dim == 0 {
            return Err(SimError::ZeroDimension);
        }
        Ok(SemanticCache {
            config,
            index: VectorIndex::with_mode(dim, config.ann_mode, config.hnsw, rng),
            entries: HashMap::new(),
            by_content: HashMap::new(),
            lru: LruOrder::new(),
            next_id: 0,
        })
    }

    pub fn config(&self) -> &SemanticCacheConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.index.dim()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&CacheEntry> {
        self.entries.get(&id)
    }

    pub fn holds_content(&self, content_id: u64) -> bool {
        self.by_content.contains_key(&content_id)
    }

    pub fn embedding(&self, id: u64) -> Option<&[f32]> {
        self.index.vector(id)
    }

    /// Nearest stored entry if its similarity reaches `threshold`. A hit
    /// refreshes recency and bumps the hit count; a miss changes nothing.
    pub fn semantic_lookup(&mut self, query: &[f32], threshold: f64, now_ms: f64) -> Result<Option<SemanticHit>> {
        let Some(&(id, similarity)) = self.index.ann_query(query, 1)?.first() else {
            return Ok(None);
        };
        if similarity < threshold {
            return Ok(None);
        }
        let entry = self.entries.get_mut(&id).expect("index and entry map agree");
        entry.record_hit(now_ms);
        self.lru.touch(id);
        Ok(Some(SemanticHit { entry: entry.clone(), similarity }))
    }

    /// Top-`k` stored entries by similarity; read-only.
    pub fn ann_query(&self, query: &[f32], k: usize) -> Result<Vec<(u64, f64)>> {
        self.index.ann_query(query, k)
    }

    /// Stores a response for `content_id`, replacing any entry with the same
    /// content id. Returns the entry evicted to make room, if any.
    pub fn insert(
        &mut self,
        content_id: u64,
        embedding: &[f32],
        payload_tokens: u32,
        now_ms: f64,
    ) -> Result<Option<CacheEntry>> {
        if embedding.len() != self.dim() {
            return Err(SimError::DimensionMismatch { expected: self.dim(), actual: embedding.len() });
        }
        if let Some(old) = self.by_content.get(&content_id).copied() {
            self.remove_entry(old);
        }
        let evicted = if self.entries.len() >= self.config.capacity {
            self.lru.peek_lru().and_then(|victim| self.remove_entry(victim))
        } else {
            None
        };
        let id = self.next_id;
        self.next_id += 1;
        self.index.insert(id, embedding)?;
        self.entries.insert(id, CacheEntry::new(id, content_id, payload_tokens, now_ms));
        self.by_content.insert(content_id, id);
        self.lru.push(id);
        Ok(evicted)
    }

    /// Entries from most to least recently used.
    pub fn entries(&self) -> impl Iterator<Item = &CacheEntry> + '_ {
        self.lru.iter().map(|id| &self.entries[&id])
    }

    pub fn dump<W: Write>(&self, w: W, tier: &str) -> std::io::Result<()> {
        dump_entries(w, tier, "semantic", self.entries())
    }

    fn remove_entry(&mut self, id: u64) -> Option<CacheEntry> {
        let entry = self.entries.remove(&id)?;
        self.index.remove(id);
        self.lru.remove(id);
        self.by_content.remove(&entry.content_id);
        Some(entry)
    }
}

fn dump_entries<'a, W: Write>(
    mut w: W,
    tier: &str,
    kind: &str,
    entries: impl Iterator<Item = &'a CacheEntry>,
) -> std::io::Result<()> {
    for e in entries {
        writeln!(
            w,
            "{tier}\t{}\t{kind}\t{:016x}\t{}\t{}\t{}",
            e.id, e.content_id, e.hit_count, e.inserted_at_ms, e.last_access_ms
        )?;
    }
    Ok(())
}

/// Header line for [`PromptCache::dump`] / [`SemanticCache::dump`] output.
pub const DUMP_HEADER: &str = "# tier\tentry_id\tkind\tcontent_id\thit_count\tinserted_at_ms\tlast_access_ms";

/// A cache that can receive its parent's most popular entries.
pub trait SyncFromParent {
    fn popular(&self, n: usize) -> Vec<CacheEntry>;
    fn holds(&self, content_id: u64) -> bool;
    fn copy_entry(&mut self, parent: &Self, entry: &CacheEntry, now_ms: f64) -> Result<()>;
}

impl SyncFromParent for PromptCache {
    fn popular(&self, n: usize) -> Vec<CacheEntry> {
        let mut all: Vec<CacheEntry> = self.entries.values().cloned().collect();
        all.sort_by(by_popularity);
        all.truncate(n);
        all
    }

    fn holds(&self, content_id: u64) -> bool {
        self.contains(content_id)
    }

    fn copy_entry(&mut self, _parent: &Self, entry: &CacheEntry, now_ms: f64) -> Result<()> {
        self.insert(entry.content_id, entry.payload_tokens, now_ms);
        Ok(())
    }
}

impl SyncFromParent for SemanticCache {
    fn popular(&self, n: usize) -> Vec<CacheEntry> {
        let mut all: Vec<CacheEntry> = self.entries.values().cloned().collect();
        all.sort_by(by_popularity);
        all.truncate(n);
        all
    }

    fn holds(&self, content_id: u64) -> bool {
        self.holds_content(content_id)
    }

    fn copy_entry(&mut self, parent: &Self, entry: &CacheEntry, now_ms: f64) -> Result<()> {
        let v = parent.embedding(entry.id).expect("parent entry has an embedding").to_vec();
        self.insert(entry.content_id, &v, entry.payload_tokens, now_ms)?;
        Ok(())
    }
}

/// Copies the parent's `top_n` entries by hit count into `child`, skipping
/// content the child already holds. The most popular entry is copied last so
/// it ends up most recent in the child. Returns the number of entries copied.
pub fn sync_from_parent<C: SyncFromParent>(child: &mut C, parent: &C, top_n: usize, now_ms: f64) -> Result<usize> {
    let mut copied = 0;
    for entry in parent.popular(top_n).iter().rev() {
        if child.holds(entry.content_id) {
            continue;
        }
        child.copy_entry(parent, entry, now_ms)?;
        copied += 1;
    }
    Ok(copied)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn semantic(capacity: usize) -> SemanticCache {
        let cfg = SemanticCacheConfig { capacity, ..SemanticCacheConfig::default() };
        SemanticCache::new(2, cfg, stream_rng(0, Stream::IndexBuild)).unwrap()
    }

    #[test]
    fn prompt_read_your_write() {
        let mut c = PromptCache::new(4).unwrap();
        assert!(c.prompt_lookup(1, 0.0).is_none());
        assert!(c.insert(1, 10, 0.0).is_none());
        let hit = c.prompt_lookup(1, 5.0).unwrap();
        assert_eq!(hit.hit_count, 1);
        assert_eq!(hit.last_access_ms, 5.0);
        assert!(hit.last_access_ms >= hit.inserted_at_ms);
    }

    #[test]
    fn prompt_lru_evicts_oldest() {
        let mut c = PromptCache::new(5).unwrap();
        let evicted: Vec<u64> = (1..=10).filter_map(|k| c.insert(k, 1, k as f64)).map(|e| e.id).collect();
        assert_eq!(evicted, vec![1, 2, 3, 4, 5]);
        assert!(c.prompt_lookup(1, 11.0).is_none());
        assert!(c.prompt_lookup(6, 11.0).is_some());
        assert_eq!(c.len(), 5);
    }

    #[test]
    fn prompt_capacity_one_and_recency() {
        let mut c = PromptCache::new(1).unwrap();
        assert!(c.insert(1, 1, 0.0).is_none());
        assert_eq!(c.insert(2, 1, 1.0).unwrap().id, 1);

        let mut c = PromptCache::new(3).unwrap();
        for k in [1, 2, 3] {
            c.insert(k, 1, 0.0);
        }
        c.prompt_lookup(1, 1.0);
        assert_eq!(c.insert(4, 1, 2.0).unwrap().id, 2);
        assert!(PromptCache::new(0).is_err());
    }

    #[test]
    fn semantic_hit_and_miss() {
        let mut c = semantic(4);
        assert!(c.semantic_lookup(&[1.0, 0.0], 0.8, 0.0).unwrap().is_none());
        c.insert(7, &[1.0, 0.0], 3, 0.0).unwrap();
        let hit = c.semantic_lookup(&[1.0, 0.0], 0.8, 1.0).unwrap().unwrap();
        assert_eq!(hit.similarity, 1.0);
        assert_eq!(hit.entry.content_id, 7);
        assert_eq!(hit.entry.hit_count, 1);
        assert!(c.semantic_lookup(&[0.0, 1.0], 0.8, 2.0).unwrap().is_none());
        assert_eq!(c.get(hit.entry.id).unwrap().hit_count, 1);
        assert!(c.semantic_lookup(&[1.0, 0.0], 1.5, 2.0).unwrap().is_none());
        assert!(matches!(
            c.semantic_lookup(&[1.0, 0.0, 0.0], 0.8, 2.0),
            Err(SimError::DimensionMismatch { expected: 2, actual: 3 })
        ));
    }

    #[test]
    fn semantic_lru() {
        let mut c = semantic(3);
        let v = |i: u64| {
            let a = i as f32;
            let n = (a * a + 1.0).sqrt();
            [a / n, 1.0 / n]
        };
        for i in 0..3 {
            assert!(c.insert(i, &v(i), 1, i as f64).unwrap().is_none());
        }
        c.semantic_lookup(&v(0), 0.9999, 5.0).unwrap().unwrap();
        let evicted = c.insert(3, &v(3), 1, 6.0).unwrap().unwrap();
        assert_eq!(evicted.content_id, 1);
        assert_eq!(c.len(), 3);
        // Same content replaces rather than duplicates.
        assert!(c.insert(3, &v(4), 1, 7.0).unwrap().is_none());
        assert_eq!(c.len(), 3);
    }

    #[test]
    fn config_validation() {
        let bad = SemanticCacheConfig { similarity_threshold: 1.5, ..SemanticCacheConfig::default() };
        assert!(bad.validate().is_err());
        let bad = SemanticCacheConfig { capacity: 0, ..SemanticCacheConfig::default() };
        assert!(bad.validate().is_err());
        assert!(SemanticCacheConfig::default().validate().is_ok());
    }

    #[test]
    fn sync_examples() {
        let mut parent = PromptCache::new(10).unwrap();
        let mut child = PromptCache::new(10).unwrap();
        assert_eq!(sync_from_parent(&mut child, &parent, 2, 0.0).unwrap(), 0);

        for (key, hits) in [(1u64, 5), (2, 2), (3, 1)] {
            parent.insert(key, 1, 0.0);
            for _ in 0..hits {
                parent.prompt_lookup(key, 1.0);
            }
        }
        assert_eq!(sync_from_parent(&mut child, &parent, 2, 2.0).unwrap(), 2);
        assert!(child.contains(1) && child.contains(2) && !child.contains(3));
        assert_eq!(child.entries().next().unwrap().id, 1);

        let before: Vec<CacheEntry> = child.entries().cloned().collect();
        assert_eq!(sync_from_parent(&mut child, &parent, 2, 3.0).unwrap(), 0);
        assert_eq!(child.entries().cloned().collect::<Vec<_>>(), before);
    }

    #[test]
    fn semantic_sync_copies_embeddings() {
        let mut parent = semantic(4);
        let mut child = semantic(4);
        parent.insert(11, &[1.0, 0.0], 2, 0.0).unwrap();
        parent.insert(12, &[0.0, 1.0], 2, 0.0).unwrap();
        parent.semantic_lookup(&[0.0, 1.0], 0.9, 1.0).unwrap();
        assert_eq!(sync_from_parent(&mut child, &parent, 1, 2.0).unwrap(), 1);
        assert!(child.holds_content(12) && !child.holds_content(11));
        assert!(child.semantic_lookup(&[0.0, 1.0], 0.9, 3.0).unwrap().is_some());
        assert_eq!(sync_from_parent(&mut child, &parent, 1, 4.0).unwrap(), 0);
    }

    #[test]
    fn dump_lines() {
        let mut c = PromptCache::new(2).unwrap();
        c.insert(0xab, 1, 3.0);
        let mut out = Vec::new();
        c.dump(&mut out, "MEC").unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "MEC\t171\tprompt\t00000000000000ab\t0\t3\t3\n");
    }
}
