//! Hierarchical navigable small-world graph for inner-product search over unit
//! vectors.
//!
//! Layer assignment is geometric with multiplier `1/ln(M)`. Inserts link each
//! node to neighbors picked with the diversity heuristic (a candidate is kept
//! only if it is closer to the new node than to every neighbor kept so far).
//! Layer 0 allows `2·M` links, upper layers `M`.
//!
//! Removal leaves a tombstone: the node still routes searches but never appears
//! in results. Once tombstones outnumber live nodes the graph is rebuilt from
//! the live set.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dot;
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HnswParams {
    /// Links per node on upper layers; layer 0 gets twice this.
    pub m: usize,
    /// Candidate-list breadth at query time.
    pub ef_search: usize,
    /// Candidate-list breadth while inserting.
    pub ef_construction: usize,
}

impl Default for HnswParams {
    fn default() -> Self {
        HnswParams { m: 16, ef_search: 64, ef_construction: 200 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    sim: f64,
    node: u32,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim.total_cmp(&other.sim).then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
struct Node {
    ext_id: u64,
    links: Vec<Vec<u32>>,
    deleted: bool,
}

#[derive(Debug, Clone)]
pub struct Hnsw {
    dim: usize,
    params: HnswParams,
    nodes: Vec<Node>,
    data: Vec<f32>,
    by_ext: HashMap<u64, u32>,
    entry: Option<u32>,
    tombstones: usize,
    level_mult: f64,
    rng: SimRng,
}

impl Hnsw {
    pub fn new(dim: usize, params: HnswParams, rng: SimRng) -> Self {
        let m = params.m.max(2);
        Hnsw {
            dim,
            params: HnswParams { m, ..params },
            nodes: Vec::new(),
            data: Vec::new(),
            by_ext: HashMap::new(),
            entry: None,
            tombstones: 0,
            level_mult: 1.0 / (m as f64).ln(),
            rng,
        }
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.by_ext.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_ext.is_empty()
    }

    pub fn contains(&self, ext_id: u64) -> bool {
        self.by_ext.contains_key(&ext_id)
    }

    pub fn vector(&self, ext_id: u64) -> Option<&[f32]> {
        self.by_ext.get(&ext_id).map(|&n| self.vec_of(n))
    }

    /// Adds `v` under `ext_id`; an existing id is replaced.
    pub fn insert(&mut self, ext_id: u64, v: &[f32]) {
        debug_assert_eq!(v.len(), self.dim);
        if self.by_ext.contains_key(&ext_id) {
            self.remove(ext_id);
        }
        let u: f64 = 1.0 - self.rng.random::<f64>();
        let level = (-u.ln() * self.level_mult).floor() as usize;
        let new = self.nodes.len() as u32;
        self.nodes.push(Node { ext_id, links: vec![Vec::new(); level + 1], deleted: false });
        self.data.extend_from_slice(v);
        self.by_ext.insert(ext_id, new);

        let Some(entry) = self.entry else {
            self.entry = Some(new);
            return;
        };
        let top = self.level_of(entry);
        let mut ep = Scored { sim: dot(v, self.vec_of(entry)), node: entry };
        for layer in (level + 1..=top).rev() {
            ep = self.greedy(v, ep, layer);
        }
        let mut eps = vec![ep];
        for layer in (0..=level.min(top)).rev() {
            let found = self.search_layer(v, &eps, self.params.ef_construction, layer);
            let cap = self.max_links(layer);
            let chosen = self.select_neighbors(&found, cap);
            self.nodes[new as usize].links[layer] = chosen.iter().map(|s| s.node).collect();
            for s in &chosen {
                let nb = s.node;
                self.nodes[nb as usize].links[layer].push(new);
                if self.nodes[nb as usize].links[layer].len() > cap {
                    self.shrink(nb, layer, cap);
                }
            }
            eps = found;
        }
        if level > top {
            self.entry = Some(new);
        }
    }

    /// Tombstones `ext_id`. Returns false if it was not present.
    pub fn remove(&mut self, ext_id: u64) -> bool {
        let Some(node) = self.by_ext.remove(&ext_id) else {
            return false;
        };
        self.nodes[node as usize].deleted = true;
        self.tombstones += 1;
        if self.by_ext.is_empty() {
            self.clear();
        } else if self.tombstones > self.by_ext.len() {
            self.rebuild();
        }
        true
    }

    /// Up to `k` live nodes by descending similarity, ties by ascending id.
    pub fn search(&self, q: &[f32], k: usize) -> Vec<(u64, f64)> {
        let Some(entry) = self.entry else {
            return Vec::new();
        };
        if k == 0 {
            return Vec::new();
        }
        let mut ep = Scored { sim: dot(q, self.vec_of(entry)), node: entry };
        for layer in (1..=self.level_of(entry)).rev() {
            ep = self.greedy(q, ep, layer);
        }
        let ef = self.params.ef_search.max(k) + self.tombstones.min(self.params.ef_search);
        let found = self.search_layer(q, &[ep], ef, 0);
        let mut out: Vec<(u64, f64)> = found
            .into_iter()
            .filter(|s| !self.nodes[s.node as usize].deleted)
            .map(|s| (self.nodes[s.node as usize].ext_id, s.sim))
            .collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        out.truncate(k);
        out
    }

    fn clear(&mut self) {
        self.nodes.clear();
        self.data.clear();
        self.entry = None;
        self.tombstones = 0;
    }

    fn rebuild(&mut self) {
        let live: Vec<(u64, Vec<f32>)> = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| !n.deleted)
            .map(|(i, n)| (n.ext_id, self.vec_of(i as u32).to_vec()))
            .collect();
        self.by_ext.clear();
        self.clear();
        for (id, v) in live {
            self.insert(id, &v);
        }
    }

    fn vec_of(&self, node: u32) -> &[f32] {
        let start = node as usize * self.dim;
        &self.data[start..start + self.dim]
    }

    fn level_of(&self, node: u32) -> usize {
        self.nodes[node as usize].links.len() - 1
    }

    fn max_links(&self, layer: usize) -> usize {
        if layer == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    fn greedy(&self, q: &[f32], mut best: Scored, layer: usize) -> Scored {
        loop {
            let mut improved = false;
            for &nb in &self.nodes[best.node as usize].links[layer] {
                let cand = Scored { sim: dot(q, self.vec_of(nb)), node: nb };
                if cand > best {
                    best = cand;
                    improved = true;
                }
            }
            if !improved {
                return best;
            }
        }
    }

    /// Best-first search on one layer. Returns up to `ef` nodes, best first.
    fn search_layer(&self, q: &[f32], eps: &[Scored], ef: usize, layer: usize) -> Vec<Scored> {
        let mut visited = vec![0u64; self.nodes.len().div_ceil(64)];
        let mut mark = |n: u32| {
            let (w, b) = (n as usize / 64, n as usize % 64);
            let seen = visited[w] & (1 << b) != 0;
            visited[w] |= 1 << b;
            seen
        };
        let mut candidates: BinaryHeap<Scored> = BinaryHeap::new();
        let mut results: BinaryHeap<std::cmp::Reverse<Scored>> = BinaryHeap::new();
        for &ep in eps {
            if !mark(ep.node) {
                candidates.push(ep);
                results.push(std::cmp::Reverse(ep));
            }
        }
        while results.len() > ef {
            results.pop();
        }
        while let Some(c) = candidates.pop() {
            let worst = results.peek().map(|r| r.0).expect("results never empty here");
            if c < worst && results.len() >= ef {
                break;
            }
            for &nb in &self.nodes[c.node as usize].links[layer] {
                if mark(nb) {
                    continue;
                }
                let s = Scored { sim: dot(q, self.vec_of(nb)), node: nb };
                let worst = results.peek().map(|r| r.0).expect("results never empty here");
                if results.len() < ef || s > worst {
                    candidates.push(s);
                    results.push(std::cmp::Reverse(s));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        let mut out: Vec<Scored> = results.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Diversity heuristic over `candidates` (sorted best first).
    fn select_neighbors(&self, candidates: &[Scored], m: usize) -> Vec<Scored> {
        let mut kept: Vec<Scored> = Vec::with_capacity(m);
        for &c in candidates {
            if kept.len() >= m {
                break;
            }
            let cv = self.vec_of(c.node);
            if kept.iter().all(|k| dot(cv, self.vec_of(k.node)) < c.sim) {
                kept.push(c);
            }
        }
        kept
    }

    fn shrink(&mut self, node: u32, layer: usize, cap: usize) {
        let base = self.vec_of(node).to_vec();
        let mut scored: Vec<Scored> = self.nodes[node as usize].links[layer]
            .iter()
            .map(|&nb| Scored { sim: dot(&base, self.vec_of(nb)), node: nb })
            .collect();
        scored.sort_by(|a, b| b.cmp(a));
        let kept = self.select_neighbors(&scored, cap);
        self.nodes[node as usize].links[layer] = kept.iter().map(|s| s.node).collect();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use crate::workload::random_unit_vector;

    fn brute(data: &[(u64, Vec<f32>)], q: &[f32], k: usize) -> Vec<u64> {
        let mut all: Vec<(u64, f64)> = data.iter().map(|(id, v)| (*id, dot(q, v))).collect();
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        all.into_iter().take(k).map(|(id, _)| id).collect()
    }

    #[test]
    fn small_graph_is_exact() {
        let mut rng = stream_rng(1, Stream::Documents);
        let data: Vec<(u64, Vec<f32>)> = (0..200).map(|i| (i, random_unit_vector(&mut rng, 16))).collect();
        let mut h = Hnsw::new(16, HnswParams::default(), stream_rng(1, Stream::IndexBuild));
        for (id, v) in &data {
            h.insert(*id, v);
        }
        for (id, v) in data.iter().take(20) {
            assert_eq!(h.search(v, 1)[0].0, *id);
            let got: Vec<u64> = h.search(v, 5).into_iter().map(|x| x.0).collect();
            assert_eq!(got, brute(&data, v, 5));
        }
    }

    #[test]
    fn removal_and_rebuild() {
        let mut rng = stream_rng(2, Stream::Documents);
        let data: Vec<(u64, Vec<f32>)> = (0..100).map(|i| (i, random_unit_vector(&mut rng, 8))).collect();
        let mut h = Hnsw::new(8, HnswParams::default(), stream_rng(2, Stream::IndexBuild));
        for (id, v) in &data {
            h.insert(*id, v);
        }
        for id in 0..70 {
            assert!(h.remove(id));
        }
        assert!(!h.remove(0));
        assert_eq!(h.len(), 30);
        let live = &data[70..];
        for (_, v) in live {
            let got: Vec<u64> = h.search(v, 3).into_iter().map(|x| x.0).collect();
            assert_eq!(got, brute(live, v, 3));
        }
        for id in 70..100 {
            h.remove(id);
        }
        assert!(h.is_empty());
        assert!(h.search(&data[0].1, 3).is_empty());
    }

    #[test]
    fn replace_existing_id() {
        let mut h = Hnsw::new(2, HnswParams::default(), stream_rng(3, Stream::IndexBuild));
        h.insert(7, &[1.0, 0.0]);
        h.insert(7, &[0.0, 1.0]);
        assert_eq!(h.len(), 1);
        assert_eq!(h.vector(7).unwrap(), &[0.0, 1.0]);
        assert_eq!(h.search(&[0.0, 1.0], 5), vec![(7, 1.0)]);
    }
}
