use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::dot;
use super::hnsw::{Hnsw, HnswParams};
use crate::error::{Result, SimError};
use crate::rng::SimRng;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnMode {
    /// Full scan; results are the true top-k.
    #[default]
    Exact,
    /// HNSW graph search.
    Approximate,
}

/// Flat store scanned in full on every query.
#[derive(Debug, Clone, Default)]
struct FlatStore {
    ids: Vec<u64>,
    data: Vec<f32>,
    pos: HashMap<u64, usize>,
}

impl FlatStore {
    fn insert(&mut self, id: u64, v: &[f32], dim: usize) {
        if let Some(&p) = self.pos.get(&id) {
            self.data[p * dim..(p + 1) * dim].copy_from_slice(v);
            return;
        }
        self.pos.insert(id, self.ids.len());
        self.ids.push(id);
        self.data.extend_from_slice(v);
    }

    fn remove(&mut self, id: u64, dim: usize) -> bool {
        let Some(p) = self.pos.remove(&id) else {
            return false;
        };
        let last = self.ids.len() - 1;
        if p != last {
            let moved = self.ids[last];
            self.ids.swap(p, last);
            let (head, tail) = self.data.split_at_mut(last * dim);
            head[p * dim..(p + 1) * dim].copy_from_slice(&tail[..dim]);
            self.pos.insert(moved, p);
        }
        self.ids.pop();
        self.data.truncate(last * dim);
        true
    }

    fn vector(&self, id: u64, dim: usize) -> Option<&[f32]> {
        self.pos.get(&id).map(|&p| &self.data[p * dim..(p + 1) * dim])
    }

    fn search(&self, q: &[f32], k: usize, dim: usize) -> Vec<(u64, f64)> {
        let mut scored: Vec<(u64, f64)> =
            self.ids.iter().enumerate().map(|(i, &id)| (id, dot(q, &self.data[i * dim..(i + 1) * dim]))).collect();
        let by_rank = |a: &(u64, f64), b: &(u64, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if k < scored.len() {
            scored.select_nth_unstable_by(k, by_rank);
            scored.truncate(k);
        }
        scored.sort_by(by_rank);
        scored
    }
}

#[derive(Debug, Clone)]
enum Backend {
    Exact(FlatStore),
    Approximate(Box<Hnsw>),
}

/// Nearest-neighbor index over unit vectors, ranked by inner product (cosine).
#[derive(Debug, Clone)]
pub struct VectorIndex {
    dim: usize,
    backend: Backend,
}

impl VectorIndex {
    pub fn exact(dim: usize) -> Self {
        VectorIndex { dim, backend: Backend::Exact(FlatStore::default()) }
    }

    pub fn approximate(dim: usize, params: HnswParams, rng: SimRng) -> Self {
        VectorIndex { dim, backend: Backend::Approximate(Box::new(Hnsw::new(dim, params, rng))) }
    }

    pub fn with_mode(dim: usize, mode: AnnMode, params: HnswParams, rng: SimRng) -> Self {
        match mode {
            AnnMode::Exact => Self::exact(dim),
            AnnMode::Approximate => Self::approximate(dim, params, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> AnnMode {
        match self.backend {
            Backend::Exact(_) => AnnMode::Exact,
            Backend::Approximate(_) => AnnMode::Approximate,
        }
    }

    pub fn len(&self) -> usize {
        match &self.backend {
            Backend::Exact(f) => f.ids.len(),
            Backend::Approximate(h) => h.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&mut self, id: u64, v: &[f32]) -> Result<()> {
        self.check_dim(v)?;
        match &mut self.backend {
            Backend::Exact(f) => f.insert(id, v, self.dim),
            Backend::Approximate(h) => h.insert(id, v),
        }
        Ok(())
    }

    pub fn remove(&mut self, id: u64) -> bool {
        match &mut self.backend {
            Backend::Exact(f) => f.remove(id, self.dim),
            Backend::Approximate(h) => h.remove(id),
        }
    }

    pub fn vector(&self, id: u64) -> Option<&[f32]> {
        match &self.backend {
            Backend::Exact(f) => f.vector(id, self.dim),
            Backend::Approximate(h) => h.vector(id),
        }
    }

    /// Top-`k` `(id, similarity)` pairs, most similar first; ties go to the
    /// smaller id. Asking for more than the index holds returns everything.
    pub fn ann_query(&self, q: &[f32], k: usize) -> Result<Vec<(u64, f64)>> {
        self.check_dim(q)?;
        Ok(match &self.backend {
            Backend::Exact(f) => f.search(q, k, self.dim),
            Backend::Approximate(h) => h.search(q, k),
        })
    }

    fn check_dim(&self, v: &[f32]) -> Result<()> {
        if v.len() != self.dim {
            return Err(SimError::DimensionMismatch { expected: self.dim, actual: v.len() });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    #[test]
    fn exact_basics() {
        let mut idx = VectorIndex::exact(2);
        idx.insert(1, &[1.0, 0.0]).unwrap();
        idx.insert(2, &[0.0, 1.0]).unwrap();
        idx.insert(3, &[0.6, 0.8]).unwrap();
        let top = idx.ann_query(&[1.0, 0.0], 10).unwrap();
        assert_eq!(top.iter().map(|x| x.0).collect::<Vec<_>>(), vec![1, 3, 2]);
        assert!(idx.remove(1));
        assert_eq!(idx.len(), 2);
        assert_eq!(idx.vector(3).unwrap(), &[0.6, 0.8]);
        assert_eq!(idx.ann_query(&[1.0, 0.0], 1).unwrap()[0].0, 3);
        assert!(matches!(idx.insert(4, &[1.0]), Err(SimError::DimensionMismatch { expected: 2, actual: 1 })));
        assert!(idx.ann_query(&[1.0, 0.0, 0.0], 1).is_err());
    }

    #[test]
    fn single_vector_any_query() {
        for mode in [AnnMode::Exact, AnnMode::Approximate] {
            let mut idx = VectorIndex::with_mode(3, mode, HnswParams::default(), stream_rng(0, Stream::IndexBuild));
            idx.insert(42, &[0.0, 0.0, 1.0]).unwrap();
            let r = idx.ann_query(&[1.0, 0.0, 0.0], 1).unwrap();
            assert_eq!(r.len(), 1);
            assert_eq!(r[0].0, 42);
        }
    }

    #[test]
    fn ties_break_by_id() {
        let mut idx = VectorIndex::exact(2);
        for id in [5, 3, 9] {
            idx.insert(id, &[1.0, 0.0]).unwrap();
        }
        let ids: Vec<u64> = idx.ann_query(&[1.0, 0.0], 2).unwrap().into_iter().map(|x| x.0).collect();
        assert_eq!(ids, vec![3, 5]);
    }
}
