//! Hierarchical navigable small-world graph over the index's records.
//!
//! The graph stores node levels and per-layer adjacency only; vectors stay in
//! the record store. Construction is incremental and deterministic: node
//! levels come from a seeded RNG and every heap ordering breaks distance ties
//! by node id, so the same insert sequence always builds the same graph.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{l2_squared, OrdF64, PseudoqueryRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswParams {
    /// Max connections per node on layers above 0 (layer 0 allows 2M).
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 16,
            ef_construction: 200,
            ef_search: 128,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Node {
    pub level: usize,
    /// neighbors[l] = adjacency at layer l, 0..=level
    pub neighbors: Vec<Vec<u32>>,
}

pub(crate) struct HnswGraph {
    params: HnswParams,
    level_mult: f64,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    entry: Option<u32>,
}

impl HnswGraph {
    pub fn new(params: HnswParams, seed: u64) -> Self {
        let level_mult = 1.0 / (params.m.max(2) as f64).ln();
        Self {
            params,
            level_mult,
            rng: ChaCha8Rng::seed_from_u64(seed),
            nodes: Vec::new(),
            entry: None,
        }
    }

    pub fn params(&self) -> HnswParams {
        self.params
    }

    fn max_level(&self) -> usize {
        self.entry
            .map(|e| self.nodes[e as usize].level)
            .unwrap_or(0)
    }

    fn max_degree(&self, layer: usize) -> usize {
        if layer == 0 {
            self.params.m * 2
        } else {
            self.params.m
        }
    }

    fn sample_level(&mut self) -> usize {
        let r: f64 = self.rng.gen();
        let u = (1.0 - r).max(f64::MIN_POSITIVE); // (0, 1]
        ((-u.ln() * self.level_mult).floor() as usize).min(31)
    }

    /// Insert the node with id `id`; its vector must already be present in
    /// `records[id]`.
    pub fn insert(&mut self, id: u32, records: &[PseudoqueryRecord]) {
        let level = self.sample_level();
        self.nodes.push(Node {
            level,
            neighbors: vec![Vec::new(); level + 1],
        });
        debug_assert_eq!(self.nodes.len() - 1, id as usize);

        let Some(entry) = self.entry else {
            self.entry = Some(id);
            return;
        };

        let query = records[id as usize].vector.values();
        let mut ep = entry;

        // Greedy descent through layers above the new node's level.
        let top = self.max_level();
        for layer in ((level + 1)..=top).rev() {
            ep = self.greedy_closest(query, ep, layer, records);
        }

        // Connect on every layer the node participates in.
        for layer in (0..=level.min(top)).rev() {
            let candidates = self.search_layer(query, &[ep], self.params.ef_construction, layer, records);
            let selected = self.select_neighbors(&candidates, self.params.m, records);
            for &(_, neighbor) in &selected {
                self.nodes[id as usize].neighbors[layer].push(neighbor);
                self.nodes[neighbor as usize].neighbors[layer].push(id);
                self.prune(neighbor, layer, records);
            }
            if let Some(&(_, closest)) = selected.first() {
                ep = closest;
            }
        }

        if level > self.nodes[entry as usize].level {
            self.entry = Some(id);
        }
    }

    /// Top-k search: greedy descent to layer 1, then a beam search at layer 0
    /// with ef = max(ef_search, k).
    pub fn search(&self, query: &[f64], k: usize, records: &[PseudoqueryRecord]) -> Vec<(f64, u32)> {
        let Some(entry) = self.entry else {
            return Vec::new();
        };
        let mut ep = entry;
        for layer in (1..=self.max_level()).rev() {
            ep = self.greedy_closest(query, ep, layer, records);
        }
        let ef = self.params.ef_search.max(k);
        let mut found = self.search_layer(query, &[ep], ef, 0, records);
        found.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
        found.truncate(k);
        found.into_iter().map(|(d, id)| (d.0, id)).collect()
    }

    fn greedy_closest(
        &self,
        query: &[f64],
        start: u32,
        layer: usize,
        records: &[PseudoqueryRecord],
    ) -> u32 {
        let mut current = start;
        let mut best = l2_squared(query, records[current as usize].vector.values());
        loop {
            let mut improved = false;
            for &n in &self.nodes[current as usize].neighbors[layer] {
                let d = l2_squared(query, records[n as usize].vector.values());
                if d < best || (d == best && n < current) {
                    best = d;
                    current = n;
                    improved = true;
                }
            }
            if !improved {
                return current;
            }
        }
    }

    /// Beam search on one layer; returns up to `ef` (distance, id) pairs,
    /// unsorted.
    fn search_layer(
        &self,
        query: &[f64],
        entries: &[u32],
        ef: usize,
        layer: usize,
        records: &[PseudoqueryRecord],
    ) -> Vec<(OrdF64, u32)> {
        let mut visited: HashSet<u32> = entries.iter().copied().collect();
        // min-heap of nodes to expand
        let mut candidates: BinaryHeap<Reverse<(OrdF64, u32)>> = BinaryHeap::new();
        // max-heap of the best ef results so far
        let mut results: BinaryHeap<(OrdF64, u32)> = BinaryHeap::new();

        for &e in entries {
            let d = OrdF64(l2_squared(query, records[e as usize].vector.values()));
            candidates.push(Reverse((d, e)));
            results.push((d, e));
        }

        while let Some(Reverse((d, node))) = candidates.pop() {
            let furthest = results.peek().map(|(d, _)| *d).unwrap_or(OrdF64(f64::INFINITY));
            if results.len() >= ef && d > furthest {
                break;
            }
            for &n in &self.nodes[node as usize].neighbors[layer] {
                if !visited.insert(n) {
                    continue;
                }
                let dn = OrdF64(l2_squared(query, records[n as usize].vector.values()));
                let furthest = results.peek().map(|(d, _)| *d).unwrap_or(OrdF64(f64::INFINITY));
                if results.len() < ef || dn < furthest {
                    candidates.push(Reverse((dn, n)));
                    results.push((dn, n));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        results.into_vec()
    }

    /// Diversity-aware neighbor selection: keep a candidate only if it is
    /// closer to the query than to every neighbor already kept, then fill any
    /// remaining slots with the nearest skipped candidates.
    fn select_neighbors(
        &self,
        candidates: &[(OrdF64, u32)],
        m: usize,
        records: &[PseudoqueryRecord],
    ) -> Vec<(OrdF64, u32)> {
        let mut sorted = candidates.to_vec();
        sorted.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut kept: Vec<(OrdF64, u32)> = Vec::with_capacity(m);
        let mut skipped: Vec<(OrdF64, u32)> = Vec::new();
        for &(d, c) in &sorted {
            if kept.len() >= m {
                break;
            }
            let diverse = kept.iter().all(|&(_, k)| {
                let dck = l2_squared(
                    records[c as usize].vector.values(),
                    records[k as usize].vector.values(),
                );
                dck > d.0
            });
            if diverse {
                kept.push((d, c));
            } else {
                skipped.push((d, c));
            }
        }
        for &(d, c) in &skipped {
            if kept.len() >= m {
                break;
            }
            kept.push((d, c));
        }
        kept
    }

    /// Re-select a node's adjacency after a backlink pushed it over the layer
    /// degree cap.
    fn prune(&mut self, node: u32, layer: usize, records: &[PseudoqueryRecord]) {
        let cap = self.max_degree(layer);
        if self.nodes[node as usize].neighbors[layer].len() <= cap {
            return;
        }
        let base = records[node as usize].vector.values();
        let candidates: Vec<(OrdF64, u32)> = self.nodes[node as usize].neighbors[layer]
            .iter()
            .map(|&n| (OrdF64(l2_squared(base, records[n as usize].vector.values())), n))
            .collect();
        let kept = self.select_neighbors(&candidates, cap, records);
        self.nodes[node as usize].neighbors[layer] = kept.into_iter().map(|(_, n)| n).collect();
    }

    // --- persistence ---

    pub(crate) fn entry(&self) -> Option<u32> {
        self.entry
    }

    pub(crate) fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    /// Rebuild a graph from persisted parts. The RNG is reseeded but never
    /// consulted again: loaded indexes are sealed.
    pub(crate) fn from_parts(params: HnswParams, entry: Option<u32>, nodes: Vec<Node>) -> Self {
        let level_mult = 1.0 / (params.m.max(2) as f64).ln();
        Self {
            params,
            level_mult,
            rng: ChaCha8Rng::seed_from_u64(0),
            nodes,
            entry,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::VectorIndex;
    use crate::provider::EmbeddingVector;
    use rand::rngs::StdRng;

    fn random_vectors(n: usize, dim: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = StdRng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0f64..1.0)).collect())
            .collect()
    }

    fn build_pair(vectors: &[Vec<f64>]) -> (VectorIndex, VectorIndex) {
        let dim = vectors[0].len();
        let mut flat = VectorIndex::flat(dim);
        let mut hnsw = VectorIndex::hnsw(dim, HnswParams::default(), 42);
        for v in vectors {
            let e = EmbeddingVector::new(v.clone()).unwrap();
            flat.insert("", "d", e.clone()).unwrap();
            hnsw.insert("", "d", e).unwrap();
        }
        (flat, hnsw)
    }

    #[test]
    fn test_hnsw_exact_on_tiny_input() {
        let vectors = vec![vec![0.0, 0.0], vec![3.0, 4.0], vec![6.0, 8.0]];
        let (_, hnsw) = build_pair(&vectors);
        let hits = hnsw
            .search(&EmbeddingVector::new(vec![0.0, 0.0]).unwrap(), 2)
            .unwrap();
        assert_eq!(hits[0].distance, 0.0);
        assert_eq!(hits[1].distance, 5.0);
    }

    #[test]
    fn test_hnsw_recall_against_flat() {
        let vectors = random_vectors(2000, 32, 3);
        let (flat, hnsw) = build_pair(&vectors);
        let queries = random_vectors(50, 32, 4);
        let mut overlap = 0usize;
        for q in &queries {
            let e = EmbeddingVector::new(q.clone()).unwrap();
            let truth: std::collections::HashSet<u64> = flat
                .search(&e, 10)
                .unwrap()
                .iter()
                .map(|h| h.pseudoquery_id)
                .collect();
            overlap += hnsw
                .search(&e, 10)
                .unwrap()
                .iter()
                .filter(|h| truth.contains(&h.pseudoquery_id))
                .count();
        }
        let recall = overlap as f64 / (queries.len() * 10) as f64;
        assert!(recall >= 0.95, "recall@10 = {recall}");
    }

    #[test]
    fn test_hnsw_build_deterministic_for_seed() {
        let vectors = random_vectors(300, 16, 5);
        let dim = 16;
        let build = || {
            let mut index = VectorIndex::hnsw(dim, HnswParams::default(), 99);
            for v in &vectors {
                index.insert("", "d", EmbeddingVector::new(v.clone()).unwrap()).unwrap();
            }
            index
        };
        let a = build();
        let b = build();
        let q = EmbeddingVector::new(vec![0.05; dim]).unwrap();
        let ha: Vec<(u64, f64)> = a.search(&q, 10).unwrap().iter().map(|h| (h.pseudoquery_id, h.distance)).collect();
        let hb: Vec<(u64, f64)> = b.search(&q, 10).unwrap().iter().map(|h| (h.pseudoquery_id, h.distance)).collect();
        assert_eq!(ha, hb);
        let na: Vec<_> = a.graph().unwrap().nodes().iter().map(|n| n.neighbors.clone()).collect();
        let nb: Vec<_> = b.graph().unwrap().nodes().iter().map(|n| n.neighbors.clone()).collect();
        assert_eq!(na, nb);
    }
}
