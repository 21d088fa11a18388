//! Vector index over pseudoquery embeddings with L2 distance.
//!
//! Each record pairs one pseudoquery's embedding with the id of the dataset
//! it was generated from; dataset profiles are stored once per dataset and
//! referenced by id. Two backends answer top-K queries: an exact flat scan
//! (the oracle) and an HNSW graph (the production path). Squared L2 is used
//! for every comparison — ordering is identical to true L2 — and reported
//! distances are the true (rooted) values.
//!
//! Lifecycle: inserts are only valid before [`VectorIndex::seal`]; a sealed
//! or loaded index is immutable and safe for concurrent searches.

mod hnsw;
mod storage;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::DatasetProfile;
use crate::provider::EmbeddingVector;

pub use hnsw::HnswParams;

/// On-disk format version.
pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("vector dimension {got} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("index is sealed; no further inserts are allowed")]
    Sealed,
    #[error("index contains no records")]
    EmptyIndex,
    #[error("K must be at least 1")]
    InvalidK,
    #[error("incompatible index version {found} (supported: {supported})")]
    IncompatibleIndex { found: u32, supported: u32 },
    #[error("index file failed integrity check: {0}")]
    ChecksumFailure(String),
    #[error("index file is malformed: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One indexed pseudoquery.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoqueryRecord {
    pub pseudoquery_id: u64,
    pub text: String,
    pub dataset_id: String,
    pub vector: EmbeddingVector,
}

/// A search result: the matched record plus its distance to the query.
#[derive(Debug, Clone)]
pub struct SearchHit {
    pub pseudoquery_id: u64,
    pub dataset_id: String,
    pub text: String,
    /// True L2 distance to the query vector.
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Flat,
    Hnsw,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexManifest {
    pub version: u32,
    pub dimension: usize,
    pub metric: String,
    pub backend: Backend,
    pub hnsw_params: HnswParams,
    pub record_count: usize,
}

pub struct VectorIndex {
    dimension: usize,
    backend: Backend,
    records: Vec<PseudoqueryRecord>,
    profiles: BTreeMap<String, DatasetProfile>,
    graph: Option<hnsw::HnswGraph>,
    sealed: bool,
}

impl VectorIndex {
    /// Create an empty flat index.
    pub fn flat(dimension: usize) -> Self {
        Self {
            dimension,
            backend: Backend::Flat,
            records: Vec::new(),
            profiles: BTreeMap::new(),
            graph: None,
            sealed: false,
        }
    }

    /// Create an empty HNSW index. `seed` fixes the level RNG so identical
    /// insert sequences build identical graphs.
    pub fn hnsw(dimension: usize, params: HnswParams, seed: u64) -> Self {
        Self {
            dimension,
            backend: Backend::Hnsw,
            records: Vec::new(),
            profiles: BTreeMap::new(),
            graph: Some(hnsw::HnswGraph::new(params, seed)),
            sealed: false,
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn manifest(&self) -> IndexManifest {
        IndexManifest {
            version: INDEX_VERSION,
            dimension: self.dimension,
            metric: "l2".to_string(),
            backend: self.backend,
            hnsw_params: self
                .graph
                .as_ref()
                .map(|g| g.params())
                .unwrap_or_default(),
            record_count: self.records.len(),
        }
    }

    /// Store (or replace) the profile for a dataset. Profiles are stored once
    /// per dataset, not per record.
    pub fn add_profile(&mut self, profile: DatasetProfile) -> Result<(), IndexError> {
        if self.sealed {
            return Err(IndexError::Sealed);
        }
        self.profiles.insert(profile.dataset_id.clone(), profile);
        Ok(())
    }

    pub fn profile(&self, dataset_id: &str) -> Option<&DatasetProfile> {
        self.profiles.get(dataset_id)
    }

    pub fn profiles(&self) -> &BTreeMap<String, DatasetProfile> {
        &self.profiles
    }

    pub fn records(&self) -> &[PseudoqueryRecord] {
        &self.records
    }

    /// Insert one pseudoquery embedding. Ids are assigned monotonically.
    pub fn insert(
        &mut self,
        text: impl Into<String>,
        dataset_id: impl Into<String>,
        vector: EmbeddingVector,
    ) -> Result<u64, IndexError> {
        if self.sealed {
            return Err(IndexError::Sealed);
        }
        if vector.dimension() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                got: vector.dimension(),
            });
        }
        let id = self.records.len() as u64;
        self.records.push(PseudoqueryRecord {
            pseudoquery_id: id,
            text: text.into(),
            dataset_id: dataset_id.into(),
            vector,
        });
        if let Some(graph) = &mut self.graph {
            graph.insert(id as u32, &self.records);
        }
        Ok(id)
    }

    /// Mark the index read-only.
    pub fn seal(&mut self) {
        self.sealed = true;
    }

    /// Top-K nearest records by L2 distance, ascending, ties broken by
    /// pseudoquery id. The flat backend is exact; HNSW is approximate.
    pub fn search(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<SearchHit>, IndexError> {
        if k == 0 {
            return Err(IndexError::InvalidK);
        }
        if self.records.is_empty() {
            return Err(IndexError::EmptyIndex);
        }
        if query.dimension() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                got: query.dimension(),
            });
        }
        let ranked = match &self.graph {
            None => self.flat_topk(query.values(), k),
            Some(graph) => graph.search(query.values(), k, &self.records),
        };
        Ok(ranked
            .into_iter()
            .map(|(dist_sq, id)| {
                let record = &self.records[id as usize];
                SearchHit {
                    pseudoquery_id: record.pseudoquery_id,
                    dataset_id: record.dataset_id.clone(),
                    text: record.text.clone(),
                    distance: dist_sq.sqrt(),
                }
            })
            .collect())
    }

    /// Exact top-K scan. Chunks scan in parallel, each keeping its K smallest
    /// (distance, id) pairs; the merged result is independent of chunking
    /// because distances are computed per record and ties break by id.
    fn flat_topk(&self, query: &[f64], k: usize) -> Vec<(f64, u32)> {
        use rayon::prelude::*;
        use std::collections::BinaryHeap;

        let per_chunk: Vec<Vec<(OrdF64, u32)>> = self
            .records
            .par_chunks(16_384)
            .map(|records| {
                let mut heap: BinaryHeap<(OrdF64, u32)> = BinaryHeap::with_capacity(k + 1);
                for record in records {
                    let d = l2_squared(query, record.vector.values());
                    let key = (OrdF64(d), record.pseudoquery_id as u32);
                    if heap.len() < k {
                        heap.push(key);
                    } else if key < *heap.peek().unwrap() {
                        heap.pop();
                        heap.push(key);
                    }
                }
                heap.into_vec()
            })
            .collect();

        let mut merged: Vec<(OrdF64, u32)> = per_chunk.into_iter().flatten().collect();
        merged.sort();
        merged.truncate(k);
        merged.into_iter().map(|(d, id)| (d.0, id)).collect()
    }

    pub(crate) fn from_parts(
        dimension: usize,
        backend: Backend,
        records: Vec<PseudoqueryRecord>,
        profiles: BTreeMap<String, DatasetProfile>,
        graph: Option<hnsw::HnswGraph>,
    ) -> Self {
        Self {
            dimension,
            backend,
            records,
            profiles,
            graph,
            sealed: true,
        }
    }

    pub(crate) fn graph(&self) -> Option<&hnsw::HnswGraph> {
        self.graph.as_ref()
    }
}

/// Total-ordered f64 wrapper for heap keys. Index vectors are validated
/// finite, so total_cmp only ever orders ordinary values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct OrdF64(pub f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

pub(crate) fn l2_squared(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut sum = 0.0f64;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        sum += d * d;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn vec2(x: f64, y: f64) -> EmbeddingVector {
        EmbeddingVector::new(vec![x, y]).unwrap()
    }

    fn small_index() -> VectorIndex {
        let mut index = VectorIndex::flat(2);
        index.insert("p0", "d0", vec2(0.0, 0.0)).unwrap();
        index.insert("p1", "d1", vec2(3.0, 4.0)).unwrap();
        index.insert("p2", "d2", vec2(6.0, 8.0)).unwrap();
        index
    }

    #[test]
    fn test_search_distances_euclidean() {
        let index = small_index();
        let hits = index.search(&vec2(0.0, 0.0), 2).unwrap();
        assert_eq!(hits.len(), 2);
        assert_eq!(hits[0].distance, 0.0);
        assert_eq!(hits[0].dataset_id, "d0");
        assert_eq!(hits[1].distance, 5.0);
        assert_eq!(hits[1].dataset_id, "d1");
    }

    #[test]
    fn test_k_saturates_at_record_count() {
        let index = small_index();
        let hits = index.search(&vec2(0.0, 0.0), 100).unwrap();
        assert_eq!(hits.len(), 3);
    }

    #[test]
    fn test_insert_then_search_self() {
        let index = small_index();
        let hits = index.search(&vec2(3.0, 4.0), 1).unwrap();
        assert_eq!(hits[0].pseudoquery_id, 1);
        assert_eq!(hits[0].distance, 0.0);
    }

    #[test]
    fn test_multi_vector_per_dataset() {
        let mut index = VectorIndex::flat(2);
        for i in 0..10 {
            index.insert(format!("p{i}"), "shared", vec2(i as f64, 0.0)).unwrap();
        }
        assert_eq!(index.len(), 10);
        let hits = index.search(&vec2(0.0, 0.0), 10).unwrap();
        assert!(hits.iter().all(|h| h.dataset_id == "shared"));
    }

    #[test]
    fn test_sealed_index_rejects_insert() {
        let mut index = small_index();
        index.seal();
        assert!(matches!(
            index.insert("p", "d", vec2(1.0, 1.0)),
            Err(IndexError::Sealed)
        ));
    }

    #[test]
    fn test_dimension_mismatch() {
        let mut index = VectorIndex::flat(2);
        let bad = EmbeddingVector::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(
            index.insert("p", "d", bad),
            Err(IndexError::DimensionMismatch { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn test_empty_index_search_errors() {
        let index = VectorIndex::flat(2);
        assert!(matches!(
            index.search(&vec2(0.0, 0.0), 1),
            Err(IndexError::EmptyIndex)
        ));
    }

    #[test]
    fn test_tie_broken_by_id() {
        let mut index = VectorIndex::flat(2);
        index.insert("a", "d0", vec2(1.0, 0.0)).unwrap();
        index.insert("b", "d1", vec2(1.0, 0.0)).unwrap();
        index.insert("c", "d2", vec2(0.0, 1.0)).unwrap();
        let hits = index.search(&vec2(0.0, 0.0), 3).unwrap();
        let ids: Vec<u64> = hits.iter().map(|h| h.pseudoquery_id).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    // Independent oracle: naive full scan + full sort, written without the
    // index's heap machinery.
    fn brute_force(
        records: &[(u32, Vec<f64>)],
        query: &[f64],
        k: usize,
    ) -> Vec<(f64, u32)> {
        let mut all: Vec<(f64, u32)> = records
            .iter()
            .map(|(id, v)| {
                let mut s = 0.0f64;
                for i in 0..v.len() {
                    let d = query[i] - v[i];
                    s += d * d;
                }
                (s, *id)
            })
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        all.truncate(k);
        all
    }

    #[test]
    fn test_flat_matches_brute_force_oracle() {
        let mut rng = StdRng::seed_from_u64(7);
        let dim = 16;
        let n = 2000;
        let mut index = VectorIndex::flat(dim);
        let mut raw = Vec::new();
        for i in 0..n {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            raw.push((i as u32, v.clone()));
            index.insert("", "d", EmbeddingVector::new(v).unwrap()).unwrap();
        }
        for _ in 0..50 {
            let q: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for k in [1, 10, 100] {
                let expected = brute_force(&raw, &q, k);
                let got = index
                    .search(&EmbeddingVector::new(q.clone()).unwrap(), k)
                    .unwrap();
                assert_eq!(got.len(), expected.len());
                for (hit, (dist_sq, id)) in got.iter().zip(&expected) {
                    assert_eq!(hit.pseudoquery_id as u32, *id);
                    assert_eq!(hit.distance, dist_sq.sqrt());
                }
            }
        }
    }

    // every record is its own nearest neighbor (or an exact-tie peer)
    #[test]
    fn test_flat_self_retrieval() {
        let mut rng = StdRng::seed_from_u64(19);
        let dim = 12;
        let mut index = VectorIndex::flat(dim);
        let mut vectors = Vec::new();
        for _ in 0..100 {
            let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            vectors.push(v.clone());
            index.insert("", "d", EmbeddingVector::new(v).unwrap()).unwrap();
        }
        for (id, v) in vectors.iter().enumerate() {
            let hit = &index.search(&EmbeddingVector::new(v.clone()).unwrap(), 1).unwrap()[0];
            assert_eq!(hit.distance, 0.0);
            assert!(
                hit.pseudoquery_id == id as u64 || vectors[hit.pseudoquery_id as usize] == *v,
                "nearest of record {id} is neither itself nor an exact tie"
            );
        }
    }

    #[test]
    fn test_flat_order_invariant_to_insertion_order() {
        let mut rng = StdRng::seed_from_u64(11);
        let dim = 8;
        let vectors: Vec<Vec<f64>> = (0..200)
            .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();

        let mut forward = VectorIndex::flat(dim);
        for v in &vectors {
            forward.insert("", "d", EmbeddingVector::new(v.clone()).unwrap()).unwrap();
        }
        let mut backward = VectorIndex::flat(dim);
        for v in vectors.iter().rev() {
            backward.insert("", "d", EmbeddingVector::new(v.clone()).unwrap()).unwrap();
        }

        let q = EmbeddingVector::new(vec![0.1; dim]).unwrap();
        let a: Vec<f64> = forward.search(&q, 20).unwrap().iter().map(|h| h.distance).collect();
        let b: Vec<f64> = backward.search(&q, 20).unwrap().iter().map(|h| h.distance).collect();
        assert_eq!(a, b);
    }
}
