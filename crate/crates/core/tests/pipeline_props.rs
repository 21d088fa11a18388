//! Cross-module pipeline checks: the rerank permutation guarantee under
//! adversarial generator output, and a hermetic offline end-to-end run over
//! a planted corpus.

use std::collections::BTreeSet;

use proptest::prelude::*;
use tabseek_core::index::VectorIndex;
use tabseek_core::pipeline::{Candidate, QueryEngine, QueryOptions};
use tabseek_core::provider::{
    EmbeddingVector, GenerationRequest, HashEmbedder, OfflineGenerator, ProviderError,
    TextEmbedder, TextGenerator,
};

struct FixedOutputGenerator(String);

impl TextGenerator for FixedOutputGenerator {
    fn generate(&self, _request: &GenerationRequest) -> Result<String, ProviderError> {
        Ok(self.0.clone())
    }
    fn id(&self) -> &str {
        "fixed"
    }
}

fn tiny_index(dim: usize) -> VectorIndex {
    let mut index = VectorIndex::flat(dim);
    index
        .insert("t", "d", EmbeddingVector::new(vec![0.0; dim]).unwrap())
        .unwrap();
    index.seal();
    index
}

fn candidates(n: usize) -> Vec<Candidate> {
    (0..n)
        .map(|i| Candidate {
            dataset_id: format!("ds{i}.csv"),
            profile: None,
            retrieval_score: n - i,
            best_distance: i as f64,
            matched: vec![],
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    // Whatever the generator emits, rerank must return a permutation of the
    // candidate positions.
    #[test]
    fn rerank_always_permutes(output in "\\PC{0,200}", n in 1usize..12) {
        let generator = FixedOutputGenerator(output);
        let embedder = HashEmbedder::new(8);
        let index = tiny_index(8);
        let engine = QueryEngine::new(&index, &generator, &embedder, QueryOptions::default());
        let pool = candidates(n);
        let (order, _) = engine.rerank("some query", &pool);
        let unique: BTreeSet<usize> = order.iter().copied().collect();
        prop_assert_eq!(order.len(), n);
        prop_assert_eq!(unique.len(), n);
        prop_assert!(order.iter().all(|&i| i < n));
    }

    // Outputs that name candidate ids (possibly with noise, repeats, and
    // unknown ids) must keep first-occurrence order for the named prefix.
    #[test]
    fn rerank_respects_named_prefix(
        picks in proptest::collection::vec(0usize..6, 1..6),
        noise in "[a-z ]{0,20}",
    ) {
        let n = 6;
        let mut lines = Vec::new();
        for &p in &picks {
            lines.push(format!("ds{p}.csv {noise}"));
        }
        let generator = FixedOutputGenerator(lines.join("\n"));
        let embedder = HashEmbedder::new(8);
        let index = tiny_index(8);
        let engine = QueryEngine::new(&index, &generator, &embedder, QueryOptions::default());
        let pool = candidates(n);
        let (order, degraded) = engine.rerank("q", &pool);
        prop_assert!(!degraded);

        let mut expected_prefix = Vec::new();
        for &p in &picks {
            if !expected_prefix.contains(&p) {
                expected_prefix.push(p);
            }
        }
        prop_assert_eq!(&order[..expected_prefix.len()], &expected_prefix[..]);
        prop_assert_eq!(order.len(), n);
    }
}

// A sealed index answers concurrent queries; every thread must see the
// same ranking a sequential run produces.
#[test]
fn concurrent_queries_against_sealed_index() {
    let embedder = HashEmbedder::new(64);
    let mut index = VectorIndex::flat(64);
    for d in 0..8 {
        let texts: Vec<String> = (0..4)
            .map(|i| format!("dataset qq{d}marker{d} facet {i}"))
            .collect();
        let vectors = embedder.embed(&texts).unwrap();
        for (text, vector) in texts.iter().zip(vectors) {
            index.insert(text.clone(), format!("ds{d}"), vector).unwrap();
        }
    }
    index.seal();
    let generator = OfflineGenerator::new();
    let engine = QueryEngine::new(&index, &generator, &embedder, QueryOptions::default());

    let expected: Vec<Vec<String>> = (0..8)
        .map(|d| {
            engine
                .search("q", &format!("qq{d}marker{d} data"))
                .unwrap()
                .ranked_ids()
                .iter()
                .map(|s| s.to_string())
                .collect()
        })
        .collect();

    std::thread::scope(|scope| {
        for round in 0..4 {
            let engine = &engine;
            let expected = &expected;
            scope.spawn(move || {
                for (d, want) in expected.iter().enumerate() {
                    let got: Vec<String> = engine
                        .search("q", &format!("qq{d}marker{d} data"))
                        .unwrap()
                        .ranked_ids()
                        .iter()
                        .map(|s| s.to_string())
                        .collect();
                    assert_eq!(&got, want, "thread {round} diverged on query {d}");
                }
            });
        }
    });
}

// Hermetic end-to-end: a corpus where every table's column names carry a
// unique marker token, indexed with offline providers. A query containing
// the marker must put that table first.
#[test]
fn planted_corpus_end_to_end() {
    use tabseek_core::build::build_index;
    use tabseek_core::corpus::load_collection;

    let dir = tempfile::TempDir::new().unwrap();
    let markers = ["kwzexample", "vbnsignal", "xqtreading", "jyfmeasure"];
    for (i, marker) in markers.iter().enumerate() {
        let mut text = format!("{marker}_id,{marker}_value,{marker}_level\n");
        for row in 0..6 {
            text.push_str(&format!("{row},{},{}\n", row * 10 + i, row as f64 * 1.5));
        }
        std::fs::write(dir.path().join(format!("table{i}.csv")), text).unwrap();
    }

    let collection = load_collection(dir.path(), None).unwrap();
    let generator = OfflineGenerator::new();
    let embedder = HashEmbedder::default();
    let mut index = VectorIndex::flat(embedder.dimension());
    let report = build_index(&mut index, &collection, &generator, &embedder, 10, false).unwrap();
    assert_eq!(report.records_inserted, 40);

    let engine = QueryEngine::new(&index, &generator, &embedder, QueryOptions::default());
    for (i, marker) in markers.iter().enumerate() {
        let result = engine.search("q", &format!("data about {marker} values")).unwrap();
        assert_eq!(
            result.ranked_ids()[0],
            format!("table{i}.csv"),
            "marker {marker} should retrieve its table first"
        );
    }

    // save/load round trip answers queries identically
    let path = dir.path().join("index.tsk");
    index.save(&path).unwrap();
    let loaded = VectorIndex::load(&path).unwrap();
    let engine2 = QueryEngine::new(&loaded, &generator, &embedder, QueryOptions::default());
    for marker in &markers {
        let q = format!("data about {marker} values");
        let a = engine.search("q", &q).unwrap();
        let b = engine2.search("q", &q).unwrap();
        assert_eq!(a.ranked_ids(), b.ranked_ids());
    }
}
