//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::path::PathBuf;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use smn::corpus::Event;
use smn::graph::{build_graph, GraphOptions, WordGraph};
use smn::semb::EmbeddingFile;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn event(id: &str, tokens: &[&str], popularity: f64) -> Event {
    Event {
        id: id.into(),
        tokens: tokens.iter().map(|t| t.to_string()).collect(),
        image_feature: None,
        popularity_raw: popularity,
        popularity,
    }
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

/// Random `dim`-wide embeddings for every token of `events`.
pub fn embeddings_for(events: &[Event], dim: usize, seed: u64) -> EmbeddingFile {
    let mut rng = rng(seed);
    let mut file = EmbeddingFile::new(dim);
    for e in events {
        for t in e.unique_tokens() {
            if file.get(t).is_none() {
                let row = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                file.insert(t, row).unwrap();
            }
        }
    }
    file
}

/// Twelve words over three overlapping events, eight-wide embeddings and
/// five-wide images on the first two events.
pub fn gradient_fixture() -> (WordGraph, Vec<Event>) {
    let mut events = vec![
        event("g0", &["t0", "t1", "t2", "t3", "t4", "t5"], 0.8),
        event("g1", &["t4", "t5", "t6", "t7", "t8", "t9"], 0.3),
        event("g2", &["t8", "t9", "t10", "t11", "t0", "t2"], 0.55),
    ];
    let mut r = rng(41);
    for e in events.iter_mut().take(2) {
        e.image_feature = Some((0..5).map(|_| r.random_range(-1.0f32..1.0)).collect());
    }
    let graph = build_graph(&events, &embeddings_for(&events, 8, 7), GraphOptions::default()).unwrap();
    (graph, events)
}

/// All orderings of `0..n`, by recursive swapping.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn go(k: usize, items: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k == items.len() {
            out.push(items.clone());
            return;
        }
        for i in k..items.len() {
            items.swap(k, i);
            go(k + 1, items, out);
            items.swap(k, i);
        }
    }
    let mut out = Vec::new();
    go(0, &mut (0..n).collect(), &mut out);
    out
}
