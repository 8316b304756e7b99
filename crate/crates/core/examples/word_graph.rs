//! Builds the PMI word graph for the fixture corpus and lists its strongest
//! edges.
//!
//! ```text
//! cargo run --example word_graph -- [events.jsonl] [words.semb]
//! ```

use smn::corpus::load_corpus;
use smn::graph::{build_graph, CooccurrenceCounts, GraphOptions};
use smn::semb::EmbeddingFile;

fn main() -> smn::Result<()> {
    let mut args = std::env::args().skip(1);
    let fixtures = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures");
    let corpus = args.next().unwrap_or_else(|| format!("{fixtures}/events.jsonl"));
    let words = args.next().unwrap_or_else(|| format!("{fixtures}/words.semb"));

    let (_, events) = load_corpus(&corpus)?;
    let graph = build_graph(&events, &EmbeddingFile::load(&words)?, GraphOptions::default())?;
    println!(
        "{} words, {} edges, embedding width {}",
        graph.n_nodes(),
        graph.n_edges(),
        graph.dim()
    );

    let counts = CooccurrenceCounts::count(&graph.vocab, &events)?;
    let mut edges: Vec<(usize, usize, f64)> = graph.adjacency.iter().filter(|&(i, j, _)| i < j).collect();
    edges.sort_by(|a, b| b.2.total_cmp(&a.2));
    println!("{:<10} {:<10} {:>6} {:>8}", "word", "word", "d(i,j)", "pmi");
    for (i, j, w) in edges.iter().take(12) {
        println!(
            "{:<10} {:<10} {:>6} {:>8.4}",
            graph.vocab.token(*i),
            graph.vocab.token(*j),
            counts.pair(*i, *j),
            w
        );
    }
    Ok(())
}
