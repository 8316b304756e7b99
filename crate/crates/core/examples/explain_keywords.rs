//! Trains briefly on a planted corpus, then lists each event's highest
//! scoring keywords next to the weights that generated them.
//!
//! ```text
//! cargo run --release --example explain_keywords -- [epochs]
//! ```

use smn::corpus::SplitPart;
use smn::graph::{build_graph, GraphOptions};
use smn::predict::Predictor;
use smn::synth::{generate, SynthConfig};
use smn::train::{TrainConfig, Trainer};

fn main() -> smn::Result<()> {
    let epochs: usize = std::env::args()
        .nth(1)
        .map_or(30, |a| a.parse().expect("epochs is an integer"));
    let corpus = generate(&SynthConfig {
        events: 200,
        vocab: 40,
        seed: 21,
        ..SynthConfig::default()
    })?;
    let graph = build_graph(&corpus.events, &corpus.embeddings, GraphOptions::default())?;
    let mut trainer = Trainer::new(
        &corpus.events,
        &graph,
        None,
        TrainConfig {
            epochs,
            seed: 21,
            ..TrainConfig::default()
        },
    )?;
    trainer.run(|_| {})?;

    let predictor = Predictor::from_trainer(&trainer);
    let test = trainer.split.select(SplitPart::Test, &corpus.events);
    for p in predictor.predict(&test)?.iter().take(6) {
        let mut words = p.word_scores.clone();
        words.sort_by(|a, b| b.1.total_cmp(&a.1));
        let listed: Vec<String> = words
            .iter()
            .take(4)
            .map(|(w, s)| format!("{w} {s:.3} (planted {:.2})", corpus.planted.word_weights[w]))
            .collect();
        println!("{}  total {:.3}: {}", p.id, p.breakdown.y_total, listed.join(", "));
    }
    Ok(())
}
