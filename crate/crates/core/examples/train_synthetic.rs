//! Trains on a planted synthetic corpus and checks what the model recovered.
//!
//! ```text
//! cargo run --release --example train_synthetic -- [epochs] [gcn|gat]
//! ```

use smn::corpus::SplitPart;
use smn::graph::{build_graph, GraphOptions};
use smn::metrics::spearman;
use smn::predict::Predictor;
use smn::synth::{generate, SynthConfig};
use smn::train::{TrainConfig, Trainer};

fn main() -> smn::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(150, |a| a.parse().expect("epochs is an integer"));
    let backbone = args.next().unwrap_or_else(|| "gcn".into()).parse()?;

    let corpus = generate(&SynthConfig {
        events: 300,
        vocab: 60,
        seed: 3,
        ..SynthConfig::default()
    })?;
    let graph = build_graph(&corpus.events, &corpus.embeddings, GraphOptions::default())?;
    println!(
        "graph: {} words, {} edges, dim {}",
        graph.n_nodes(),
        graph.n_edges(),
        graph.dim()
    );

    let mut config = TrainConfig {
        epochs,
        seed: 3,
        ..TrainConfig::default()
    };
    config.model.backbone = backbone;
    let mut trainer = Trainer::new(&corpus.events, &graph, None, config)?;
    trainer.run(|log| {
        if log.epoch % 10 == 9 {
            println!(
                "epoch {:>3}  lr {:.4}  train {:.5}  val mse {:.4}",
                log.epoch + 1,
                log.lr,
                log.train_loss,
                log.val_mse.unwrap_or(f64::NAN)
            );
        }
    })?;

    let predictor = Predictor::from_trainer(&trainer);
    let test = trainer.split.select(SplitPart::Test, &corpus.events);
    let report = predictor.report(&test)?;
    println!("test metrics: {}", report.to_json());

    let train = trainer.split.select(SplitPart::Train, &corpus.events);
    let learned = predictor.word_scores(&train)?;
    let (mut ours, mut planted) = (Vec::new(), Vec::new());
    for (token, score) in &learned {
        ours.push(*score);
        planted.push(corpus.planted.word_weights[token]);
    }
    println!(
        "spearman(learned word score, planted weight) = {:.3}",
        spearman(&ours, &planted)?
    );
    Ok(())
}
