//! Head ablations on a synthetic corpus whose popularity depends on both the
//! text and the image of each event.
//!
//! ```text
//! cargo run --release --example ablation -- [epochs]
//! ```

use smn::corpus::SplitPart;
use smn::graph::{build_graph, GraphOptions};
use smn::model::Heads;
use smn::predict::Predictor;
use smn::synth::{generate, SynthConfig};
use smn::train::{TrainConfig, Trainer};

fn main() -> smn::Result<()> {
    let epochs: usize = std::env::args()
        .nth(1)
        .map_or(70, |a| a.parse().expect("epochs is an integer"));
    let corpus = generate(&SynthConfig {
        events: 300,
        vocab: 60,
        image_dim: 8,
        seed: 5,
        ..SynthConfig::default()
    })?;
    let graph = build_graph(&corpus.events, &corpus.embeddings, GraphOptions::default())?;

    for heads in ["base,self,mutual,image", "base,self,mutual", "image", "base"] {
        let mut config = TrainConfig {
            epochs,
            seed: 5,
            ..TrainConfig::default()
        };
        config.model.heads = heads.parse::<Heads>()?;
        let mut trainer = Trainer::new(&corpus.events, &graph, Some(8), config)?;
        trainer.run(|_| {})?;
        let test = trainer.split.select(SplitPart::Test, &corpus.events);
        let report = Predictor::from_trainer(&trainer).report(&test)?;
        println!(
            "{heads:<24} mse_abs {:.4}  OL@10 {:.4}  NDCG@10 {:.4}",
            report.mse_abs,
            report.ol["10"],
            report.ndcg_at_10.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
