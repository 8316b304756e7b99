//! Per-event breakdown into base, self, mutual and image components for an
//! untrained model, with each head switched off in turn.
//!
//! ```text
//! cargo run --example excitation_heads
//! ```

use smn::graph::{build_graph, GraphOptions};
use smn::model::{GraphContext, Heads, Model, ModelConfig};
use smn::synth::{generate, SynthConfig};

fn main() -> smn::Result<()> {
    let corpus = generate(&SynthConfig {
        events: 6,
        vocab: 16,
        image_dim: 4,
        seed: 12,
        ..SynthConfig::default()
    })?;
    let graph = build_graph(&corpus.events, &corpus.embeddings, GraphOptions::default())?;
    let ctx = GraphContext::new(&graph);
    let refs: Vec<_> = corpus.events.iter().collect();
    let model = Model::init(ModelConfig::default(), graph.dim(), Some(4), 12)?;

    for heads in [
        "base,self,mutual,image",
        "self,mutual,image",
        "base,mutual,image",
        "base,self,image",
        "base,self,mutual",
    ] {
        let mut m = model.clone();
        m.config.heads = heads.parse::<Heads>()?;
        println!("heads {heads}");
        for p in m.predict(&ctx, &refs)? {
            let b = p.breakdown;
            println!(
                "  {}  base {:>8.4}  self {:>8.4}  mutual {:>8.4}  image {:>8.4}  total {:>8.4}",
                p.id, b.y_base, b.y_self, b.y_mutual, b.y_image, b.y_total
            );
        }
    }
    Ok(())
}
