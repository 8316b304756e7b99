//! Compares every analytic parameter gradient of a small model with central
//! finite differences.
//!
//! ```text
//! cargo run --release --example gradient_check -- [gcn|gat]
//! ```

use smn::corpus::Event;
use smn::diffcore::Tape;
use smn::graph::{build_graph, GraphOptions};
use smn::model::{GraphContext, LossConfig, Model, ModelConfig};
use smn::semb::EmbeddingFile;

fn event(id: &str, tokens: &[&str], popularity: f64, image: Option<Vec<f32>>) -> Event {
    Event {
        id: id.into(),
        tokens: tokens.iter().map(|t| t.to_string()).collect(),
        image_feature: image,
        popularity_raw: popularity,
        popularity,
    }
}

fn main() -> smn::Result<()> {
    let backbone = std::env::args().nth(1).unwrap_or_else(|| "gcn".into()).parse()?;
    let events = vec![
        event(
            "a",
            &["rain", "flood", "city", "alert"],
            0.7,
            Some(vec![0.3, -0.2, 0.9]),
        ),
        event("b", &["flood", "alert", "river"], 0.2, None),
        event(
            "c",
            &["city", "concert", "river", "ticket"],
            0.45,
            Some(vec![-0.5, 0.1, 0.4]),
        ),
    ];
    let mut words = EmbeddingFile::new(6);
    for (w, token) in ["rain", "flood", "city", "alert", "river", "concert", "ticket"]
        .iter()
        .enumerate()
    {
        let row = (0..6).map(|c| (((w * 7 + c * 3) % 11) as f32 - 5.0) / 5.0).collect();
        words.insert(*token, row)?;
    }
    let graph = build_graph(&events, &words, GraphOptions::default())?;
    let ctx = GraphContext::new(&graph);
    let config = ModelConfig {
        backbone,
        pool_ratio: 0.8,
        delta: 100.0,
        ..ModelConfig::default()
    };
    let model = Model::init(config, 6, Some(3), 1)?;
    let cfg = LossConfig::default();

    let mut tape = Tape::new();
    let idx = model.forward_backbone(&mut tape, &ctx, None)?.pooling.idx;
    let refs: Vec<&Event> = events.iter().collect();
    let (loss, grads) = model.loss_and_grads(&ctx, &refs, &cfg, Some(&idx))?;
    println!("{backbone}: loss {loss:.6}, pooling keeps {:?}", idx);

    let loss_at = |m: &Model| -> smn::Result<f64> {
        let mut tape = Tape::new();
        let state = m.forward_backbone(&mut tape, &ctx, Some(&idx))?;
        let mut total = 0.0;
        for e in &events {
            let fwd = m.forward_event(&mut tape, &ctx, &state, e)?;
            let l = fwd.loss(&mut tape, e.popularity, &cfg)?;
            total += tape.scalar(l)?;
        }
        Ok(total)
    };
    let h = 1e-5;
    for (name, g) in &grads {
        let mut worst = 0.0f64;
        let mut probe = model.clone();
        for ((r, c), &a) in g.indexed_iter() {
            let v = model.params[name][[r, c]];
            probe.params.get_mut(name).expect("bound")[[r, c]] = v + h;
            let up = loss_at(&probe)?;
            probe.params.get_mut(name).expect("bound")[[r, c]] = v - h;
            let down = loss_at(&probe)?;
            probe.params.get_mut(name).expect("bound")[[r, c]] = v;
            let n = (up - down) / (2.0 * h);
            worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-6));
        }
        println!("{name:<18} {:>4} entries  worst relative error {worst:.1e}", g.len());
    }
    Ok(())
}
