//! Order loss, mAP and NDCG for a few hand-made rankings.
//!
//! ```text
//! cargo run --example ranking_metrics
//! ```

use smn::metrics::{map_at, ndcg_at, order_loss, spearman, MetricsReport, RankedResult};

fn main() -> smn::Result<()> {
    let truth = vec![0.95, 0.1, 0.6, 0.35, 0.8, 0.05, 0.5, 0.2, 0.7, 0.4, 0.15, 0.9];
    let ids: Vec<String> = (0..truth.len()).map(|i| format!("ev{i:02}")).collect();
    let reversed: Vec<f64> = truth.iter().map(|v| -v).collect();
    let noisy: Vec<f64> = truth
        .iter()
        .enumerate()
        .map(|(i, v)| v + if i % 3 == 0 { 0.3 } else { -0.1 })
        .collect();

    for (name, pred) in [("perfect", truth.clone()), ("noisy", noisy), ("reversed", reversed)] {
        let r = RankedResult::new(ids.clone(), truth.clone(), pred.clone())?;
        println!(
            "{name:<9} OL@5 {:.4}  mAP@6 {:.4}  NDCG@10 {:.4}  spearman {:>6.3}",
            order_loss(&r, 5)?,
            map_at(&r, 6)?,
            ndcg_at(&r, 10)?,
            spearman(&truth, &pred)?
        );
        if name == "noisy" {
            println!("{}", MetricsReport::compute(&r)?.to_json());
        }
    }
    Ok(())
}
