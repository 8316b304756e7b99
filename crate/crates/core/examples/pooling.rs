//! Self-attention pooling on a small graph: scores, kept nodes and the
//! zeroed rows of the pooled features.
//!
//! ```text
//! cargo run --example pooling -- [ratio]
//! ```

use ndarray::array;
use smn::backbone::{retained_count, self_attention_pool, GraphOperators};
use smn::diffcore::Tape;
use smn::sparse::CsrMatrix;

fn main() -> smn::Result<()> {
    let ratio: f64 = std::env::args()
        .nth(1)
        .map_or(0.6, |a| a.parse().expect("ratio is a number"));
    // A path 0-1-2-3 plus a triangle 3-4-5.
    let mut triplets = Vec::new();
    for (i, j, w) in [
        (0, 1, 1.0),
        (1, 2, 0.5),
        (2, 3, 0.8),
        (3, 4, 1.2),
        (4, 5, 0.3),
        (3, 5, 0.9),
    ] {
        triplets.push((i, j, w));
        triplets.push((j, i, w));
    }
    let ops = GraphOperators::new(&CsrMatrix::from_triplets(6, 6, &triplets));
    let h = array![
        [0.2, 0.9],
        [0.5, -0.1],
        [1.0, 0.4],
        [-0.3, 0.8],
        [0.7, 0.7],
        [0.0, -0.6]
    ];
    let theta = array![[0.8, -0.2], [0.3, 0.5]];

    let mut tape = Tape::new();
    let hv = tape.constant(h);
    let tv = tape.param(theta);
    let out = self_attention_pool(&mut tape, hv, &ops.normalized, tv, ratio, None)?;
    println!(
        "ratio {ratio}: keep {} of 6 nodes -> {:?}",
        retained_count(ratio, 6),
        out.idx
    );
    let scores = tape.value(out.scores)?;
    let pooled = tape.value(out.pooled)?;
    for i in 0..6 {
        println!(
            "node {i}  score sum {:.4}  kept {:<5}  pooled [{:>7.4}, {:>7.4}]",
            scores.row(i).sum(),
            out.keep[i],
            pooled[[i, 0]],
            pooled[[i, 1]]
        );
    }
    Ok(())
}
