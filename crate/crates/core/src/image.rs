//! Image branch: a two-layer MLP from a precomputed image feature vector to a
//! scalar popularity contribution.

use ndarray::Array2;

use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};

/// Default hidden width.
pub const IMAGE_HIDDEN: usize = 64;
/// Default feature width (ViT-B/32 image embeddings).
pub const IMAGE_DIM: usize = 512;

/// Tape handles for the MLP weights: `w1` is `F_c × F_h`, `b1` is `1 × F_h`,
/// `w2` is `F_h × 1`, `b2` is `1 × 1`.
#[derive(Debug, Clone, Copy)]
pub struct ImageHead {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// `relu(x W1 + b1) W2 + b2`, or with `relu_output` also a relu on the final
/// layer. Events without an image feature contribute a constant zero.
pub fn image_popularity(tape: &mut Tape, feature: Option<&[f32]>, head: ImageHead, relu_output: bool) -> Result<Var> {
    let Some(feature) = feature else {
        return Ok(tape.scalar_constant(0.0));
    };
    let expected = tape.value(head.w1)?.nrows();
    if feature.len() != expected {
        return Err(Error::Shape {
            op: "image_popularity",
            lhs: (1, feature.len()),
            rhs: (expected, tape.value(head.w1)?.ncols()),
        });
    }
    let x = Array2::from_shape_fn((1, feature.len()), |(_, j)| f64::from(feature[j]));
    let x = tape.constant(x);
    let hidden = tape.matmul(x, head.w1)?;
    let hidden = tape.add(hidden, head.b1)?;
    let hidden = tape.relu(hidden)?;
    let out = tape.matmul(hidden, head.w2)?;
    let out = tape.add(out, head.b2)?;
    if relu_output {
        tape.relu(out)
    } else {
        Ok(out)
    }
}
