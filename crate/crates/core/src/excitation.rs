//! Per-event popularity heads over pooled word features.
//!
//! * **base**: `gelu(h̃_i · W_μ)` from the event's mean pooled word vector.
//! * **self**: `Σ_j gelu(h_ij · (W_mask ⊙ W_β))`, one additive score per
//!   retained word. `W_mask` keeps the top `δ%` entries of `W_β` and is
//!   applied with a straight-through gradient, so masked entries keep
//!   learning.
//! * **mutual**: `η_i Σ_{j≠k} exp(−γ_i ‖ĥ_j − ĥ_k‖²)` over pairs of distinct
//!   retained words in the excitation space `ĥ = relu(relu(h W_1) W_2)`, with
//!   `η_i`, `γ_i` read from the event's mean excited vector. The squared
//!   distance is expanded through the Gram matrix `z_jk = ĥ_j · ĥ_k`, which
//!   is also what the L1 penalty acts on.

use ndarray::Array2;

use crate::backbone::top_rank;
use crate::corpus::ceil_fraction;
use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};

/// `relu(relu(H W_1) W_2)`, row-wise, so zero rows stay zero.
pub fn project_excitation(tape: &mut Tape, rows: Var, w1: Var, w2: Var) -> Result<Var> {
    let a = tape.matmul(rows, w1)?;
    let a = tape.relu(a)?;
    let b = tape.matmul(a, w2)?;
    tape.relu(b)
}

/// Binary mask keeping the `⌈δ/100 · F⌉` largest entries of `w_beta`, lower
/// index first among equal values.
pub fn refresh_mask(w_beta: &Array2<f64>, delta: f64) -> Result<Array2<f64>> {
    if !(delta > 0.0 && delta <= 100.0) {
        return Err(Error::Config(format!(
            "sparsity delta must be in (0, 100], got {delta}"
        )));
    }
    let values: Vec<f64> = w_beta.iter().copied().collect();
    let count = mask_cardinality(delta, values.len());
    let mut mask = Array2::zeros(w_beta.dim());
    let cols = w_beta.ncols();
    for i in top_rank(&values, count) {
        mask[[i / cols, i % cols]] = 1.0;
    }
    Ok(mask)
}

pub fn mask_cardinality(delta: f64, len: usize) -> usize {
    ceil_fraction(delta / 100.0, len).min(len)
}

/// Ones off the diagonal, zeros on it.
pub fn off_diagonal(m: usize) -> Array2<f64> {
    Array2::from_shape_fn((m, m), |(j, k)| if j == k { 0.0 } else { 1.0 })
}

#[derive(Debug, Clone, Copy)]
pub struct MutualOutput {
    pub value: Var,
    pub eta: Var,
    pub gamma: Var,
    /// Gram matrix `z` of the excited word vectors, `m × m`.
    pub gram: Var,
}

/// Mutual excitation of one event. `excited` holds the event's retained words
/// in excitation space (`m × F`) and `event_vector` their mean (`1 × F`).
/// Returns `None` when fewer than two words remain, in which case the head
/// contributes zero.
pub fn mutual_excitation(
    tape: &mut Tape,
    excited: Var,
    event_vector: Var,
    w_eta: Var,
    w_gamma: Var,
    include_diagonal: bool,
) -> Result<Option<MutualOutput>> {
    let m = tape.value(excited)?.nrows();
    if m < 2 && !include_diagonal || m == 0 {
        return Ok(None);
    }
    let eta = tape.matmul(event_vector, w_eta)?;
    let eta = tape.gelu(eta)?;
    let gamma = tape.matmul(event_vector, w_gamma)?;
    let gamma = tape.gelu(gamma)?;

    let transposed = tape.transpose(excited)?;
    let gram = tape.matmul(excited, transposed)?;
    let dist = tape.sq_dist_from_gram(gram)?;
    let neg_gamma = tape.scale(gamma, -1.0)?;
    let arg = tape.scalar_mul(neg_gamma, dist)?;
    let kernel = tape.exp(arg)?;
    let kernel = if include_diagonal {
        kernel
    } else {
        let mask = tape.constant(off_diagonal(m));
        tape.hadamard(kernel, mask)?
    };
    let total = tape.sum(kernel)?;
    let value = tape.hadamard(eta, total)?;
    Ok(Some(MutualOutput {
        value,
        eta,
        gamma,
        gram,
    }))
}

#[derive(Debug, Clone, Copy)]
pub struct SelfOutput {
    pub value: Var,
    /// Per-word filtered scores `β̂_ij`, `m × 1`.
    pub scores: Var,
}

/// Self excitation of one event from its retained pooled word rows
/// (`m × F`). `None` when no word survived pooling.
pub fn self_excitation(tape: &mut Tape, words: Var, w_beta: Var, mask: &Array2<f64>) -> Result<Option<SelfOutput>> {
    if tape.value(words)?.nrows() == 0 {
        return Ok(None);
    }
    let pruned = tape.ste_mask(w_beta, mask)?;
    let logits = tape.matmul(words, pruned)?;
    let scores = tape.gelu(logits)?;
    let value = tape.sum(scores)?;
    Ok(Some(SelfOutput { value, scores }))
}

/// `gelu(h̃_i · W_μ)`.
pub fn base_excitation(tape: &mut Tape, event_vector: Var, w_mu: Var) -> Result<Var> {
    let logit = tape.matmul(event_vector, w_mu)?;
    tape.gelu(logit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::gelu;
    use ndarray::array;

    #[test]
    fn projection_identity_and_zero() {
        let mut t = Tape::new();
        let eye = t.param(Array2::eye(3));
        let h = array![[0.5, 0.0, 2.0], [0.0, 0.0, 0.0]];
        let hv = t.constant(h.clone());
        let out = project_excitation(&mut t, hv, eye, eye).unwrap();
        assert_eq!(t.value(out).unwrap(), &h);
    }

    #[test]
    fn mask_examples() {
        let w = array![[0.1], [0.9], [0.5], [0.2]];
        assert_eq!(refresh_mask(&w, 50.0).unwrap(), array![[0.0], [1.0], [1.0], [0.0]]);
        assert_eq!(refresh_mask(&w, 100.0).unwrap(), Array2::<f64>::ones((4, 1)));
        let flat = Array2::from_elem((5, 1), 0.3);
        assert_eq!(
            refresh_mask(&flat, 50.0).unwrap(),
            array![[1.0], [1.0], [1.0], [0.0], [0.0]]
        );
        assert!(refresh_mask(&w, 0.0).is_err());
        assert!(refresh_mask(&w, 100.5).is_err());
    }

    #[test]
    fn mutual_single_word_is_zero() {
        let mut t = Tape::new();
        let x = t.constant(array![[1.0, 2.0]]);
        let w = t.param(array![[1.0], [1.0]]);
        assert!(mutual_excitation(&mut t, x, x, w, w, false).unwrap().is_none());
    }

    #[test]
    fn mutual_identical_words_give_two_eta() {
        let mut t = Tape::new();
        let x = t.constant(array![[0.3, 0.7], [0.3, 0.7]]);
        let mean = t.mean_rows(x).unwrap();
        let w_eta = t.param(array![[1.0], [0.5]]);
        let w_gamma = t.param(array![[0.2], [0.1]]);
        let out = mutual_excitation(&mut t, x, mean, w_eta, w_gamma, false)
            .unwrap()
            .unwrap();
        let eta = gelu(0.3 + 0.35);
        assert!((t.scalar(out.value).unwrap() - 2.0 * eta).abs() < 1e-15);
    }

    #[test]
    fn mutual_matches_direct_double_loop() {
        let words = array![[0.2, 1.1, 0.0], [0.9, 0.4, 0.3], [0.0, 0.5, 1.5]];
        let w_eta = array![[0.4], [-0.2], [0.7]];
        let w_gamma = array![[0.3], [0.1], [0.2]];
        let mean = words.mean_axis(ndarray::Axis(0)).unwrap();
        let eta = gelu(mean.dot(&w_eta.column(0)));
        let gamma = gelu(mean.dot(&w_gamma.column(0)));
        let mut direct = 0.0;
        for j in 0..3 {
            for k in 0..3 {
                if j != k {
                    let d: f64 = (&words.row(j) - &words.row(k)).mapv(|v| v * v).sum();
                    direct += (-gamma * d).exp();
                }
            }
        }
        direct *= eta;

        let mut t = Tape::new();
        let x = t.constant(words.clone());
        let m = t.mean_rows(x).unwrap();
        let (we, wg) = (t.param(w_eta), t.param(w_gamma));
        let out = mutual_excitation(&mut t, x, m, we, wg, false).unwrap().unwrap();
        assert!((t.scalar(out.value).unwrap() - direct).abs() < 1e-10);
    }

    #[test]
    fn self_excitation_examples() {
        let words = array![[0.5, -1.0], [2.0, 0.25]];
        let mut t = Tape::new();
        let x = t.constant(words.clone());
        let zero = t.param(Array2::zeros((2, 1)));
        let out = self_excitation(&mut t, x, zero, &Array2::ones((2, 1)))
            .unwrap()
            .unwrap();
        assert_eq!(t.scalar(out.value).unwrap(), 0.0);

        let w = array![[0.8], [-0.3]];
        let wv = t.param(w.clone());
        let out = self_excitation(&mut t, x, wv, &Array2::ones((2, 1))).unwrap().unwrap();
        let per_word: f64 = words.rows().into_iter().map(|r| gelu(r.dot(&w.column(0)))).sum();
        assert_eq!(t.scalar(out.value).unwrap(), per_word);

        // A fully masked weight vector contributes nothing yet still learns.
        let out = self_excitation(&mut t, x, wv, &Array2::zeros((2, 1))).unwrap().unwrap();
        assert_eq!(t.scalar(out.value).unwrap(), 0.0);
        let g = t.backward(out.value).unwrap();
        assert!(g.get(wv).unwrap().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn base_zero_cases() {
        let mut t = Tape::new();
        let h = t.constant(Array2::zeros((1, 3)));
        let w = t.param(array![[1.0], [2.0], [3.0]]);
        let y = base_excitation(&mut t, h, w).unwrap();
        assert_eq!(t.scalar(y).unwrap(), 0.0);
        let h = t.constant(array![[1.0, 2.0, 3.0]]);
        let w = t.param(Array2::zeros((3, 1)));
        let y = base_excitation(&mut t, h, w).unwrap();
        assert_eq!(t.scalar(y).unwrap(), 0.0);
    }
}
