//! Graph feature extraction over the word graph and self-attention pooling.
//!
//! Layers propagate node features with either the symmetric-normalized
//! adjacency (GCN) or single-head neighborhood attention (GAT). Pooling
//! scores every node with one more graph convolution, keeps the `⌈kN⌉`
//! highest-scoring nodes and gates the features of the survivors by their
//! scores.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::ceil_fraction;
use crate::diffcore::{Neighborhoods, SparseOperator, Tape, Var};
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

/// Leaky-ReLU slope used inside attention scores.
pub const GAT_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Gcn,
    Gat,
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(BackboneKind::Gcn),
            "gat" => Ok(BackboneKind::Gat),
            other => Err(Error::Config(format!(
                "unknown backbone {other:?}, expected gcn or gat"
            ))),
        }
    }
}

impl std::fmt::Display for BackboneKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackboneKind::Gcn => "gcn",
            BackboneKind::Gat => "gat",
        })
    }
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃_ii = Σ_j (A + I)_ij`.
pub fn normalize_adjacency(adjacency: &CsrMatrix) -> CsrMatrix {
    let (n, m) = adjacency.shape();
    assert_eq!(n, m, "adjacency must be square");
    let mut degree = vec![1.0f64; n];
    for (i, _, w) in adjacency.iter() {
        degree[i] += w;
    }
    // w / sqrt(d_i d_j) keeps (i, j) and (j, i) bitwise equal.
    let scaled = |i: usize, j: usize, w: f64| w / (degree[i] * degree[j]).sqrt();
    let mut triplets: Vec<(usize, usize, f64)> = adjacency
        .iter()
        .filter(|&(i, j, _)| i != j)
        .map(|(i, j, w)| (i, j, scaled(i, j, w)))
        .collect();
    for i in 0..n {
        // Any stored diagonal weight is folded in with the self-loop.
        triplets.push((i, i, scaled(i, i, 1.0 + adjacency.get(i, i))));
    }
    CsrMatrix::from_triplets(n, n, &triplets)
}

/// Neighbor lists `{i} ∪ {j : A_ij > 0}`, ascending.
pub fn neighborhoods(adjacency: &CsrMatrix) -> Neighborhoods {
    let (n, _) = adjacency.shape();
    let lists = (0..n)
        .map(|i| {
            let mut nb: Vec<usize> = adjacency.row(i).filter(|&(_, w)| w > 0.0).map(|(j, _)| j).collect();
            nb.push(i);
            nb.sort_unstable();
            nb.dedup();
            nb
        })
        .collect();
    Neighborhoods(lists)
}

/// Immutable graph operators shared by every forward pass.
#[derive(Debug, Clone)]
pub struct GraphOperators {
    pub normalized: Arc<SparseOperator>,
    pub neighborhoods: Arc<Neighborhoods>,
}

impl GraphOperators {
    pub fn new(adjacency: &CsrMatrix) -> Self {
        Self {
            normalized: Arc::new(SparseOperator::new(normalize_adjacency(adjacency))),
            neighborhoods: Arc::new(neighborhoods(adjacency)),
        }
    }
}

/// `relu(Â · H · W)`.
pub fn gcn_forward(tape: &mut Tape, h: Var, normalized: &Arc<SparseOperator>, weight: Var) -> Result<Var> {
    let hw = tape.matmul(h, weight)?;
    let propagated = tape.sparse_matmul(normalized, hw)?;
    tape.relu(propagated)
}

/// Single-head attention layer: `relu(Σ_j α_ij (H W)_j)` with
/// `α_ij = softmax_j leaky_relu((HW a_src)_i + (HW a_dst)_j)`.
pub fn gat_forward(
    tape: &mut Tape,
    h: Var,
    neighborhoods: &Arc<Neighborhoods>,
    weight: Var,
    att_src: Var,
    att_dst: Var,
) -> Result<Var> {
    let hw = tape.matmul(h, weight)?;
    let src = tape.matmul(hw, att_src)?;
    let dst = tape.matmul(hw, att_dst)?;
    let mixed = tape.graph_attention(hw, src, dst, neighborhoods, GAT_SLOPE)?;
    tape.relu(mixed)
}

/// Indices of the `count` largest keys, lower index first on ties, returned
/// in ascending index order.
pub fn top_rank(keys: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| keys[b].total_cmp(&keys[a]).then(a.cmp(&b)));
    let mut idx: Vec<usize> = order.into_iter().take(count).collect();
    idx.sort_unstable();
    idx
}

/// Number of nodes retained for a pooling ratio.
pub fn retained_count(ratio: f64, n: usize) -> usize {
    ceil_fraction(ratio, n).min(n)
}

#[derive(Debug, Clone)]
pub struct PoolingOutput {
    /// Retained nodes, ascending.
    pub idx: Vec<usize>,
    /// `keep[i]` iff node `i` is in `idx`.
    pub keep: Vec<bool>,
    /// Attention scores `S`, `N × F`.
    pub scores: Var,
    /// `S` with the rows of dropped nodes zeroed.
    pub score_mask: Var,
    /// `H ⊙ S_mask`.
    pub pooled: Var,
}

/// Self-attention pooling. With `fixed_idx` the discrete selection is taken
/// as given instead of recomputed from the scores.
pub fn self_attention_pool(
    tape: &mut Tape,
    h: Var,
    normalized: &Arc<SparseOperator>,
    theta: Var,
    ratio: f64,
    fixed_idx: Option<&[usize]>,
) -> Result<PoolingOutput> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("pooling ratio must be in (0, 1], got {ratio}")));
    }
    let projected = tape.matmul(h, theta)?;
    let propagated = tape.sparse_matmul(normalized, projected)?;
    let scores = tape.sigmoid(propagated)?;

    let n = tape.value(h)?.nrows();
    let idx = match fixed_idx {
        Some(idx) => idx.to_vec(),
        None => {
            let keys: Vec<f64> = tape.value(scores)?.rows().into_iter().map(|r| r.sum()).collect();
            top_rank(&keys, retained_count(ratio, n))
        }
    };
    let mut keep = vec![false; n];
    for &i in &idx {
        keep[i] = true;
    }
    let score_mask = tape.mask_rows(scores, &keep)?;
    let pooled = tape.hadamard(h, score_mask)?;
    Ok(PoolingOutput {
        idx,
        keep,
        scores,
        score_mask,
        pooled,
    })
}
