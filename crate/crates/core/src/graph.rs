//! The unified word graph shared by every event.
//!
//! Nodes are the distinct tokens of the whole corpus. Two words are joined
//! when they appear in the same event and their point-wise mutual
//! information is positive; the PMI value becomes the edge weight. Counting
//! uses the whole event as the window and records presence, so an event
//! contributes at most one to any unigram or pair count.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::Event;
use crate::error::{Error, Result};
use crate::semb::EmbeddingFile;
use crate::sparse::CsrMatrix;

pub const GRAPH_FORMAT: &str = "smn-graph/1";

/// Token ↔ node index, in first-occurrence order over the corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_events(events: &[Event]) -> Self {
        let mut vocab = Self::default();
        for event in events {
            for token in &event.tokens {
                vocab.intern(token);
            }
        }
        vocab
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut vocab = Self::default();
        for t in tokens {
            if vocab.index.contains_key(&t) {
                return Err(Error::Format(format!("duplicate vocabulary token {t:?}")));
            }
            vocab.intern(&t);
        }
        Ok(vocab)
    }

    fn intern(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_owned());
        self.index.insert(token.to_owned(), i);
        i
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> &str {
        &self.tokens[index]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Distinct node indices of an event, in first-occurrence order.
    pub fn event_nodes(&self, event: &Event) -> Result<Vec<usize>> {
        event
            .unique_tokens()
            .into_iter()
            .map(|t| self.get(t).ok_or_else(|| Error::UnknownToken(t.to_owned())))
            .collect()
    }

    /// SHA-256 over the newline-joined token list.
    pub fn hash(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.tokens {
            hasher.update(t.as_bytes());
            hasher.update(b"\n");
        }
        hex::encode(hasher.finalize())
    }
}

/// Document-frequency co-occurrence statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct CooccurrenceCounts {
    /// Unordered pairs keyed `(min, max)`; each stands for both symmetric cells.
    pairs: BTreeMap<(usize, usize), u64>,
    unigrams: Vec<u64>,
    total_pairs: u64,
    total_unigrams: u64,
}

impl CooccurrenceCounts {
    pub fn count(vocab: &Vocabulary, events: &[Event]) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        let mut unigrams = vec![0u64; vocab.len()];
        for event in events {
            let mut nodes = vocab.event_nodes(event)?;
            nodes.sort_unstable();
            for (a, &i) in nodes.iter().enumerate() {
                unigrams[i] += 1;
                for &j in &nodes[a + 1..] {
                    *pairs.entry((i, j)).or_insert(0u64) += 1;
                }
            }
        }
        let total_pairs = 2 * pairs.values().sum::<u64>();
        let total_unigrams = unigrams.iter().sum();
        Ok(Self {
            pairs,
            unigrams,
            total_pairs,
            total_unigrams,
        })
    }

    /// `d(i, j)`; symmetric. The diagonal is not tracked and reads as zero.
    pub fn pair(&self, i: usize, j: usize) -> u64 {
        if i == j {
            return 0;
        }
        let key = if i < j { (i, j) } else { (j, i) };
        self.pairs.get(&key).copied().unwrap_or(0)
    }

    pub fn unigram(&self, i: usize) -> u64 {
        self.unigrams[i]
    }

    /// `Σ_i Σ_j d(i, j)` over both symmetric cells.
    pub fn total_pairs(&self) -> u64 {
        self.total_pairs
    }

    pub fn total_unigrams(&self) -> u64 {
        self.total_unigrams
    }

    /// Co-occurring unordered pairs `(i, j, d(i, j))` with `i < j`.
    pub fn nonzero_pairs(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        self.pairs.iter().map(|(&(i, j), &d)| (i, j, d))
    }

    /// PMI as the exact ratio `d(i,j)·U² / (P·d(i)·d(j))` of integers, `None`
    /// when the pair never co-occurs.
    pub fn pmi_ratio(&self, i: usize, j: usize) -> Option<(u128, u128)> {
        let d_ij = self.pair(i, j);
        if d_ij == 0 {
            return None;
        }
        let total = u128::from(self.total_unigrams);
        let num = u128::from(d_ij) * total * total;
        let den = u128::from(self.total_pairs) * u128::from(self.unigrams[i]) * u128::from(self.unigrams[j]);
        Some((num, den))
    }

    /// Natural-log PMI. `Ok(None)` means the pair never co-occurs, so there is
    /// no edge.
    pub fn pmi(&self, i: usize, j: usize) -> Result<Option<f64>> {
        if i == j {
            return Err(Error::Config(format!("pmi is undefined for a node with itself ({i})")));
        }
        Ok(self.pmi_ratio(i, j).map(|(num, den)| {
            // ln(1 + (num - den)/den) keeps full relative precision near zero.
            if num >= den {
                ((num - den) as f64 / den as f64).ln_1p()
            } else {
                (-((den - num) as f64 / den as f64)).ln_1p()
            }
        }))
    }
}

/// Options for [`build_graph`].
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GraphOptions {
    /// Expected embedding width; `None` accepts whatever the file declares.
    pub dim: Option<usize>,
    /// Seed for rows of tokens missing from the embedding file.
    pub oov_seed: u64,
}

/// Vocabulary, positive-PMI adjacency and initial node features.
#[derive(Debug, Clone, PartialEq)]
pub struct WordGraph {
    pub vocab: Vocabulary,
    pub adjacency: CsrMatrix,
    pub features: Array2<f64>,
    /// Nodes whose feature row was drawn at random instead of read from file.
    pub oov: Vec<usize>,
}

impl WordGraph {
    pub fn n_nodes(&self) -> usize {
        self.vocab.len()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    /// Undirected edge count.
    pub fn n_edges(&self) -> usize {
        self.adjacency.nnz() / 2
    }

    pub fn to_json(&self) -> String {
        let edges = self.adjacency.iter().filter(|&(i, j, _)| i < j).collect();
        let file = GraphFile {
            format: GRAPH_FORMAT.into(),
            dim: self.dim(),
            vocab: self.vocab.tokens.clone(),
            edges,
            features: self.features.rows().into_iter().map(|r| r.to_vec()).collect(),
            oov: self.oov.clone(),
        };
        serde_json::to_string(&file).expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(text).map_err(|e| Error::Format(format!("graph file: {e}")))?;
        if file.format != GRAPH_FORMAT {
            return Err(Error::Format(format!("unsupported graph format {:?}", file.format)));
        }
        let vocab = Vocabulary::from_tokens(file.vocab)?;
        let n = vocab.len();
        if file.features.len() != n || file.features.iter().any(|r| r.len() != file.dim) {
            return Err(Error::Format("feature matrix does not match vocabulary and dim".into()));
        }
        let mut triplets = Vec::with_capacity(2 * file.edges.len());
        for &(i, j, w) in &file.edges {
            if i >= n || j >= n || i == j {
                return Err(Error::Format(format!("bad edge ({i}, {j})")));
            }
            triplets.push((i, j, w));
            triplets.push((j, i, w));
        }
        let flat: Vec<f64> = file.features.into_iter().flatten().collect();
        let features = Array2::from_shape_vec((n, file.dim), flat).map_err(|e| Error::Format(e.to_string()))?;
        Ok(Self {
            vocab,
            adjacency: CsrMatrix::from_triplets(n, n, &triplets),
            features,
            oov: file.oov,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[derive(Serialize, Deserialize)]
struct GraphFile {
    format: String,
    dim: usize,
    vocab: Vec<String>,
    edges: Vec<(usize, usize, f64)>,
    features: Vec<Vec<f64>>,
    oov: Vec<usize>,
}

/// Positive-PMI adjacency over the vocabulary. Negative PMI is dropped; each
/// weight is computed once and stored in both symmetric cells.
pub fn pmi_adjacency(counts: &CooccurrenceCounts, n: usize) -> Result<CsrMatrix> {
    let mut triplets = Vec::new();
    for (i, j, _) in counts.nonzero_pairs() {
        // Positivity is decided on the exact ratio, not the rounded log.
        let positive = counts.pmi_ratio(i, j).is_some_and(|(num, den)| num > den);
        if positive {
            let w = counts.pmi(i, j)?.expect("pair co-occurs");
            triplets.push((i, j, w));
            triplets.push((j, i, w));
        }
    }
    Ok(CsrMatrix::from_triplets(n, n, &triplets))
}

pub fn build_graph(events: &[Event], embeddings: &EmbeddingFile, options: GraphOptions) -> Result<WordGraph> {
    if events.is_empty() {
        return Err(Error::Config("cannot build a graph from an empty corpus".into()));
    }
    let dim = embeddings.dim();
    if let Some(expected) = options.dim {
        if expected != dim {
            return Err(Error::Format(format!(
                "embedding file has dim={dim}, expected {expected}"
            )));
        }
    }
    let vocab = Vocabulary::from_events(events);
    let counts = CooccurrenceCounts::count(&vocab, events)?;
    let adjacency = pmi_adjacency(&counts, vocab.len())?;

    let mut rng = ChaCha8Rng::seed_from_u64(options.oov_seed);
    let scale = 1.0 / (dim as f64).sqrt();
    let mut features = Array2::zeros((vocab.len(), dim));
    let mut oov = Vec::new();
    for (i, token) in vocab.tokens().iter().enumerate() {
        let mut row = features.row_mut(i);
        match embeddings.get(token) {
            Some(values) => {
                for (dst, &v) in row.iter_mut().zip(values) {
                    *dst = f64::from(v);
                }
            }
            None => {
                for dst in row.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *dst = z * scale;
                }
                oov.push(i);
            }
        }
    }
    if !oov.is_empty() {
        log::info!(
            "{} of {} tokens missing from embeddings, drawn at random",
            oov.len(),
            vocab.len()
        );
    }
    Ok(WordGraph {
        vocab,
        adjacency,
        features,
        oov,
    })
}
