//! Synthetic corpora drawn from a planted additive popularity model.
//!
//! Words belong to topics and their embeddings cluster around a topic center.
//! Each event picks a topic and mostly draws words from it. Popularity is
//!
//! ```text
//! base*_topic + Σ_w b*_w + η* Σ_{j≠k} exp(−γ* ‖e_j − e_k‖²) + image*(x)
//! ```
//!
//! rescaled to `[0, 1]`, plus Gaussian noise. `b*_w = sigmoid(e_w · u)` is a
//! readout of the word embedding, so a model that sees the embeddings can in
//! principle recover it.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{write_corpus, Event};
use crate::diffcore::sigmoid;
use crate::error::{Error, Result};
use crate::semb::EmbeddingFile;

pub const PLANTED_FORMAT: &str = "smn-planted/1";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const WORDS_FILE: &str = "words.semb";
pub const PLANTED_FILE: &str = "planted.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub events: usize,
    pub vocab: usize,
    pub dim: usize,
    pub topics: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Probability that a token is drawn from the event's own topic.
    pub topic_affinity: f64,
    /// Noise standard deviation on the `[0, 1]` scale.
    pub noise: f64,
    /// Multiplies every planted component; `0` gives a constant signal.
    pub strength: f64,
    pub eta: f64,
    pub gamma: f64,
    /// Width of in-line image features; `0` disables the image branch.
    pub image_dim: usize,
    pub image_weight: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            events: 300,
            vocab: 60,
            dim: 16,
            topics: 4,
            min_tokens: 3,
            max_tokens: 8,
            topic_affinity: 0.8,
            noise: 0.02,
            strength: 1.0,
            eta: 0.1,
            gamma: 0.1,
            image_dim: 0,
            image_weight: 3.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("synth: {msg}")));
        if self.events == 0 || self.vocab == 0 || self.dim == 0 || self.topics == 0 {
            return bad("events, vocab, dim and topics must be positive");
        }
        if self.topics > self.vocab {
            return bad("more topics than words");
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens || self.max_tokens > self.vocab {
            return bad("need 1 <= min_tokens <= max_tokens <= vocab");
        }
        if !(0.0..=1.0).contains(&self.topic_affinity) {
            return bad("topic_affinity must be in [0, 1]");
        }
        if !(self.noise >= 0.0 && self.strength >= 0.0 && self.gamma >= 0.0) {
            return bad("noise, strength and gamma must be nonnegative");
        }
        Ok(())
    }
}

/// Contribution of each planted component to one event, before rescaling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedParts {
    pub base: f64,
    #[serde(rename = "self")]
    pub self_excitation: f64,
    pub mutual: f64,
    pub image: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Planted {
    pub format: String,
    pub config: SynthConfig,
    /// `b*_w` by token.
    pub word_weights: BTreeMap<String, f64>,
    pub word_topics: BTreeMap<String, usize>,
    pub topic_base: Vec<f64>,
    pub image_direction: Option<Vec<f64>>,
    /// Affine map from the clean sum to `[0, 1]`: `(clean - offset) / range`.
    pub offset: f64,
    pub range: f64,
    pub parts: BTreeMap<String, PlantedParts>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub events: Vec<Event>,
    pub embeddings: EmbeddingFile,
    pub planted: Planted,
}

impl SynthCorpus {
    /// Writes `events.jsonl`, `words.semb` and `planted.json` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let fc = (self.planted.config.image_dim > 0).then_some(self.planted.config.image_dim);
        write_corpus(dir.join(EVENTS_FILE), fc, &self.events)?;
        self.embeddings.save(dir.join(WORDS_FILE))?;
        let path = dir.join(PLANTED_FILE);
        let json = serde_json::to_string_pretty(&self.planted).expect("planted model serializes");
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

pub fn token_name(w: usize) -> String {
    format!("w{w:03}")
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let f = cfg.dim;
    let gauss = |rng: &mut ChaCha8Rng, n: usize, sd: f64| -> Vec<f64> {
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                sd * z
            })
            .collect()
    };

    let centers: Vec<Vec<f64>> = (0..cfg.topics).map(|_| gauss(&mut rng, f, 1.0)).collect();
    let topic_of = |w: usize| w % cfg.topics;
    let mut embeddings = EmbeddingFile::new(f);
    let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(cfg.vocab);
    for w in 0..cfg.vocab {
        let jitter = gauss(&mut rng, f, 0.6);
        let row: Vec<f32> = centers[topic_of(w)]
            .iter()
            .zip(&jitter)
            .map(|(c, j)| (c + j) as f32)
            .collect();
        vectors.push(row.iter().map(|&v| f64::from(v)).collect());
        embeddings.insert(token_name(w), row)?;
    }
    let readout = gauss(&mut rng, f, 1.0 / (f as f64).sqrt());
    let word_weight: Vec<f64> = vectors
        .iter()
        .map(|e| cfg.strength * sigmoid(dot(e, &readout)))
        .collect();
    let topic_base: Vec<f64> = (0..cfg.topics).map(|_| cfg.strength * rng.random::<f64>()).collect();
    let image_direction =
        (cfg.image_dim > 0).then(|| gauss(&mut rng, cfg.image_dim, 1.0 / (cfg.image_dim as f64).sqrt()));

    let members: Vec<Vec<usize>> = (0..cfg.topics)
        .map(|t| (0..cfg.vocab).filter(|&w| topic_of(w) == t).collect())
        .collect();
    let mut drafts = Vec::with_capacity(cfg.events);
    for i in 0..cfg.events {
        let topic = rng.random_range(0..cfg.topics);
        let len = rng.random_range(cfg.min_tokens..=cfg.max_tokens);
        // Fully topical events cannot have more words than their topic.
        let len = if cfg.topic_affinity >= 1.0 {
            len.min(members[topic].len())
        } else {
            len
        };
        let mut words: Vec<usize> = Vec::with_capacity(len);
        while words.len() < len {
            let w = if rng.random::<f64>() < cfg.topic_affinity {
                members[topic][rng.random_range(0..members[topic].len())]
            } else {
                rng.random_range(0..cfg.vocab)
            };
            if !words.contains(&w) {
                words.push(w);
            }
        }
        let image_feature: Option<Vec<f32>> = (cfg.image_dim > 0).then(|| {
            gauss(&mut rng, cfg.image_dim, 1.0)
                .into_iter()
                .map(|v| v as f32)
                .collect()
        });

        let mut mutual = 0.0;
        for &j in &words {
            for &k in &words {
                if j != k {
                    let d: f64 = vectors[j].iter().zip(&vectors[k]).map(|(a, b)| (a - b) * (a - b)).sum();
                    mutual += (-cfg.gamma * d).exp();
                }
            }
        }
        let image = match (&image_feature, &image_direction) {
            (Some(x), Some(v)) => {
                let x: Vec<f64> = x.iter().map(|&a| f64::from(a)).collect();
                cfg.strength * cfg.image_weight * sigmoid(dot(&x, v))
            }
            _ => 0.0,
        };
        let parts = PlantedParts {
            base: topic_base[topic],
            self_excitation: words.iter().map(|&w| word_weight[w]).sum(),
            mutual: cfg.strength * cfg.eta * mutual,
            image,
        };
        drafts.push((format!("ev{i:04}"), words, image_feature, parts));
    }

    let clean: Vec<f64> = drafts
        .iter()
        .map(|(_, _, _, p)| p.base + p.self_excitation + p.mutual + p.image)
        .collect();
    let lo = clean.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = clean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = if hi > lo { hi - lo } else { 1.0 };
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(format!("synth noise: {e}")))?;

    let mut events = Vec::with_capacity(cfg.events);
    let mut parts = BTreeMap::new();
    for ((id, words, image_feature, p), c) in drafts.into_iter().zip(clean) {
        let y = (c - lo) / range + noise.sample(&mut rng);
        // Shift so raw scores stay nonnegative; only relative values matter.
        let raw = 100.0 * (y + 1.0);
        events.push(Event {
            id: id.clone(),
            tokens: words.iter().map(|&w| token_name(w)).collect(),
            image_feature,
            popularity_raw: raw,
            popularity: raw,
        });
        parts.insert(id, p);
    }

    let planted = Planted {
        format: PLANTED_FORMAT.into(),
        config: cfg.clone(),
        word_weights: (0..cfg.vocab).map(|w| (token_name(w), word_weight[w])).collect(),
        word_topics: (0..cfg.vocab).map(|w| (token_name(w), topic_of(w))).collect(),
        topic_base,
        image_direction,
        offset: lo,
        range,
        parts,
    };
    Ok(SynthCorpus {
        events,
        embeddings,
        planted,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
