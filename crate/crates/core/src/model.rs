//! Full model: backbone, pooling and the four additive heads.
//!
//! Parameters are plain named matrices so that checkpoints, gradient checks
//! and optimizers can treat them uniformly. Names are stable strings such as
//! `backbone.0.w` or `self.w_beta`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::backbone::{gat_forward, gcn_forward, self_attention_pool, BackboneKind, GraphOperators, PoolingOutput};
use crate::corpus::Event;
use crate::diffcore::{gelu, Tape, Var};
use crate::error::{Error, Result};
use crate::excitation::{
    base_excitation, mutual_excitation, off_diagonal, project_excitation, refresh_mask, self_excitation,
};
use crate::graph::{Vocabulary, WordGraph};
use crate::image::{image_popularity, ImageHead, IMAGE_HIDDEN};

pub type Params = BTreeMap<String, Array2<f64>>;

pub const THETA: &str = "pool.theta";
pub const EXCITE_W1: &str = "excite.w1";
pub const EXCITE_W2: &str = "excite.w2";
pub const W_ETA: &str = "mutual.w_eta";
pub const W_GAMMA: &str = "mutual.w_gamma";
pub const W_BETA: &str = "self.w_beta";
pub const W_MU: &str = "base.w_mu";
pub const IMAGE_W1: &str = "image.w1";
pub const IMAGE_B1: &str = "image.b1";
pub const IMAGE_W2: &str = "image.w2";
pub const IMAGE_B2: &str = "image.b2";

pub fn layer_weight(l: usize) -> String {
    format!("backbone.{l}.w")
}

pub fn layer_att_src(l: usize) -> String {
    format!("backbone.{l}.att_src")
}

pub fn layer_att_dst(l: usize) -> String {
    format!("backbone.{l}.att_dst")
}

/// Which additive components take part in the prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Heads {
    pub base: bool,
    #[serde(rename = "self")]
    pub self_excitation: bool,
    pub mutual: bool,
    pub image: bool,
}

impl Heads {
    pub const ALL: Heads = Heads {
        base: true,
        self_excitation: true,
        mutual: true,
        image: true,
    };
    pub const NONE: Heads = Heads {
        base: false,
        self_excitation: false,
        mutual: false,
        image: false,
    };
}

impl Default for Heads {
    fn default() -> Self {
        Heads::ALL
    }
}

impl FromStr for Heads {
    type Err = Error;

    /// Comma-separated subset of `base,self,mutual,image`.
    fn from_str(s: &str) -> Result<Self> {
        let mut heads = Heads::NONE;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "base" => heads.base = true,
                "self" => heads.self_excitation = true,
                "mutual" => heads.mutual = true,
                "image" => heads.image = true,
                other => return Err(Error::Config(format!("unknown head {other:?}"))),
            }
        }
        if heads == Heads::NONE {
            return Err(Error::Config("at least one head must be enabled".into()));
        }
        Ok(heads)
    }
}

impl fmt::Display for Heads {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = [
            (self.base, "base"),
            (self.self_excitation, "self"),
            (self.mutual, "mutual"),
            (self.image, "image"),
        ]
        .into_iter()
        .filter_map(|(on, name)| on.then_some(name))
        .collect();
        f.write_str(&names.join(","))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneKind,
    pub layers: usize,
    pub pool_ratio: f64,
    /// Percentage of `W_β` entries kept by the sparsity mask.
    pub delta: f64,
    pub heads: Heads,
    pub image_hidden: usize,
    /// Count `j = k` terms in the mutual sum.
    pub mutual_diagonal: bool,
    /// Relu on the image MLP's output layer as well.
    pub image_relu_output: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneKind::Gcn,
            layers: 2,
            pool_ratio: 1.0,
            delta: 50.0,
            heads: Heads::ALL,
            image_hidden: IMAGE_HIDDEN,
            mutual_diagonal: false,
            image_relu_output: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::Config("need at least one backbone layer".into()));
        }
        if !(self.pool_ratio > 0.0 && self.pool_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "pool ratio must be in (0, 1], got {}",
                self.pool_ratio
            )));
        }
        if !(self.delta > 0.0 && self.delta <= 100.0) {
            return Err(Error::Config(format!("delta must be in (0, 100], got {}", self.delta)));
        }
        if self.image_hidden == 0 {
            return Err(Error::Config("image hidden width must be positive".into()));
        }
        Ok(())
    }
}

/// Immutable per-graph data shared by every forward pass.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub vocab: Vocabulary,
    pub features: Array2<f64>,
    pub ops: GraphOperators,
}

impl GraphContext {
    pub fn new(graph: &WordGraph) -> Self {
        Self {
            vocab: graph.vocab.clone(),
            features: graph.features.clone(),
            ops: GraphOperators::new(&graph.adjacency),
        }
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }
}

/// The four additive components and their total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionBreakdown {
    pub y_base: f64,
    pub y_self: f64,
    pub y_mutual: f64,
    pub y_image: f64,
    pub y_total: f64,
}

impl PredictionBreakdown {
    /// Components summed in the same order the model uses.
    pub fn component_sum(&self) -> f64 {
        self.y_base + self.y_self + self.y_mutual + self.y_image
    }

    /// Every value mapped through `f`, e.g. back to the raw popularity scale.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            y_base: f(self.y_base),
            y_self: f(self.y_self),
            y_mutual: f(self.y_mutual),
            y_image: f(self.y_image),
            y_total: f(self.y_total),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub huber_delta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.001,
            lambda2: 0.001,
            huber_delta: 1.0,
        }
    }
}

/// Loss of one event computed from plain values: Huber on the residual plus
/// L1 penalties on the word scores and pairwise Gram entries.
pub fn loss_value(pred: f64, target: f64, beta: &[f64], z: &[f64], cfg: &LossConfig) -> f64 {
    let l1 = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
    crate::diffcore::huber(pred - target, cfg.huber_delta) + cfg.lambda1 * l1(beta) + cfg.lambda2 * l1(z)
}

/// Tape handles produced by [`Model::forward_backbone`].
#[derive(Debug, Clone)]
pub struct BackboneState {
    pub vars: BTreeMap<String, Var>,
    /// Output of the last graph layer, before pooling.
    pub hidden: Var,
    pub pooling: PoolingOutput,
}

impl BackboneState {
    fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("model has no parameter {name}")))
    }
}

/// Tape handles for one event's prediction.
#[derive(Debug, Clone)]
pub struct EventForward {
    pub base: Var,
    pub self_excitation: Var,
    pub mutual: Var,
    pub image: Var,
    pub total: Var,
    /// Event words (vocabulary indices) that survived pooling.
    pub members: Vec<usize>,
    /// Per-member `β̂`, `m × 1`, when the self head ran.
    pub word_scores: Option<Var>,
    /// Gram matrix of excited member vectors when the mutual head ran.
    pub gram: Option<Var>,
}

impl EventForward {
    pub fn breakdown(&self, tape: &Tape) -> Result<PredictionBreakdown> {
        Ok(PredictionBreakdown {
            y_base: tape.scalar(self.base)?,
            y_self: tape.scalar(self.self_excitation)?,
            y_mutual: tape.scalar(self.mutual)?,
            y_image: tape.scalar(self.image)?,
            y_total: tape.scalar(self.total)?,
        })
    }

    /// Huber residual plus the L1 terms, on the tape.
    pub fn loss(&self, tape: &mut Tape, target: f64, cfg: &LossConfig) -> Result<Var> {
        let y = tape.scalar_constant(target);
        let residual = tape.sub(self.total, y)?;
        let mut loss = tape.huber(residual, cfg.huber_delta)?;
        if let Some(scores) = self.word_scores {
            let a = tape.abs(scores)?;
            let s = tape.sum(a)?;
            let s = tape.scale(s, cfg.lambda1)?;
            loss = tape.add(loss, s)?;
        }
        if let Some(gram) = self.gram {
            let m = tape.value(gram)?.nrows();
            let mask = tape.constant(off_diagonal(m));
            let pairs = tape.hadamard(gram, mask)?;
            let a = tape.abs(pairs)?;
            let s = tape.sum(a)?;
            let s = tape.scale(s, cfg.lambda2)?;
            loss = tape.add(loss, s)?;
        }
        Ok(loss)
    }
}

/// Prediction plus per-word self-excitation scores for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct EventPrediction {
    pub id: String,
    pub breakdown: PredictionBreakdown,
    /// `(token, β̂)` for each distinct event word in first-occurrence order.
    /// Words dropped by pooling score `gelu(0) = 0`.
    pub word_scores: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Params,
    /// Current binary sparsity mask over `W_β`.
    pub mask: Array2<f64>,
}

impl Model {
    /// Seeded initialization: every weight matrix uniform in `±1/√rows`,
    /// biases zero. `image_dim` is the image feature width, if any.
    pub fn init(config: ModelConfig, dim: usize, image_dim: Option<usize>, seed: u64) -> Result<Self> {
        config.validate()?;
        if dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        let mut shapes: Vec<(String, (usize, usize))> = Vec::new();
        for l in 0..config.layers {
            shapes.push((layer_weight(l), (dim, dim)));
            if config.backbone == BackboneKind::Gat {
                shapes.push((layer_att_src(l), (dim, 1)));
                shapes.push((layer_att_dst(l), (dim, 1)));
            }
        }
        shapes.push((THETA.into(), (dim, dim)));
        shapes.push((EXCITE_W1.into(), (dim, dim)));
        shapes.push((EXCITE_W2.into(), (dim, dim)));
        shapes.push((W_ETA.into(), (dim, 1)));
        shapes.push((W_GAMMA.into(), (dim, 1)));
        shapes.push((W_BETA.into(), (dim, 1)));
        shapes.push((W_MU.into(), (dim, 1)));
        if let Some(fc) = image_dim {
            shapes.push((IMAGE_W1.into(), (fc, config.image_hidden)));
            shapes.push((IMAGE_W2.into(), (config.image_hidden, 1)));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(INIT_STREAM);
        let mut params = Params::new();
        for (name, (rows, cols)) in shapes {
            let bound = 1.0 / (rows as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let w = Array2::from_shape_simple_fn((rows, cols), || dist.sample(&mut rng));
            params.insert(name, w);
        }
        if image_dim.is_some() {
            params.insert(IMAGE_B1.into(), Array2::zeros((1, config.image_hidden)));
            params.insert(IMAGE_B2.into(), Array2::zeros((1, 1)));
        }
        let mask = refresh_mask(&params[W_BETA], config.delta)?;
        Ok(Self { config, params, mask })
    }

    pub fn dim(&self) -> usize {
        self.params[THETA].nrows()
    }

    pub fn image_dim(&self) -> Option<usize> {
        self.params.get(IMAGE_W1).map(|w| w.nrows())
    }

    pub fn refresh_mask(&mut self) -> Result<()> {
        self.mask = refresh_mask(&self.params[W_BETA], self.config.delta)?;
        Ok(())
    }

    /// Registers every parameter on the tape.
    pub fn bind(&self, tape: &mut Tape) -> BTreeMap<String, Var> {
        self.params
            .iter()
            .map(|(name, value)| (name.clone(), tape.param(value.clone())))
            .collect()
    }

    /// Graph layers and pooling over the whole vocabulary. `fixed_idx`
    /// overrides the pooling selection.
    pub fn forward_backbone(
        &self,
        tape: &mut Tape,
        ctx: &GraphContext,
        fixed_idx: Option<&[usize]>,
    ) -> Result<BackboneState> {
        if ctx.dim() != self.dim() {
            return Err(Error::Config(format!(
                "graph features have dimension {}, model expects {}",
                ctx.dim(),
                self.dim()
            )));
        }
        let vars = self.bind(tape);
        let get = |name: &str| vars[name];
        let mut h = tape.constant(ctx.features.clone());
        for l in 0..self.config.layers {
            h = match self.config.backbone {
                BackboneKind::Gcn => gcn_forward(tape, h, &ctx.ops.normalized, get(&layer_weight(l)))?,
                BackboneKind::Gat => gat_forward(
                    tape,
                    h,
                    &ctx.ops.neighborhoods,
                    get(&layer_weight(l)),
                    get(&layer_att_src(l)),
                    get(&layer_att_dst(l)),
                )?,
            };
        }
        let pooling = self_attention_pool(
            tape,
            h,
            &ctx.ops.normalized,
            get(THETA),
            self.config.pool_ratio,
            fixed_idx,
        )?;
        Ok(BackboneState {
            vars,
            hidden: h,
            pooling,
        })
    }

    /// Heads for one event on top of a shared backbone pass.
    pub fn forward_event(
        &self,
        tape: &mut Tape,
        ctx: &GraphContext,
        state: &BackboneState,
        event: &Event,
    ) -> Result<EventForward> {
        let nodes = ctx.vocab.event_nodes(event)?;
        let members: Vec<usize> = nodes.iter().copied().filter(|&n| state.pooling.keep[n]).collect();
        let heads = self.config.heads;

        let zero = tape.scalar_constant(0.0);
        let mut word_scores = None;
        let mut gram = None;

        let (words, event_vector) = if members.is_empty() {
            (None, None)
        } else {
            let words = tape.gather_rows(state.pooling.pooled, &members)?;
            let mean = tape.mean_rows(words)?;
            (Some(words), Some(mean))
        };

        let base = if heads.base {
            let vector = match event_vector {
                Some(v) => v,
                None => {
                    let rows = tape.gather_rows(state.hidden, &nodes)?;
                    tape.mean_rows(rows)?
                }
            };
            base_excitation(tape, vector, state.var(W_MU)?)?
        } else {
            zero
        };

        let self_value = match (heads.self_excitation, words) {
            (true, Some(words)) => match self_excitation(tape, words, state.var(W_BETA)?, &self.mask)? {
                Some(out) => {
                    word_scores = Some(out.scores);
                    out.value
                }
                None => zero,
            },
            _ => zero,
        };

        let mutual = match (heads.mutual, words) {
            (true, Some(words)) => {
                let excited = project_excitation(tape, words, state.var(EXCITE_W1)?, state.var(EXCITE_W2)?)?;
                let excited_mean = tape.mean_rows(excited)?;
                match mutual_excitation(
                    tape,
                    excited,
                    excited_mean,
                    state.var(W_ETA)?,
                    state.var(W_GAMMA)?,
                    self.config.mutual_diagonal,
                )? {
                    Some(out) => {
                        gram = Some(out.gram);
                        out.value
                    }
                    None => zero,
                }
            }
            _ => zero,
        };

        let image = match (heads.image, self.image_dim()) {
            (true, Some(_)) => {
                let head = ImageHead {
                    w1: state.var(IMAGE_W1)?,
                    b1: state.var(IMAGE_B1)?,
                    w2: state.var(IMAGE_W2)?,
                    b2: state.var(IMAGE_B2)?,
                };
                image_popularity(
                    tape,
                    event.image_feature.as_deref(),
                    head,
                    self.config.image_relu_output,
                )?
            }
            _ => zero,
        };

        let total = tape.add(base, self_value)?;
        let total = tape.add(total, mutual)?;
        let total = tape.add(total, image)?;
        Ok(EventForward {
            base,
            self_excitation: self_value,
            mutual,
            image,
            total,
            members,
            word_scores,
            gram,
        })
    }

    /// Summed loss over `events` (targets are their normalized popularity)
    /// and its gradient for every parameter.
    pub fn loss_and_grads(
        &self,
        ctx: &GraphContext,
        events: &[&Event],
        cfg: &LossConfig,
        fixed_idx: Option<&[usize]>,
    ) -> Result<(f64, Params)> {
        let mut tape = Tape::new();
        let state = self.forward_backbone(&mut tape, ctx, fixed_idx)?;
        let mut total: Option<Var> = None;
        for event in events {
            let fwd = self.forward_event(&mut tape, ctx, &state, event)?;
            let loss = fwd.loss(&mut tape, event.popularity, cfg)?;
            total = Some(match total {
                Some(acc) => tape.add(acc, loss)?,
                None => loss,
            });
        }
        let total = total.ok_or_else(|| Error::Config("no events to score".into()))?;
        let value = tape.scalar(total)?;
        let grads = tape.backward(total)?;
        let mut out = Params::new();
        for (name, &var) in &state.vars {
            let g = match grads.get(var) {
                Some(g) => g.clone(),
                None => Array2::zeros(self.params[name].dim()),
            };
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
            out.insert(name.clone(), g);
        }
        Ok((value, out))
    }

    /// Scores every event on one shared backbone pass, handing each event's
    /// tape handles to `visit`.
    pub fn for_each_event(
        &self,
        ctx: &GraphContext,
        events: &[&Event],
        mut visit: impl FnMut(&mut Tape, &BackboneState, &Event, &EventForward) -> Result<()>,
    ) -> Result<()> {
        let mut tape = Tape::new();
        let state = self.forward_backbone(&mut tape, ctx, None)?;
        let base_len = tape.len();
        for event in events {
            let fwd = self.forward_event(&mut tape, ctx, &state, event)?;
            visit(&mut tape, &state, event, &fwd)?;
            tape.truncate(base_len);
        }
        Ok(())
    }

    /// Predictions on the normalized scale, with word scores for reporting.
    pub fn predict(&self, ctx: &GraphContext, events: &[&Event]) -> Result<Vec<EventPrediction>> {
        let pruned: Vec<f64> = self.params[W_BETA]
            .iter()
            .zip(self.mask.iter())
            .map(|(w, m)| w * m)
            .collect();
        let mut out = Vec::with_capacity(events.len());
        self.for_each_event(ctx, events, |tape, state, event, fwd| {
            let pooled = tape.value(state.pooling.pooled)?;
            let word_scores = event
                .unique_tokens()
                .into_iter()
                .map(|token| {
                    let node = ctx.vocab.get(token).ok_or_else(|| Error::UnknownToken(token.into()))?;
                    let logit: f64 = pooled.row(node).iter().zip(&pruned).map(|(h, w)| h * w).sum();
                    Ok((token.to_string(), gelu(logit)))
                })
                .collect::<Result<Vec<_>>>()?;
            out.push(EventPrediction {
                id: event.id.clone(),
                breakdown: fwd.breakdown(tape)?,
                word_scores,
            });
            Ok(())
        })?;
        Ok(out)
    }
}

/// ChaCha stream reserved for parameter initialization.
const INIT_STREAM: u64 = 1 << 32;
