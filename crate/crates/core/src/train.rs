//! Per-event SGD with cosine warm restarts, logging and checkpoints.
//!
//! Every epoch refreshes the sparsity mask, visits the training events in an
//! order shuffled from `(seed, epoch)` alone and takes one gradient step per
//! event. Because no RNG state carries across epochs, a checkpoint holds
//! everything needed to resume bit-for-bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{split, Event, PopularityScale, Split, SplitPart, SplitRatios};
use crate::error::{Error, Result};
use crate::graph::WordGraph;
use crate::model::{GraphContext, LossConfig, Model, ModelConfig, Params};

pub const CHECKPOINT_FORMAT: &str = "smn-ckpt/1";

/// Cosine annealing with warm restarts, in (possibly fractional) epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub lr0: f64,
    pub lr_min: f64,
    pub t0: usize,
    pub t_mult: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            lr0: 0.01,
            lr_min: 0.0,
            t0: 10,
            t_mult: 2,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.t0 < 1 || self.t_mult < 1 {
            return Err(Error::Config(format!(
                "schedule needs t0 >= 1 and t_mult >= 1, got t0={} t_mult={}",
                self.t0, self.t_mult
            )));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr0
            )));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr0) {
            return Err(Error::Config(format!(
                "lr_min must be in [0, lr0], got {}",
                self.lr_min
            )));
        }
        Ok(())
    }

    /// Learning rate at `epoch` measured from the start of training.
    pub fn lr(&self, epoch: f64) -> f64 {
        let mut t_i = self.t0 as f64;
        let mut t_cur = epoch.max(0.0);
        while t_cur >= t_i {
            t_cur -= t_i;
            t_i *= self.t_mult as f64;
        }
        self.lr_min + 0.5 * (self.lr0 - self.lr_min) * (1.0 + (std::f64::consts::PI * t_cur / t_i).cos())
    }

    /// Learning rate for step `step` of `steps` within `epoch`.
    pub fn lr_at_step(&self, epoch: usize, step: usize, steps: usize) -> f64 {
        self.lr(epoch as f64 + step as f64 / steps.max(1) as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub schedule: Schedule,
    pub epochs: usize,
    pub seed: u64,
    pub split: SplitRatios,
    /// Log the squared instead of the absolute validation error.
    #[serde(default)]
    pub val_mse_squared: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            loss: LossConfig::default(),
            schedule: Schedule::default(),
            epochs: 150,
            seed: 0,
            split: SplitRatios::default(),
            val_mse_squared: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.schedule.validate()?;
        let l = &self.loss;
        if !(l.lambda1 >= 0.0 && l.lambda2 >= 0.0 && l.lambda1.is_finite() && l.lambda2.is_finite()) {
            return Err(Error::Config(
                "lambda1 and lambda2 must be finite and nonnegative".into(),
            ));
        }
        if !(l.huber_delta > 0.0 && l.huber_delta.is_finite()) {
            return Err(Error::Config(format!(
                "huber delta must be positive, got {}",
                l.huber_delta
            )));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_mse: Option<f64>,
}

/// Dense matrix in checkpoint form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl From<&Array2<f64>> for Tensor {
    fn from(a: &Array2<f64>) -> Self {
        Self {
            rows: a.nrows(),
            cols: a.ncols(),
            data: a.iter().copied().collect(),
        }
    }
}

impl Tensor {
    pub fn to_array(&self) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.rows, self.cols), self.data.clone())
            .map_err(|e| Error::Format(format!("tensor shape: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub vocab_hash: String,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub scheduler: Schedule,
    pub popularity: PopularityScale,
    pub params: BTreeMap<String, Tensor>,
    pub mask: Tensor,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Format(format!("checkpoint: {e}")))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!(
                "unsupported checkpoint format {:?}",
                ckpt.format
            )));
        }
        Ok(ckpt)
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

    pub fn model(&self) -> Result<Model> {
        let params = self
            .params
            .iter()
            .map(|(name, t)| Ok((name.clone(), t.to_array()?)))
            .collect::<Result<Params>>()?;
        Ok(Model {
            config: self.config.model.clone(),
            params,
            mask: self.mask.to_array()?,
        })
    }

    /// Fails unless `graph` has the vocabulary this checkpoint was trained on.
    pub fn check_graph(&self, graph: &WordGraph) -> Result<()> {
        let hash = graph.vocab.hash();
        if hash != self.vocab_hash {
            return Err(Error::VocabMismatch {
                checkpoint: self.vocab_hash.clone(),
                graph: hash,
            });
        }
        Ok(())
    }
}

/// Training state: model, data views and the epoch counter.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub scale: PopularityScale,
    pub split: Split,
    ctx: GraphContext,
    vocab_hash: String,
    train: Vec<Event>,
    val: Vec<Event>,
    epoch: usize,
}

impl Trainer {
    /// Splits `events` (raw popularity), fits the popularity scale on the
    /// training part and initializes the model from the seed.
    pub fn new(events: &[Event], graph: &WordGraph, image_dim: Option<usize>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::init(config.model.clone(), graph.dim(), image_dim, config.seed)?;
        Self::assemble(events, graph, config, model, None, 0)
    }

    /// Resumes from a checkpoint on the same corpus and graph.
    pub fn resume(events: &[Event], graph: &WordGraph, ckpt: &Checkpoint) -> Result<Self> {
        ckpt.check_graph(graph)?;
        let model = ckpt.model()?;
        Self::assemble(
            events,
            graph,
            ckpt.config.clone(),
            model,
            Some(ckpt.popularity),
            ckpt.epoch,
        )
    }

    fn assemble(
        events: &[Event],
        graph: &WordGraph,
        config: TrainConfig,
        model: Model,
        scale: Option<PopularityScale>,
        epoch: usize,
    ) -> Result<Self> {
        let split = split(events, config.split, config.seed)?;
        let train_raw = split.select(SplitPart::Train, events);
        let scale = match scale {
            Some(s) => s,
            None => PopularityScale::fit(train_raw.iter().map(|e| &e.popularity_raw))?,
        };
        let normalize = |part: SplitPart| -> Vec<Event> {
            split
                .select(part, events)
                .into_iter()
                .map(|e| {
                    let mut e = e.clone();
                    e.popularity = scale.apply(e.popularity_raw);
                    e
                })
                .collect()
        };
        let train = normalize(SplitPart::Train);
        let val = normalize(SplitPart::Val);
        if train.is_empty() {
            return Err(Error::Config("training split is empty".into()));
        }
        Ok(Self {
            config,
            model,
            scale,
            ctx: GraphContext::new(graph),
            vocab_hash: graph.vocab.hash(),
            split,
            train,
            val,
            epoch,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn context(&self) -> &GraphContext {
        &self.ctx
    }

    pub fn train_events(&self) -> &[Event] {
        &self.train
    }

    pub fn val_events(&self) -> &[Event] {
        &self.val
    }

    /// Visiting order of the training events in `epoch`.
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(SHUFFLE_STREAM + epoch as u64);
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut rng);
        order
    }

    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let epoch = self.epoch;
        self.model.refresh_mask()?;
        let order = self.epoch_order(epoch);
        let steps = order.len();
        let schedule = self.config.schedule;
        let mut loss_sum = 0.0;
        for (step, &i) in order.iter().enumerate() {
            let lr = schedule.lr_at_step(epoch, step, steps);
            let (loss, grads) = self
                .model
                .loss_and_grads(&self.ctx, &[&self.train[i]], &self.config.loss, None)
                .map_err(|e| annotate(e, epoch, &self.train[i].id))?;
            for (name, g) in grads {
                let p = self.model.params.get_mut(&name).expect("gradient for known parameter");
                p.scaled_add(-lr, &g);
            }
            loss_sum += loss;
        }
        let (val_loss, val_mse) = if self.val.is_empty() {
            (None, None)
        } else {
            let (loss, mse) = self.validation()?;
            (Some(loss), Some(mse))
        };
        self.epoch += 1;
        let log = EpochLog {
            epoch,
            lr: schedule.lr(epoch as f64),
            train_loss: loss_sum / steps as f64,
            val_loss,
            val_mse,
        };
        log::debug!(
            "epoch {} lr {:.5} train {:.6} val {:?}",
            log.epoch,
            log.lr,
            log.train_loss,
            log.val_mse
        );
        Ok(log)
    }

    /// Mean loss and mean error (absolute, or squared if configured) on the
    /// validation split.
    pub fn validation(&self) -> Result<(f64, f64)> {
        let refs: Vec<&Event> = self.val.iter().collect();
        let (mut loss, mut err) = (0.0, 0.0);
        let cfg = self.config.loss;
        let squared = self.config.val_mse_squared;
        self.model.for_each_event(&self.ctx, &refs, |tape, _, event, fwd| {
            let l = fwd.loss(tape, event.popularity, &cfg)?;
            loss += tape.scalar(l)?;
            let r = tape.scalar(fwd.total)? - event.popularity;
            err += if squared { r * r } else { r.abs() };
            Ok(())
        })?;
        let n = refs.len() as f64;
        Ok((loss / n, err / n))
    }

    /// Runs the remaining epochs up to `config.epochs`, calling `on_epoch`
    /// after each.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&EpochLog)) -> Result<Vec<EpochLog>> {
        let mut logs = Vec::new();
        while self.epoch < self.config.epochs {
            let log = self.run_epoch()?;
            on_epoch(&log);
            logs.push(log);
        }
        Ok(logs)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            vocab_hash: self.vocab_hash.clone(),
            config: self.config.clone(),
            epoch: self.epoch,
            scheduler: self.config.schedule,
            popularity: self.scale,
            params: self
                .model
                .params
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::from(v)))
                .collect(),
            mask: Tensor::from(&self.model.mask),
        }
    }
}

/// Trains from scratch for `config.epochs` epochs.
pub fn train(
    events: &[Event],
    graph: &WordGraph,
    image_dim: Option<usize>,
    config: TrainConfig,
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    let mut trainer = Trainer::new(events, graph, image_dim, config)?;
    let logs = trainer.run(|_| {})?;
    Ok((trainer.checkpoint(), logs))
}

/// ChaCha streams from here on are used for per-epoch shuffles.
const SHUFFLE_STREAM: u64 = 1 << 40;

fn annotate(err: Error, epoch: usize, event: &str) -> Error {
    match err {
        Error::NonFinite { op } => {
            log::error!("non-finite value in {op} at epoch {epoch}, event {event:?}");
            Error::NonFinite { op }
        }
        Error::NonFiniteGradient(name) => Error::NonFiniteGradient(format!("{name} (epoch {epoch}, event {event:?})")),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, GraphOptions};
    use crate::semb::EmbeddingFile;

    #[test]
    fn schedule_examples() {
        let s = Schedule::default();
        assert_eq!(s.lr(0.0), 0.01);
        assert!((s.lr(5.0) - 0.005).abs() < 1e-15);
        // Restarts at 10 and then at 10 + 20.
        assert_eq!(s.lr(10.0), 0.01);
        assert!((s.lr(20.0) - 0.005).abs() < 1e-15);
        assert_eq!(s.lr(30.0), 0.01);
        assert!(s.lr(9.99) < 1e-5);
        let flat = Schedule { t_mult: 1, ..s };
        assert_eq!(flat.lr(20.0), 0.01);
        assert!(Schedule { t0: 0, ..s }.validate().is_err());
        assert!(Schedule { t_mult: 0, ..s }.validate().is_err());
    }

    fn corpus() -> (Vec<Event>, WordGraph) {
        let words = [
            "sun", "rain", "storm", "match", "goal", "vote", "tax", "film", "star", "cup",
        ];
        let events: Vec<Event> = (0..20)
            .map(|i| {
                let tokens = (0..3)
                    .map(|k| words[(i * 3 + k * 7) % words.len()].to_string())
                    .collect();
                Event {
                    id: format!("e{i:02}"),
                    tokens,
                    image_feature: None,
                    popularity_raw: ((i * 37) % 11) as f64,
                    popularity: 0.0,
                }
            })
            .collect();
        let graph = build_graph(
            &events,
            &EmbeddingFile::new(6),
            GraphOptions {
                dim: Some(6),
                oov_seed: 1,
            },
        )
        .unwrap();
        (events, graph)
    }

    fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            seed: 4,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn same_seed_same_checkpoint() {
        let (events, graph) = corpus();
        let (a, la) = train(&events, &graph, None, small_config()).unwrap();
        let (b, lb) = train(&events, &graph, None, small_config()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(la, lb);
        assert_eq!(la.len(), 3);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let (events, graph) = corpus();
        let mut straight = Trainer::new(&events, &graph, None, small_config()).unwrap();
        straight.run(|_| {}).unwrap();

        let mut first = Trainer::new(&events, &graph, None, small_config()).unwrap();
        first.run_epoch().unwrap();
        let text = first.checkpoint().to_json();
        let ckpt = Checkpoint::from_json(&text).unwrap();
        let mut resumed = Trainer::resume(&events, &graph, &ckpt).unwrap();
        resumed.run(|_| {}).unwrap();
        assert_eq!(resumed.checkpoint().to_json(), straight.checkpoint().to_json());
    }

    #[test]
    fn checkpoint_rejects_other_vocabulary() {
        let (events, graph) = corpus();
        let (ckpt, _) = train(
            &events,
            &graph,
            None,
            TrainConfig {
                epochs: 1,
                ..small_config()
            },
        )
        .unwrap();
        let other = build_graph(
            &events[..5],
            &EmbeddingFile::new(6),
            GraphOptions {
                dim: Some(6),
                oov_seed: 1,
            },
        )
        .unwrap();
        assert!(matches!(ckpt.check_graph(&other), Err(Error::VocabMismatch { .. })));
        assert!(Checkpoint::from_json(&ckpt.to_json().replace("smn-ckpt/1", "smn-ckpt/9")).is_err());
    }

    #[test]
    fn invalid_config_rejected_before_compute() {
        let (events, graph) = corpus();
        let mut cfg = small_config();
        cfg.loss.lambda1 = -1.0;
        assert!(matches!(
            Trainer::new(&events, &graph, None, cfg),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn shuffles_differ_between_epochs() {
        let (events, graph) = corpus();
        let t = Trainer::new(&events, &graph, None, small_config()).unwrap();
        assert_ne!(t.epoch_order(0), t.epoch_order(1));
        assert_eq!(t.epoch_order(2), t.epoch_order(2));
    }
}
