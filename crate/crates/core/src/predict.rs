//! Inference from a trained model: predictions, metric reports and keyword
//! scores.

use std::collections::BTreeMap;

use crate::corpus::{Event, PopularityScale};
use crate::error::Result;
use crate::graph::WordGraph;
use crate::metrics::{MetricsReport, RankedResult};
use crate::model::{EventPrediction, GraphContext, Model};
use crate::train::{Checkpoint, Trainer};

#[derive(Debug, Clone)]
pub struct Predictor {
    pub model: Model,
    pub scale: PopularityScale,
    ctx: GraphContext,
}

impl Predictor {
    pub fn new(model: Model, graph: &WordGraph, scale: PopularityScale) -> Self {
        Self {
            model,
            scale,
            ctx: GraphContext::new(graph),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, graph: &WordGraph) -> Result<Self> {
        ckpt.check_graph(graph)?;
        Ok(Self::new(ckpt.model()?, graph, ckpt.popularity))
    }

    pub fn from_trainer(trainer: &Trainer) -> Self {
        Self {
            model: trainer.model.clone(),
            scale: trainer.scale,
            ctx: trainer.context().clone(),
        }
    }

    /// Copies of `events` with `popularity` set from the stored scale.
    pub fn normalize(&self, events: &[&Event]) -> Vec<Event> {
        events
            .iter()
            .map(|e| {
                let mut e = (*e).clone();
                e.popularity = self.scale.apply(e.popularity_raw);
                e
            })
            .collect()
    }

    /// Predictions on the normalized scale.
    pub fn predict(&self, events: &[&Event]) -> Result<Vec<EventPrediction>> {
        self.model.predict(&self.ctx, events)
    }

    /// Normalized true popularity against normalized predictions.
    pub fn ranked(&self, events: &[&Event]) -> Result<RankedResult> {
        let predictions = self.predict(events)?;
        RankedResult::new(
            events.iter().map(|e| e.id.clone()).collect(),
            events.iter().map(|e| self.scale.apply(e.popularity_raw)).collect(),
            predictions.iter().map(|p| p.breakdown.y_total).collect(),
        )
    }

    pub fn report(&self, events: &[&Event]) -> Result<MetricsReport> {
        MetricsReport::compute(&self.ranked(events)?)
    }

    /// Mean self-excitation score of every word over the events it occurs in.
    pub fn word_scores(&self, events: &[&Event]) -> Result<BTreeMap<String, f64>> {
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for p in self.predict(events)? {
            for (token, score) in p.word_scores {
                let slot = acc.entry(token).or_insert((0.0, 0));
                slot.0 += score;
                slot.1 += 1;
            }
        }
        Ok(acc.into_iter().map(|(t, (s, n))| (t, s / n as f64)).collect())
    }
}
