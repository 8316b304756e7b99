//! Regression and ranking metrics over per-event predictions.
//!
//! Rankings sort by score descending and break ties by id ascending, so every
//! metric is a deterministic function of its input.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OL_CUTOFFS: [usize; 3] = [10, 20, 30];
pub const MAP_THRESHOLDS: [usize; 6] = [6, 7, 8, 9, 10, 15];
pub const NDCG_CUTOFF: usize = 10;

/// True and predicted scores for a set of events.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedResult {
    pub ids: Vec<String>,
    pub y_true: Vec<f64>,
    pub y_pred: Vec<f64>,
    /// Positions into the vectors above, best first, by true score.
    pub true_order: Vec<usize>,
    /// Same, by predicted score.
    pub pred_order: Vec<usize>,
}

impl RankedResult {
    pub fn new(ids: Vec<String>, y_true: Vec<f64>, y_pred: Vec<f64>) -> Result<Self> {
        if ids.len() != y_true.len() || ids.len() != y_pred.len() {
            return Err(Error::Metric(format!(
                "length mismatch: {} ids, {} true, {} predicted",
                ids.len(),
                y_true.len(),
                y_pred.len()
            )));
        }
        if y_true.iter().chain(&y_pred).any(|v| !v.is_finite()) {
            return Err(Error::Metric("scores must be finite".into()));
        }
        let true_order = ranking(&ids, &y_true);
        let pred_order = ranking(&ids, &y_pred);
        Ok(Self {
            ids,
            y_true,
            y_pred,
            true_order,
            pred_order,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn check_cutoff(&self, what: &str, k: usize) -> Result<()> {
        if k == 0 || k > self.len() {
            return Err(Error::Metric(format!("{what} cutoff {k} outside 1..={}", self.len())));
        }
        Ok(())
    }
}

/// Indices sorted by score descending, ties by id ascending.
pub fn ranking(ids: &[String], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| ids[a].cmp(&ids[b])));
    order
}

/// Mean absolute error.
pub fn mse(r: &RankedResult) -> Result<f64> {
    mean_error(r, f64::abs)
}

/// Mean squared error.
pub fn mse_squared(r: &RankedResult) -> Result<f64> {
    mean_error(r, |d| d * d)
}

fn mean_error(r: &RankedResult, f: impl Fn(f64) -> f64) -> Result<f64> {
    if r.is_empty() {
        return Err(Error::Metric("no events to score".into()));
    }
    let total: f64 = r.y_pred.iter().zip(&r.y_true).map(|(p, t)| f(p - t)).sum();
    Ok(total / r.len() as f64)
}

/// `Σ_{k≤K} |R_k − P_k| / N`: true popularity read through the true ranking
/// versus through the predicted ranking.
pub fn order_loss(r: &RankedResult, k: usize) -> Result<f64> {
    r.check_cutoff("OL", k)?;
    let gap: f64 = r.true_order[..k]
        .iter()
        .zip(&r.pred_order[..k])
        .map(|(&t, &p)| (r.y_true[t] - r.y_true[p]).abs())
        .sum();
    Ok(gap / r.len() as f64)
}

/// Average precision with the true top `m` as the relevant set, over the
/// whole predicted list.
pub fn map_at(r: &RankedResult, m: usize) -> Result<f64> {
    r.check_cutoff("mAP", m)?;
    let mut relevant = vec![false; r.len()];
    for &i in &r.true_order[..m] {
        relevant[i] = true;
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (k, &i) in r.pred_order.iter().enumerate() {
        if relevant[i] {
            hits += 1;
            total += hits as f64 / (k + 1) as f64;
        }
    }
    Ok(total / m as f64)
}

/// Mean of [`map_at`] over `thresholds`.
pub fn map_mean(r: &RankedResult, thresholds: &[usize]) -> Result<f64> {
    if thresholds.is_empty() {
        return Err(Error::Metric("no mAP thresholds".into()));
    }
    let mut sum = 0.0;
    for &m in thresholds {
        sum += map_at(r, m)?;
    }
    Ok(sum / thresholds.len() as f64)
}

/// NDCG with gain equal to the true popularity and discount `1/log2(i+1)`.
/// An all-zero ideal gain counts as a perfect ranking.
pub fn ndcg_at(r: &RankedResult, k: usize) -> Result<f64> {
    r.check_cutoff("NDCG", k)?;
    let dcg = |order: &[usize]| -> f64 {
        order[..k]
            .iter()
            .enumerate()
            .map(|(i, &e)| r.y_true[e] / ((i + 2) as f64).log2())
            .sum()
    };
    let ideal = dcg(&r.true_order);
    if ideal == 0.0 {
        log::warn!("NDCG@{k}: ideal gain is zero, reporting 1.0");
        return Ok(1.0);
    }
    Ok(dcg(&r.pred_order) / ideal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapReport {
    pub mean: Option<f64>,
    pub per_m: BTreeMap<String, f64>,
}

/// All metrics at the standard cutoffs. Cutoffs beyond the number of events
/// are left out, and a metric with no usable cutoff is `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mse_abs: f64,
    pub mse_sq: f64,
    pub ol: BTreeMap<String, f64>,
    pub map: MapReport,
    #[serde(rename = "ndcg@10")]
    pub ndcg_at_10: Option<f64>,
}

impl MetricsReport {
    pub fn compute(r: &RankedResult) -> Result<Self> {
        let n = r.len();
        let mut ol = BTreeMap::new();
        for k in OL_CUTOFFS.into_iter().filter(|&k| k <= n) {
            ol.insert(k.to_string(), order_loss(r, k)?);
        }
        let usable: Vec<usize> = MAP_THRESHOLDS.into_iter().filter(|&m| m <= n).collect();
        let mut per_m = BTreeMap::new();
        for &m in &usable {
            per_m.insert(m.to_string(), map_at(r, m)?);
        }
        let mean = (!usable.is_empty()).then(|| map_mean(r, &usable)).transpose()?;
        let ndcg_at_10 = (NDCG_CUTOFF <= n).then(|| ndcg_at(r, NDCG_CUTOFF)).transpose()?;
        Ok(Self {
            mse_abs: mse(r)?,
            mse_sq: mse_squared(r)?,
            ol,
            map: MapReport { mean, per_m },
            ndcg_at_10,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Metric(
            "spearman needs two equal-length series of length >= 2".into(),
        ));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    pearson(&ra, &rb)
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&x, &y| v[x].total_cmp(&v[y]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && v[order[end]] == v[order[start]] {
            end += 1;
        }
        let avg = (start + end - 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Metric("correlation undefined for a constant series".into()));
    }
    Ok(cov / (va * vb).sqrt())
}
