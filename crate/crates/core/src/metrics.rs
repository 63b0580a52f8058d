//! Detection metrics. Scores follow the anomaly convention: lower means more
//! trustworthy. All rates are percentages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loda::calibrate;
use crate::nn::{softmax, Model};
use crate::tensor::Tensor;

/// Scores of trustworthy (positive) and untrustworthy (negative) samples.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoredSet {
    pub positives: Vec<f64>,
    pub negatives: Vec<f64>,
}

impl ScoredSet {
    pub fn new(positives: Vec<f64>, negatives: Vec<f64>) -> Self {
        Self { positives, negatives }
    }

    fn check(&self) -> Result<()> {
        if self.positives.is_empty() || self.negatives.is_empty() {
            return Err(Error::Empty("metrics need positive and negative scores".into()));
        }
        if self.positives.iter().chain(&self.negatives).any(|s| s.is_nan()) {
            return Err(Error::NonFinite("scores contain NaN".into()));
        }
        Ok(())
    }
}

/// Percentage of negatives flagged at the threshold accepting `tpr` of the
/// positives.
pub fn tnr_at_tpr(s: &ScoredSet, tpr: f64) -> Result<f64> {
    s.check()?;
    let t = calibrate(&s.positives, tpr)?;
    let flagged = s.negatives.iter().filter(|&&v| v > t).count();
    Ok(100.0 * flagged as f64 / s.negatives.len() as f64)
}

/// Probability that a negative outscores a positive, ties counting half.
pub fn auroc(s: &ScoredSet) -> Result<f64> {
    s.check()?;
    let mut pos = s.positives.clone();
    pos.sort_by(f64::total_cmp);
    let (mut wins, mut ties) = (0u128, 0u128);
    for &n in &s.negatives {
        let below = pos.partition_point(|&p| p < n);
        let not_above = pos.partition_point(|&p| p <= n);
        wins += below as u128;
        ties += (not_above - below) as u128;
    }
    let pairs = 2 * s.positives.len() as u128 * s.negatives.len() as u128;
    Ok(100.0 * (2 * wins + ties) as f64 / pairs as f64)
}

/// Which class counts as positive in a precision-recall curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrSide {
    /// Trustworthy samples are positive; ranked by negated score.
    In,
    /// Untrustworthy samples are positive; ranked by score.
    Out,
}

/// Step-wise area under the precision-recall curve (average precision).
pub fn aupr(s: &ScoredSet, side: PrSide) -> Result<f64> {
    s.check()?;
    let mut ranked: Vec<(f64, bool)> = match side {
        PrSide::Out => s
            .negatives
            .iter()
            .map(|&v| (v, true))
            .chain(s.positives.iter().map(|&v| (v, false)))
            .collect(),
        PrSide::In => s
            .positives
            .iter()
            .map(|&v| (-v, true))
            .chain(s.negatives.iter().map(|&v| (-v, false)))
            .collect(),
    };
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total_pos = ranked.iter().filter(|r| r.1).count() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut area = 0.0;
    let mut i = 0;
    while i < ranked.len() {
        let score = ranked[i].0;
        while i < ranked.len() && ranked[i].0 == score {
            if ranked[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = tp as f64 / total_pos;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(100.0 * area)
}

/// Negative maximum softmax probability of `logits`.
pub fn msp_from_logits(logits: &[f64]) -> f64 {
    -softmax(logits).into_iter().fold(f64::NEG_INFINITY, f64::max)
}

/// Maximum-softmax-probability reference score (higher = more anomalous).
pub fn msp_score(model: &Model, x: &Tensor) -> Result<f64> {
    Ok(msp_from_logits(model.forward(x)?.data()))
}
