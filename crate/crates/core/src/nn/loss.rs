//! Classification losses on logit vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Loss used for training, attacks and saliency maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Softmax cross-entropy.
    #[default]
    Sce,
    /// Mean squared error between the softmax output and the one-hot target.
    Mse,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sce" | "ce" | "xent" => Ok(LossKind::Sce),
            "mse" => Ok(LossKind::Mse),
            other => Err(Error::invalid(format!("unknown loss kind `{other}`"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Sce => "sce",
            LossKind::Mse => "mse",
        })
    }
}

/// Log-softmax with max subtraction.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln() + max;
    logits.iter().map(|&z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn check_target(logits: &[f64], target: usize) -> Result<()> {
    if target >= logits.len() {
        return Err(Error::ClassOutOfRange {
            index: target,
            classes: logits.len(),
        });
    }
    Ok(())
}

pub fn loss(logits: &[f64], target: usize, kind: LossKind) -> Result<f64> {
    Ok(loss_and_grad(logits, target, kind)?.0)
}

/// Loss value together with its gradient with respect to the logits.
pub fn loss_and_grad(logits: &[f64], target: usize, kind: LossKind) -> Result<(f64, Vec<f64>)> {
    check_target(logits, target)?;
    match kind {
        LossKind::Sce => {
            let log_p = log_softmax(logits);
            let mut grad: Vec<f64> = log_p.iter().map(|lp| lp.exp()).collect();
            grad[target] -= 1.0;
            Ok((-log_p[target], grad))
        }
        LossKind::Mse => {
            let p = softmax(logits);
            let c = p.len() as f64;
            let mut value = 0.0;
            // dL/dp
            let upstream: Vec<f64> = p
                .iter()
                .enumerate()
                .map(|(j, &pj)| {
                    let diff = pj - if j == target { 1.0 } else { 0.0 };
                    value += diff * diff;
                    2.0 * diff / c
                })
                .collect();
            // softmax Jacobian-vector product: p ⊙ (u − ⟨p, u⟩)
            let pu: f64 = p.iter().zip(&upstream).map(|(a, b)| a * b).sum();
            let grad = p
                .iter()
                .zip(&upstream)
                .map(|(pj, uj)| pj * (uj - pu))
                .collect();
            Ok((value / c, grad))
        }
    }
}
