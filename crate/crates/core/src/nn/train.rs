//! Mini-batch SGD with Nesterov momentum and a step learning-rate schedule.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{Mode, BATCHNORM_MOMENTUM};
use super::loss::LossKind;
use super::model::{param_key, Model};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Fractions of `epochs` at which the learning rate is divided by `lr_drop_factor`.
    pub lr_drop_points: Vec<f64>,
    pub lr_drop_factor: f64,
    pub seed: u64,
    /// Maximum random translation in pixels applied to image inputs (0 = off).
    pub shift_augment: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            batch_size: 128,
            epochs: 20,
            lr_drop_points: vec![0.3, 0.6, 0.8],
            lr_drop_factor: 5.0,
            seed: 0,
            shift_augment: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.lr_drop_factor > 0.0) {
            return Err(Error::invalid("lr_drop_factor must be positive"));
        }
        let mut prev = 0.0;
        for &p in &self.lr_drop_points {
            if !(p > prev && p < 1.0) {
                return Err(Error::invalid("lr_drop_points must be strictly increasing within (0, 1)"));
            }
            prev = p;
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (zero-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let drops = self
            .lr_drop_points
            .iter()
            .filter(|&&p| epoch >= (p * self.epochs as f64).floor() as usize)
            .count();
        self.learning_rate / self.lr_drop_factor.powi(drops as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    pub mean_loss: f64,
    /// Accuracy on the (augmented) training batches as seen during the epoch.
    pub train_accuracy: f64,
}

pub type TrainHistory = Vec<EpochStats>;

/// Trains a copy of `model` on `data` with the sce loss.
pub fn train(model: &Model, data: &LabeledDataset, cfg: &TrainConfig) -> Result<(Model, TrainHistory)> {
    cfg.validate()?;
    let mut model = model.clone();
    if cfg.epochs == 0 {
        return Ok((model, Vec::new()));
    }
    if data.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let c = model.num_classes();
    let labels: Vec<usize> = (0..data.len())
        .map(|i| match data.label(i) {
            Some(l) if l < c => Ok(l),
            _ => Err(Error::invalid(format!("sample {i} has label {} outside 0..{c}", data.labels[i]))),
        })
        .collect::<Result<_>>()?;

    let names = model.trainable_names();
    let mut velocity: Vec<Vec<f64>> = names.iter().map(|n| vec![0.0; model.params()[n].len()]).collect();
    let norm_layers: Vec<usize> = model
        .layers()
        .iter()
        .enumerate()
        .filter(|(_, l)| matches!(l, super::Layer::BatchNorm { .. }))
        .map(|(i, _)| i)
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let inputs: Vec<Tensor> = chunk
                .iter()
                .map(|&i| shift(&data.inputs[i], cfg.shift_augment, data.domain.0, &mut rng))
                .collect();
            let xs = Tensor::stack(&inputs)?;
            let ys: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (loss, grads, trace) = model.batch_loss_gradients(&xs, &ys, LossKind::Sce, Mode::Training)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch, loss });
            }
            loss_sum += loss * chunk.len() as f64;
            correct += trace
                .logits
                .data()
                .chunks(c)
                .zip(&ys)
                .filter(|(row, &y)| crate::tensor::argmax(row) == y)
                .count();

            let params = model.params_mut();
            for (name, v) in names.iter().zip(velocity.iter_mut()) {
                let g = grads[name].data();
                let p = params.get_mut(name).expect("trainable parameter").data_mut();
                for ((p, v), &g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                    *v = cfg.momentum * *v + g;
                    *p -= lr * (g + cfg.momentum * *v);
                }
            }
            for (idx, stats) in &trace.norm_stats {
                debug_assert!(norm_layers.contains(idx));
                for (key, fresh) in [("running_mean", &stats.mean), ("running_var", &stats.var_unbiased)] {
                    let run = params.get_mut(&param_key(*idx, key)).expect("batchnorm buffer").data_mut();
                    for (r, &f) in run.iter_mut().zip(fresh) {
                        *r = (1.0 - BATCHNORM_MOMENTUM) * *r + BATCHNORM_MOMENTUM * f;
                    }
                }
            }
        }
        history.push(EpochStats {
            epoch,
            learning_rate: lr,
            mean_loss: loss_sum / data.len() as f64,
            train_accuracy: correct as f64 / data.len() as f64,
        });
    }
    Ok((model, history))
}

/// Random integer translation of a `[channels, height, width]` image.
fn shift(x: &Tensor, max_shift: usize, fill: f64, rng: &mut ChaCha8Rng) -> Tensor {
    if max_shift == 0 || x.shape().len() != 3 {
        return x.clone();
    }
    let s = max_shift as i64;
    let dy = rng.random_range(-s..=s);
    let dx = rng.random_range(-s..=s);
    if dy == 0 && dx == 0 {
        return x.clone();
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1] as i64, x.shape()[2] as i64);
    let src = x.data();
    let mut out = vec![fill; src.len()];
    for ch in 0..c {
        let base = ch * (h * w) as usize;
        for y in 0..h {
            let sy = y - dy;
            if !(0..h).contains(&sy) {
                continue;
            }
            for xx in 0..w {
                let sx = xx - dx;
                if (0..w).contains(&sx) {
                    out[base + (y * w + xx) as usize] = src[base + (sy * w + sx) as usize];
                }
            }
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}

/// Fraction of samples whose predicted class equals their label; OOD samples are skipped.
pub fn accuracy(model: &Model, data: &LabeledDataset) -> Result<f64> {
    let mut total = 0usize;
    let mut correct = 0usize;
    for (i, x) in data.inputs.iter().enumerate() {
        if let Some(y) = data.label(i) {
            total += 1;
            if model.predict(x)? == y {
                correct += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::Empty("no labelled samples".into()));
    }
    Ok(correct as f64 / total as f64)
}
