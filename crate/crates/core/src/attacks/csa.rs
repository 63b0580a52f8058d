use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::pgd::{ascend, finish};
use super::{AttackConfig, AttackResult};
use crate::error::{Error, Result};
use crate::nn::{ActivationMode, Layer, LossKind, Model};
use crate::tensor::{argmax, dot, norm, Tensor};

struct Surrogate {
    value: f64,
    /// `∂value/∂g_i` for every class, zero for the predicted class.
    cotangents: Vec<Option<Vec<f64>>>,
}

/// Mean pairwise cosine over classes other than the prediction, computed on
/// raw class gradients, with its derivative with respect to each gradient.
fn surrogate(grads: &[Tensor], predicted: usize) -> Surrogate {
    let c = grads.len();
    let norms: Vec<f64> = grads.iter().map(|g| g.norm()).collect();
    let others: Vec<usize> = (0..c).filter(|&i| i != predicted).collect();
    let pairs = others.len() * others.len().saturating_sub(1) / 2;
    let mut value = 0.0;
    let mut cotangents: Vec<Option<Vec<f64>>> = vec![None; c];
    if pairs == 0 {
        return Surrogate { value, cotangents };
    }
    let scale = 1.0 / pairs as f64;
    for (a, &i) in others.iter().enumerate() {
        for &j in &others[a + 1..] {
            if norms[i] == 0.0 || norms[j] == 0.0 {
                continue;
            }
            let (gi, gj) = (grads[i].data(), grads[j].data());
            let cos = dot(gi, gj) / (norms[i] * norms[j]);
            value += scale * cos;
            for (k, gk, gl, nk, nl) in [(i, gi, gj, norms[i], norms[j]), (j, gj, gi, norms[j], norms[i])] {
                let u = cotangents[k].get_or_insert_with(|| vec![0.0; gk.len()]);
                for ((u, &a), &b) in u.iter_mut().zip(gk).zip(gl) {
                    *u += scale * (b / (nk * nl) - cos * a / (nk * nk));
                }
            }
        }
    }
    Surrogate { value, cotangents }
}

/// Smooth stand-in for the mean of S1: sign maps have zero derivative, so
/// the attack objective uses cosines between the raw class gradients.
pub fn csa_objective(model: &Model, x: &Tensor) -> Result<f64> {
    let classes: Vec<usize> = (0..model.num_classes()).collect();
    let (logits, grads) = model.input_gradients(x, &classes, LossKind::Sce)?;
    Ok(surrogate(&grads, argmax(&logits)).value)
}

/// Objective value and input gradient. Each class contributes a
/// Hessian-vector product, estimated by central differences of gradients
/// with step `fd_step`.
pub fn csa_objective_gradient(model: &Model, x: &Tensor, fd_step: f64) -> Result<(f64, Tensor)> {
    let classes: Vec<usize> = (0..model.num_classes()).collect();
    let (logits, grads) = model.input_gradients(x, &classes, LossKind::Sce)?;
    let s = surrogate(&grads, argmax(&logits));
    let mut points = Vec::new();
    let mut point_classes = Vec::new();
    let mut scales = Vec::new();
    for (class, u) in s.cotangents.iter().enumerate() {
        let Some(u) = u else { continue };
        let n = norm(u);
        if n == 0.0 {
            continue;
        }
        for sgn in [1.0, -1.0] {
            let shifted = x.data().iter().zip(u).map(|(v, d)| v + sgn * fd_step * d / n).collect();
            points.push(Tensor::new(x.shape().to_vec(), shifted)?);
            point_classes.push(class);
        }
        scales.push(n / (2.0 * fd_step));
    }
    let shifted = model.batch_input_gradients(&points, &point_classes, LossKind::Sce)?;
    let mut total = vec![0.0; x.len()];
    for (pair, scale) in shifted.chunks(2).zip(scales) {
        for ((t, a), b) in total.iter_mut().zip(pair[0].data()).zip(pair[1].data()) {
            *t += scale * (a - b);
        }
    }
    Ok((s.value, Tensor::new(x.shape().to_vec(), total)?))
}

fn is_smooth(model: &Model) -> bool {
    model.activation_mode() == ActivationMode::Softplus && !model.layers().iter().any(|l| matches!(l, Layer::Rectifier))
}

/// Adaptive attack ascending `w·objective + (1 − w)·loss(x, y_true)`.
pub fn csa(model: &Model, x: &Tensor, y_true: usize, cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    if !is_smooth(model) {
        return Err(Error::RequiresSoftplus("the cosine-similarity attack".into()));
    }
    if y_true >= model.num_classes() {
        return Err(Error::ClassOutOfRange {
            index: y_true,
            classes: model.num_classes(),
        });
    }
    let w = cfg.csa_weight;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (xa, zero) = ascend(x, cfg, &mut rng, cfg.iterations, |xa| {
        let ce = model.input_gradient(xa, y_true, cfg.loss_kind)?;
        if w == 0.0 {
            return Ok(ce);
        }
        let (_, g) = csa_objective_gradient(model, xa, cfg.fd_step)?;
        let data = g.data().iter().zip(ce.data()).map(|(a, b)| w * a + (1.0 - w) * b).collect();
        Tensor::new(xa.shape().to_vec(), data)
    })?;
    finish(model, xa, y_true, cfg.iterations, zero)
}
