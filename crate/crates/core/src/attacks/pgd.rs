use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{AttackConfig, AttackResult, Norm, Target};
use crate::error::{Error, Result};
use crate::nn::{softmax, Model};
use crate::tensor::{norm, sign, Tensor};

/// Projects `x_adv` onto the budget ball around `x`, then clips to the domain.
pub fn project(x: &Tensor, x_adv: &Tensor, cfg: &AttackConfig) -> Tensor {
    let eps = cfg.epsilon;
    let mut delta: Vec<f64> = x_adv.data().iter().zip(x.data()).map(|(a, b)| a - b).collect();
    match cfg.norm {
        Norm::Linf => delta.iter_mut().for_each(|d| *d = d.clamp(-eps, eps)),
        Norm::L2 => {
            let n = norm(&delta);
            if n > eps {
                let s = eps / n;
                delta.iter_mut().for_each(|d| *d *= s);
            }
        }
    }
    let (lo, hi) = cfg.clip_range;
    let data = x.data().iter().zip(&delta).map(|(v, d)| (v + d).clamp(lo, hi)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
}

/// A perturbation drawn uniformly from the budget ball.
pub fn uniform_ball_noise(shape: &[usize], cfg: &AttackConfig, rng: &mut ChaCha8Rng) -> Tensor {
    let d: usize = shape.iter().product();
    let eps = cfg.epsilon;
    let data = match cfg.norm {
        Norm::Linf => (0..d).map(|_| rng.random_range(-eps..=eps)).collect(),
        Norm::L2 => {
            let dir: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            let n = norm(&dir);
            let radius = eps * rng.random::<f64>().powf(1.0 / d as f64);
            dir.into_iter().map(|v| v * radius / n).collect()
        }
    };
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

fn add(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

/// Projected steps along `direction` starting inside the ball. Returns the
/// final point and whether a zero gradient forced a random step.
pub(crate) fn ascend(
    x: &Tensor,
    cfg: &AttackConfig,
    rng: &mut ChaCha8Rng,
    iterations: usize,
    mut direction: impl FnMut(&Tensor) -> Result<Tensor>,
) -> Result<(Tensor, bool)> {
    let mut xa = if cfg.random_start {
        project(x, &add(x, &uniform_ball_noise(x.shape(), cfg, rng)), cfg)
    } else {
        cfg.clip(x)
    };
    let alpha = cfg.step_size;
    let mut zero = false;
    for _ in 0..iterations {
        let g = direction(&xa)?;
        if !g.is_finite() {
            return Err(Error::NonFinite("attack gradient".into()));
        }
        let mut g = g.into_data();
        let mut n = norm(&g);
        if n == 0.0 {
            zero = true;
            g = (0..g.len()).map(|_| StandardNormal.sample(rng)).collect();
            n = norm(&g);
        }
        let step: Vec<f64> = match cfg.norm {
            Norm::Linf => g.iter().map(|&v| alpha * sign(v)).collect(),
            Norm::L2 => g.iter().map(|v| alpha * v / n).collect(),
        };
        let moved = Tensor::new(xa.shape().to_vec(), xa.data().iter().zip(&step).map(|(a, s)| a + s).collect())?;
        xa = project(x, &moved, cfg);
    }
    Ok((xa, zero))
}

pub(crate) fn finish(model: &Model, x_adv: Tensor, y_true: usize, iterations: usize, zero: bool) -> Result<AttackResult> {
    let probs = softmax(model.forward(&x_adv)?.data());
    let pred = crate::tensor::argmax(&probs);
    Ok(AttackResult {
        x_adv,
        success: pred != y_true,
        iterations,
        final_confidence: probs[pred],
        zero_gradient: zero,
    })
}

fn check_label(model: &Model, y: usize) -> Result<()> {
    if y >= model.num_classes() {
        return Err(Error::ClassOutOfRange {
            index: y,
            classes: model.num_classes(),
        });
    }
    Ok(())
}

/// Untargeted projected gradient ascent on the loss of the true label.
pub fn pgd(model: &Model, x: &Tensor, y_true: usize, cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    check_label(model, y_true)?;
    if cfg.target != Target::None {
        return Err(Error::invalid("pgd is untargeted; use pgd_targeted"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (xa, zero) = ascend(x, cfg, &mut rng, cfg.iterations, |xa| {
        model.input_gradient(xa, y_true, cfg.loss_kind)
    })?;
    finish(model, xa, y_true, cfg.iterations, zero)
}

/// Resolves the attack target for a sample with label `y_true`.
pub(crate) fn choose_target(target: Target, y_true: usize, classes: usize, rng: &mut ChaCha8Rng) -> Result<usize> {
    match target {
        Target::None => Err(Error::invalid("targeted attack needs a target")),
        Target::RandomNonTrue => {
            if classes < 2 {
                return Err(Error::invalid("random target needs at least two classes"));
            }
            let t = rng.random_range(0..classes - 1);
            Ok(if t >= y_true { t + 1 } else { t })
        }
        Target::Fixed(t) if t >= classes => Err(Error::ClassOutOfRange { index: t, classes }),
        Target::Fixed(t) if t == y_true => Err(Error::invalid("target equals the true label")),
        Target::Fixed(t) => Ok(t),
    }
}

/// Projected gradient descent on the loss of a target class.
pub fn pgd_targeted(model: &Model, x: &Tensor, y_true: usize, cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    check_label(model, y_true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let target = choose_target(cfg.target, y_true, model.num_classes(), &mut rng)?;
    let start = cfg.clip(x);
    if model.predict(&start)? == target {
        return finish(model, start, y_true, 0, false);
    }
    let (xa, zero) = ascend(x, cfg, &mut rng, cfg.iterations, |xa| {
        Ok(model.input_gradient(xa, target, cfg.loss_kind)?.map(|v| -v))
    })?;
    finish(model, xa, y_true, cfg.iterations, zero)
}

/// Uniform noise drawn from the budget ball.
pub fn noise_attack(model: &Model, x: &Tensor, y_true: usize, cfg: &AttackConfig) -> Result<AttackResult> {
    cfg.validate()?;
    check_label(model, y_true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let u = uniform_ball_noise(x.shape(), cfg, &mut rng);
    finish(model, cfg.clip(&add(x, &u)), y_true, 1, false)
}
