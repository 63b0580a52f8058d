use super::pgd::{finish, pgd, project};
use super::{AttackConfig, AttackResult};
use crate::error::Result;
use crate::nn::Model;
use crate::tensor::Tensor;

/// Low-confidence adversarial: bisects the segment from `x` to a successful
/// PGD result for the point just past the decision boundary.
pub fn boundary_proximal(model: &Model, x: &Tensor, y_true: usize, cfg: &AttackConfig) -> Result<AttackResult> {
    let start = cfg.clip(x);
    if model.predict(&start)? != y_true {
        return finish(model, start, y_true, 0, false);
    }
    let strong = pgd(model, x, y_true, cfg)?;
    if !strong.success {
        return Ok(strong);
    }
    let point = |t: f64| -> Result<Tensor> {
        let data = start
            .data()
            .iter()
            .zip(strong.x_adv.data())
            .map(|(a, b)| a + t * (b - a))
            .collect();
        Tensor::new(start.shape().to_vec(), data)
    };
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..cfg.bisection_steps {
        let mid = 0.5 * (lo + hi);
        if model.predict(&point(mid)?)? == y_true {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let refined = project(x, &point(hi)?, cfg);
    finish(model, refined, y_true, cfg.iterations + cfg.bisection_steps, strong.zero_gradient)
}
