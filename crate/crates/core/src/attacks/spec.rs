use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{AttackConfig, Norm, Target};
use crate::error::{Error, Result};
use crate::nn::{LossKind, DEFAULT_SOFTPLUS_BETA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackKind {
    Pgd,
    Targeted,
    Csa,
    Noise,
    Rotation,
    Boundary,
}

/// A parsed attack specification such as `pgd:linf:eps=0.3:iters=70`.
///
/// The first field names the attack (`pgd`, `t-sce`, `t-mse`, `targeted`,
/// `csa`, `noise`, `rotation`, `boundary`); the remaining fields are a norm
/// (`linf`, `l2`) or `key=value` options: `eps`, `alpha`, `iters`, `loss`,
/// `target` (`random` or a class), `w`, `seed`, `start` (`random`, `none`),
/// `deg`, `steps`, `fd`, `beta`. Numbers may be written as fractions
/// (`eps=8/255`). Without `eps` the ℓ∞ budget is 0.3 and the ℓ2 budget ten
/// times that; the step defaults to a quarter of the budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub config: AttackConfig,
    /// Softplus sharpness used when the adaptive attack swaps activations.
    pub beta: f64,
}

fn number(key: &str, v: &str) -> Result<f64> {
    let parsed = match v.split_once('/') {
        Some((a, b)) => a.trim().parse::<f64>().ok().zip(b.trim().parse::<f64>().ok()).map(|(a, b)| a / b),
        None => v.parse().ok(),
    };
    parsed
        .filter(|x: &f64| x.is_finite())
        .ok_or_else(|| Error::invalid(format!("`{key}` expects a number, got `{v}`")))
}

fn integer(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::invalid(format!("`{key}` expects a non-negative integer, got `{v}`")))
}

impl FromStr for AttackSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut fields = s.split(':').map(str::trim);
        let name = fields.next().unwrap_or_default().to_ascii_lowercase();
        let (kind, loss, iterations) = match name.as_str() {
            "pgd" => (AttackKind::Pgd, LossKind::Sce, 70),
            "t-sce" | "tsce" => (AttackKind::Targeted, LossKind::Sce, 100),
            "t-mse" | "tmse" => (AttackKind::Targeted, LossKind::Mse, 100),
            "targeted" => (AttackKind::Targeted, LossKind::Sce, 100),
            "csa" => (AttackKind::Csa, LossKind::Sce, 100),
            "noise" => (AttackKind::Noise, LossKind::Sce, 1),
            "rotation" | "rotate" => (AttackKind::Rotation, LossKind::Sce, 1),
            "boundary" => (AttackKind::Boundary, LossKind::Sce, 70),
            other => return Err(Error::invalid(format!("unknown attack `{other}`"))),
        };
        let mut norm = Norm::Linf;
        let mut eps = None;
        let mut alpha = None;
        let mut cfg = AttackConfig {
            iterations,
            loss_kind: loss,
            target: if kind == AttackKind::Targeted {
                Target::RandomNonTrue
            } else {
                Target::None
            },
            ..AttackConfig::default()
        };
        let mut beta = DEFAULT_SOFTPLUS_BETA;
        for field in fields {
            let Some((key, value)) = field.split_once('=') else {
                norm = field.parse()?;
                continue;
            };
            match key {
                "eps" => eps = Some(number(key, value)?),
                "alpha" | "step" => alpha = Some(number(key, value)?),
                "iters" => cfg.iterations = integer(key, value)?,
                "loss" => cfg.loss_kind = value.parse()?,
                "target" => {
                    cfg.target = match value {
                        "random" => Target::RandomNonTrue,
                        "none" => Target::None,
                        v => Target::Fixed(integer(key, v)?),
                    }
                }
                "w" | "weight" => cfg.csa_weight = number(key, value)?,
                "seed" => cfg.seed = value.parse().map_err(|_| Error::invalid(format!("bad seed `{value}`")))?,
                "start" => {
                    cfg.random_start = match value {
                        "random" => true,
                        "none" => false,
                        v => return Err(Error::invalid(format!("`start` expects random|none, got `{v}`"))),
                    }
                }
                "deg" => cfg.max_degrees = number(key, value)?,
                "steps" => cfg.bisection_steps = integer(key, value)?,
                "fd" => cfg.fd_step = number(key, value)?,
                "beta" => beta = number(key, value)?,
                other => return Err(Error::invalid(format!("unknown attack option `{other}`"))),
            }
        }
        cfg.norm = norm;
        cfg.epsilon = eps.unwrap_or(match norm {
            Norm::Linf => 0.3,
            Norm::L2 => 3.0,
        });
        cfg.step_size = alpha.unwrap_or(cfg.epsilon / 4.0);
        if kind == AttackKind::Targeted && cfg.target == Target::None {
            return Err(Error::invalid("targeted attacks need a target"));
        }
        if kind != AttackKind::Rotation {
            cfg.validate()?;
        }
        if !(beta > 0.0) {
            return Err(Error::invalid("beta must be positive"));
        }
        Ok(Self { kind, config: cfg, beta })
    }
}

impl AttackSpec {
    /// Short label used for report columns and dataset tags.
    pub fn tag(&self) -> String {
        let base = match (self.kind, self.config.loss_kind) {
            (AttackKind::Pgd, _) => "pgd",
            (AttackKind::Targeted, LossKind::Sce) => "t-sce",
            (AttackKind::Targeted, LossKind::Mse) => "t-mse",
            (AttackKind::Csa, _) => "csa",
            (AttackKind::Noise, _) => "noise",
            (AttackKind::Rotation, _) => return "rotation".into(),
            (AttackKind::Boundary, _) => "boundary",
        };
        match self.config.norm {
            Norm::Linf => base.to_string(),
            Norm::L2 => format!("{base}-l2"),
        }
    }
}

impl fmt::Display for AttackSpec {
    /// Canonical form listing every option, parseable back to an equal spec.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = &self.config;
        let name = match (self.kind, c.loss_kind) {
            (AttackKind::Pgd, _) => "pgd",
            (AttackKind::Targeted, _) => "targeted",
            (AttackKind::Csa, _) => "csa",
            (AttackKind::Noise, _) => "noise",
            (AttackKind::Rotation, _) => "rotation",
            (AttackKind::Boundary, _) => "boundary",
        };
        let target = match c.target {
            Target::None => "none".to_string(),
            Target::RandomNonTrue => "random".to_string(),
            Target::Fixed(t) => t.to_string(),
        };
        write!(
            f,
            "{name}:{}:eps={}:alpha={}:iters={}:loss={}:target={target}:w={}:seed={}:start={}:deg={}:steps={}:fd={}:beta={}",
            c.norm,
            c.epsilon,
            c.step_size,
            c.iterations,
            c.loss_kind,
            c.csa_weight,
            c.seed,
            if c.random_start { "random" } else { "none" },
            c.max_degrees,
            c.bisection_steps,
            c.fd_step,
            self.beta
        )
    }
}
