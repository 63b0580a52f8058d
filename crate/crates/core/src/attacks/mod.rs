//! Attacks producing untrustworthy inputs: projected gradient ascent
//! (untargeted and targeted), the cosine-similarity attack, uniform noise in
//! the budget ball, rotations and a boundary-proximal bisection attack.

mod boundary;
mod csa;
mod pgd;
mod rotate;
mod runner;
mod spec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::LossKind;
use crate::tensor::Tensor;

pub use boundary::boundary_proximal;
pub use csa::{csa, csa_objective, csa_objective_gradient};
pub use pgd::{noise_attack, pgd, pgd_targeted, project, uniform_ball_noise};
pub use rotate::{rotate, rotation_attack};
pub use runner::{run_attack, sample_seed, successful_subset, AttackBatch};
pub use spec::{AttackKind, AttackSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Norm {
    Linf,
    L2,
}

impl Norm {
    /// Norm of `v` in this geometry.
    pub fn of(self, v: &[f64]) -> f64 {
        match self {
            Norm::Linf => v.iter().fold(0.0, |m, x| f64::max(m, x.abs())),
            Norm::L2 => crate::tensor::norm(v),
        }
    }
}

impl std::str::FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linf" | "inf" => Ok(Norm::Linf),
            "l2" => Ok(Norm::L2),
            _ => Err(Error::invalid(format!("unknown norm `{s}`"))),
        }
    }
}

impl std::fmt::Display for Norm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Norm::Linf => "linf",
            Norm::L2 => "l2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    None,
    /// A class drawn uniformly from those other than the true label.
    RandomNonTrue,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub norm: Norm,
    pub epsilon: f64,
    pub step_size: f64,
    pub iterations: usize,
    pub loss_kind: LossKind,
    pub target: Target,
    /// Weight of the cosine-similarity objective in the adaptive attack.
    pub csa_weight: f64,
    pub clip_range: (f64, f64),
    pub random_start: bool,
    /// Largest absolute rotation angle in degrees.
    pub max_degrees: f64,
    pub bisection_steps: usize,
    /// Finite-difference step for Hessian-vector products.
    pub fd_step: f64,
    pub seed: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self::linf(0.3)
    }
}

impl AttackConfig {
    /// ℓ∞ configuration with step `ε/4` and 70 iterations over `[0, 1]`.
    pub fn linf(epsilon: f64) -> Self {
        Self {
            norm: Norm::Linf,
            epsilon,
            step_size: epsilon / 4.0,
            iterations: 70,
            loss_kind: LossKind::Sce,
            target: Target::None,
            csa_weight: 0.8,
            clip_range: (0.0, 1.0),
            random_start: true,
            max_degrees: 45.0,
            bisection_steps: 20,
            fd_step: 1e-4,
            seed: 0,
        }
    }

    /// ℓ2 configuration with ten times the ℓ∞ budget.
    pub fn l2_from_linf(linf_epsilon: f64) -> Self {
        let epsilon = 10.0 * linf_epsilon;
        Self {
            norm: Norm::L2,
            epsilon,
            step_size: epsilon / 4.0,
            ..Self::linf(linf_epsilon)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid("step size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.csa_weight) {
            return Err(Error::invalid("csa weight must lie in [0, 1]"));
        }
        if !(self.clip_range.0 < self.clip_range.1) {
            return Err(Error::invalid("clip range must be non-empty"));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::invalid("finite-difference step must be positive"));
        }
        Ok(())
    }

    pub(crate) fn clip(&self, x: &Tensor) -> Tensor {
        let (lo, hi) = self.clip_range;
        x.map(|v| v.clamp(lo, hi))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub x_adv: Tensor,
    /// Prediction differs from the true label.
    pub success: bool,
    pub iterations: usize,
    /// Largest softmax probability at `x_adv`.
    pub final_confidence: f64,
    /// A zero gradient forced a random step.
    pub zero_gradient: bool,
}
