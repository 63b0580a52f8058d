use super::pgd::{finish, noise_attack, pgd, pgd_targeted};
use super::{boundary_proximal, csa, rotation_attack, AttackKind, AttackResult, AttackSpec, Norm};
use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{ActivationMode, Model};
use crate::par;
use crate::tensor::Tensor;

/// Outcome of attacking a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackBatch {
    pub spec: AttackSpec,
    /// Index of each attacked sample in the source dataset.
    pub source_indices: Vec<usize>,
    pub labels: Vec<i64>,
    pub results: Vec<AttackResult>,
    pub domain: (f64, f64),
}

/// Seed of sample `index` derived from the attack seed (splitmix64).
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn within_budget(x: &Tensor, x_adv: &Tensor, spec: &AttackSpec) -> bool {
    if spec.kind == AttackKind::Rotation {
        return true;
    }
    let delta: Vec<f64> = x_adv.data().iter().zip(x.data()).map(|(a, b)| a - b).collect();
    spec.config.norm.of(&delta) <= spec.config.epsilon + 1e-9
}

/// Attacks every labelled sample of `data` (only the correctly classified
/// ones when `only_correct`). The clip range is taken from the dataset. The
/// adaptive attack runs on a softplus copy of a rectifier model; success and
/// confidence are always judged by `model`.
pub fn run_attack(model: &Model, data: &LabeledDataset, spec: &AttackSpec, only_correct: bool) -> Result<AttackBatch> {
    let mut indices = Vec::new();
    for i in 0..data.len() {
        let Some(y) = data.label(i) else { continue };
        if only_correct && model.predict(&data.inputs[i])? != y {
            continue;
        }
        indices.push(i);
    }
    let smooth;
    let attacked = if spec.kind == AttackKind::Csa && model.activation_mode() != ActivationMode::Softplus {
        smooth = model.swap_activations(ActivationMode::Softplus, spec.beta);
        &smooth
    } else {
        model
    };
    let results = par::try_map(&indices, |_, &i| -> Result<AttackResult> {
        let y = data.label(i).expect("labelled sample");
        let x = &data.inputs[i];
        let mut cfg = spec.config.clone();
        cfg.clip_range = data.domain;
        cfg.seed = sample_seed(spec.config.seed, i);
        let r = match spec.kind {
            AttackKind::Pgd => pgd(model, x, y, &cfg)?,
            AttackKind::Targeted => pgd_targeted(model, x, y, &cfg)?,
            AttackKind::Csa => {
                let r = csa(attacked, x, y, &cfg)?;
                finish(model, r.x_adv, y, r.iterations, r.zero_gradient)?
            }
            AttackKind::Noise => noise_attack(model, x, y, &cfg)?,
            AttackKind::Rotation => rotation_attack(model, x, y, &cfg)?,
            AttackKind::Boundary => boundary_proximal(model, x, y, &cfg)?,
        };
        if !within_budget(x, &r.x_adv, spec) {
            return Err(Error::NonFinite(format!("attack left its budget on sample {i}")));
        }
        Ok(r)
    })?;
    Ok(AttackBatch {
        spec: spec.clone(),
        labels: indices.iter().map(|&i| data.labels[i]).collect(),
        source_indices: indices,
        results,
        domain: data.domain,
    })
}

impl AttackBatch {
    pub fn success_count(&self) -> usize {
        self.results.iter().filter(|r| r.success).count()
    }

    pub fn success_rate(&self) -> f64 {
        if self.results.is_empty() {
            0.0
        } else {
            self.success_count() as f64 / self.results.len() as f64
        }
    }

    /// All attacked inputs with their true labels; provenance, the success
    /// mask and source indices are stored in the metadata.
    pub fn to_dataset(&self) -> Result<LabeledDataset> {
        let inputs = self.results.iter().map(|r| r.x_adv.clone()).collect();
        let mut ds = LabeledDataset::new(inputs, self.labels.clone(), self.domain, self.spec.tag())?;
        let mask: String = self.results.iter().map(|r| if r.success { '1' } else { '0' }).collect();
        let sources: Vec<String> = self.source_indices.iter().map(|i| i.to_string()).collect();
        ds.metadata.insert("attack".into(), self.spec.to_string());
        ds.metadata.insert("seed".into(), self.spec.config.seed.to_string());
        ds.metadata.insert("success".into(), mask);
        ds.metadata.insert("source_indices".into(), sources.join(","));
        Ok(ds)
    }
}

/// Keeps the samples whose recorded attack succeeded; datasets without a
/// success mask are returned whole.
pub fn successful_subset(ds: &LabeledDataset) -> Result<LabeledDataset> {
    let Some(mask) = ds.metadata.get("success") else {
        return Ok(ds.clone());
    };
    if mask.len() != ds.len() {
        return Err(Error::invalid(format!(
            "success mask covers {} of {} samples",
            mask.len(),
            ds.len()
        )));
    }
    let keep: Vec<usize> = mask.bytes().enumerate().filter(|(_, b)| *b == b'1').map(|(i, _)| i).collect();
    let mut out = ds.subset(&keep);
    out.metadata.remove("success");
    out.metadata.remove("source_indices");
    Ok(out)
}

impl Norm {
    /// Budget used for this geometry when only the ℓ∞ budget is known.
    pub fn scaled_budget(self, linf_epsilon: f64) -> f64 {
        match self {
            Norm::Linf => linf_epsilon,
            Norm::L2 => 10.0 * linf_epsilon,
        }
    }
}
