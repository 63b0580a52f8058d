//! Synthetic datasets: Gaussian blobs and i.i.d. noise images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{LabeledDataset, OOD_LABEL};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Gaussian clusters inside the unit cube.
#[derive(Debug, Clone, PartialEq)]
pub struct BlobSpec {
    pub classes: usize,
    pub dim: usize,
    /// Minimum distance between cluster centers, in units of `spread`.
    pub separation: f64,
    /// Per-coordinate standard deviation of every cluster.
    pub spread: f64,
    pub seed: u64,
}

impl BlobSpec {
    pub fn new(classes: usize, dim: usize, separation: f64, seed: u64) -> Self {
        Self {
            classes,
            dim,
            separation,
            spread: 0.05,
            seed,
        }
    }

    /// Cluster centers drawn in `[0.25, 0.75]^dim` by rejection sampling.
    pub fn centers(&self) -> Result<Vec<Vec<f64>>> {
        if self.classes == 0 || self.dim == 0 {
            return Err(Error::invalid("blobs need at least one class and one dimension"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let min_dist = self.separation * self.spread;
        let mut centers: Vec<Vec<f64>> = Vec::with_capacity(self.classes);
        let mut attempts = 0usize;
        while centers.len() < self.classes {
            attempts += 1;
            if attempts > 100_000 {
                return Err(Error::invalid(format!(
                    "cannot place {} centers {} apart in {} dimensions",
                    self.classes, min_dist, self.dim
                )));
            }
            let c: Vec<f64> = (0..self.dim).map(|_| rng.random_range(0.25..0.75)).collect();
            let far = centers.iter().all(|o| {
                o.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() >= min_dist
            });
            if far {
                centers.push(c);
            }
        }
        Ok(centers)
    }

    /// `n` samples with labels cycling through the classes; `sample_seed`
    /// selects the draw while the centers stay fixed.
    pub fn sample(&self, n: usize, sample_seed: u64) -> Result<LabeledDataset> {
        let centers = self.centers()?;
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        let mut inputs = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = i % self.classes;
            let x: Vec<f64> = centers[class]
                .iter()
                .map(|&c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    (c + self.spread * z).clamp(0.0, 1.0)
                })
                .collect();
            inputs.push(Tensor::from_vec(x));
            labels.push(class as i64);
        }
        LabeledDataset::new(inputs, labels, (0.0, 1.0), "blobs")
    }
}

/// `n` samples from `classes` Gaussian clusters in `dim` dimensions whose
/// centers are at least `separation` cluster standard deviations apart.
pub fn gen_blobs(n: usize, classes: usize, dim: usize, separation: f64, seed: u64) -> Result<LabeledDataset> {
    BlobSpec::new(classes, dim, separation, seed).sample(n, seed.wrapping_add(1))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    /// Each value i.i.d. uniform over the domain.
    Uniform,
    /// Each value i.i.d. normal with unit variance (scaled to the domain
    /// width) centered at `mean` (as a fraction of the domain), then clipped.
    Gaussian { mean: f64 },
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    /// `uniform`, `gaussian` (mean 0.5) or `gaussian:<mean>`.
    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "uniform" => Ok(NoiseKind::Uniform),
            None if s == "gaussian" => Ok(NoiseKind::Gaussian { mean: 0.5 }),
            Some(("gaussian", m)) => m
                .parse()
                .map(|mean| NoiseKind::Gaussian { mean })
                .map_err(|_| Error::invalid(format!("bad gaussian mean `{m}`"))),
            _ => Err(Error::invalid(format!("unknown noise kind `{s}`"))),
        }
    }
}

/// Noise images over `[0, 1]`, labelled as out-of-distribution.
pub fn gen_noise_ood(shape: &[usize], n: usize, kind: NoiseKind, seed: u64) -> Result<LabeledDataset> {
    gen_noise_ood_in(shape, n, kind, seed, (0.0, 1.0))
}

pub fn gen_noise_ood_in(
    shape: &[usize],
    n: usize,
    kind: NoiseKind,
    seed: u64,
    domain: (f64, f64),
) -> Result<LabeledDataset> {
    let (lo, hi) = domain;
    let width = hi - lo;
    let len: usize = shape.iter().product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut inputs = Vec::with_capacity(n);
    for _ in 0..n {
        let data: Vec<f64> = match kind {
            NoiseKind::Uniform => (0..len).map(|_| rng.random_range(lo..=hi)).collect(),
            NoiseKind::Gaussian { mean } => {
                let normal = Normal::new(lo + mean * width, width).map_err(|e| Error::invalid(e.to_string()))?;
                (0..len).map(|_| normal.sample(&mut rng).clamp(lo, hi)).collect()
            }
        };
        inputs.push(Tensor::new(shape.to_vec(), data)?);
    }
    let tag = match kind {
        NoiseKind::Uniform => "uniform-noise",
        NoiseKind::Gaussian { .. } => "gaussian-noise",
    };
    LabeledDataset::new(inputs, vec![OOD_LABEL; n], domain, tag)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_deterministic_and_separated() {
        let a = gen_blobs(40, 4, 3, 6.0, 9).unwrap();
        let b = gen_blobs(40, 4, 3, 6.0, 9).unwrap();
        assert_eq!(a, b);
        let centers = BlobSpec::new(4, 3, 6.0, 9).centers().unwrap();
        for i in 0..4 {
            for j in i + 1..4 {
                let d: f64 = centers[i].iter().zip(&centers[j]).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                assert!(d >= 6.0 * 0.05);
            }
        }
        assert!(gen_blobs(0, 3, 2, 2.0, 1).unwrap().is_empty());
    }

    #[test]
    fn uniform_noise_statistics() {
        let ds = gen_noise_ood(&[1000], 1000, NoiseKind::Uniform, 5).unwrap();
        let values: Vec<f64> = ds.inputs.iter().flat_map(|t| t.data().to_vec()).collect();
        assert_eq!(values.len(), 1_000_000);
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        assert!((0.49..=0.51).contains(&mean), "{mean}");
        assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
        assert!(ds.labels.iter().all(|&l| l == OOD_LABEL));
    }

    #[test]
    fn gaussian_noise_is_clipped_and_seeded() {
        let a = gen_noise_ood(&[1, 4, 4], 50, NoiseKind::Gaussian { mean: 0.5 }, 3).unwrap();
        let b = gen_noise_ood(&[1, 4, 4], 50, NoiseKind::Gaussian { mean: 0.5 }, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.inputs.iter().all(|t| t.data().iter().all(|v| (0.0..=1.0).contains(v))));
        assert_eq!("gaussian:0".parse::<NoiseKind>().unwrap(), NoiseKind::Gaussian { mean: 0.0 });
    }
}
