//! LODA: an ensemble of one-dimensional histograms over sparse random
//! projections, scored by negative mean log density.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::container::{Container, Kind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LodaConfig {
    /// Number of random projections.
    pub projections: usize,
    pub bins: usize,
    /// Z-score features with training statistics before projecting.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for LodaConfig {
    fn default() -> Self {
        Self {
            projections: 100,
            bins: 100,
            standardize: true,
            seed: 0,
        }
    }
}

/// Equal-width histogram over `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    lo: f64,
    hi: f64,
    counts: Vec<u64>,
    total: u64,
}

impl Histogram {
    /// Histogram of `values` over their range widened by 5% on each side
    /// (±0.5 when all values coincide).
    pub fn fit(values: &[f64], bins: usize) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let margin = if max > min { 0.05 * (max - min) } else { 0.5 };
        let mut h = Self {
            lo: min - margin,
            hi: max + margin,
            counts: vec![0; bins],
            total: 0,
        };
        for &v in values {
            h.add(v);
        }
        h
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn bin_width(&self) -> f64 {
        (self.hi - self.lo) / self.counts.len() as f64
    }

    /// Bin holding `v`, `None` outside `[lo, hi]`.
    pub fn bin(&self, v: f64) -> Option<usize> {
        if !(v >= self.lo && v <= self.hi) {
            return None;
        }
        let b = ((v - self.lo) / self.bin_width()).floor() as usize;
        Some(b.min(self.counts.len() - 1))
    }

    /// Records `v` if it falls inside the range.
    pub fn add(&mut self, v: f64) {
        if let Some(b) = self.bin(v) {
            self.counts[b] += 1;
            self.total += 1;
        }
    }

    /// Laplace-smoothed density; out-of-range values see an empty bin.
    pub fn density(&self, v: f64) -> f64 {
        let count = self.bin(v).map_or(0, |b| self.counts[b]);
        (count as f64 + 1.0) / ((self.total + self.counts.len() as u64) as f64 * self.bin_width())
    }
}

/// Sparse projection vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Projection {
    pub fn apply(&self, z: &[f64]) -> f64 {
        self.indices.iter().zip(&self.weights).map(|(&i, &w)| w * z[i]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LodaDetector {
    config: LodaConfig,
    mean: Vec<f64>,
    scale: Vec<f64>,
    projections: Vec<Projection>,
    histograms: Vec<Histogram>,
    threshold: Option<f64>,
    /// Free-form settings stored alongside the detector.
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct DetectorHeader {
    config: LodaConfig,
    dim: usize,
    nonzeros: usize,
    counts_total: Vec<u64>,
    has_threshold: bool,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

/// Non-zero entries per projection for `dim` features.
pub fn nonzeros_for(dim: usize) -> usize {
    (dim as f64).sqrt().ceil() as usize
}

impl LodaDetector {
    /// Fits projections and histograms to training feature vectors.
    pub fn fit(features: &[Vec<f64>], config: &LodaConfig) -> Result<Self> {
        if features.len() < 2 {
            return Err(Error::Empty("LODA needs at least two training vectors".into()));
        }
        if config.projections == 0 || config.bins == 0 {
            return Err(Error::invalid("projections and bins must be positive"));
        }
        let dim = features[0].len();
        if dim == 0 || features.iter().any(|f| f.len() != dim) {
            return Err(Error::Shape("feature vectors must share a positive length".into()));
        }
        if features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training features".into()));
        }
        let n = features.len() as f64;
        let (mean, scale) = if config.standardize {
            let mean: Vec<f64> = (0..dim).map(|j| features.iter().map(|f| f[j]).sum::<f64>() / n).collect();
            let scale = (0..dim)
                .map(|j| {
                    let var = features.iter().map(|f| (f[j] - mean[j]).powi(2)).sum::<f64>() / n;
                    if var > 0.0 {
                        var.sqrt()
                    } else {
                        1.0
                    }
                })
                .collect();
            (mean, scale)
        } else {
            (vec![0.0; dim], vec![1.0; dim])
        };

        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let nnz = nonzeros_for(dim);
        let projections: Vec<Projection> = (0..config.projections)
            .map(|_| {
                let mut indices = rand::seq::index::sample(&mut rng, dim, nnz).into_vec();
                indices.sort_unstable();
                let weights = (0..nnz).map(|_| StandardNormal.sample(&mut rng)).collect();
                Projection { indices, weights }
            })
            .collect();

        let mut det = Self {
            config: config.clone(),
            mean,
            scale,
            projections,
            histograms: Vec::new(),
            threshold: None,
            metadata: BTreeMap::new(),
        };
        let zs: Vec<Vec<f64>> = features.iter().map(|f| det.standardized(f)).collect();
        det.histograms = det
            .projections
            .iter()
            .map(|p| {
                let values: Vec<f64> = zs.iter().map(|z| p.apply(z)).collect();
                Histogram::fit(&values, config.bins)
            })
            .collect();
        Ok(det)
    }

    fn standardized(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn config(&self) -> &LodaConfig {
        &self.config
    }

    pub fn projections(&self) -> &[Projection] {
        &self.projections
    }

    pub fn histograms(&self) -> &[Histogram] {
        &self.histograms
    }

    pub fn histograms_mut(&mut self) -> &mut [Histogram] {
        &mut self.histograms
    }

    pub fn threshold(&self) -> Option<f64> {
        self.threshold
    }

    pub fn set_threshold(&mut self, threshold: f64) {
        self.threshold = Some(threshold);
    }

    /// Value of `f` along every projection, after standardization.
    pub fn projected(&self, f: &[f64]) -> Result<Vec<f64>> {
        if f.len() != self.dim() {
            return Err(Error::Shape(format!("expected {} features, got {}", self.dim(), f.len())));
        }
        let z = self.standardized(f);
        Ok(self.projections.iter().map(|p| p.apply(&z)).collect())
    }

    /// Anomaly score; higher is more anomalous.
    pub fn score(&self, f: &[f64]) -> Result<f64> {
        let sum: f64 = self
            .projected(f)?
            .into_iter()
            .zip(&self.histograms)
            .map(|(v, h)| h.density(v).ln())
            .sum();
        Ok(-sum / self.projections.len() as f64)
    }

    pub fn score_batch(&self, features: &[Vec<f64>]) -> Result<Vec<f64>> {
        features.iter().map(|f| self.score(f)).collect()
    }

    /// Sets the threshold from clean scores and returns it.
    pub fn calibrate(&mut self, clean_scores: &[f64], tpr: f64) -> Result<f64> {
        let t = calibrate(clean_scores, tpr)?;
        self.threshold = Some(t);
        Ok(t)
    }

    /// Whether `score` exceeds the calibrated threshold.
    pub fn is_flagged(&self, score: f64) -> Result<bool> {
        self.threshold
            .map(|t| score > t)
            .ok_or_else(|| Error::invalid("detector has no calibrated threshold"))
    }

    pub fn to_container(&self) -> Result<Container> {
        let k = self.projections.len();
        let nnz = nonzeros_for(self.dim());
        let header = DetectorHeader {
            config: self.config.clone(),
            dim: self.dim(),
            nonzeros: nnz,
            counts_total: self.histograms.iter().map(|h| h.total).collect(),
            has_threshold: self.threshold.is_some(),
            metadata: self.metadata.clone(),
        };
        let mut c = Container::new(Kind::Detector, serde_json::to_value(header)?);
        c.push("mean", Tensor::from_vec(self.mean.clone()));
        c.push("scale", Tensor::from_vec(self.scale.clone()));
        let idx = self.projections.iter().flat_map(|p| p.indices.iter().map(|&i| i as f64)).collect();
        c.push("indices", Tensor::new(vec![k, nnz], idx)?);
        let w = self.projections.iter().flat_map(|p| p.weights.iter().copied()).collect();
        c.push("weights", Tensor::new(vec![k, nnz], w)?);
        let bounds = self.histograms.iter().flat_map(|h| [h.lo, h.hi]).collect();
        c.push("bounds", Tensor::new(vec![k, 2], bounds)?);
        let counts = self
            .histograms
            .iter()
            .flat_map(|h| h.counts.iter().map(|&n| n as f64))
            .collect();
        c.push("counts", Tensor::new(vec![k, self.config.bins], counts)?);
        c.push("threshold", Tensor::from_vec(self.threshold.into_iter().collect()));
        Ok(c)
    }

    pub fn from_container(c: Container) -> Result<Self> {
        c.expect_kind(Kind::Detector)?;
        let header: DetectorHeader = serde_json::from_value(c.header.clone())?;
        let metadata = header.metadata.clone();
        let k = header.config.projections;
        let bins = header.config.bins;
        let get = |name: &str, shape: &[usize]| -> Result<Vec<f64>> {
            let t = c
                .tensor(name)
                .ok_or_else(|| Error::format(0, format!("detector lacks `{name}`")))?;
            if t.shape() != shape {
                return Err(Error::format(0, format!("detector tensor `{name}` has shape {:?}", t.shape())));
            }
            Ok(t.data().to_vec())
        };
        let nnz = header.nonzeros;
        let mean = get("mean", &[header.dim])?;
        let scale = get("scale", &[header.dim])?;
        let indices = get("indices", &[k, nnz])?;
        let weights = get("weights", &[k, nnz])?;
        let bounds = get("bounds", &[k, 2])?;
        let counts = get("counts", &[k, bins])?;
        let threshold = get("threshold", &[usize::from(header.has_threshold)])?;
        if header.counts_total.len() != k {
            return Err(Error::format(0, "histogram totals do not match projection count"));
        }
        let projections = (0..k)
            .map(|p| Projection {
                indices: indices[p * nnz..(p + 1) * nnz].iter().map(|&i| i as usize).collect(),
                weights: weights[p * nnz..(p + 1) * nnz].to_vec(),
            })
            .collect();
        let histograms = (0..k)
            .map(|p| Histogram {
                lo: bounds[2 * p],
                hi: bounds[2 * p + 1],
                counts: counts[p * bins..(p + 1) * bins].iter().map(|&n| n as u64).collect(),
                total: header.counts_total[p],
            })
            .collect();
        Ok(Self {
            config: header.config,
            mean,
            scale,
            projections,
            histograms,
            threshold: threshold.first().copied(),
            metadata,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.write_file(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(Container::read_file(path)?)
    }
}

/// The ⌈tpr·n⌉-th smallest clean score: flagging scores above it keeps at
/// least a `tpr` fraction of the clean set.
pub fn calibrate(clean_scores: &[f64], tpr: f64) -> Result<f64> {
    if clean_scores.is_empty() {
        return Err(Error::Empty("calibration scores".into()));
    }
    if !(tpr > 0.0 && tpr <= 1.0) {
        return Err(Error::invalid(format!("tpr must lie in (0, 1], got {tpr}")));
    }
    if clean_scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("calibration scores".into()));
    }
    let mut sorted = clean_scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = ((tpr * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    Ok(sorted[rank - 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(projections: usize, bins: usize) -> LodaConfig {
        LodaConfig {
            projections,
            bins,
            standardize: true,
            seed: 11,
        }
    }

    #[test]
    fn calibration_examples() {
        let scores: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(calibrate(&scores, 0.95).unwrap(), 95.0);
        assert_eq!(calibrate(&scores, 0.999_999).unwrap(), 100.0);
        assert_eq!(calibrate(&[2.5; 7], 0.95).unwrap(), 2.5);
        assert!(calibrate(&[], 0.95).is_err());
    }

    #[test]
    fn identical_points_fit() {
        let data = vec![vec![0.3; 10]; 20];
        let det = LodaDetector::fit(&data, &cfg(5, 10)).unwrap();
        for h in det.histograms() {
            assert_eq!(h.counts().iter().filter(|&&c| c > 0).count(), 1);
            assert_eq!(h.counts().iter().sum::<u64>(), h.total());
        }
        assert!(det.score(&[1e6; 10]).unwrap().is_finite());
    }

    #[test]
    fn projections_are_sparse() {
        let data: Vec<Vec<f64>> = (0..30).map(|i| (0..10).map(|j| (i * j) as f64).collect()).collect();
        let det = LodaDetector::fit(&data, &cfg(50, 20)).unwrap();
        assert!(det.projections().iter().all(|p| p.indices.len() == 4));
        assert_eq!(det, LodaDetector::fit(&data, &cfg(50, 20)).unwrap());
    }

    #[test]
    fn outlier_scores_higher() {
        let data: Vec<Vec<f64>> = (0..200).map(|i| vec![(i % 10) as f64 * 0.01, 0.0]).collect();
        let det = LodaDetector::fit(&data, &cfg(10, 10)).unwrap();
        let inside = det.score(&[0.05, 0.0]).unwrap();
        let outside = det.score(&[100.0, 0.0]).unwrap();
        assert!(inside < outside);
    }

    #[test]
    fn single_bin_is_flat() {
        let data: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64]).collect();
        let det = LodaDetector::fit(&data, &cfg(1, 1)).unwrap();
        let a = det.score(&[3.0]).unwrap();
        let b = det.score(&[40.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn container_round_trip() {
        let data: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64).sin(), (i as f64).cos(), 0.1]).collect();
        let mut det = LodaDetector::fit(&data, &cfg(7, 9)).unwrap();
        det.calibrate(&det.score_batch(&data).unwrap(), 0.95).unwrap();
        det.metadata.insert("top_n".into(), "5".into());
        let bytes = det.to_container().unwrap().to_bytes().unwrap();
        let back = LodaDetector::from_container(Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, det);
    }
}
