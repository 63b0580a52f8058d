//! Ten-dimensional statistical summaries of a CSM.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::saliency::CosineSimilarityMatrix;

/// Mean, max, min, population standard deviation and energy (mean of
/// squares) of a set of similarities.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SetStats {
    pub mean: f64,
    pub max: f64,
    pub min: f64,
    pub std: f64,
    pub energy: f64,
}

impl SetStats {
    /// Statistics of `values`; all zero for an empty set.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self::default();
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            std: var.sqrt(),
            energy: values.iter().map(|v| v * v).sum::<f64>() / n,
        }
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.mean, self.max, self.min, self.std, self.energy]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GgaFeatureVector {
    /// Similarities among classes other than the predicted one.
    pub s1: SetStats,
    /// Similarities between the predicted class and every other class.
    pub s2: SetStats,
    pub predicted_class: usize,
    /// Set when S1 or S2 is empty or some saliency map vanished.
    pub degenerate: bool,
    /// Softmax probability of the predicted class.
    pub confidence: f64,
}

pub const FEATURE_NAMES: [&str; 10] = ["f1", "f2", "f3", "f4", "f5", "f6", "f7", "f8", "f9", "f10"];

impl GgaFeatureVector {
    pub fn to_array(&self) -> [f64; 10] {
        let mut out = [0.0; 10];
        out[..5].copy_from_slice(&self.s1.to_array());
        out[5..].copy_from_slice(&self.s2.to_array());
        out
    }

    /// Detector input: the ten statistics, optionally followed by the
    /// predicted-class probability.
    pub fn to_vec(&self, with_softmax: bool) -> Vec<f64> {
        let mut v = self.to_array().to_vec();
        if with_softmax {
            v.push(self.confidence);
        }
        v
    }
}

/// Strict upper triangle split into S1 (pairs avoiding the predicted class)
/// and S2 (pairs involving it), in row-major order.
pub fn split_sets(csm: &CosineSimilarityMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let m = csm.size();
    if m < 2 {
        return Err(Error::invalid("a CSM needs at least two classes"));
    }
    let k = csm.predicted_index();
    let mut s1 = Vec::with_capacity((m - 1) * (m - 2) / 2);
    let mut s2 = Vec::with_capacity(m - 1);
    for i in 0..m {
        for j in i + 1..m {
            if i == k || j == k {
                s2.push(csm.get(i, j));
            } else {
                s1.push(csm.get(i, j));
            }
        }
    }
    Ok((s1, s2))
}

pub fn features(csm: &CosineSimilarityMatrix) -> Result<GgaFeatureVector> {
    let (s1, s2) = split_sets(csm)?;
    Ok(GgaFeatureVector {
        s1: SetStats::of(&s1),
        s2: SetStats::of(&s2),
        predicted_class: csm.predicted_class(),
        degenerate: s1.is_empty() || s2.is_empty() || csm.is_degenerate(),
        confidence: csm.probabilities()[csm.predicted_index()],
    })
}

/// Mean of S1, the quantity raised by the adaptive attack.
pub fn mean_s1(csm: &CosineSimilarityMatrix) -> Result<f64> {
    Ok(SetStats::of(&split_sets(csm)?.0).mean)
}

/// One line of a feature export.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub features: GgaFeatureVector,
    pub label: i64,
    pub source_tag: String,
}

/// CSV with header `f1..f10,predicted_class,label,source_tag`.
pub fn write_features_csv<W: Write>(mut out: W, rows: &[FeatureRow]) -> Result<()> {
    writeln!(out, "{},predicted_class,label,source_tag", FEATURE_NAMES.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.features.to_array().iter().map(|v| v.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{}",
            cells.join(","),
            row.features.predicted_class,
            row.label,
            row.source_tag
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::saliency::SaliencyMap;
    use crate::tensor::Tensor;

    fn csm_of(maps: &[Vec<f64>], predicted: usize) -> CosineSimilarityMatrix {
        let maps: Vec<SaliencyMap> = maps
            .iter()
            .enumerate()
            .map(|(i, v)| SaliencyMap {
                class_index: i,
                values: Tensor::from_vec(v.clone()),
            })
            .collect();
        let probs = vec![1.0 / maps.len() as f64; maps.len()];
        CosineSimilarityMatrix::from_maps(&maps, predicted, probs).unwrap()
    }

    #[test]
    fn stats_examples() {
        let s = SetStats::of(&[0.5, 0.5, 0.5]);
        assert_eq!(s.to_array(), [0.5, 0.5, 0.5, 0.0, 0.25]);
        let s = SetStats::of(&[1.0, -1.0]);
        assert_eq!(s.to_array(), [0.0, 1.0, -1.0, 1.0, 1.0]);
        assert_eq!(SetStats::of(&[]).to_array(), [0.0; 5]);
    }

    #[test]
    fn split_three_classes() {
        let m = csm_of(&[vec![1.0, 1.0], vec![1.0, -1.0], vec![-1.0, -1.0]], 0);
        let (s1, s2) = split_sets(&m).unwrap();
        assert_eq!(s2, vec![m.get(0, 1), m.get(0, 2)]);
        assert_eq!(s1, vec![m.get(1, 2)]);
    }

    #[test]
    fn binary_csm_has_empty_s1() {
        let m = csm_of(&[vec![1.0], vec![-1.0]], 1);
        let (s1, s2) = split_sets(&m).unwrap();
        assert!(s1.is_empty());
        assert_eq!(s2.len(), 1);
        let f = features(&m).unwrap();
        assert!(f.degenerate);
        assert_eq!(f.s1.to_array(), [0.0; 5]);
    }

    #[test]
    fn all_ones_matrix() {
        let m = csm_of(&vec![vec![1.0, -1.0, 1.0]; 4], 2);
        let f = features(&m).unwrap();
        assert_eq!(f.s1.to_array(), [1.0, 1.0, 1.0, 0.0, 1.0]);
        assert_eq!(f.s2.to_array(), [1.0, 1.0, 1.0, 0.0, 1.0]);
        assert!(!f.degenerate);
    }

    #[test]
    fn csv_header() {
        let m = csm_of(&vec![vec![1.0]; 3], 0);
        let rows = vec![FeatureRow {
            features: features(&m).unwrap(),
            label: -1,
            source_tag: "ood".into(),
        }];
        let mut buf = Vec::new();
        write_features_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("f1,f2,f3,f4,f5,f6,f7,f8,f9,f10,predicted_class,label,source_tag\n"));
        assert!(text.trim_end().ends_with(",0,-1,ood"));
    }
}
