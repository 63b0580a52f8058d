//! Signed per-class saliency maps and their cosine-similarity matrices.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::nn::{softmax, LossKind, Model};
use crate::par;
use crate::tensor::{sign, Tensor};

/// Elementwise sign of a class-conditional input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub class_index: usize,
    pub values: Tensor,
}

impl SaliencyMap {
    /// Signs `gradient`; `sign(0) = 0`.
    pub fn from_gradient(class_index: usize, gradient: &Tensor) -> Result<Self> {
        if !gradient.is_finite() {
            return Err(Error::NonFinite(format!("gradient of class {class_index}")));
        }
        Ok(Self {
            class_index,
            values: gradient.map(sign),
        })
    }

    /// True when every entry is zero.
    pub fn is_degenerate(&self) -> bool {
        self.values.data().iter().all(|&v| v == 0.0)
    }
}

/// Saliency map of class `class` at `x`.
pub fn saliency(model: &Model, x: &Tensor, class: usize, kind: LossKind) -> Result<SaliencyMap> {
    check_class(model, class)?;
    SaliencyMap::from_gradient(class, &model.input_gradient(x, class, kind)?)
}

fn check_class(model: &Model, class: usize) -> Result<()> {
    if class >= model.num_classes() {
        return Err(Error::ClassOutOfRange {
            index: class,
            classes: model.num_classes(),
        });
    }
    Ok(())
}

/// Cosine similarity of two maps; 0 when either map is all-zero.
pub fn cosine(a: &SaliencyMap, b: &SaliencyMap) -> Result<f64> {
    a.values.check_same_shape(&b.values)?;
    Ok(sign_cosine(a.values.data(), b.values.data()))
}

/// Cosine of two sign vectors computed from integer counts, so that equal
/// inputs give exactly 1 and the result never leaves `[-1, 1]`.
fn sign_cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0i64, 0i64, 0i64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as i64, y as i64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0 || nb == 0 {
        return 0.0;
    }
    (dot as f64 / ((na as f64) * (nb as f64)).sqrt()).clamp(-1.0, 1.0)
}

/// Pairwise cosine similarities between the saliency maps of `class_ids`,
/// ordered by descending softmax probability so that the predicted class
/// comes first.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineSimilarityMatrix {
    size: usize,
    entries: Vec<f64>,
    class_ids: Vec<usize>,
    predicted_index: usize,
    degenerate: Vec<bool>,
    probabilities: Vec<f64>,
}

impl CosineSimilarityMatrix {
    /// Builds the matrix from maps listed in `class_ids` order.
    pub fn from_maps(maps: &[SaliencyMap], predicted_index: usize, probabilities: Vec<f64>) -> Result<Self> {
        let m = maps.len();
        if m == 0 || predicted_index >= m || probabilities.len() != m {
            return Err(Error::invalid("CSM needs maps, matching probabilities and a predicted index"));
        }
        for map in &maps[1..] {
            map.values.check_same_shape(&maps[0].values)?;
        }
        let degenerate: Vec<bool> = maps.iter().map(SaliencyMap::is_degenerate).collect();
        let mut entries = vec![0.0; m * m];
        for i in 0..m {
            entries[i * m + i] = if degenerate[i] { 0.0 } else { 1.0 };
            for j in i + 1..m {
                let c = sign_cosine(maps[i].values.data(), maps[j].values.data());
                entries[i * m + j] = c;
                entries[j * m + i] = c;
            }
        }
        Ok(Self {
            size: m,
            entries,
            class_ids: maps.iter().map(|s| s.class_index).collect(),
            predicted_index,
            degenerate,
            probabilities,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn predicted_index(&self) -> usize {
        self.predicted_index
    }

    pub fn predicted_class(&self) -> usize {
        self.class_ids[self.predicted_index]
    }

    pub fn degenerate_flags(&self) -> &[bool] {
        &self.degenerate
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate.iter().any(|&d| d)
    }

    /// Softmax probabilities of `class_ids`.
    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// Similarity between two class indices, if both are present.
    pub fn get_by_class(&self, a: usize, b: usize) -> Option<f64> {
        let i = self.class_ids.iter().position(|&c| c == a)?;
        let j = self.class_ids.iter().position(|&c| c == b)?;
        Some(self.get(i, j))
    }

    /// `m`, then the class ids, then one line per matrix row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", self.size);
        let ids: Vec<String> = self.class_ids.iter().map(|c| c.to_string()).collect();
        out.push_str(&ids.join(","));
        out.push('\n');
        for row in self.entries.chunks(self.size) {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        out
    }

    /// Binary PGM image, one `cell`×`cell` block per entry; −1 maps to black
    /// and +1 to white.
    pub fn to_pgm(&self, cell: usize) -> Vec<u8> {
        let cell = cell.max(1);
        let side = self.size * cell;
        let mut out = Vec::with_capacity(side * side + 32);
        let mut header = String::new();
        let _ = write!(header, "P5\n{side} {side}\n255\n");
        out.extend_from_slice(header.as_bytes());
        for r in 0..side {
            for c in 0..side {
                let v = self.get(r / cell, c / cell);
                out.push(((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8);
            }
        }
        out
    }
}

/// Settings for building CSMs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CsmOptions {
    /// Restrict to the `n` most probable classes; `None` uses all classes.
    pub top_n: Option<usize>,
    pub loss: LossKind,
}

impl Default for CsmOptions {
    fn default() -> Self {
        Self {
            top_n: None,
            loss: LossKind::Sce,
        }
    }
}

impl CsmOptions {
    pub fn top(n: usize) -> Self {
        Self {
            top_n: Some(n),
            ..Self::default()
        }
    }
}

/// Classes sorted by descending probability, ties by ascending index.
pub fn rank_classes(probabilities: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probabilities.len()).collect();
    order.sort_by(|&a, &b| probabilities[b].total_cmp(&probabilities[a]).then(a.cmp(&b)));
    order
}

/// CSM of `x` over all classes or the top-N classes.
pub fn csm(model: &Model, x: &Tensor, opts: &CsmOptions) -> Result<CosineSimilarityMatrix> {
    let c = model.num_classes();
    let m = opts.top_n.unwrap_or(c);
    if m < 2 || m > c {
        return Err(Error::invalid(format!("top_n must lie in 2..={c}, got {m}")));
    }
    let logits = model.forward(x)?;
    let probs = softmax(logits.data());
    let classes: Vec<usize> = rank_classes(&probs).into_iter().take(m).collect();
    let (_, grads) = model.input_gradients(x, &classes, opts.loss)?;
    let maps = classes
        .iter()
        .zip(&grads)
        .map(|(&class, g)| SaliencyMap::from_gradient(class, g))
        .collect::<Result<Vec<_>>>()?;
    let p = classes.iter().map(|&k| probs[k]).collect();
    CosineSimilarityMatrix::from_maps(&maps, 0, p)
}

/// [`csm`] for every input, in parallel when enabled.
pub fn csm_batch(model: &Model, xs: &[Tensor], opts: &CsmOptions) -> Result<Vec<CosineSimilarityMatrix>> {
    par::try_map(xs, |_, x| csm(model, x, opts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Architecture, Layer};
    use std::collections::BTreeMap;

    fn map(values: Vec<f64>) -> SaliencyMap {
        SaliencyMap {
            class_index: 0,
            values: Tensor::from_vec(values),
        }
    }

    #[test]
    fn signs_gradients() {
        let s = SaliencyMap::from_gradient(2, &Tensor::from_vec(vec![0.3, -0.7, 0.0])).unwrap();
        assert_eq!(s.values.data(), &[1.0, -1.0, 0.0]);
        assert!(SaliencyMap::from_gradient(4, &Tensor::from_vec(vec![f64::NAN]))
            .unwrap_err()
            .to_string()
            .contains("class 4"));
    }

    #[test]
    fn cosine_examples() {
        let a = map(vec![1.0, 1.0, -1.0, -1.0]);
        assert_eq!(cosine(&a, &a).unwrap(), 1.0);
        assert_eq!(cosine(&a, &map(vec![1.0; 4])).unwrap(), 0.0);
        let c = cosine(&map(vec![1.0, -1.0, 1.0]), &map(vec![-1.0, -1.0, 1.0])).unwrap();
        assert!((c - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(cosine(&a, &map(vec![0.0; 4])).unwrap(), 0.0);
        assert!(cosine(&a, &map(vec![1.0])).is_err());
    }

    #[test]
    fn rank_breaks_ties_by_index() {
        assert_eq!(rank_classes(&[0.2, 0.4, 0.4, 0.0]), vec![1, 2, 0, 3]);
    }

    #[test]
    fn constant_model_is_degenerate() {
        let mut params = BTreeMap::new();
        params.insert("0.weight".into(), Tensor::zeros(&[3, 2]));
        params.insert("0.bias".into(), Tensor::zeros(&[3]));
        let model = Model::from_parts(
            vec![2],
            vec![Layer::Dense { inputs: 2, outputs: 3 }],
            params,
            3,
            crate::nn::ActivationMode::Rectifier,
        )
        .unwrap();
        let m = csm(&model, &Tensor::from_vec(vec![0.1, 0.2]), &CsmOptions::default()).unwrap();
        assert!(m.degenerate_flags().iter().all(|&d| d));
        assert!(m.entries().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn exports() {
        let model = Architecture::Mlp { hidden: vec![6] }.build(&[4], 3, 1).unwrap();
        let m = csm(&model, &Tensor::from_vec(vec![0.1, 0.5, 0.2, 0.9]), &CsmOptions::default()).unwrap();
        let csv = m.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[0], "3");
        let pgm = m.to_pgm(2);
        assert!(pgm.starts_with(b"P5\n6 6\n255\n"));
        assert_eq!(pgm.len(), "P5\n6 6\n255\n".len() + 36);
    }
}
