//! Browser demo: a small classifier trained on 2-D Gaussian blobs, with
//! the cosine-similarity matrix, a mean-S1 map of the input plane and ζ
//! histograms available at any point.

use gga_core::data::BlobSpec;
use gga_core::features::mean_s1;
use gga_core::landscape::{zeta_stats, ZetaClass, ZetaOptions};
use gga_core::nn::{accuracy, train, Architecture, LossKind, Model, TrainConfig};
use gga_core::saliency::{csm, CsmOptions};
use gga_core::Tensor;
use wasm_bindgen::prelude::*;

fn js(e: gga_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    model: Model,
    points: Vec<f64>,
    labels: Vec<u32>,
    accuracy: f64,
}

#[wasm_bindgen]
impl Demo {
    /// Samples 80 points per class and trains a two-layer MLP.
    #[wasm_bindgen(constructor)]
    pub fn new(classes: usize, seed: u64, epochs: usize) -> Result<Demo, JsError> {
        Self::build(classes, seed, epochs).map_err(js)
    }

    pub fn accuracy(&self) -> f64 {
        self.accuracy
    }

    /// Training points as interleaved `x, y` pairs.
    pub fn points(&self) -> Vec<f64> {
        self.points.clone()
    }

    pub fn labels(&self) -> Vec<u32> {
        self.labels.clone()
    }

    pub fn classes(&self) -> usize {
        self.model.num_classes()
    }

    pub fn predict(&self, x: f64, y: f64) -> Result<usize, JsError> {
        self.model.predict(&point(x, y)).map_err(js)
    }

    /// Row-major matrix ordered by descending probability, followed by the
    /// class id of each row.
    #[wasm_bindgen(js_name = csmAt)]
    pub fn csm_at(&self, x: f64, y: f64) -> Result<Vec<f64>, JsError> {
        let m = csm(&self.model, &point(x, y), &CsmOptions::default()).map_err(js)?;
        let mut out = m.entries().to_vec();
        out.extend(m.class_ids().iter().map(|&c| c as f64));
        Ok(out)
    }

    /// Mean of S1 on a `res`×`res` grid over the unit square, rows from
    /// y = 0 upwards; NaN where the matrix is degenerate.
    #[wasm_bindgen(js_name = meanS1Map)]
    pub fn mean_s1_map(&self, res: usize) -> Result<Vec<f64>, JsError> {
        self.grid(res, |m, p| {
            let c = csm(m, p, &CsmOptions::default())?;
            Ok(if c.is_degenerate() { f64::NAN } else { mean_s1(&c)? })
        })
        .map_err(js)
    }

    /// Predicted class on the same grid as `meanS1Map`.
    #[wasm_bindgen(js_name = classMap)]
    pub fn class_map(&self, res: usize) -> Result<Vec<f64>, JsError> {
        self.grid(res, |m, p| Ok(m.predict(p)? as f64)).map_err(js)
    }

    /// Histogram of ζ over [-1, 1] for Gaussian noise of scale `sigma`
    /// around a point; the last entry counts undefined draws.
    #[wasm_bindgen(js_name = zetaHistogram)]
    pub fn zeta_histogram(&self, x: f64, y: f64, sigma: f64, injections: usize, bins: usize, seed: u64) -> Result<Vec<f64>, JsError> {
        self.zeta(x, y, sigma, injections, bins, seed).map_err(js)
    }
}

impl Demo {
    fn build(classes: usize, seed: u64, epochs: usize) -> gga_core::Result<Demo> {
        let data = BlobSpec::new(classes, 2, 4.0, seed).sample(80 * classes, seed.wrapping_add(1))?;
        let arch = Architecture::Mlp { hidden: vec![32, 32] };
        let model = arch.build(&[2], classes, seed)?;
        let cfg = TrainConfig {
            epochs,
            batch_size: 32,
            seed,
            ..TrainConfig::default()
        };
        let (model, _) = train(&model, &data, &cfg)?;
        Ok(Demo {
            accuracy: accuracy(&model, &data)?,
            points: data.inputs.iter().flat_map(|t| t.data().to_vec()).collect(),
            labels: data.labels.iter().map(|&l| l as u32).collect(),
            model,
        })
    }

    fn grid(&self, res: usize, f: impl Fn(&Model, &Tensor) -> gga_core::Result<f64>) -> gga_core::Result<Vec<f64>> {
        let step = 1.0 / res.max(1) as f64;
        let mut out = Vec::with_capacity(res * res);
        for r in 0..res {
            for c in 0..res {
                out.push(f(&self.model, &point((c as f64 + 0.5) * step, (r as f64 + 0.5) * step))?);
            }
        }
        Ok(out)
    }

    fn zeta(&self, x: f64, y: f64, sigma: f64, injections: usize, bins: usize, seed: u64) -> gga_core::Result<Vec<f64>> {
        let p = point(x, y);
        let label = self.model.predict(&p)?;
        let opts = ZetaOptions {
            sigma,
            injections,
            class: ZetaClass::Predicted,
            loss: LossKind::Sce,
            seed,
        };
        let sample = zeta_stats(&self.model, &p, label, &opts)?;
        let bins = bins.max(1);
        let mut hist = vec![0.0; bins + 1];
        for v in &sample.values {
            let b = (((v + 1.0) / 2.0 * bins as f64) as usize).min(bins - 1);
            hist[b] += 1.0;
        }
        hist[bins] = sample.undefined as f64;
        Ok(hist)
    }
}

fn point(x: f64, y: f64) -> Tensor {
    Tensor::from_vec(vec![x, y])
}
