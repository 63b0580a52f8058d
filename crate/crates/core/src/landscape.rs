//! Loss-landscape probes: the ζ criterion under Gaussian neighbours and the
//! mean-S1 surface over an attack direction and an orthogonal one.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::mean_s1;
use crate::nn::{LossKind, Model};
use crate::par;
use crate::saliency::{csm, CsmOptions};
use crate::tensor::{dot, norm, Tensor};

/// Cosine between `-grad` (taken at `x_tilde`) and `x - x_tilde`.
pub fn zeta_from_gradient(grad: &[f64], x: &[f64], x_tilde: &[f64]) -> Result<f64> {
    let disp: Vec<f64> = x.iter().zip(x_tilde).map(|(a, b)| a - b).collect();
    let (gn, dn) = (norm(grad), norm(&disp));
    if dn == 0.0 {
        return Err(Error::Undefined("zero displacement".into()));
    }
    if gn == 0.0 {
        return Err(Error::Undefined("zero gradient".into()));
    }
    Ok((-dot(grad, &disp) / (gn * dn)).clamp(-1.0, 1.0))
}

/// ζ for the loss of `class` at the neighbour `x_tilde` of `x`.
pub fn zeta(model: &Model, x: &Tensor, x_tilde: &Tensor, class: usize, kind: LossKind) -> Result<f64> {
    x.check_same_shape(x_tilde)?;
    let g = model.input_gradient(x_tilde, class, kind)?;
    zeta_from_gradient(g.data(), x.data(), x_tilde.data())
}

/// Which class the loss in ζ refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZetaClass {
    Predicted,
    True,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaSample {
    pub sigma: f64,
    pub values: Vec<f64>,
    /// Draws dropped because ζ was undefined.
    pub undefined: usize,
    /// Whether `x` itself is correctly classified.
    pub correct: bool,
    pub class: usize,
}

impl ZetaSample {
    pub fn median(&self) -> f64 {
        quantile(&self.values, 0.5)
    }
}

/// Linearly interpolated quantile; NaN for an empty slice.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// `n` neighbours `x + σ·η` with standard normal `η`.
fn neighbours(x: &[f64], sigma: f64, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            x.iter()
                .map(|v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v + sigma * z
                })
                .collect()
        })
        .collect()
}

fn collect(values: Vec<Result<f64>>) -> Result<(Vec<f64>, usize)> {
    let mut kept = Vec::with_capacity(values.len());
    let mut undefined = 0;
    for v in values {
        match v {
            Ok(z) => kept.push(z),
            Err(Error::Undefined(_)) => undefined += 1,
            Err(e) => return Err(e),
        }
    }
    if kept.is_empty() {
        return Err(Error::Undefined("every neighbour gave an undefined ζ".into()));
    }
    Ok((kept, undefined))
}

/// ζ over Gaussian neighbours of `x` for a function given by its gradient.
pub fn zeta_stats_fn(
    grad: impl Fn(&[f64]) -> Vec<f64> + Sync + Send,
    x: &[f64],
    sigma: f64,
    n: usize,
    seed: u64,
) -> Result<(Vec<f64>, usize)> {
    if !(sigma > 0.0) || n == 0 {
        return Err(Error::invalid("sigma must be positive and n at least 1"));
    }
    let pts = neighbours(x, sigma, n, seed);
    collect(par::map(&pts, |_, p| zeta_from_gradient(&grad(p), x, p)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZetaOptions {
    pub sigma: f64,
    pub injections: usize,
    pub class: ZetaClass,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for ZetaOptions {
    fn default() -> Self {
        Self {
            sigma: 0.01,
            injections: 1000,
            class: ZetaClass::Predicted,
            loss: LossKind::Sce,
            seed: 0,
        }
    }
}

/// Default noise levels of the ζ sweep.
pub const DEFAULT_SIGMAS: [f64; 5] = [0.01, 0.05, 0.1, 0.5, 1.0];

/// ζ statistics of a labelled sample under Gaussian noise injection.
pub fn zeta_stats(model: &Model, x: &Tensor, y_true: usize, opts: &ZetaOptions) -> Result<ZetaSample> {
    if !(opts.sigma > 0.0) || opts.injections == 0 {
        return Err(Error::invalid("sigma must be positive and injections at least 1"));
    }
    let predicted = model.predict(x)?;
    let class = match opts.class {
        ZetaClass::Predicted => predicted,
        ZetaClass::True => y_true,
    };
    let pts: Vec<Tensor> = neighbours(x.data(), opts.sigma, opts.injections, opts.seed)
        .into_iter()
        .map(|p| Tensor::new(x.shape().to_vec(), p))
        .collect::<Result<_>>()?;
    let chunks: Vec<&[Tensor]> = pts.chunks(64).collect();
    let grads = par::try_map(&chunks, |_, chunk| {
        model.batch_input_gradients(chunk, &vec![class; chunk.len()], opts.loss)
    })?;
    let values = grads
        .into_iter()
        .flatten()
        .zip(&pts)
        .map(|(g, p)| zeta_from_gradient(g.data(), x.data(), p.data()))
        .collect();
    let (values, undefined) = collect(values)?;
    Ok(ZetaSample {
        sigma: opts.sigma,
        values,
        undefined,
        correct: predicted == y_true,
        class,
    })
}

/// `⟨(∇f(x + r·e) − ∇f(x)) / r, e⟩`, which tends to `eᵀ H e` as `r → 0`.
pub fn directional_curvature(grad: impl Fn(&[f64]) -> Vec<f64>, x: &[f64], e: &[f64], r: f64) -> f64 {
    let shifted: Vec<f64> = x.iter().zip(e).map(|(a, b)| a + r * b).collect();
    let (g1, g0) = (grad(&shifted), grad(x));
    g1.iter().zip(&g0).zip(e).map(|((a, b), e)| (a - b) / r * e).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGrid {
    pub eps1_axis: Vec<f64>,
    pub eps2_axis: Vec<f64>,
    /// `z[i][j]` is mean(S1) at `eps1_axis[i]`, `eps2_axis[j]`.
    pub z: Vec<Vec<f64>>,
    pub predicted_class: Vec<Vec<usize>>,
    pub degenerate: Vec<Vec<bool>>,
    pub gamma: Vec<f64>,
    pub gamma_perp: Vec<f64>,
}

/// Unit vector along `gamma` and a seeded unit vector orthogonal to it.
pub fn orthonormal_pair(gamma: &[f64], seed: u64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = norm(gamma);
    if n == 0.0 || gamma.len() < 2 {
        return Err(Error::invalid("direction must be non-zero with at least two entries"));
    }
    let g: Vec<f64> = gamma.iter().map(|v| v / n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let mut p: Vec<f64> = (0..g.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        // Two Gram-Schmidt passes keep the residual overlap at rounding level.
        for _ in 0..2 {
            let c = dot(&p, &g);
            p.iter_mut().zip(&g).for_each(|(p, g)| *p -= c * g);
        }
        let pn = norm(&p);
        if pn > 1e-8 {
            return Ok((g, p.into_iter().map(|v| v / pn).collect()));
        }
    }
}

/// `n` evenly spaced points over `[-extent, extent]`.
pub fn symmetric_axis(extent: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n).map(|i| -extent + 2.0 * extent * i as f64 / (n - 1) as f64).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceOptions {
    /// Grid points are clipped to this range.
    pub domain: (f64, f64),
    pub csm: CsmOptions,
    /// Seed of the orthogonal direction.
    pub seed: u64,
}

impl Default for SurfaceOptions {
    fn default() -> Self {
        Self {
            domain: (0.0, 1.0),
            csm: CsmOptions::default(),
            seed: 0,
        }
    }
}

/// mean(S1) and the prediction at `clip(x + ε₁·γ + ε₂·γ⊥)` over a grid.
pub fn csm_surface(
    model: &Model,
    x: &Tensor,
    gamma: &Tensor,
    eps1_axis: &[f64],
    eps2_axis: &[f64],
    opts: &SurfaceOptions,
) -> Result<SurfaceGrid> {
    x.check_same_shape(gamma)?;
    let (g, gp) = orthonormal_pair(gamma.data(), opts.seed)?;
    let (lo, hi) = opts.domain;
    let points: Vec<(f64, f64)> = eps1_axis
        .iter()
        .flat_map(|&a| eps2_axis.iter().map(move |&b| (a, b)))
        .collect();
    let cells = par::try_map(&points, |_, &(a, b)| -> Result<(f64, usize, bool)> {
        let data = x
            .data()
            .iter()
            .zip(g.iter().zip(&gp))
            .map(|(v, (u, w))| (v + a * u + b * w).clamp(lo, hi))
            .collect();
        let m = csm(model, &Tensor::new(x.shape().to_vec(), data)?, &opts.csm)?;
        Ok((mean_s1(&m)?, m.predicted_class(), m.is_degenerate()))
    })?;
    let mut grid = SurfaceGrid {
        eps1_axis: eps1_axis.to_vec(),
        eps2_axis: eps2_axis.to_vec(),
        z: Vec::new(),
        predicted_class: Vec::new(),
        degenerate: Vec::new(),
        gamma: g,
        gamma_perp: gp,
    };
    if !eps2_axis.is_empty() {
        for row in cells.chunks(eps2_axis.len()) {
            grid.z.push(row.iter().map(|c| c.0).collect());
            grid.predicted_class.push(row.iter().map(|c| c.1).collect());
            grid.degenerate.push(row.iter().map(|c| c.2).collect());
        }
    }
    Ok(grid)
}

impl SurfaceGrid {
    /// CSV with columns `eps1,eps2,mean_s1,predicted_class`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "eps1,eps2,mean_s1,predicted_class")?;
        for (i, a) in self.eps1_axis.iter().enumerate() {
            for (j, b) in self.eps2_axis.iter().enumerate() {
                writeln!(out, "{a},{b},{},{}", self.z[i][j], self.predicted_class[i][j])?;
            }
        }
        Ok(())
    }
}

/// One row of a ζ export.
#[derive(Debug, Clone, PartialEq)]
pub struct ZetaRow {
    pub sample: usize,
    pub stats: ZetaSample,
}

/// CSV with quantiles of ζ per sample and noise level.
pub fn write_zeta_csv<W: Write>(mut out: W, rows: &[ZetaRow]) -> Result<()> {
    writeln!(out, "sample,sigma,class,correct,n,undefined,min,q05,q25,median,q75,q95,max")?;
    for r in rows {
        let v = &r.stats.values;
        let q: Vec<String> = [0.0, 0.05, 0.25, 0.5, 0.75, 0.95, 1.0]
            .iter()
            .map(|&p| quantile(v, p).to_string())
            .collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.sample,
            r.stats.sigma,
            r.stats.class,
            r.stats.correct,
            v.len(),
            r.stats.undefined,
            q.join(",")
        )?;
    }
    Ok(())
}
