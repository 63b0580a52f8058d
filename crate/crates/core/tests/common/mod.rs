#![allow(dead_code)]

pub mod invariants;

use gga_core::nn::{Layer, LossKind, Model};
use gga_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

/// Small dense network `dim → hidden → classes` with the given activation.
pub fn mlp(dim: usize, hidden: usize, classes: usize, smooth: bool, seed: u64) -> Model {
    let act = if smooth { Layer::Softplus { beta: 2.0 } } else { Layer::Rectifier };
    let layers = vec![
        Layer::Dense { inputs: dim, outputs: hidden },
        act,
        Layer::Dense { inputs: hidden, outputs: classes },
    ];
    Model::new(vec![dim], layers, classes, seed).unwrap()
}

/// Random smooth model: dense, convolutional or with batchnorm, depending on `seed`.
pub fn random_smooth_model(seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = rng.random_range(2..6);
    let sp = Layer::Softplus { beta: rng.random_range(1.0..5.0) };
    let mut model = match seed % 3 {
        0 => {
            let dim = rng.random_range(2..8);
            let h = rng.random_range(2..8);
            let layers = vec![
                Layer::Dense { inputs: dim, outputs: h },
                sp.clone(),
                Layer::Dense { inputs: h, outputs: h },
                sp,
                Layer::Dense { inputs: h, outputs: classes },
            ];
            Model::new(vec![dim], layers, classes, seed).unwrap()
        }
        1 => {
            let c = rng.random_range(1..3);
            let side = rng.random_range(5..8);
            let out = rng.random_range(1..4);
            let stride = rng.random_range(1..3);
            let conv = Layer::Conv2d { in_channels: c, out_channels: out, kernel: 3, stride, padding: 1 };
            let o = conv.output_shape(&[c, side, side]).unwrap();
            let layers = vec![
                conv,
                sp,
                Layer::Flatten,
                Layer::Dense { inputs: o.iter().product(), outputs: classes },
            ];
            Model::new(vec![c, side, side], layers, classes, seed).unwrap()
        }
        _ => {
            let dim = rng.random_range(2..6);
            let h = rng.random_range(2..6);
            let layers = vec![
                Layer::Dense { inputs: dim, outputs: h },
                Layer::BatchNorm { channels: h },
                sp,
                Layer::Dense { inputs: h, outputs: classes },
            ];
            let mut m = Model::new(vec![dim], layers, classes, seed).unwrap();
            for (suffix, lo, hi) in [("running_mean", -0.5, 0.5), ("running_var", 0.5, 2.0), ("gamma", 0.5, 1.5), ("beta", -0.5, 0.5)] {
                if let Some(v) = m.param_values_mut(&format!("1.{suffix}")) {
                    v.iter_mut().for_each(|p| *p = rng.random_range(lo..hi));
                }
            }
            m
        }
    };
    // Larger weights make the check less forgiving.
    for name in model.trainable_names() {
        if name.ends_with("weight") {
            model.param_values_mut(&name).unwrap().iter_mut().for_each(|w| *w *= 2.0);
        }
    }
    model
}

pub fn random_input(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn loss_at(model: &Model, x: &Tensor, class: usize, kind: LossKind) -> f64 {
    let logits = model.forward(x).unwrap();
    gga_core::nn::loss(logits.data(), class, kind).unwrap()
}

/// Largest relative error between the analytic input gradient and central differences.
pub fn input_gradient_error(model: &Model, x: &Tensor, class: usize, kind: LossKind) -> f64 {
    let g = model.input_gradient(x, class, kind).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let mut plus = x.clone();
        plus.data_mut()[i] += FD_STEP;
        let mut minus = x.clone();
        minus.data_mut()[i] -= FD_STEP;
        let fd = (loss_at(model, &plus, class, kind) - loss_at(model, &minus, class, kind)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(g.data()[i], fd));
    }
    worst
}

/// Largest relative error between analytic parameter gradients of the mean
/// batch loss and central differences.
pub fn param_gradient_error(model: &Model, xs: &[Tensor], labels: &[usize], kind: LossKind) -> f64 {
    let batch = Tensor::stack(xs).unwrap();
    let (_, grads) = model.loss_gradients(&batch, labels, kind).unwrap();
    let mean_loss = |m: &Model| -> f64 {
        xs.iter().zip(labels).map(|(x, &y)| loss_at(m, x, y, kind)).sum::<f64>() / xs.len() as f64
    };
    let mut worst: f64 = 0.0;
    for (name, g) in &grads {
        for i in 0..g.len() {
            let mut plus = model.clone();
            plus.param_values_mut(name).unwrap()[i] += FD_STEP;
            let mut minus = model.clone();
            minus.param_values_mut(name).unwrap()[i] -= FD_STEP;
            let fd = (mean_loss(&plus) - mean_loss(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(g.data()[i], fd));
        }
    }
    worst
}

/// Worst input and parameter gradient errors over `n` random smooth models.
pub fn gradient_sweep(n: u64) -> (f64, f64) {
    let mut worst = (0.0f64, 0.0f64);
    for seed in 0..n {
        let model = random_smooth_model(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let kind = if seed % 2 == 0 { LossKind::Sce } else { LossKind::Mse };
        let xs: Vec<Tensor> = (0..3).map(|_| random_input(model.input_shape(), &mut rng)).collect();
        let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..model.num_classes())).collect();
        for (x, &y) in xs.iter().zip(&labels) {
            worst.0 = worst.0.max(input_gradient_error(&model, x, y, kind));
        }
        worst.1 = worst.1.max(param_gradient_error(&model, &xs, &labels, kind));
    }
    worst
}
