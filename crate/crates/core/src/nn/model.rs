use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layer::{Cache, Layer, Mode, NormStats};
use super::loss::{loss_and_grad, softmax, LossKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Activation family of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationMode {
    Rectifier,
    Softplus,
}

impl std::str::FromStr for ActivationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rectifier" | "relu" => Ok(ActivationMode::Rectifier),
            "softplus" => Ok(ActivationMode::Softplus),
            other => Err(Error::invalid(format!("unknown activation mode `{other}`"))),
        }
    }
}

/// Default softplus sharpness used when swapping rectifiers.
pub const DEFAULT_SOFTPLUS_BETA: f64 = 10.0;

/// A feed-forward classifier: an ordered layer stack plus named parameters.
///
/// Parameters are keyed `"{layer_index}.{suffix}"`, e.g. `"0.weight"`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    params: BTreeMap<String, Tensor>,
    num_classes: usize,
    activation_mode: ActivationMode,
}

/// Gradients of a scalar loss with respect to the trainable parameters.
pub type Gradients = BTreeMap<String, Tensor>;

/// Recorded forward pass.
pub(crate) struct Trace {
    caches: Vec<Cache>,
    pub(crate) logits: Tensor,
    pub(crate) norm_stats: Vec<(usize, NormStats)>,
}

pub(crate) fn param_key(layer: usize, suffix: &str) -> String {
    format!("{layer}.{suffix}")
}

fn activation_mode_of(layers: &[Layer], fallback: ActivationMode) -> ActivationMode {
    if layers.iter().any(|l| matches!(l, Layer::Softplus { .. })) {
        ActivationMode::Softplus
    } else if layers.iter().any(|l| matches!(l, Layer::Rectifier)) {
        ActivationMode::Rectifier
    } else {
        fallback
    }
}

impl Model {
    /// Builds a model with seeded fan-in-scaled uniform initialization:
    /// weights and biases are drawn from `U(-1/√fan_in, 1/√fan_in)`.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>, num_classes: usize, seed: u64) -> Result<Self> {
        Self::infer_shapes(&input_shape, &layers, num_classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        for (idx, layer) in layers.iter().enumerate() {
            let bound = 1.0 / (layer.fan_in() as f64).sqrt();
            for spec in layer.param_specs() {
                let numel: usize = spec.shape.iter().product();
                let data: Vec<f64> = match spec.suffix {
                    "weight" | "bias" => (0..numel).map(|_| rng.random_range(-bound..bound)).collect(),
                    "gamma" | "running_var" => vec![1.0; numel],
                    _ => vec![0.0; numel],
                };
                params.insert(param_key(idx, spec.suffix), Tensor::new(spec.shape, data)?);
            }
        }
        let activation_mode = activation_mode_of(&layers, ActivationMode::Rectifier);
        Ok(Self {
            input_shape,
            layers,
            params,
            num_classes,
            activation_mode,
        })
    }

    /// Assembles a model from explicit parameters, validating every shape.
    pub fn from_parts(
        input_shape: Vec<usize>,
        layers: Vec<Layer>,
        params: BTreeMap<String, Tensor>,
        num_classes: usize,
        activation_mode: ActivationMode,
    ) -> Result<Self> {
        Self::infer_shapes(&input_shape, &layers, num_classes)?;
        let mut expected = 0;
        for (idx, layer) in layers.iter().enumerate() {
            for spec in layer.param_specs() {
                let key = param_key(idx, spec.suffix);
                let tensor = params
                    .get(&key)
                    .ok_or_else(|| Error::invalid(format!("missing parameter `{key}`")))?;
                if tensor.shape() != spec.shape.as_slice() {
                    return Err(Error::ShapeMismatch {
                        layer: idx,
                        kind: format!("{} parameter {}", layer.name(), spec.suffix),
                        expected: spec.shape,
                        got: tensor.shape().to_vec(),
                    });
                }
                expected += 1;
            }
        }
        if expected != params.len() {
            return Err(Error::invalid("unexpected extra parameters"));
        }
        let activation_mode = activation_mode_of(&layers, activation_mode);
        Ok(Self {
            input_shape,
            layers,
            params,
            num_classes,
            activation_mode,
        })
    }

    /// Per-sample input shape of every layer, followed by the output shape.
    fn infer_shapes(input_shape: &[usize], layers: &[Layer], num_classes: usize) -> Result<Vec<Vec<usize>>> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(Error::invalid(format!("invalid input shape {input_shape:?}")));
        }
        let mut shapes = vec![input_shape.to_vec()];
        for (idx, layer) in layers.iter().enumerate() {
            let current = shapes.last().unwrap();
            let next = layer.output_shape(current).ok_or_else(|| Error::ShapeMismatch {
                layer: idx,
                kind: layer.name().to_string(),
                expected: vec![],
                got: current.clone(),
            })?;
            shapes.push(next);
        }
        let last = shapes.last().unwrap();
        if last != &[num_classes] {
            return Err(Error::ShapeMismatch {
                layer: layers.len(),
                kind: "logits".into(),
                expected: vec![num_classes],
                got: last.clone(),
            });
        }
        Ok(shapes)
    }

    fn shapes(&self) -> Vec<Vec<usize>> {
        Self::infer_shapes(&self.input_shape, &self.layers, self.num_classes)
            .expect("model shapes validated at construction")
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    /// Mutable access to a parameter's values (its shape is fixed).
    pub fn param_values_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.params.get_mut(name).map(|t| t.data_mut())
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn activation_mode(&self) -> ActivationMode {
        self.activation_mode
    }

    /// Names of parameters updated by training.
    pub fn trainable_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (idx, layer) in self.layers.iter().enumerate() {
            for spec in layer.param_specs() {
                if spec.trainable {
                    names.push(param_key(idx, spec.suffix));
                }
            }
        }
        names
    }

    fn layer_params(&self, idx: usize) -> Vec<&Tensor> {
        self.layers[idx]
            .param_specs()
            .iter()
            .map(|spec| &self.params[&param_key(idx, spec.suffix)])
            .collect()
    }

    fn check_input(&self, got: &[usize]) -> Result<()> {
        if got != self.input_shape.as_slice() {
            return Err(Error::ShapeMismatch {
                layer: 0,
                kind: self
                    .layers
                    .first()
                    .map(|l| l.name().to_string())
                    .unwrap_or_else(|| "input".into()),
                expected: self.input_shape.clone(),
                got: got.to_vec(),
            });
        }
        Ok(())
    }

    /// Logits for a single input of shape `input_shape`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x.shape())?;
        let batch = x.clone().reshape(&self.batch_shape(1))?;
        let logits = self.trace(&batch, Mode::Inference)?.logits;
        logits.reshape(&[self.num_classes])
    }

    /// Logits for a batch of shape `[n, ...input_shape]`, returned as `[n, C]`.
    pub fn forward_batch(&self, xs: &Tensor) -> Result<Tensor> {
        Ok(self.trace(xs, Mode::Inference)?.logits)
    }

    pub fn predict(&self, x: &Tensor) -> Result<usize> {
        Ok(self.forward(x)?.argmax())
    }

    pub fn probabilities(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(softmax(self.forward(x)?.data()))
    }

    fn batch_shape(&self, n: usize) -> Vec<usize> {
        let mut shape = vec![n];
        shape.extend_from_slice(&self.input_shape);
        shape
    }

    pub(crate) fn trace(&self, xs: &Tensor, mode: Mode) -> Result<Trace> {
        if xs.shape().is_empty() {
            return Err(Error::Shape("batch tensor needs a leading axis".into()));
        }
        self.check_input(&xs.shape()[1..])?;
        let shapes = self.shapes();
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut norm_stats = Vec::new();
        let mut current = xs.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            let params = self.layer_params(idx);
            let (out, cache, stats) = layer.forward(&params, &current, &shapes[idx], &shapes[idx + 1], mode);
            if let Some(stats) = stats {
                norm_stats.push((idx, stats));
            }
            caches.push(cache);
            current = out;
        }
        Ok(Trace {
            caches,
            logits: current,
            norm_stats,
        })
    }

    /// Back-propagates `grad_logits` (`[m, C]`) through a recorded trace.
    pub(crate) fn backward(&self, trace: &Trace, grad_logits: Tensor, with_params: bool) -> (Tensor, Option<Gradients>) {
        let shapes = self.shapes();
        let mut grads = with_params.then(BTreeMap::new);
        let mut current = grad_logits;
        for idx in (0..self.layers.len()).rev() {
            let layer = &self.layers[idx];
            let params = self.layer_params(idx);
            let specs = layer.param_specs();
            let mut local: Vec<Tensor> = specs.iter().map(|s| Tensor::zeros(&s.shape)).collect();
            let want = with_params && !specs.is_empty();
            current = layer.backward(
                &params,
                &trace.caches[idx],
                &shapes[idx],
                &shapes[idx + 1],
                &current,
                want.then_some(local.as_mut_slice()),
            );
            if let Some(g) = grads.as_mut() {
                for (spec, t) in specs.into_iter().zip(local) {
                    if spec.trainable {
                        g.insert(param_key(idx, spec.suffix), t);
                    }
                }
            }
        }
        (current, grads)
    }

    /// Gradient of `loss(F(x), class)` with respect to the input `x`.
    pub fn input_gradient(&self, x: &Tensor, class: usize, kind: LossKind) -> Result<Tensor> {
        let (_, mut grads) = self.input_gradients(x, &[class], kind)?;
        Ok(grads.pop().expect("one class requested"))
    }

    /// Input gradients for several classes sharing one forward pass. Returns
    /// the logits and one gradient per requested class.
    pub fn input_gradients(&self, x: &Tensor, classes: &[usize], kind: LossKind) -> Result<(Vec<f64>, Vec<Tensor>)> {
        self.check_input(x.shape())?;
        let batch = x.clone().reshape(&self.batch_shape(1))?;
        let trace = self.trace(&batch, Mode::Inference)?;
        let logits = trace.logits.data().to_vec();
        if classes.is_empty() {
            return Ok((logits, Vec::new()));
        }
        let c = self.num_classes;
        let mut cotangents = Vec::with_capacity(classes.len() * c);
        for &class in classes {
            let (_, g) = loss_and_grad(&logits, class, kind)?;
            cotangents.extend(g);
        }
        let cot = Tensor::new(vec![classes.len(), c], cotangents)?;
        let (dx, _) = self.backward(&trace, cot, false);
        let grads = dx
            .unstack()
            .into_iter()
            .map(|g| g.reshape(&self.input_shape))
            .collect::<Result<Vec<_>>>()?;
        Ok((logits, grads))
    }

    /// Input gradients of `loss(F(xs[r]), classes[r])`, one per input, from a
    /// single batched pass.
    pub fn batch_input_gradients(&self, xs: &[Tensor], classes: &[usize], kind: LossKind) -> Result<Vec<Tensor>> {
        if xs.len() != classes.len() {
            return Err(Error::Shape(format!("{} inputs but {} classes", xs.len(), classes.len())));
        }
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        let trace = self.trace(&Tensor::stack(xs)?, Mode::Inference)?;
        let c = self.num_classes;
        let mut cot = Vec::with_capacity(xs.len() * c);
        for (row, &class) in trace.logits.data().chunks(c).zip(classes) {
            cot.extend(loss_and_grad(row, class, kind)?.1);
        }
        let (dx, _) = self.backward(&trace, Tensor::new(vec![xs.len(), c], cot)?, false);
        dx.unstack().into_iter().map(|g| g.reshape(&self.input_shape)).collect()
    }

    /// Mean loss over a batch and its gradients with respect to the trainable
    /// parameters, using running statistics for batchnorm.
    pub fn loss_gradients(&self, xs: &Tensor, labels: &[usize], kind: LossKind) -> Result<(f64, Gradients)> {
        self.batch_loss_gradients(xs, labels, kind, Mode::InferenceWithCache)
            .map(|(loss, grads, _)| (loss, grads))
    }

    pub(crate) fn batch_loss_gradients(
        &self,
        xs: &Tensor,
        labels: &[usize],
        kind: LossKind,
        mode: Mode,
    ) -> Result<(f64, Gradients, Trace)> {
        let trace = self.trace(xs, mode)?;
        let n = labels.len();
        if xs.shape()[0] != n || n == 0 {
            return Err(Error::Shape(format!("{} inputs but {} labels", xs.shape()[0], n)));
        }
        let c = self.num_classes;
        let mut total = 0.0;
        let mut cot = Vec::with_capacity(n * c);
        for (row, &label) in trace.logits.data().chunks(c).zip(labels) {
            let (l, g) = loss_and_grad(row, label, kind)?;
            total += l;
            cot.extend(g.into_iter().map(|v| v / n as f64));
        }
        let (_, grads) = self.backward(&trace, Tensor::new(vec![n, c], cot)?, true);
        Ok((total / n as f64, grads.expect("requested parameter gradients"), trace))
    }

    /// Replaces every rectifier with `softplus(beta)` (or every softplus with a
    /// rectifier). Parameters are copied unchanged.
    pub fn swap_activations(&self, mode: ActivationMode, beta: f64) -> Model {
        let layers = self
            .layers
            .iter()
            .map(|layer| match (mode, layer) {
                (ActivationMode::Softplus, Layer::Rectifier) => Layer::Softplus { beta },
                (ActivationMode::Rectifier, Layer::Softplus { .. }) => Layer::Rectifier,
                _ => layer.clone(),
            })
            .collect::<Vec<_>>();
        Model {
            input_shape: self.input_shape.clone(),
            activation_mode: activation_mode_of(&layers, mode),
            layers,
            params: self.params.clone(),
            num_classes: self.num_classes,
        }
    }

    pub(crate) fn params_mut(&mut self) -> &mut BTreeMap<String, Tensor> {
        &mut self.params
    }
}
