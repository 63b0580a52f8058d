//! Desk-scale reference architectures.

use serde::{Deserialize, Serialize};

use super::layer::Layer;
use super::model::Model;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Architecture {
    /// Fully connected network with rectifier activations between layers.
    Mlp { hidden: Vec<usize> },
    /// Two strided convolutions (5×5 then 3×3) followed by two dense layers.
    Cnn {
        conv_channels: [usize; 2],
        hidden: usize,
    },
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::Cnn {
            conv_channels: [16, 32],
            hidden: 100,
        }
    }
}

impl Architecture {
    pub fn layers(&self, input_shape: &[usize], num_classes: usize) -> Result<Vec<Layer>> {
        let mut layers = Vec::new();
        match self {
            Architecture::Mlp { hidden } => {
                let mut width: usize = input_shape.iter().product();
                if input_shape.len() > 1 {
                    layers.push(Layer::Flatten);
                }
                for &h in hidden {
                    layers.push(Layer::Dense { inputs: width, outputs: h });
                    layers.push(Layer::Rectifier);
                    width = h;
                }
                layers.push(Layer::Dense {
                    inputs: width,
                    outputs: num_classes,
                });
            }
            Architecture::Cnn { conv_channels, hidden } => {
                if input_shape.len() != 3 {
                    return Err(Error::invalid(format!(
                        "cnn expects [channels, height, width] inputs, got {input_shape:?}"
                    )));
                }
                let conv1 = Layer::Conv2d {
                    in_channels: input_shape[0],
                    out_channels: conv_channels[0],
                    kernel: 5,
                    stride: 2,
                    padding: 2,
                };
                let conv2 = Layer::Conv2d {
                    in_channels: conv_channels[0],
                    out_channels: conv_channels[1],
                    kernel: 3,
                    stride: 2,
                    padding: 1,
                };
                let s1 = conv1
                    .output_shape(input_shape)
                    .ok_or_else(|| Error::invalid("input too small for cnn"))?;
                let s2 = conv2
                    .output_shape(&s1)
                    .ok_or_else(|| Error::invalid("input too small for cnn"))?;
                layers.extend([
                    conv1,
                    Layer::Rectifier,
                    conv2,
                    Layer::Rectifier,
                    Layer::Flatten,
                    Layer::Dense {
                        inputs: s2.iter().product(),
                        outputs: *hidden,
                    },
                    Layer::Rectifier,
                    Layer::Dense {
                        inputs: *hidden,
                        outputs: num_classes,
                    },
                ]);
            }
        }
        Ok(layers)
    }

    pub fn build(&self, input_shape: &[usize], num_classes: usize, seed: u64) -> Result<Model> {
        Model::new(input_shape.to_vec(), self.layers(input_shape, num_classes)?, num_classes, seed)
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    /// `cnn`, `cnn:16,32,100`, `mlp:64,64`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let nums = || -> Result<Vec<usize>> {
            rest.split(',')
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.trim()
                        .parse()
                        .map_err(|_| Error::invalid(format!("bad layer width `{t}`")))
                })
                .collect()
        };
        match kind {
            "mlp" => Ok(Architecture::Mlp { hidden: nums()? }),
            "cnn" => {
                let v = nums()?;
                match v.as_slice() {
                    [] => Ok(Architecture::default()),
                    [a, b, h] => Ok(Architecture::Cnn {
                        conv_channels: [*a, *b],
                        hidden: *h,
                    }),
                    _ => Err(Error::invalid("cnn takes three widths: conv1,conv2,hidden")),
                }
            }
            other => Err(Error::invalid(format!("unknown architecture `{other}`"))),
        }
    }
}
