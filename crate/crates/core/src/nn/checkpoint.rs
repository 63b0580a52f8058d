//! Model checkpoints in the shared container format.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layer::Layer;
use super::model::{ActivationMode, Model};
use crate::container::{Container, Kind};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    num_classes: usize,
    activation_mode: ActivationMode,
}

impl Model {
    pub fn to_container(&self) -> Result<Container> {
        let header = ModelHeader {
            input_shape: self.input_shape().to_vec(),
            layers: self.layers().to_vec(),
            num_classes: self.num_classes(),
            activation_mode: self.activation_mode(),
        };
        let mut c = Container::new(Kind::Model, serde_json::to_value(header)?);
        for (name, t) in self.params() {
            c.push(name.clone(), t.clone());
        }
        Ok(c)
    }

    pub fn from_container(c: Container) -> Result<Self> {
        c.expect_kind(Kind::Model)?;
        let header: ModelHeader = serde_json::from_value(c.header)?;
        let params: BTreeMap<String, Tensor> = c.tensors.into_iter().collect();
        Model::from_parts(
            header.input_shape,
            header.layers,
            params,
            header.num_classes,
            header.activation_mode,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.write_file(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(Container::read_file(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Architecture;

    #[test]
    fn round_trip_is_bit_exact() {
        let model = Architecture::default().build(&[1, 8, 8], 4, 7).unwrap();
        let bytes = model.to_container().unwrap().to_bytes().unwrap();
        let back = Model::from_container(Container::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, model);
        let x = Tensor::full(&[1, 8, 8], 0.3);
        let a = model.forward(&x).unwrap();
        let b = back.forward(&x).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn wrong_kind_is_rejected() {
        let c = Container::new(Kind::Detector, serde_json::json!({}));
        assert!(Model::from_container(c).is_err());
    }
}
