use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::container::{Container, Kind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pseudo-label carried by out-of-distribution samples.
pub const OOD_LABEL: i64 = -1;

/// Inputs with class labels, a valid value range and a provenance tag.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub inputs: Vec<Tensor>,
    pub labels: Vec<i64>,
    pub domain: (f64, f64),
    pub tag: String,
    /// Free-form provenance (attack spec, seed, ...).
    pub metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    tag: String,
    input_shape: Vec<usize>,
    domain: (f64, f64),
    labels: Vec<i64>,
    metadata: BTreeMap<String, String>,
}

impl LabeledDataset {
    pub fn new(inputs: Vec<Tensor>, labels: Vec<i64>, domain: (f64, f64), tag: impl Into<String>) -> Result<Self> {
        let ds = Self {
            inputs,
            labels,
            domain,
            tag: tag.into(),
            metadata: BTreeMap::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.inputs.len() != self.labels.len() {
            return Err(Error::invalid(format!(
                "{} inputs but {} labels",
                self.inputs.len(),
                self.labels.len()
            )));
        }
        if !(self.domain.0 < self.domain.1) {
            return Err(Error::invalid(format!("empty domain {:?}", self.domain)));
        }
        if let Some(first) = self.inputs.first() {
            for (i, x) in self.inputs.iter().enumerate() {
                if x.shape() != first.shape() {
                    return Err(Error::Shape(format!("sample {i} has shape {:?}", x.shape())));
                }
                if x.data().iter().any(|v| !(self.domain.0..=self.domain.1).contains(v)) {
                    return Err(Error::invalid(format!(
                        "sample {i} leaves the domain {:?}",
                        self.domain
                    )));
                }
            }
        }
        if self.labels.iter().any(|&l| l < OOD_LABEL) {
            return Err(Error::invalid("labels must be class indices or -1"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_shape(&self) -> Option<&[usize]> {
        self.inputs.first().map(|x| x.shape())
    }

    /// Class label of sample `i`, `None` for out-of-distribution samples.
    pub fn label(&self, i: usize) -> Option<usize> {
        usize::try_from(self.labels[i]).ok()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.iter().map(|&l| l + 1).max().unwrap_or(0).max(0) as usize
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            inputs: indices.iter().map(|&i| self.inputs[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            domain: self.domain,
            tag: self.tag.clone(),
            metadata: self.metadata.clone(),
        }
    }

    pub fn take(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.tag = tag.into();
        self
    }

    pub fn clip(&self, x: &Tensor) -> Tensor {
        let (lo, hi) = self.domain;
        x.map(|v| v.clamp(lo, hi))
    }

    pub(crate) fn to_container(&self) -> Result<Container> {
        let shape = self.input_shape().map(|s| s.to_vec()).unwrap_or_default();
        let header = DatasetHeader {
            tag: self.tag.clone(),
            input_shape: shape.clone(),
            domain: self.domain,
            labels: self.labels.clone(),
            metadata: self.metadata.clone(),
        };
        let mut c = Container::new(Kind::Dataset, serde_json::to_value(header)?);
        if !self.inputs.is_empty() {
            c.push("inputs", Tensor::stack(&self.inputs)?);
        }
        Ok(c)
    }

    pub(crate) fn from_container(c: Container) -> Result<Self> {
        c.expect_kind(Kind::Dataset)?;
        let header: DatasetHeader = serde_json::from_value(c.header.clone())?;
        let inputs = match c.tensor("inputs") {
            Some(t) => {
                let items = t.unstack();
                if items.first().map(|x| x.shape()) != Some(header.input_shape.as_slice()) {
                    return Err(Error::format(0, "input tensor does not match header shape"));
                }
                items
            }
            None => Vec::new(),
        };
        let ds = Self {
            inputs,
            labels: header.labels,
            domain: header.domain,
            tag: header.tag,
            metadata: header.metadata,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Writes the dataset container (atomically).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.write_file(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(Container::read_file(path)?)
    }
}
