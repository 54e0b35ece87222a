//! Datasets, vertical partitions, and metrics output.

mod cifar;
mod metrics_csv;
mod partition;
mod synth;

pub use cifar::{
    load_cifar_binary, load_cifar_split, parse_cifar_records, write_cifar_binary, CifarVariant,
};
pub use metrics_csv::{
    read_metrics_csv, write_metrics_csv, write_metrics_to, MetricsRow, METRICS_HEADER,
};
pub use partition::{partition, PartitionScheme, PartitionSpec, Region, VerticalView};
pub use synth::{synth_dataset, synth_with, SynthConfig};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Labelled images `[N, C, H, W]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    images: Tensor<f32>,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::Data(format!(
                "images must be [N, C, H, W], got {:?}",
                images.shape()
            )));
        }
        if images.dim(0) != labels.len() {
            return Err(Error::Data(format!(
                "{} images but {} labels",
                images.dim(0),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Data(format!("label {bad} outside [0, {classes})")));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data("pixel values must lie in [0, 1]".into()));
        }
        Ok(Self {
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// `[C, H, W]` of one image.
    pub fn image_shape(&self) -> [usize; 3] {
        [self.images.dim(1), self.images.dim(2), self.images.dim(3)]
    }

    /// Images at `indices`, stacked in that order.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor<f32>> {
        gather_rows(&self.images, indices)
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Dataset::new(self.gather(indices)?, labels, self.classes)
    }
}

pub(crate) fn gather_rows(t: &Tensor<f32>, indices: &[usize]) -> Result<Tensor<f32>> {
    let n = t.dim(0);
    let item = t.item_len();
    let mut data = Vec::with_capacity(indices.len() * item);
    for &i in indices {
        if i >= n {
            return Err(Error::Data(format!("sample index {i} outside [0, {n})")));
        }
        data.extend_from_slice(&t.data()[i * item..(i + 1) * item]);
    }
    let mut shape = t.shape().to_vec();
    shape[0] = indices.len();
    Tensor::new(shape, data)
}
