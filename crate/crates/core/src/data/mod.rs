//! Labelled datasets, non-i.i.d. partitioning, and client views.

mod idx;
mod partition;
mod synth;

pub use idx::{encode_idx_images, encode_idx_labels, load_idx, parse_idx};
pub use partition::{
    dirichlet_partition, holdout_then_partition, load_partition, save_partition, split_client,
    ClientDataset, ClientRole, Partition, PARTITION_FORMAT_VERSION,
};
pub use synth::synth_shifted;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Features `[num_samples × feature_dim]` with integer class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        let (rows, cols) = features.dims2()?;
        if cols == 0 {
            return Err(Error::shape("feature_dim must be positive"));
        }
        if rows != labels.len() {
            return Err(Error::format(
                "labels",
                format!("{} labels for {rows} samples", labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Index(format!(
                "label {bad} >= num_classes {num_classes}"
            )));
        }
        let mut seen = vec![false; num_classes];
        labels.iter().for_each(|&y| seen[y] = true);
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::format(
                "labels",
                format!("class {missing} of {num_classes} never occurs"),
            ));
        }
        Ok(Dataset {
            features,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.shape()[1]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Feature rows and labels for a subset of samples.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let x = self.features.select_rows(idx)?;
        let y = idx.iter().map(|&i| self.labels[i]).collect();
        Ok((x, y))
    }

    /// Indices of each class, in ascending order.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            out[y].push(i);
        }
        out
    }
}
