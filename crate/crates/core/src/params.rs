//! Flat parameter vectors and the MLP layout that interprets them.
//!
//! Canonical flattening: layer by layer, weight matrix `[fan_in × fan_out]`
//! row-major, then the `fan_out` biases.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// A named tensor inside a [`FlatParams`] vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatParams {
    pub name: String,
    pub values: Vec<f64>,
    pub manifest: Vec<ManifestEntry>,
}

impl FlatParams {
    pub fn new(
        name: impl Into<String>,
        values: Vec<f64>,
        manifest: Vec<ManifestEntry>,
    ) -> Result<Self> {
        let expected: usize = manifest
            .iter()
            .map(|e| e.shape.iter().product::<usize>())
            .sum();
        if expected != values.len() {
            return Err(Error::shape(format!(
                "manifest describes {expected} values, vector has {}",
                values.len()
            )));
        }
        Ok(FlatParams {
            name: name.into(),
            values,
            manifest,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_layout(&self, other: &FlatParams) -> bool {
        self.name == other.name && self.manifest == other.manifest
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn as_tensor(&self) -> Tensor {
        Tensor::vector(self.values.clone())
    }
}

/// Ordered parameter groups exchanged between server and clients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBundle {
    pub groups: Vec<FlatParams>,
}

impl ParamBundle {
    pub fn new(groups: Vec<FlatParams>) -> Self {
        ParamBundle { groups }
    }

    pub fn group(&self, name: &str) -> Option<&FlatParams> {
        self.groups.iter().find(|g| g.name == name)
    }

    pub fn total_len(&self) -> usize {
        self.groups.iter().map(FlatParams::len).sum()
    }

    pub fn same_layout(&self, other: &ParamBundle) -> bool {
        self.groups.len() == other.groups.len()
            && self
                .groups
                .iter()
                .zip(&other.groups)
                .all(|(a, b)| a.same_layout(b))
    }

    /// In-place `θ -= lr · g` for every group.
    pub fn sgd_step(&mut self, grads: &[Tensor], lr: f64) -> Result<()> {
        if grads.len() != self.groups.len() {
            return Err(Error::shape(
                "gradient count does not match parameter groups",
            ));
        }
        for (g, grad) in self.groups.iter_mut().zip(grads) {
            if grad.len() != g.values.len() {
                return Err(Error::shape(format!(
                    "gradient length mismatch for {}",
                    g.name
                )));
            }
            for (p, d) in g.values.iter_mut().zip(grad.data()) {
                *p -= lr * d;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.groups.iter().all(FlatParams::is_finite)
    }

    pub fn max_abs_diff(&self, other: &ParamBundle) -> f64 {
        self.groups
            .iter()
            .zip(&other.groups)
            .flat_map(|(a, b)| a.values.iter().zip(&b.values).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

/// Fully connected network: `widths[0]` inputs, `widths.last()` outputs.
/// Hidden layers use `activation`, the output layer is linear.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl MlpArch {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!(
                "an MLP needs at least one layer of positive widths, got {widths:?}"
            )));
        }
        Ok(MlpArch { widths, activation })
    }

    pub fn relu(widths: Vec<usize>) -> Result<Self> {
        MlpArch::new(widths, Activation::Relu)
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// `(offset, fan_in, fan_out)` per layer.
    pub fn layers(&self) -> Vec<(usize, usize, usize)> {
        let mut offset = 0;
        self.widths
            .windows(2)
            .map(|w| {
                let layer = (offset, w[0], w[1]);
                offset += w[0] * w[1] + w[1];
                layer
            })
            .collect()
    }

    pub fn total_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        let mut out = Vec::new();
        for (l, (_, fi, fo)) in self.layers().into_iter().enumerate() {
            out.push(ManifestEntry {
                name: format!("layer{l}.weight"),
                shape: vec![fi, fo],
            });
            out.push(ManifestEntry {
                name: format!("layer{l}.bias"),
                shape: vec![fo],
            });
        }
        out
    }

    /// Uniform `±1/√fan_in` weights, zero biases; the output layer is
    /// multiplied by `output_scale`.
    pub fn init(&self, name: &str, rng: &RngStream, output_scale: f64) -> FlatParams {
        let mut gen = rng.generator();
        let mut values = Vec::with_capacity(self.total_params());
        let last = self.num_layers() - 1;
        for (l, (_, fi, fo)) in self.layers().into_iter().enumerate() {
            let bound = 1.0 / (fi as f64).sqrt();
            let scale = if l == last { output_scale } else { 1.0 };
            for _ in 0..fi * fo {
                values.push(gen.random_range(-bound..bound) * scale);
            }
            values.extend(std::iter::repeat_n(0.0, fo));
        }
        FlatParams::new(name, values, self.manifest()).expect("manifest matches layout")
    }

    pub fn zeros(&self, name: &str) -> FlatParams {
        FlatParams::new(name, vec![0.0; self.total_params()], self.manifest())
            .expect("manifest matches layout")
    }

    /// Shared-parameter forward pass; `params` is a flat leaf of length
    /// [`total_params`](Self::total_params) starting at `base`.
    pub fn forward(&self, tape: &mut Tape, x: Var, params: Var, base: usize) -> Result<Var> {
        let (_, cols) = tape.value(x).dims2()?;
        if cols != self.input_dim() {
            return Err(Error::shape(format!(
                "MLP expects {} input features, got {cols}",
                self.input_dim()
            )));
        }
        let last = self.num_layers() - 1;
        let mut h = x;
        for (l, (off, fi, fo)) in self.layers().into_iter().enumerate() {
            let w = tape.slice(params, base + off, &[fi, fo])?;
            let b = tape.slice(params, base + off + fi * fo, &[fo])?;
            let z = tape.matmul(h, w)?;
            h = tape.add_bias(z, b)?;
            if l < last && self.activation == Activation::Relu {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Per-row forward pass where row `b` of `generated [B×total]` holds its
    /// own parameter vector.
    pub fn forward_batched(&self, tape: &mut Tape, x: Var, generated: Var) -> Result<Var> {
        let (_, cols) = tape.value(generated).dims2()?;
        if cols != self.total_params() {
            return Err(Error::shape(format!(
                "generated parameters have {cols} entries, classifier needs {}",
                self.total_params()
            )));
        }
        let last = self.num_layers() - 1;
        let mut h = x;
        for (l, (off, fi, fo)) in self.layers().into_iter().enumerate() {
            h = tape.batched_linear(h, generated, off, fi, fo)?;
            if l < last && self.activation == Activation::Relu {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Purpose;

    #[test]
    fn counts_and_offsets() {
        let a = MlpArch::relu(vec![3, 4, 2]).unwrap();
        assert_eq!(a.total_params(), 3 * 4 + 4 + 4 * 2 + 2);
        assert_eq!(a.layers(), vec![(0, 3, 4), (16, 4, 2)]);
        assert!(MlpArch::relu(vec![3]).is_err());
        assert!(MlpArch::relu(vec![3, 0, 2]).is_err());
    }

    #[test]
    fn init_output_scale_and_zero_bias() {
        let a = MlpArch::relu(vec![2, 3, 2]).unwrap();
        let rng = RngStream::labelled(1, 0, 0, Purpose::Init, 0);
        let p = a.init("c", &rng, 0.0);
        let (off, fi, fo) = a.layers()[1];
        assert!(p.values[off..off + fi * fo + fo].iter().all(|&v| v == 0.0));
        assert!(p.values[..6].iter().any(|&v| v != 0.0));
        assert!(p.values[6..9].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sgd_step_moves_against_gradient() {
        let a = MlpArch::relu(vec![1, 1]).unwrap();
        let mut b = ParamBundle::new(vec![a.zeros("c")]);
        b.sgd_step(&[Tensor::vector(vec![1.0, -2.0])], 0.5).unwrap();
        assert_eq!(b.groups[0].values, vec![-0.5, 1.0]);
        assert!(b.sgd_step(&[Tensor::vector(vec![1.0])], 0.5).is_err());
    }
}
