//! Label-addressed random streams.
//!
//! A stream is identified by the global seed plus a [`StreamLabel`]. The pair
//! is packed directly into a ChaCha20 key, so two streams share no state and
//! any stream can be regenerated from its label alone. This is what lets
//! clients run in any order, or concurrently, with identical results.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::tensor::Tensor;

/// What a stream is used for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum Purpose {
    Init = 1,
    Noise = 2,
    Batch = 3,
    Partition = 4,
    Split = 5,
    Synth = 6,
    Holdout = 7,
    Adapt = 8,
    Test = 9,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct StreamLabel {
    pub client: u64,
    pub round: u64,
    pub purpose: Purpose,
    /// Sub-index within a purpose (local iteration, retry count, ...).
    pub step: u32,
}

impl StreamLabel {
    pub fn new(client: u64, round: u64, purpose: Purpose, step: u32) -> Self {
        StreamLabel {
            client,
            round,
            purpose,
            step,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub label: StreamLabel,
}

impl RngStream {
    pub fn new(seed: u64, label: StreamLabel) -> Self {
        RngStream { seed, label }
    }

    pub fn labelled(seed: u64, client: u64, round: u64, purpose: Purpose, step: u32) -> Self {
        RngStream::new(seed, StreamLabel::new(client, round, purpose, step))
    }

    /// Same seed, different step.
    pub fn with_step(self, step: u32) -> Self {
        RngStream {
            label: StreamLabel { step, ..self.label },
            ..self
        }
    }

    /// A fresh generator positioned at the start of this stream.
    pub fn generator(&self) -> ChaCha20Rng {
        let mut key = [0u8; 32];
        let tag = ((self.label.purpose as u64) << 32) | u64::from(self.label.step);
        for (i, word) in [self.seed, self.label.client, self.label.round, tag]
            .into_iter()
            .enumerate()
        {
            key[i * 8..(i + 1) * 8].copy_from_slice(&word.to_le_bytes());
        }
        ChaCha20Rng::from_seed(key)
    }

    /// `shape.product()` i.i.d. standard normal draws.
    pub fn gaussian(&self, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        let mut rng = self.generator();
        let data = gaussian_vec(&mut rng, n);
        Tensor::new(shape.to_vec(), data).expect("length matches shape")
    }

    /// One standard-normal draw per row, repeated across `cols`.
    pub fn gaussian_per_row(&self, rows: usize, cols: usize) -> Tensor {
        let mut rng = self.generator();
        let z = gaussian_vec(&mut rng, rows);
        let data = z
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, cols))
            .collect();
        Tensor::new(vec![rows, cols], data).expect("length matches shape")
    }
}

/// Box–Muller pairs from `rng`.
pub fn gaussian_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(n + 1);
    while out.len() < n {
        // (0, 1] keeps ln finite
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        out.push(r * theta.cos());
        out.push(r * theta.sin());
    }
    out.truncate(n);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(step: u32) -> RngStream {
        RngStream::labelled(42, 3, 7, Purpose::Noise, step)
    }

    #[test]
    fn same_label_same_draws() {
        assert_eq!(stream(0).gaussian(&[5, 3]), stream(0).gaussian(&[5, 3]));
    }

    #[test]
    fn distinct_labels_differ() {
        assert_ne!(stream(0).gaussian(&[8]), stream(1).gaussian(&[8]));
        let other_client = RngStream::labelled(42, 4, 7, Purpose::Noise, 0);
        assert_ne!(stream(0).gaussian(&[8]), other_client.gaussian(&[8]));
        let other_seed = RngStream::labelled(43, 3, 7, Purpose::Noise, 0);
        assert_ne!(stream(0).gaussian(&[8]), other_seed.gaussian(&[8]));
    }

    #[test]
    fn moments_of_many_draws() {
        let z = stream(0).gaussian(&[100_000]);
        let n = z.len() as f64;
        let mean = z.data().iter().sum::<f64>() / n;
        let var = z.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn odd_lengths_are_prefixes() {
        let a = stream(2).gaussian(&[7]);
        let b = stream(2).gaussian(&[8]);
        assert_eq!(a.data(), &b.data()[..7]);
    }

    #[test]
    fn per_row_draw_is_constant_across_columns() {
        let z = stream(0).gaussian_per_row(4, 3);
        for i in 0..4 {
            let r = z.row(i);
            assert!(r.iter().all(|&v| v == r[0]));
        }
    }
}
