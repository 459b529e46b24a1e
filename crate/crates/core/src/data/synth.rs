//! Gaussian-blob classification data with one center per class.

use rand::Rng;

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{gaussian_vec, Purpose, RngStream};
use crate::tensor::Tensor;

/// Unit-variance Gaussian blobs around per-class centers.
///
/// In two or more dimensions the centers sit on a circle of radius
/// `class_center_spread` in the first two axes, evenly spaced from a random
/// starting angle; any further axes get centers drawn from
/// `N(0, (spread/2)²)`. In one dimension centers are evenly spaced `spread`
/// apart. A spread of zero puts every center at the origin.
pub fn synth_shifted(
    num_classes: usize,
    samples_per_class: usize,
    feature_dim: usize,
    class_center_spread: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes == 0 || samples_per_class == 0 || feature_dim == 0 {
        return Err(Error::Config(
            "synthetic dataset counts must be positive".into(),
        ));
    }
    if !(class_center_spread.is_finite() && class_center_spread >= 0.0) {
        return Err(Error::Config(
            "class_center_spread must be finite and >= 0".into(),
        ));
    }
    let mut centers_rng = RngStream::labelled(seed, 0, 0, Purpose::Synth, 0).generator();
    let phase = centers_rng.random::<f64>() * std::f64::consts::TAU;
    let extra = gaussian_vec(
        &mut centers_rng,
        num_classes * feature_dim.saturating_sub(2),
    );

    let centers: Vec<Vec<f64>> = (0..num_classes)
        .map(|c| {
            if feature_dim == 1 {
                return vec![class_center_spread * (c as f64 - (num_classes as f64 - 1.0) / 2.0)];
            }
            let angle = phase + std::f64::consts::TAU * c as f64 / num_classes as f64;
            let mut v = vec![
                class_center_spread * angle.cos(),
                class_center_spread * angle.sin(),
            ];
            let tail = feature_dim - 2;
            v.extend(
                extra[c * tail..(c + 1) * tail]
                    .iter()
                    .map(|z| z * class_center_spread / 2.0),
            );
            v
        })
        .collect();

    let mut noise_rng = RngStream::labelled(seed, 0, 0, Purpose::Synth, 1).generator();
    let n = num_classes * samples_per_class;
    let noise = gaussian_vec(&mut noise_rng, n * feature_dim);
    let mut data = Vec::with_capacity(n * feature_dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % num_classes;
        labels.push(c);
        let z = &noise[i * feature_dim..(i + 1) * feature_dim];
        data.extend(centers[c].iter().zip(z).map(|(m, e)| m + e));
    }
    Dataset::new(
        Tensor::new(vec![n, feature_dim], data)?,
        labels,
        num_classes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = synth_shifted(3, 20, 4, 2.0, 9).unwrap();
        let b = synth_shifted(3, 20, 4, 2.0, 9).unwrap();
        assert_eq!(a, b);
        let c = synth_shifted(3, 20, 4, 2.0, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn balanced_classes() {
        let d = synth_shifted(4, 25, 2, 3.0, 1).unwrap();
        assert_eq!(d.len(), 100);
        assert!(d.class_indices().iter().all(|c| c.len() == 25));
    }

    #[test]
    fn rejects_zero_counts() {
        assert!(synth_shifted(0, 1, 1, 1.0, 0).is_err());
        assert!(synth_shifted(1, 0, 1, 1.0, 0).is_err());
        assert!(synth_shifted(1, 1, 0, 1.0, 0).is_err());
    }
}
