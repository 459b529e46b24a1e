use crate::error::{Error, Result};
use crate::params::{FlatParams, ParamBundle};

/// `w_i = |D_i| / Σ_k |D_k|`.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregationWeights(Vec<f64>);

impl AggregationWeights {
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Aggregation("no clients to aggregate".into()));
        }
        if sizes.contains(&0) {
            return Err(Error::Aggregation("client with zero samples".into()));
        }
        let total: usize = sizes.iter().sum();
        Ok(AggregationWeights(
            sizes.iter().map(|&s| s as f64 / total as f64).collect(),
        ))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Size-weighted elementwise average, group by group.
pub fn aggregate(bundles: &[ParamBundle], sizes: &[usize]) -> Result<ParamBundle> {
    if bundles.len() != sizes.len() {
        return Err(Error::Aggregation(format!(
            "{} parameter bundles for {} sizes",
            bundles.len(),
            sizes.len()
        )));
    }
    let weights = AggregationWeights::from_sizes(sizes)?;
    let first = &bundles[0];
    if let Some(i) = bundles.iter().position(|b| !b.same_layout(first)) {
        return Err(Error::Aggregation(format!(
            "client {i} has a different parameter layout"
        )));
    }
    let groups = first
        .groups
        .iter()
        .enumerate()
        .map(|(g, template)| {
            let mut values = vec![0.0; template.len()];
            for (b, &w) in bundles.iter().zip(weights.as_slice()) {
                for (acc, v) in values.iter_mut().zip(&b.groups[g].values) {
                    *acc += w * v;
                }
            }
            FlatParams {
                values,
                ..template.clone()
            }
        })
        .collect();
    Ok(ParamBundle::new(groups))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ManifestEntry;

    fn bundle(v: Vec<f64>) -> ParamBundle {
        let n = v.len();
        ParamBundle::new(vec![FlatParams::new(
            "g",
            v,
            vec![ManifestEntry {
                name: "w".into(),
                shape: vec![n],
            }],
        )
        .unwrap()])
    }

    #[test]
    fn weighted_scalar_case() {
        let out = aggregate(&[bundle(vec![0.0]), bundle(vec![4.0])], &[1, 3]).unwrap();
        assert_eq!(out.groups[0].values, vec![3.0]);
    }

    #[test]
    fn single_client_identity() {
        let b = bundle(vec![1.5, -2.25, 1e-9]);
        assert_eq!(aggregate(std::slice::from_ref(&b), &[17]).unwrap(), b);
    }

    #[test]
    fn opposite_params_cancel() {
        let out = aggregate(&[bundle(vec![1.0, -3.0]), bundle(vec![-1.0, 3.0])], &[5, 5]).unwrap();
        assert_eq!(out.groups[0].values, vec![0.0, 0.0]);
    }

    #[test]
    fn weights_sum_to_one() {
        let w = AggregationWeights::from_sizes(&[3, 7, 11, 13, 1]).unwrap();
        assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.as_slice().iter().all(|&x| x > 0.0));
    }

    #[test]
    fn errors() {
        assert!(matches!(aggregate(&[], &[]), Err(Error::Aggregation(_))));
        assert!(aggregate(&[bundle(vec![1.0]), bundle(vec![1.0, 2.0])], &[1, 1]).is_err());
        assert!(aggregate(&[bundle(vec![1.0])], &[1, 2]).is_err());
        assert!(aggregate(&[bundle(vec![1.0])], &[0]).is_err());
    }
}
