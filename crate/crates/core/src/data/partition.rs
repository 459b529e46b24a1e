//! Dirichlet label-skew partitioning and per-client train/eval views.

use std::path::Path;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};
use crate::rng::{Purpose, RngStream};

pub const PARTITION_FORMAT_VERSION: u32 = 1;

/// Disjoint sample index sets for `N` participating clients followed by `M`
/// non-participating ones, plus an optional global holdout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub version: u32,
    pub seed: u64,
    pub alpha_d: f64,
    pub n_participating: usize,
    pub m_nonparticipating: usize,
    /// Size of the source dataset; every index is below this.
    pub num_samples: usize,
    /// Global i.i.d. test set, removed before partitioning.
    #[serde(default)]
    pub holdout: Vec<usize>,
    pub client_indices: Vec<Vec<usize>>,
}

impl Partition {
    pub fn num_clients(&self) -> usize {
        self.client_indices.len()
    }

    pub fn participating(&self) -> &[Vec<usize>] {
        &self.client_indices[..self.n_participating]
    }

    pub fn non_participating(&self) -> &[Vec<usize>] {
        &self.client_indices[self.n_participating..]
    }

    /// Checks the structural invariants: version, client counts, non-empty and
    /// pairwise-disjoint index sets, indices in range.
    pub fn validate(&self) -> Result<()> {
        if self.version != PARTITION_FORMAT_VERSION {
            return Err(Error::format(
                "version",
                format!(
                    "unsupported partition version {} (expected {PARTITION_FORMAT_VERSION})",
                    self.version
                ),
            ));
        }
        if self.client_indices.is_empty() {
            return Err(Error::format("client_indices", "no clients"));
        }
        if self.client_indices.len() != self.n_participating + self.m_nonparticipating {
            return Err(Error::format(
                "client_indices",
                format!(
                    "{} index sets for {} + {} clients",
                    self.client_indices.len(),
                    self.n_participating,
                    self.m_nonparticipating
                ),
            ));
        }
        let mut owner = vec![usize::MAX; self.num_samples];
        let holdout_owner = usize::MAX - 1;
        let sets = self
            .client_indices
            .iter()
            .enumerate()
            .chain(std::iter::once((holdout_owner, &self.holdout)));
        for (client, set) in sets {
            if client != holdout_owner && set.is_empty() {
                return Err(Error::format(
                    "client_indices",
                    format!("client {client} is empty"),
                ));
            }
            for &i in set {
                let slot = owner.get_mut(i).ok_or_else(|| {
                    Error::format(
                        "client_indices",
                        format!("index {i} >= num_samples {}", self.num_samples),
                    )
                })?;
                if *slot != usize::MAX {
                    return Err(Error::format(
                        "client_indices",
                        format!("index {i} assigned more than once"),
                    ));
                }
                *slot = client;
            }
        }
        Ok(())
    }

    /// Train/eval views: participating clients get a shuffled split with
    /// `test_fraction` held out, non-participating clients evaluate on their
    /// whole share.
    pub fn client_datasets(&self, test_fraction: f64, seed: u64) -> Result<Vec<ClientDataset>> {
        self.client_indices
            .iter()
            .enumerate()
            .map(|(id, idx)| {
                if id < self.n_participating {
                    let stream = RngStream::labelled(seed, id as u64, 0, Purpose::Split, 0);
                    let (train, eval) = split_with(idx, test_fraction, &stream)?;
                    Ok(ClientDataset {
                        id,
                        role: ClientRole::Participating,
                        train,
                        eval,
                    })
                } else {
                    let mut eval = idx.clone();
                    eval.sort_unstable();
                    Ok(ClientDataset {
                        id,
                        role: ClientRole::NonParticipating,
                        train: Vec::new(),
                        eval,
                    })
                }
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClientRole {
    Participating,
    NonParticipating,
}

/// One client's view of the parent dataset, as sample indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClientDataset {
    pub id: usize,
    pub role: ClientRole,
    pub train: Vec<usize>,
    /// Local test split for participating clients, whole share otherwise.
    pub eval: Vec<usize>,
}

impl ClientDataset {
    /// Client whose train split is `train` and evaluation split is `eval`.
    pub fn participating(id: usize, train: Vec<usize>, eval: Vec<usize>) -> Self {
        ClientDataset {
            id,
            role: ClientRole::Participating,
            train,
            eval,
        }
    }
}

fn dirichlet(alpha: f64, k: usize, stream: &RngStream) -> Result<Vec<f64>> {
    let gamma =
        Gamma::new(alpha, 1.0).map_err(|e| Error::Config(format!("alpha_d {alpha}: {e}")))?;
    let mut rng = stream.generator();
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(&mut rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 && total.is_finite() {
        Ok(draws.into_iter().map(|g| g / total).collect())
    } else {
        // every draw underflowed; fall back to an even split
        Ok(vec![1.0 / k as f64; k])
    }
}

/// Integer counts summing to `n` that follow `proportions`, rounding by
/// largest remainder (ties to the lower index).
pub(crate) fn largest_remainder(n: usize, proportions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = proportions.iter().map(|p| p * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..proportions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().cycle().take(n.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

#[allow(clippy::too_many_arguments)]
fn partition_pool(
    dataset: &Dataset,
    pool: &[usize],
    n_participating: usize,
    m_nonparticipating: usize,
    alpha_d: f64,
    min_per_client: usize,
    max_retries: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>> {
    let clients = n_participating + m_nonparticipating;
    if clients < 2 {
        return Err(Error::Config(format!(
            "need at least 2 clients, got {clients}"
        )));
    }
    if !(alpha_d.is_finite() && alpha_d > 0.0) {
        return Err(Error::Config(format!(
            "alpha_d must be positive, got {alpha_d}"
        )));
    }
    if pool.len() < clients * min_per_client.max(1) {
        return Err(Error::PartitionInfeasible {
            client: 0,
            count: pool.len() / clients,
            min: min_per_client.max(1),
            retries: 0,
        });
    }
    let mut by_class = vec![Vec::new(); dataset.num_classes()];
    for &i in pool {
        by_class[dataset.labels()[i]].push(i);
    }

    let mut last_failure = (0, 0);
    for attempt in 0..max_retries.max(1) {
        let mut assignment = vec![Vec::new(); clients];
        for (c, members) in by_class.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let props = dirichlet(
                alpha_d,
                clients,
                &RngStream::labelled(seed, c as u64, attempt as u64, Purpose::Partition, 0),
            )?;
            let mut shuffled = members.clone();
            shuffled.shuffle(
                &mut RngStream::labelled(seed, c as u64, attempt as u64, Purpose::Partition, 1)
                    .generator(),
            );
            let counts = largest_remainder(shuffled.len(), &props);
            let mut start = 0;
            for (k, n) in counts.into_iter().enumerate() {
                assignment[k].extend_from_slice(&shuffled[start..start + n]);
                start += n;
            }
        }
        let floor = min_per_client.max(1);
        match assignment.iter().enumerate().find(|(_, s)| s.len() < floor) {
            None => {
                assignment.iter_mut().for_each(|s| s.sort_unstable());
                return Ok(assignment);
            }
            Some((client, s)) => last_failure = (client, s.len()),
        }
    }
    Err(Error::PartitionInfeasible {
        client: last_failure.0,
        count: last_failure.1,
        min: min_per_client.max(1),
        retries: max_retries,
    })
}

/// Number of resampling attempts before a partition is declared infeasible.
pub const DEFAULT_PARTITION_RETRIES: usize = 100;

/// Splits every sample of `dataset` across `n + m` clients. For each class a
/// proportion vector is drawn from `Dirichlet(alpha_d · 1)` and that class's
/// (shuffled) samples are apportioned by largest remainder. The draw is
/// repeated until every client holds at least `min_per_client` samples.
pub fn dirichlet_partition(
    dataset: &Dataset,
    n_participating: usize,
    m_nonparticipating: usize,
    alpha_d: f64,
    min_per_client: usize,
    seed: u64,
) -> Result<Partition> {
    let pool: Vec<usize> = (0..dataset.len()).collect();
    let client_indices = partition_pool(
        dataset,
        &pool,
        n_participating,
        m_nonparticipating,
        alpha_d,
        min_per_client,
        DEFAULT_PARTITION_RETRIES,
        seed,
    )?;
    Ok(Partition {
        version: PARTITION_FORMAT_VERSION,
        seed,
        alpha_d,
        n_participating,
        m_nonparticipating,
        num_samples: dataset.len(),
        holdout: Vec::new(),
        client_indices,
    })
}

/// Removes a uniformly random `holdout_fraction` of the samples as the global
/// test set, then partitions the rest like [`dirichlet_partition`].
#[allow(clippy::too_many_arguments)]
pub fn holdout_then_partition(
    dataset: &Dataset,
    holdout_fraction: f64,
    n_participating: usize,
    m_nonparticipating: usize,
    alpha_d: f64,
    min_per_client: usize,
    max_retries: usize,
    seed: u64,
) -> Result<Partition> {
    if !(0.0..1.0).contains(&holdout_fraction) {
        return Err(Error::Config(format!(
            "holdout_fraction must be in [0, 1), got {holdout_fraction}"
        )));
    }
    let mut all: Vec<usize> = (0..dataset.len()).collect();
    all.shuffle(&mut RngStream::labelled(seed, 0, 0, Purpose::Holdout, 0).generator());
    let n_hold = (dataset.len() as f64 * holdout_fraction).round() as usize;
    let mut holdout = all[..n_hold].to_vec();
    holdout.sort_unstable();
    let mut pool = all[n_hold..].to_vec();
    pool.sort_unstable();
    let client_indices = partition_pool(
        dataset,
        &pool,
        n_participating,
        m_nonparticipating,
        alpha_d,
        min_per_client,
        max_retries,
        seed,
    )?;
    Ok(Partition {
        version: PARTITION_FORMAT_VERSION,
        seed,
        alpha_d,
        n_participating,
        m_nonparticipating,
        num_samples: dataset.len(),
        holdout,
        client_indices,
    })
}

fn split_with(
    indices: &[usize],
    test_fraction: f64,
    stream: &RngStream,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Split(format!(
            "test_fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    if indices.len() < 2 {
        return Err(Error::Split(format!(
            "need at least 2 samples to split, got {}",
            indices.len()
        )));
    }
    let n = indices.len();
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut shuffled = indices.to_vec();
    shuffled.shuffle(&mut stream.generator());
    let mut test = shuffled[..n_test].to_vec();
    let mut train = shuffled[n_test..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// Shuffled train/test split with at least one sample on each side.
pub fn split_client(
    indices: &[usize],
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    split_with(
        indices,
        test_fraction,
        &RngStream::labelled(seed, 0, 0, Purpose::Split, 0),
    )
}

pub fn save_partition(partition: &Partition, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    partition.validate()?;
    let text = serde_json::to_string_pretty(partition).expect("partition serializes");
    crate::io::write_atomic(path, text.as_bytes())
}

pub fn load_partition(path: impl AsRef<Path>) -> Result<Partition> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let partition: Partition =
        serde_json::from_str(&text).map_err(|e| Error::format("partition", e.to_string()))?;
    partition.validate()?;
    Ok(partition)
}
