//! Loaders and partitioning: IDX bytes, Dirichlet shares, splits.

use hfz_core::data::{
    dirichlet_partition, encode_idx_images, encode_idx_labels, holdout_then_partition,
    load_partition, parse_idx, save_partition, split_client, synth_shifted, Dataset,
};
use hfz_core::rng::{Purpose, RngStream};
use hfz_core::tensor::Tensor;
use hfz_core::Error;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};

/// Two 2×3 images and their labels, written out byte by byte.
fn idx_fixture() -> (Vec<u8>, Vec<u8>) {
    let images = vec![
        0x00, 0x00, 0x08, 0x03, // magic: unsigned byte, 3 dims
        0x00, 0x00, 0x00, 0x02, // 2 images
        0x00, 0x00, 0x00, 0x02, // 2 rows
        0x00, 0x00, 0x00, 0x03, // 3 cols
        0, 51, 102, 153, 204, 255, // image 0
        255, 0, 0, 17, 34, 68, // image 1
    ];
    let labels = vec![
        0x00, 0x00, 0x08, 0x01, // magic: unsigned byte, 1 dim
        0x00, 0x00, 0x00, 0x02, // 2 labels
        1, 0,
    ];
    (images, labels)
}

#[test]
fn idx_fixture_parses_and_round_trips_byte_exact() {
    let (images, labels) = idx_fixture();
    let d = parse_idx(&images, &labels).unwrap();
    assert_eq!(d.len(), 2);
    assert_eq!(d.feature_dim(), 6);
    assert_eq!(d.num_classes(), 2);
    assert_eq!(d.labels(), &[1, 0]);
    assert_eq!(d.features().row(0), &[0.0, 0.2, 0.4, 0.6, 0.8, 1.0]);
    assert_eq!(d.features().get2(1, 3), 17.0 / 255.0);
    assert_eq!(encode_idx_images(d.features(), 2, 3).unwrap(), images);
    assert_eq!(encode_idx_labels(d.labels()).unwrap(), labels);
}

fn format_field(r: hfz_core::Result<Dataset>) -> String {
    match r {
        Err(Error::Format { field, .. }) => field,
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn idx_errors_name_the_field() {
    let (images, labels) = idx_fixture();
    let mut bad = images.clone();
    bad[3] = 0x01;
    assert_eq!(format_field(parse_idx(&bad, &labels)), "images.magic");
    let mut bad = labels.clone();
    bad[3] = 0x03;
    assert_eq!(format_field(parse_idx(&images, &bad)), "labels.magic");
    assert!(format_field(parse_idx(&images[..images.len() - 1], &labels)).starts_with("images"));
    let mut bad = labels.clone();
    bad[7] = 3;
    assert!(format_field(parse_idx(&images, &bad)).starts_with("labels"));
}

proptest! {
    #[test]
    fn idx_truncation_never_panics(cut in 0usize..34, which in 0usize..2) {
        let (images, labels) = idx_fixture();
        let r = if which == 0 {
            parse_idx(&images[..cut.min(images.len() - 1)], &labels)
        } else {
            parse_idx(&images, &labels[..cut.min(labels.len() - 1)])
        };
        prop_assert!(matches!(r, Err(Error::Format { .. })), "expected a format error");
    }
}

/// Labels cycle through the classes; features are the sample index.
fn cyclic(n: usize, classes: usize) -> Dataset {
    let x = Tensor::new(vec![n, 1], (0..n).map(|i| i as f64).collect()).unwrap();
    Dataset::new(x, (0..n).map(|i| i % classes).collect(), classes).unwrap()
}

/// Largest remainder written from scratch: floor every quota, then hand out
/// the leftover units in order of decreasing fractional part.
fn apportion(n: usize, props: &[f64]) -> Vec<usize> {
    let mut counts: Vec<usize> = props.iter().map(|p| (p * n as f64) as usize).collect();
    let mut rest: Vec<(f64, usize)> = props
        .iter()
        .enumerate()
        .map(|(k, p)| (p * n as f64 - (p * n as f64).floor(), k))
        .collect();
    rest.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let short = n - counts.iter().sum::<usize>();
    for (_, k) in rest.into_iter().take(short) {
        counts[k] += 1;
    }
    counts
}

/// The first resampling attempt, rebuilt from the stream labels:
/// class `c` draws its proportions from (client=c, round=0, Partition, 0)
/// and shuffles its members with step 1.
fn first_attempt(d: &Dataset, clients: usize, alpha: f64, seed: u64) -> Vec<Vec<usize>> {
    let gamma = Gamma::new(alpha, 1.0).unwrap();
    let mut out = vec![Vec::new(); clients];
    for (c, members) in d.class_indices().into_iter().enumerate() {
        let mut g = RngStream::labelled(seed, c as u64, 0, Purpose::Partition, 0).generator();
        let draws: Vec<f64> = (0..clients).map(|_| gamma.sample(&mut g)).collect();
        let total: f64 = draws.iter().sum();
        let props: Vec<f64> = draws.iter().map(|x| x / total).collect();
        let mut members = members;
        members.shuffle(
            &mut RngStream::labelled(seed, c as u64, 0, Purpose::Partition, 1).generator(),
        );
        let mut start = 0;
        for (k, n) in apportion(members.len(), &props).into_iter().enumerate() {
            out[k].extend_from_slice(&members[start..start + n]);
            start += n;
        }
    }
    out.iter_mut().for_each(|s| s.sort_unstable());
    out
}

#[test]
fn dirichlet_matches_fixture_oracle() {
    let d = cyclic(600, 3);
    for seed in 0..5 {
        for alpha in [0.5, 1.0, 5.0] {
            let p = dirichlet_partition(&d, 3, 2, alpha, 1, seed).unwrap();
            assert_eq!(
                p.client_indices,
                first_attempt(&d, 5, alpha, seed),
                "seed {seed} alpha {alpha}"
            );
        }
    }
}

#[test]
fn largest_remainder_hand_cases() {
    assert_eq!(apportion(10, &[0.33, 0.33, 0.34]), vec![3, 3, 4]);
    assert_eq!(apportion(7, &[0.5, 0.5]), vec![4, 3]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]
    #[test]
    fn partition_is_a_disjoint_cover(
        n in 20usize..400,
        classes in 2usize..6,
        clients in 2usize..8,
        alpha_exp in -1.0f64..3.0,
        min in 1usize..6,
        holdout in 0.0f64..0.3,
        seed in 0u64..1000,
    ) {
        let d = cyclic(n, classes);
        let n_part = 1 + clients / 2;
        let m = clients - n_part;
        let alpha = 10f64.powf(alpha_exp);
        match holdout_then_partition(&d, holdout, n_part, m, alpha, min, 20, seed) {
            Ok(p) => {
                prop_assert!(p.validate().is_ok());
                let mut seen = vec![false; n];
                for &i in p.holdout.iter().chain(p.client_indices.iter().flatten()) {
                    prop_assert!(!seen[i]);
                    seen[i] = true;
                }
                prop_assert!(seen.iter().all(|&s| s));
                prop_assert!(p.client_indices.iter().all(|c| c.len() >= min));
                prop_assert_eq!(p.client_indices.len(), clients);
            }
            Err(Error::PartitionInfeasible { min: m2, retries, .. }) => {
                prop_assert_eq!(m2, min);
                prop_assert!(retries == 20 || retries == 0);
            }
            Err(e) => prop_assert!(false, "unexpected error {e}"),
        }
    }
}

/// Mean over clients and classes of |share − 1/C|.
fn share_deviation(d: &Dataset, clients: &[Vec<usize>]) -> f64 {
    let c = d.num_classes();
    let mut total = 0.0;
    for s in clients {
        let mut counts = vec![0usize; c];
        s.iter().for_each(|&i| counts[d.labels()[i]] += 1);
        total += counts
            .iter()
            .map(|&k| (k as f64 / s.len() as f64 - 1.0 / c as f64).abs())
            .sum::<f64>()
            / c as f64;
    }
    total / clients.len() as f64
}

#[test]
fn concentration_is_monotone_in_alpha() {
    let d = synth_shifted(4, 1500, 2, 2.0, 0).unwrap();
    let mut means = Vec::new();
    for alpha in [0.1, 1.0, 10.0, 1e6] {
        let mut sum = 0.0;
        for seed in 0..20 {
            let p = holdout_then_partition(&d, 0.1, 10, 5, alpha, 10, 100, seed).unwrap();
            sum += share_deviation(&d, &p.client_indices);
        }
        means.push(sum / 20.0);
    }
    for w in means.windows(2) {
        assert!(w[1] <= w[0], "{means:?}");
    }
}

#[test]
fn huge_alpha_gives_even_shares() {
    let d = synth_shifted(4, 1500, 2, 2.0, 0).unwrap();
    let p = holdout_then_partition(&d, 0.1, 10, 5, 1e6, 10, 100, 3).unwrap();
    for s in &p.client_indices {
        let mut counts = [0usize; 4];
        s.iter().for_each(|&i| counts[d.labels()[i]] += 1);
        for k in counts {
            let share = k as f64 / s.len() as f64;
            assert!((share - 0.25).abs() <= 0.05, "{counts:?}");
        }
    }
}

#[test]
fn infeasible_minimum_is_reported() {
    let d = cyclic(40, 2);
    let r = dirichlet_partition(&d, 3, 2, 0.1, 8, 0);
    assert!(matches!(r, Err(Error::PartitionInfeasible { min: 8, .. })));
}

#[test]
fn partition_file_round_trip_and_determinism() {
    let d = synth_shifted(4, 50, 2, 2.0, 1).unwrap();
    let p = holdout_then_partition(&d, 0.1, 3, 2, 1.0, 5, 100, 9).unwrap();
    assert_eq!(
        p,
        holdout_then_partition(&d, 0.1, 3, 2, 1.0, 5, 100, 9).unwrap()
    );
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    save_partition(&p, &path).unwrap();
    assert_eq!(load_partition(&path).unwrap(), p);

    std::fs::write(&path, "{\"version\": 1}").unwrap();
    assert!(matches!(load_partition(&path), Err(Error::Format { .. })));
}

#[test]
fn split_sizes_follow_fraction() {
    let idx: Vec<usize> = (100..150).collect();
    let (train, test) = split_client(&idx, 0.2, 4).unwrap();
    assert_eq!((train.len(), test.len()), (40, 10));
    let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
    all.sort_unstable();
    assert_eq!(all, idx);
    assert!(matches!(split_client(&[1], 0.2, 0), Err(Error::Split(_))));
}

#[test]
fn synthetic_is_seeded_and_balanced() {
    let a = synth_shifted(4, 25, 3, 2.0, 7).unwrap();
    assert_eq!(
        a.features(),
        synth_shifted(4, 25, 3, 2.0, 7).unwrap().features()
    );
    assert_ne!(
        a.features(),
        synth_shifted(4, 25, 3, 2.0, 8).unwrap().features()
    );
    assert!(a.class_indices().iter().all(|c| c.len() == 25));
}
