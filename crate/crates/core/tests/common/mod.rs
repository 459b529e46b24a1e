#![allow(dead_code)]

use hfz_core::config::FLConfig;
use hfz_core::data::{synth_shifted, Dataset, Partition, PARTITION_FORMAT_VERSION};
use hfz_core::embedding::{NoiseDraw, NoiseShape};
use hfz_core::federation::run_training;
use hfz_core::model::ModelSpec;
use hfz_core::params::ParamBundle;
use hfz_core::rng::{Purpose, RngStream};
use hfz_core::tape::{Tape, Var};
use hfz_core::tensor::Tensor;
use hfz_core::Result;

pub const FD_STEP: f64 = 1e-6;

/// Largest relative gap between analytic and central-difference gradients
/// of the scalar built by `build` with respect to every entry of `inputs`.
pub fn max_grad_error<F>(inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |vals: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.leaf(t.clone()).unwrap()).collect();
        let out = build(&mut tape, &vars).unwrap();
        tape.value(out).item()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone()).unwrap())
        .collect();
    let out = build(&mut tape, &vars).unwrap();
    let grads = tape.backward(out).unwrap();

    let mut worst = 0.0f64;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v);
        for j in 0..inputs[i].len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            let a = analytic.data()[j];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

/// Gaussian tensor from a fixed test stream.
pub fn randn(shape: &[usize], step: u32) -> Tensor {
    RngStream::labelled(12345, 0, 0, Purpose::Test, step).gaussian(shape)
}

/// Softmax rows strictly inside the simplex.
pub fn simplex_rows(rows: usize, cols: usize, step: u32) -> Tensor {
    hfz_core::tape::softmax_rows(&randn(&[rows, cols], step)).unwrap()
}

/// Small, fast configuration on a compact synthetic dataset.
pub fn small_config() -> FLConfig {
    FLConfig::from_overrides(&[
        "n_participating=3".into(),
        "m_nonparticipating=2".into(),
        "rounds=3".into(),
        "local_iters=2".into(),
        "lr=0.05".into(),
        "batch_size=16".into(),
        "alpha_d=1.0".into(),
        "min_per_client=5".into(),
        "embed_dim=4".into(),
        "chunk_size=16".into(),
        "chunk_dim=3".into(),
        "classifier_hidden=[6]".into(),
        "extractor_hidden=[5]".into(),
        "trunk_hidden=[6]".into(),
        "eval_interval=2".into(),
        "dataset.samples_per_class=40".into(),
    ])
    .unwrap()
}

pub fn small_data(cfg: &FLConfig) -> (Dataset, Partition) {
    hfz_core::runner::prepare(cfg).unwrap()
}

/// A single client holding samples `0..n` and no holdout.
pub fn single_client_partition(n: usize) -> Partition {
    Partition {
        version: PARTITION_FORMAT_VERSION,
        seed: 0,
        alpha_d: 1.0,
        n_participating: 1,
        m_nonparticipating: 0,
        num_samples: n,
        holdout: Vec::new(),
        client_indices: vec![(0..n).collect()],
    }
}

pub fn two_blobs(per_class: usize, seed: u64) -> Dataset {
    synth_shifted(2, per_class, 4, 2.0, seed).unwrap()
}

pub fn toy_config(method: &str) -> FLConfig {
    FLConfig::from_overrides(&[
        format!("method={method}"),
        "embed_dim=4".into(),
        "chunk_size=8".into(),
        "chunk_dim=3".into(),
        "classifier_hidden=[5]".into(),
        "extractor_hidden=[3]".into(),
        "trunk_hidden=[6]".into(),
    ])
    .unwrap()
}

/// Gradient of the full training loss (cross-entropy + penalty through the
/// noisy extractor and the generated classifier) for every parameter group.
pub fn end_to_end_error(method: &str, seed: u64) -> f64 {
    let cfg = toy_config(method);
    let spec = ModelSpec::from_config(&cfg, 4, 2).unwrap();
    let bundle = spec.init_bundle(seed);
    let x = randn(&[6, 4], 20);
    let labels = [0usize, 1, 1, 0, 1, 0];
    let noise = RngStream::labelled(seed, 0, 0, Purpose::Noise, 0);
    let mut inputs = vec![x];
    inputs.extend(bundle.groups.iter().map(|g| g.as_tensor()));
    max_grad_error(&inputs, |t, v| {
        let draw = NoiseDraw {
            stream: &noise,
            shape: NoiseShape::PerDimension,
        };
        Ok(spec
            .loss_on_tape(t, v[0], &labels, &v[1..], Some(draw))?
            .loss)
    })
}

pub fn centralized_config(method: &str, rounds: usize) -> FLConfig {
    FLConfig::from_overrides(&[
        format!("method={method}"),
        "n_participating=1".into(),
        "m_nonparticipating=0".into(),
        format!("rounds={rounds}"),
        "local_iters=1".into(),
        "batch_size=100000".into(),
        "lr=0.1".into(),
        "embed_dim=4".into(),
        "chunk_size=16".into(),
        "chunk_dim=3".into(),
        "classifier_hidden=[6]".into(),
        "extractor_hidden=[5]".into(),
        "trunk_hidden=[7]".into(),
        "eval_interval=1000".into(),
        "parallel=false".into(),
    ])
    .unwrap()
}

/// Plain full-batch SGD on the client's train split, written without the
/// federation layer: one tape per step, explicit `θ ← θ − η·g`.
pub fn standalone_sgd(cfg: &FLConfig, steps: usize) -> Vec<ParamBundle> {
    let data = two_blobs(30, 5);
    let partition = single_client_partition(data.len());
    let client = partition
        .client_datasets(cfg.test_fraction, cfg.seed)
        .unwrap()
        .remove(0);
    let spec = ModelSpec::from_config(cfg, data.feature_dim(), data.num_classes()).unwrap();
    let (x, y) = data.batch(&client.train).unwrap();
    let mut params = spec.init_bundle(cfg.seed);
    let mut trace = Vec::new();
    for step in 0..steps {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone()).unwrap();
        let leaves: Vec<_> = params
            .groups
            .iter()
            .map(|g| tape.leaf(g.as_tensor()).unwrap())
            .collect();
        let stream = RngStream::labelled(cfg.seed, 0, step as u64, Purpose::Noise, 0);
        let draw = NoiseDraw {
            stream: &stream,
            shape: cfg.noise,
        };
        let loss = spec
            .loss_on_tape(&mut tape, xv, &y, &leaves, Some(draw))
            .unwrap()
            .loss;
        let grads = tape.backward(loss).unwrap();
        for (g, v) in params.groups.iter_mut().zip(&leaves) {
            let grad = grads.wrt(*v);
            for (p, d) in g.values.iter_mut().zip(grad.data()) {
                *p -= cfg.lr * d;
            }
        }
        trace.push(params.clone());
    }
    trace
}

/// Largest per-parameter gap between federated training (one client, one
/// full-batch step per round) and [`standalone_sgd`], over every step.
pub fn centralized_max_diff(method: &str, steps: usize) -> f64 {
    let oracle = standalone_sgd(&centralized_config(method, steps), steps);
    let data = two_blobs(30, 5);
    let partition = single_client_partition(data.len());
    let mut worst = 0.0f64;
    for (e, want) in oracle.iter().enumerate() {
        let cfg = centralized_config(method, e + 1);
        let (state, _) = run_training(&cfg, &partition, &data).unwrap();
        worst = worst.max(state.global.max_abs_diff(want));
    }
    worst
}
