use rand::seq::SliceRandom;

use super::Counters;
use crate::config::{FLConfig, Method};
use crate::data::{ClientDataset, Dataset};
use crate::embedding::NoiseDraw;
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::params::ParamBundle;
use crate::rng::{Purpose, RngStream};
use crate::tape::Tape;

/// One local iteration. `loss == cross_entropy + penalty`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainStepReport {
    pub loss: f64,
    pub cross_entropy: f64,
    pub penalty: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug)]
pub struct LocalOutcome {
    pub params: ParamBundle,
    pub reports: Vec<TrainStepReport>,
}

/// The whole train split in order when it fits in one batch, otherwise the
/// first `batch_size` entries of a shuffle drawn from `stream`.
pub fn sample_batch(train: &[usize], batch_size: usize, stream: &RngStream) -> Vec<usize> {
    if batch_size >= train.len() {
        return train.to_vec();
    }
    let mut idx = train.to_vec();
    idx.shuffle(&mut stream.generator());
    idx.truncate(batch_size);
    idx
}

#[allow(clippy::too_many_arguments)]
fn run_iterations(
    spec: &ModelSpec,
    dataset: &Dataset,
    client: &ClientDataset,
    start: &ParamBundle,
    cfg: &FLConfig,
    round: usize,
    batch_purpose: Purpose,
    noise_purpose: Purpose,
    counters: &Counters,
) -> Result<LocalOutcome> {
    if client.train.is_empty() {
        return Err(Error::contract(format!(
            "client {} has no training data",
            client.id
        )));
    }
    let mut params = start.clone();
    let mut reports = Vec::with_capacity(cfg.local_iters);
    for k in 0..cfg.local_iters {
        let step = k as u32;
        let batch_stream = RngStream::labelled(
            cfg.seed,
            client.id as u64,
            round as u64,
            batch_purpose,
            step,
        );
        let batch = sample_batch(&client.train, cfg.batch_size, &batch_stream);
        if batch.is_empty() {
            return Err(Error::contract("empty mini-batch"));
        }
        let (x, y) = dataset.batch(&batch)?;

        let noise_stream = RngStream::labelled(
            cfg.seed,
            client.id as u64,
            round as u64,
            noise_purpose,
            step,
        );
        let mut tape = Tape::new();
        let xv = tape.leaf(x)?;
        let leaves = spec.leaves(&mut tape, &params)?;
        let noise = Some(NoiseDraw {
            stream: &noise_stream,
            shape: spec.noise,
        });
        let terms = spec.loss_on_tape(&mut tape, xv, &y, &leaves, noise)?;
        counters.train_forward();
        let grads = tape.backward(terms.loss)?;
        counters.train_backward();

        let grads: Vec<_> = leaves.iter().map(|&v| grads.wrt(v)).collect();
        let grad_norm = grads
            .iter()
            .flat_map(|g| g.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        params.sgd_step(&grads, cfg.lr)?;
        counters.param_write();
        if !params.is_finite() {
            return Err(Error::NonFinite {
                op: "sgd update".into(),
            });
        }
        reports.push(TrainStepReport {
            loss: tape.value(terms.loss).item(),
            cross_entropy: tape.value(terms.cross_entropy).item(),
            penalty: terms.penalty.map_or(0.0, |p| tape.value(p).item()),
            grad_norm,
        });
    }
    Ok(LocalOutcome { params, reports })
}

/// `K` plain-SGD iterations on a private copy of `globals`.
pub fn local_train(
    spec: &ModelSpec,
    dataset: &Dataset,
    client: &ClientDataset,
    globals: &ParamBundle,
    cfg: &FLConfig,
    round: usize,
    counters: &Counters,
) -> Result<LocalOutcome> {
    run_iterations(
        spec,
        dataset,
        client,
        globals,
        cfg,
        round,
        Purpose::Batch,
        Purpose::Noise,
        counters,
    )
}

/// Joint update of extractor, noisy network, and hypernetwork.
pub fn local_train_hyperfedzero(
    spec: &ModelSpec,
    dataset: &Dataset,
    client: &ClientDataset,
    globals: &ParamBundle,
    cfg: &FLConfig,
    round: usize,
    counters: &Counters,
) -> Result<LocalOutcome> {
    if spec.method != Method::Hyperfedzero {
        return Err(Error::contract(
            "local_train_hyperfedzero needs a hyperfedzero model",
        ));
    }
    local_train(spec, dataset, client, globals, cfg, round, counters)
}

/// Plain classifier, pure cross-entropy.
pub fn local_train_fedavg(
    spec: &ModelSpec,
    dataset: &Dataset,
    client: &ClientDataset,
    global: &ParamBundle,
    cfg: &FLConfig,
    round: usize,
    counters: &Counters,
) -> Result<LocalOutcome> {
    if !matches!(
        spec.method,
        Method::Fedavg | Method::FedavgFt | Method::Local
    ) {
        return Err(Error::contract(
            "local_train_fedavg needs a plain classifier",
        ));
    }
    local_train(spec, dataset, client, global, cfg, round, counters)
}

/// `K` further SGD iterations of the trained global classifier on one
/// client's train split. Only the FedAvg-FT baseline uses this.
pub fn fedavg_ft_adapt(
    spec: &ModelSpec,
    dataset: &Dataset,
    client: &ClientDataset,
    global: &ParamBundle,
    cfg: &FLConfig,
    counters: &Counters,
) -> Result<ParamBundle> {
    counters.adapt_call();
    if spec.method.uses_extractor() {
        return Err(Error::contract(format!(
            "{} is evaluated zero-shot; fine-tuning is not allowed",
            spec.method.as_str()
        )));
    }
    let out = run_iterations(
        spec,
        dataset,
        client,
        global,
        cfg,
        cfg.rounds,
        Purpose::Adapt,
        Purpose::Adapt,
        counters,
    )?;
    Ok(out.params)
}
