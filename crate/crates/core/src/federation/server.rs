use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{aggregate, fedavg_ft_adapt, local_train, Counters, LocalOutcome};
use crate::config::{FLConfig, Method};
use crate::data::{ClientDataset, Dataset, Partition};
use crate::embedding::collapse_metric;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_gacc, evaluate_pacc, evaluate_zacc, MetricsReport, TrainedModel};
use crate::model::ModelSpec;
use crate::params::ParamBundle;

/// Per-round trace entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based round index.
    pub round: usize,
    /// Mean over participating clients of their mean local loss.
    pub loss: f64,
    pub cross_entropy: f64,
    pub penalty: f64,
    pub forward_passes: u64,
    pub backward_passes: u64,
    pub gacc: Option<f64>,
    pub pacc: Option<f64>,
    pub zacc: Option<f64>,
}

/// Server-side state after some number of rounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalState {
    pub round: usize,
    pub global: ParamBundle,
    /// Per-participant parameters: the isolated models of the Local baseline,
    /// or the fine-tuned copies of FedAvg-FT.
    pub personalized: Option<Vec<ParamBundle>>,
    pub history: Vec<RoundRecord>,
}

fn train_round(
    spec: &ModelSpec,
    dataset: &Dataset,
    participants: &[ClientDataset],
    starts: &[&ParamBundle],
    cfg: &FLConfig,
    round: usize,
    counters: &Counters,
) -> Result<Vec<LocalOutcome>> {
    let work = |(client, start): (&ClientDataset, &&ParamBundle)| {
        local_train(spec, dataset, client, start, cfg, round, counters).map_err(|e| match e {
            Error::NonFinite { op } => Error::NonFiniteLoss {
                round,
                client: client.id,
                detail: op,
            },
            other => other,
        })
    };
    if cfg.parallel {
        participants
            .par_iter()
            .zip(starts.par_iter())
            .map(work)
            .collect()
    } else {
        participants.iter().zip(starts.iter()).map(work).collect()
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// [`run_training`] with caller-owned counters.
pub fn run_training_with(
    cfg: &FLConfig,
    partition: &Partition,
    dataset: &Dataset,
    counters: &Counters,
) -> Result<(GlobalState, MetricsReport)> {
    run_from(cfg, partition, dataset, counters, None)
}

/// Continues a saved state up to `cfg.rounds`. Every random draw is addressed
/// by round, so the result equals an uninterrupted run.
pub fn resume_training(
    cfg: &FLConfig,
    partition: &Partition,
    dataset: &Dataset,
    state: GlobalState,
    counters: &Counters,
) -> Result<(GlobalState, MetricsReport)> {
    if state.round > cfg.rounds {
        return Err(Error::Config(format!(
            "checkpoint is at round {}, config asks for {}",
            state.round, cfg.rounds
        )));
    }
    run_from(cfg, partition, dataset, counters, Some(state))
}

fn run_from(
    cfg: &FLConfig,
    partition: &Partition,
    dataset: &Dataset,
    counters: &Counters,
    resume: Option<GlobalState>,
) -> Result<(GlobalState, MetricsReport)> {
    cfg.validate()?;
    partition.validate()?;
    if partition.num_samples != dataset.len() {
        return Err(Error::Config(format!(
            "partition was drawn for {} samples, dataset has {}",
            partition.num_samples,
            dataset.len()
        )));
    }
    if partition.n_participating != cfg.n_participating
        || partition.m_nonparticipating != cfg.m_nonparticipating
    {
        return Err(Error::Config(format!(
            "partition has {}+{} clients, config asks for {}+{}",
            partition.n_participating,
            partition.m_nonparticipating,
            cfg.n_participating,
            cfg.m_nonparticipating
        )));
    }
    let spec = ModelSpec::from_config(cfg, dataset.feature_dim(), dataset.num_classes())?;
    let clients = partition.client_datasets(cfg.test_fraction, cfg.seed)?;
    let (participants, others) = clients.split_at(cfg.n_participating);
    let sizes: Vec<usize> = participants.iter().map(|c| c.train.len()).collect();

    let init = spec.init_bundle(cfg.seed);
    let mut state = match resume {
        Some(mut s) => {
            let own_ok = match (&s.personalized, cfg.method) {
                (Some(own), Method::Local) => {
                    own.len() == participants.len() && own.iter().all(|b| b.same_layout(&init))
                }
                (None, Method::Local) => false,
                _ => true,
            };
            if !s.global.same_layout(&init) || !own_ok {
                return Err(Error::Config(
                    "checkpoint parameters do not match the configured model".into(),
                ));
            }
            if cfg.method != Method::Local {
                s.personalized = None;
            }
            s.history.truncate(s.round);
            s
        }
        None => GlobalState {
            round: 0,
            personalized: (cfg.method == Method::Local)
                .then(|| vec![init.clone(); participants.len()]),
            global: init,
            history: Vec::new(),
        },
    };

    for round in state.round..cfg.rounds {
        let before = counters.snapshot();
        let starts: Vec<&ParamBundle> = match &state.personalized {
            Some(own) => own.iter().collect(),
            None => vec![&state.global; participants.len()],
        };
        let outcomes = train_round(&spec, dataset, participants, &starts, cfg, round, counters)?;
        let after = counters.snapshot();

        let client_mean = |f: fn(&super::TrainStepReport) -> f64| {
            mean(outcomes.iter().map(|o| mean(o.reports.iter().map(f))))
        };
        let mut record = RoundRecord {
            round: round + 1,
            loss: client_mean(|r| r.loss),
            cross_entropy: client_mean(|r| r.cross_entropy),
            penalty: client_mean(|r| r.penalty),
            forward_passes: after.train_forward - before.train_forward,
            backward_passes: after.train_backward - before.train_backward,
            gacc: None,
            pacc: None,
            zacc: None,
        };

        let params: Vec<ParamBundle> = outcomes.into_iter().map(|o| o.params).collect();
        if cfg.method == Method::Local {
            state.personalized = Some(params);
        } else {
            state.global = aggregate(&params, &sizes)?;
        }
        state.round = round + 1;

        let last = round + 1 == cfg.rounds;
        if !last && (round + 1) % cfg.eval_interval == 0 {
            let model = TrainedModel::new(&spec, &state, counters);
            record.gacc = evaluate_gacc(&model, dataset, &partition.holdout).ok();
            record.pacc = Some(evaluate_pacc(&model, dataset, participants)?.0);
            record.zacc = evaluate_zacc(&model, dataset, others).ok().map(|z| z.0);
        }
        state.history.push(record);
    }

    if cfg.method == Method::FedavgFt {
        let adapted = participants
            .iter()
            .map(|c| fedavg_ft_adapt(&spec, dataset, c, &state.global, cfg, counters))
            .collect::<Result<Vec<_>>>()?;
        state.personalized = Some(adapted);
    }

    let report = final_report(
        cfg,
        &spec,
        &state,
        dataset,
        partition,
        participants,
        others,
        counters,
    )?;
    if let Some(last) = state.history.last_mut() {
        last.gacc = report.gacc;
        last.pacc = Some(report.pacc);
        last.zacc = report.zacc;
    }
    let report = MetricsReport {
        rounds: state.history.clone(),
        ..report
    };
    Ok((state, report))
}

#[allow(clippy::too_many_arguments)]
fn final_report(
    cfg: &FLConfig,
    spec: &ModelSpec,
    state: &GlobalState,
    dataset: &Dataset,
    partition: &Partition,
    participants: &[ClientDataset],
    others: &[ClientDataset],
    counters: &Counters,
) -> Result<MetricsReport> {
    let model = TrainedModel::new(spec, state, counters);
    let gacc = if partition.holdout.is_empty() {
        None
    } else {
        Some(evaluate_gacc(&model, dataset, &partition.holdout)?)
    };
    let (pacc, pacc_per_client) = evaluate_pacc(&model, dataset, participants)?;
    let (zacc, zacc_per_client) = if others.is_empty() {
        (None, Vec::new())
    } else {
        let (z, per) = evaluate_zacc(&model, dataset, others)?;
        (Some(z), per)
    };
    let collapse = if spec.has_extractor() && participants.len() >= 2 {
        let per_client = participants
            .iter()
            .map(|c| {
                let (x, _) = dataset.batch(&c.train)?;
                spec.embeddings(&state.global, &x)
            })
            .collect::<Result<Vec<_>>>()?;
        Some(collapse_metric(&per_client)?)
    } else {
        None
    };
    Ok(MetricsReport {
        method: cfg.method,
        fingerprint: cfg.fingerprint(),
        seed: cfg.seed,
        gacc,
        pacc,
        zacc,
        pacc_per_client,
        zacc_per_client,
        collapse,
        rounds: Vec::new(),
    })
}

/// Metrics of a saved state against the clients its config describes.
pub fn evaluate_state(
    cfg: &FLConfig,
    partition: &Partition,
    dataset: &Dataset,
    state: &GlobalState,
    counters: &Counters,
) -> Result<MetricsReport> {
    partition.validate()?;
    let spec = ModelSpec::from_config(cfg, dataset.feature_dim(), dataset.num_classes())?;
    if !state.global.same_layout(&spec.init_bundle(0)) {
        return Err(Error::Config(
            "checkpoint parameters do not match the configured model".into(),
        ));
    }
    let clients = partition.client_datasets(cfg.test_fraction, cfg.seed)?;
    let (participants, others) = clients.split_at(partition.n_participating);
    let report = final_report(
        cfg,
        &spec,
        state,
        dataset,
        partition,
        participants,
        others,
        counters,
    )?;
    Ok(MetricsReport {
        rounds: state.history.clone(),
        ..report
    })
}

/// Runs `E` rounds of distribute → local training → aggregate and evaluates
/// the result.
pub fn run_training(
    cfg: &FLConfig,
    partition: &Partition,
    dataset: &Dataset,
) -> Result<(GlobalState, MetricsReport)> {
    run_training_with(cfg, partition, dataset, &Counters::new())
}
