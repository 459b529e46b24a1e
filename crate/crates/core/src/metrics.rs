//! gACC / pACC / zACC and the per-run metrics report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::config::Method;
use crate::data::{ClientDataset, Dataset};
use crate::error::{Error, Result};
use crate::federation::{Counters, GlobalState, RoundRecord};
use crate::model::{argmax_rows, ModelSpec};
use crate::params::ParamBundle;
use crate::tensor::Tensor;

const EVAL_CHUNK: usize = 512;

/// Which parameters a prediction uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelView {
    Global,
    /// Participating client `i`'s own parameters, when it has any.
    Participant(usize),
}

/// Something that labels feature rows. Evaluation only ever borrows it.
pub trait Predictor: Sync {
    fn predict(&self, x: &Tensor, view: ModelView) -> Result<Vec<usize>>;

    /// Views averaged for the shared metrics (gACC, zACC).
    fn shared_views(&self) -> Vec<ModelView> {
        vec![ModelView::Global]
    }
}

/// A trained model together with its architecture.
pub struct TrainedModel<'a> {
    spec: &'a ModelSpec,
    state: &'a GlobalState,
    counters: &'a Counters,
}

impl<'a> TrainedModel<'a> {
    pub fn new(spec: &'a ModelSpec, state: &'a GlobalState, counters: &'a Counters) -> Self {
        TrainedModel {
            spec,
            state,
            counters,
        }
    }

    fn bundle(&self, view: ModelView) -> &ParamBundle {
        match (view, &self.state.personalized) {
            (ModelView::Participant(i), Some(own)) => &own[i],
            _ => &self.state.global,
        }
    }
}

impl Predictor for TrainedModel<'_> {
    fn predict(&self, x: &Tensor, view: ModelView) -> Result<Vec<usize>> {
        let bundle = self.bundle(view);
        let (rows, _) = x.dims2()?;
        let mut out = Vec::with_capacity(rows);
        let all: Vec<usize> = (0..rows).collect();
        for chunk in all.chunks(EVAL_CHUNK) {
            let logits = self.spec.logits(bundle, &x.select_rows(chunk)?)?;
            self.counters.eval_forward();
            out.extend(argmax_rows(&logits)?);
        }
        Ok(out)
    }

    fn shared_views(&self) -> Vec<ModelView> {
        match (&self.state.personalized, self.spec.method) {
            (Some(own), Method::Local) => (0..own.len()).map(ModelView::Participant).collect(),
            _ => vec![ModelView::Global],
        }
    }
}

/// Top-1 accuracy in percent over `idx`.
pub fn accuracy(
    model: &dyn Predictor,
    dataset: &Dataset,
    idx: &[usize],
    view: ModelView,
) -> Result<f64> {
    if idx.is_empty() {
        return Err(Error::contract("accuracy over an empty index set"));
    }
    let (x, y) = dataset.batch(idx)?;
    let pred = model.predict(&x, view)?;
    let hits = pred.iter().zip(&y).filter(|(p, t)| p == t).count();
    Ok(100.0 * hits as f64 / idx.len() as f64)
}

fn shared_accuracy(model: &dyn Predictor, dataset: &Dataset, idx: &[usize]) -> Result<f64> {
    let views = model.shared_views();
    let accs = views
        .iter()
        .map(|&v| accuracy(model, dataset, idx, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(accs.iter().sum::<f64>() / accs.len() as f64)
}

/// Accuracy on the global holdout.
pub fn evaluate_gacc(model: &dyn Predictor, dataset: &Dataset, holdout: &[usize]) -> Result<f64> {
    if holdout.is_empty() {
        return Err(Error::contract("global test set is empty"));
    }
    shared_accuracy(model, dataset, holdout)
}

/// Unweighted mean of participating clients' local test accuracies.
pub fn evaluate_pacc(
    model: &dyn Predictor,
    dataset: &Dataset,
    participants: &[ClientDataset],
) -> Result<(f64, Vec<f64>)> {
    if participants.is_empty() {
        return Err(Error::contract("no participating clients"));
    }
    let per = participants
        .iter()
        .map(|c| {
            if c.eval.is_empty() {
                return Err(Error::contract(format!(
                    "client {} has an empty test split",
                    c.id
                )));
            }
            accuracy(model, dataset, &c.eval, ModelView::Participant(c.id))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((per.iter().sum::<f64>() / per.len() as f64, per))
}

/// Unweighted mean of non-participating clients' accuracies on their whole
/// share. Pure evaluation: nothing is trained or adapted.
pub fn evaluate_zacc(
    model: &dyn Predictor,
    dataset: &Dataset,
    non_participating: &[ClientDataset],
) -> Result<(f64, Vec<f64>)> {
    if non_participating.is_empty() {
        return Err(Error::contract(
            "zACC needs at least one non-participating client",
        ));
    }
    let per = non_participating
        .iter()
        .map(|c| shared_accuracy(model, dataset, &c.eval))
        .collect::<Result<Vec<_>>>()?;
    Ok((per.iter().sum::<f64>() / per.len() as f64, per))
}

/// Final metrics of one run plus its round trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: Method,
    pub fingerprint: String,
    pub seed: u64,
    pub gacc: Option<f64>,
    pub pacc: f64,
    pub zacc: Option<f64>,
    pub pacc_per_client: Vec<f64>,
    pub zacc_per_client: Vec<f64>,
    /// Mean pairwise distance of participating clients' mean embeddings.
    pub collapse: Option<f64>,
    pub rounds: Vec<RoundRecord>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    /// One row per round plus a `final` row; every row carries the fingerprint.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "fingerprint,method,seed,round,loss,cross_entropy,penalty,forward_passes,backward_passes,gacc,pacc,zacc,collapse\n",
        );
        for r in &self.rounds {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},",
                self.fingerprint,
                self.method.as_str(),
                self.seed,
                r.round,
                r.loss,
                r.cross_entropy,
                r.penalty,
                r.forward_passes,
                r.backward_passes,
                opt(r.gacc),
                opt(r.pacc),
                opt(r.zacc),
            );
        }
        let _ = writeln!(
            s,
            "{},{},{},final,,,,,,{},{},{},{}",
            self.fingerprint,
            self.method.as_str(),
            self.seed,
            opt(self.gacc),
            self.pacc,
            opt(self.zacc),
            opt(self.collapse),
        );
        s
    }
}
