//! Per-method model assembly: parameter groups, training loss, and
//! eval-mode prediction.

use crate::config::{FLConfig, Method};
use crate::embedding::{
    extract_on_tape, penalty_on_tape, Embedding, ExtractorArch, NoiseDraw, NoiseShape,
    PenaltyConfig,
};
use crate::error::{Error, Result};
use crate::hypernet::{generate_on_tape, param_budget, BudgetReport, HypernetArch};
use crate::params::{MlpArch, ParamBundle};
use crate::rng::{Purpose, RngStream};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const CLASSIFIER_GROUP: &str = "classifier";

/// Architectures and loss settings for one method.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub method: Method,
    /// Classifier `feature_dim → hidden… → classes`; for HyperFedZero this is
    /// the generated network.
    pub classifier: MlpArch,
    pub extractor: Option<ExtractorArch>,
    pub hypernet: Option<HypernetArch>,
    /// `[x ‖ e]` classifier for the input-conditioned baseline.
    pub augmented: Option<MlpArch>,
    pub penalty: PenaltyConfig,
    pub noise: NoiseShape,
}

/// Loss terms recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub loss: Var,
    pub cross_entropy: Var,
    pub penalty: Option<Var>,
}

impl ModelSpec {
    pub fn from_config(cfg: &FLConfig, feature_dim: usize, num_classes: usize) -> Result<Self> {
        let mut widths = vec![feature_dim];
        widths.extend(&cfg.classifier_hidden);
        widths.push(num_classes);
        let classifier = MlpArch::relu(widths.clone())?;

        let extractor = cfg
            .method
            .uses_extractor()
            .then(|| ExtractorArch::new(feature_dim, cfg.extractor_hidden.clone(), cfg.embed_dim))
            .transpose()?;
        let hypernet = (cfg.method == Method::Hyperfedzero)
            .then(|| {
                HypernetArch::new(
                    cfg.embed_dim,
                    cfg.chunk_dim,
                    cfg.trunk_hidden.clone(),
                    cfg.chunk_size,
                    classifier.total_params(),
                )
            })
            .transpose()?;
        let augmented = (cfg.method == Method::Opt1)
            .then(|| {
                let mut w = widths.clone();
                w[0] += cfg.embed_dim;
                MlpArch::relu(w)
            })
            .transpose()?;
        Ok(ModelSpec {
            method: cfg.method,
            classifier,
            extractor,
            hypernet,
            augmented,
            penalty: PenaltyConfig::new(cfg.alpha, cfg.beta)?,
            noise: cfg.noise,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.output_dim()
    }

    pub fn has_extractor(&self) -> bool {
        self.extractor.is_some()
    }

    /// Initial parameters, group order fixed per method.
    pub fn init_bundle(&self, seed: u64) -> ParamBundle {
        let init = RngStream::labelled(seed, 0, 0, Purpose::Init, 0);
        match self.method {
            Method::Hyperfedzero => {
                let ext = self
                    .extractor
                    .as_ref()
                    .expect("built with extractor")
                    .init(seed);
                let h = self
                    .hypernet
                    .as_ref()
                    .expect("built with hypernet")
                    .init(seed);
                ParamBundle::new(vec![ext.main, ext.noisy, h])
            }
            Method::Opt1 => {
                let ext = self
                    .extractor
                    .as_ref()
                    .expect("built with extractor")
                    .init(seed);
                let c = self.augmented.as_ref().expect("built with augmented").init(
                    CLASSIFIER_GROUP,
                    &init,
                    1.0,
                );
                ParamBundle::new(vec![ext.main, ext.noisy, c])
            }
            Method::Fedavg | Method::FedavgFt | Method::Local => {
                ParamBundle::new(vec![self.classifier.init(CLASSIFIER_GROUP, &init, 1.0)])
            }
        }
    }

    /// All-zero parameters with the layout of [`init_bundle`](Self::init_bundle).
    pub fn zero_bundle(&self) -> ParamBundle {
        let mut b = self.init_bundle(0);
        b.groups
            .iter_mut()
            .for_each(|g| g.values.iter_mut().for_each(|v| *v = 0.0));
        b
    }

    /// Records the bundle's groups as leaves, in order.
    pub fn leaves(&self, tape: &mut Tape, bundle: &ParamBundle) -> Result<Vec<Var>> {
        bundle
            .groups
            .iter()
            .map(|g| tape.leaf(g.as_tensor()))
            .collect()
    }

    fn embed(
        &self,
        tape: &mut Tape,
        x: Var,
        leaves: &[Var],
        noise: Option<NoiseDraw<'_>>,
    ) -> Result<Var> {
        let arch = self
            .extractor
            .as_ref()
            .ok_or_else(|| Error::contract("method has no extractor"))?;
        extract_on_tape(tape, x, leaves[0], leaves[1], arch, noise)
    }

    /// Logits for `x`; `noise` is `Some` only in training mode.
    pub fn logits_on_tape(
        &self,
        tape: &mut Tape,
        x: Var,
        leaves: &[Var],
        noise: Option<NoiseDraw<'_>>,
    ) -> Result<(Var, Option<Var>)> {
        match self.method {
            Method::Hyperfedzero => {
                let e = self.embed(tape, x, leaves, noise)?;
                let gen = generate_on_tape(
                    tape,
                    e,
                    leaves[2],
                    self.hypernet.as_ref().expect("hypernet"),
                )?;
                Ok((self.classifier.forward_batched(tape, x, gen)?, Some(e)))
            }
            Method::Opt1 => {
                let e = self.embed(tape, x, leaves, noise)?;
                let xe = tape.concat_cols(x, e)?;
                let aug = self.augmented.as_ref().expect("augmented");
                Ok((aug.forward(tape, xe, leaves[2], 0)?, Some(e)))
            }
            Method::Fedavg | Method::FedavgFt | Method::Local => {
                Ok((self.classifier.forward(tape, x, leaves[0], 0)?, None))
            }
        }
    }

    /// Cross-entropy plus, for embedding methods, the balancing penalty.
    pub fn loss_on_tape(
        &self,
        tape: &mut Tape,
        x: Var,
        labels: &[usize],
        leaves: &[Var],
        noise: Option<NoiseDraw<'_>>,
    ) -> Result<LossVars> {
        let (logits, e) = self.logits_on_tape(tape, x, leaves, noise)?;
        let ce = tape.cross_entropy(logits, labels)?;
        match e {
            Some(e) => {
                let pen = penalty_on_tape(tape, e, self.penalty)?;
                Ok(LossVars {
                    loss: tape.add(ce, pen)?,
                    cross_entropy: ce,
                    penalty: Some(pen),
                })
            }
            None => Ok(LossVars {
                loss: ce,
                cross_entropy: ce,
                penalty: None,
            }),
        }
    }

    /// Eval-mode logits (noise off).
    pub fn logits(&self, bundle: &ParamBundle, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone())?;
        let leaves = self.leaves(&mut tape, bundle)?;
        let (logits, _) = self.logits_on_tape(&mut tape, xv, &leaves, None)?;
        Ok(tape.value(logits).clone())
    }

    /// Eval-mode embeddings, for methods with an extractor.
    pub fn embeddings(&self, bundle: &ParamBundle, x: &Tensor) -> Result<Embedding> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone())?;
        let leaves = self.leaves(&mut tape, bundle)?;
        let e = self.embed(&mut tape, xv, &leaves, None)?;
        Embedding::new(tape.value(e).clone())
    }

    /// Parameter budget of the generated side against a directly trained
    /// classifier. Only meaningful for HyperFedZero.
    pub fn budget(&self) -> Result<BudgetReport> {
        match (&self.extractor, &self.hypernet) {
            (Some(e), Some(h)) => Ok(param_budget(&self.classifier, e, h)),
            _ => Err(Error::Config(format!(
                "parameter budget needs method hyperfedzero, got {}",
                self.method.as_str()
            ))),
        }
    }
}

/// Index of the largest logit per row; ties go to the lowest index.
pub fn argmax_rows(logits: &Tensor) -> Result<Vec<usize>> {
    let (rows, _) = logits.dims2()?;
    Ok((0..rows)
        .map(|i| {
            let r = logits.row(i);
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}
