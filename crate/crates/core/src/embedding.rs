//! Distribution extractor with input-dependent noise, the balancing penalty
//! that keeps embeddings spread out, and the collapse diagnostic.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{FlatParams, MlpArch};
use crate::rng::{Purpose, RngStream};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const MAIN_GROUP: &str = "extractor";
pub const NOISY_GROUP: &str = "noisy";

/// Shape shared by the main extractor and the noisy network:
/// `feature_dim → hidden… → embed_dim`, ReLU hidden units.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorArch {
    pub feature_dim: usize,
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
}

impl ExtractorArch {
    pub fn new(feature_dim: usize, hidden: Vec<usize>, embed_dim: usize) -> Result<Self> {
        let arch = ExtractorArch {
            feature_dim,
            hidden,
            embed_dim,
        };
        arch.mlp()?;
        Ok(arch)
    }

    pub fn mlp(&self) -> Result<MlpArch> {
        let mut widths = vec![self.feature_dim];
        widths.extend(&self.hidden);
        widths.push(self.embed_dim);
        MlpArch::relu(widths)
    }

    /// Parameters in one of the two networks.
    pub fn network_params(&self) -> usize {
        self.mlp().map_or(0, |m| m.total_params())
    }

    pub fn init(&self, seed: u64) -> ExtractorParams {
        let mlp = self.mlp().expect("validated at construction");
        ExtractorParams {
            main: mlp.init(
                MAIN_GROUP,
                &RngStream::labelled(seed, 0, 0, Purpose::Init, 1),
                1.0,
            ),
            noisy: mlp.init(
                NOISY_GROUP,
                &RngStream::labelled(seed, 0, 0, Purpose::Init, 2),
                1.0,
            ),
        }
    }

    pub fn zeros(&self) -> ExtractorParams {
        let mlp = self.mlp().expect("validated at construction");
        ExtractorParams {
            main: mlp.zeros(MAIN_GROUP),
            noisy: mlp.zeros(NOISY_GROUP),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractorParams {
    pub main: FlatParams,
    pub noisy: FlatParams,
}

/// How the standard-normal noise multiplier is drawn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseShape {
    /// Independent draw for every sample and embedding dimension.
    #[default]
    PerDimension,
    /// One draw per sample shared by all dimensions.
    Scalar,
}

/// Per-sample probability vectors, one row per input.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    values: Tensor,
}

const SIMPLEX_TOL: f64 = 1e-9;

impl Embedding {
    pub fn new(values: Tensor) -> Result<Self> {
        let (rows, _) = values.dims2()?;
        if rows == 0 {
            return Err(Error::contract("embedding has no rows"));
        }
        for i in 0..rows {
            let r = values.row(i);
            if r.iter().any(|&v| v <= 0.0) {
                return Err(Error::contract(format!(
                    "embedding row {i} is not strictly positive"
                )));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::contract(format!("embedding row {i} sums to {s}")));
            }
        }
        Ok(Embedding { values })
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn rows(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    /// Column means.
    pub fn mean_row(&self) -> Vec<f64> {
        let (rows, cols) = (self.rows(), self.dim());
        let mut m = vec![0.0; cols];
        for i in 0..rows {
            m.iter_mut().zip(self.row(i)).for_each(|(a, v)| *a += v);
        }
        m.iter_mut().for_each(|a| *a /= rows as f64);
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl PenaltyConfig {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha.is_finite() && beta.is_finite() && alpha >= 0.0 && beta >= 0.0) {
            return Err(Error::Config(format!(
                "penalty weights must be finite and non-negative, got alpha={alpha}, beta={beta}"
            )));
        }
        Ok(PenaltyConfig { alpha, beta })
    }
}

/// Noise source for a training-mode forward pass.
#[derive(Clone, Copy, Debug)]
pub struct NoiseDraw<'a> {
    pub stream: &'a RngStream,
    pub shape: NoiseShape,
}

/// Records `softmax(f(x) + z ⊙ softplus(noisy(x)))` on the tape, or
/// `softmax(f(x))` when `noise` is `None`. `z` enters as a constant.
pub fn extract_on_tape(
    tape: &mut Tape,
    x: Var,
    main: Var,
    noisy: Var,
    arch: &ExtractorArch,
    noise: Option<NoiseDraw<'_>>,
) -> Result<Var> {
    let mlp = arch.mlp()?;
    let mut logits = mlp.forward(tape, x, main, 0)?;
    if let Some(draw) = noise {
        let (rows, cols) = tape.value(logits).dims2()?;
        let scale = mlp.forward(tape, x, noisy, 0)?;
        let scale = tape.softplus(scale)?;
        let z = match draw.shape {
            NoiseShape::PerDimension => draw.stream.gaussian(&[rows, cols]),
            NoiseShape::Scalar => draw.stream.gaussian_per_row(rows, cols),
        };
        let z = tape.leaf(z)?;
        let jitter = tape.mul(z, scale)?;
        logits = tape.add(logits, jitter)?;
    }
    tape.softmax(logits)
}

/// Embeddings for a batch `x [B×feature_dim]`. With `train_mode` off the
/// noise branch is skipped entirely and `rng` is unused.
pub fn extract(
    x: &Tensor,
    params: &ExtractorParams,
    arch: &ExtractorArch,
    rng: &RngStream,
    train_mode: bool,
    shape: NoiseShape,
) -> Result<Embedding> {
    let (rows, cols) = x.dims2()?;
    if rows == 0 {
        return Err(Error::contract("extract needs at least one sample"));
    }
    if cols != arch.feature_dim {
        return Err(Error::shape(format!(
            "extractor expects {} features, got {cols}",
            arch.feature_dim
        )));
    }
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone())?;
    let main = tape.leaf(params.main.as_tensor())?;
    let noisy = tape.leaf(params.noisy.as_tensor())?;
    let draw = train_mode.then_some(NoiseDraw { stream: rng, shape });
    let e = extract_on_tape(&mut tape, xv, main, noisy, arch, draw)?;
    Embedding::new(tape.value(e).clone())
}

/// `α·var(s)/mean(s) + β·mean_b Σ_p −e_bp ln e_bp` with `s = Σ_b e_b`,
/// population variance over the `P` entries of `s`.
pub fn penalty_on_tape(tape: &mut Tape, e: Var, cfg: PenaltyConfig) -> Result<Var> {
    let (rows, _) = tape.value(e).dims2()?;
    if rows == 0 {
        return Err(Error::contract("balancing penalty needs at least one row"));
    }
    let importance = tape.sum_rows(e)?;
    let mean = tape.mean(importance)?;
    let neg_mean = tape.scale(mean, -1.0)?;
    let centered = tape.add_scalar(importance, neg_mean)?;
    let sq = tape.mul(centered, centered)?;
    let var = tape.mean(sq)?;
    let dispersion = tape.div_scalar(var, mean)?;

    let ent = tape.neg_xlogx(e)?;
    let ent = tape.sum(ent)?;
    let ent = tape.scale(ent, 1.0 / rows as f64)?;

    let a = tape.scale(dispersion, cfg.alpha)?;
    let b = tape.scale(ent, cfg.beta)?;
    tape.add(a, b)
}

/// Penalty value for rows on the closed simplex (one-hot rows allowed).
pub fn balancing_penalty(e: &Tensor, cfg: PenaltyConfig) -> Result<f64> {
    let mut tape = Tape::new();
    let ev = tape.leaf(e.clone())?;
    let p = penalty_on_tape(&mut tape, ev, cfg)?;
    Ok(tape.value(p).item())
}

/// Mean pairwise Euclidean distance between per-client mean embeddings.
/// Zero means every client maps to the same point.
pub fn collapse_metric(per_client: &[Embedding]) -> Result<f64> {
    if per_client.len() < 2 {
        return Err(Error::contract(
            "collapse_metric needs at least two clients",
        ));
    }
    let means: Vec<Vec<f64>> = per_client.iter().map(Embedding::mean_row).collect();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..means.len() {
        for j in i + 1..means.len() {
            let d: f64 = means[i]
                .iter()
                .zip(&means[j])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            total += d;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// Writes `client_id,label,e_1,…,e_P` rows. `header` adds the column names.
pub fn write_embeddings_csv<W: Write>(
    mut w: W,
    client_id: usize,
    labels: &[usize],
    embedding: &Embedding,
    header: bool,
) -> Result<()> {
    let io = |e| Error::io("embeddings.csv", e);
    if labels.len() != embedding.rows() {
        return Err(Error::shape("one label per embedding row required"));
    }
    if header {
        let cols: Vec<String> = (1..=embedding.dim()).map(|p| format!("e_{p}")).collect();
        writeln!(w, "client_id,label,{}", cols.join(",")).map_err(io)?;
    }
    for (i, y) in labels.iter().enumerate() {
        let vals: Vec<String> = embedding
            .row(i)
            .iter()
            .map(|v| format!("{v:.16e}"))
            .collect();
        writeln!(w, "{client_id},{y},{}", vals.join(",")).map_err(io)?;
    }
    Ok(())
}
