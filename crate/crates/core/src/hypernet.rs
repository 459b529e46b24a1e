//! Chunked hypernetwork: embedding → full flat classifier parameter vector.
//!
//! The target vector is produced `chunk_size` entries at a time. Every chunk
//! has a learnable identity vector; the trunk MLP maps
//! `[embedding ‖ chunk identity]` to that chunk's entries. Chunks are
//! concatenated in order and the surplus of the last chunk is dropped.

use serde::{Deserialize, Serialize};

use crate::embedding::ExtractorArch;
use crate::error::{Error, Result};
use crate::params::{FlatParams, ManifestEntry, MlpArch};
use crate::rng::{gaussian_vec, Purpose, RngStream};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const HYPERNET_GROUP: &str = "hypernet";
const CHUNK_INIT_STD: f64 = 1.0;
const TRUNK_OUTPUT_SCALE: f64 = 1.0;

/// `(num_chunks, padding)` needed to cover `total_params` in chunks of `chunk_size`.
pub fn chunk_layout(total_params: usize, chunk_size: usize) -> Result<(usize, usize)> {
    if total_params == 0 || chunk_size == 0 {
        return Err(Error::Config("chunk layout needs positive sizes".into()));
    }
    let chunks = total_params.div_ceil(chunk_size);
    Ok((chunks, chunks * chunk_size - total_params))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypernetArch {
    pub embed_dim: usize,
    pub chunk_dim: usize,
    pub trunk_hidden: Vec<usize>,
    pub chunk_size: usize,
    /// Length of the generated vector (the classifier's parameter count).
    pub target_params: usize,
}

impl HypernetArch {
    pub fn new(
        embed_dim: usize,
        chunk_dim: usize,
        trunk_hidden: Vec<usize>,
        chunk_size: usize,
        target_params: usize,
    ) -> Result<Self> {
        let arch = HypernetArch {
            embed_dim,
            chunk_dim,
            trunk_hidden,
            chunk_size,
            target_params,
        };
        chunk_layout(target_params, chunk_size)?;
        if embed_dim == 0 || chunk_dim == 0 {
            return Err(Error::Config("hypernetwork widths must be positive".into()));
        }
        arch.trunk()?;
        Ok(arch)
    }

    pub fn num_chunks(&self) -> usize {
        self.target_params.div_ceil(self.chunk_size)
    }

    pub fn trunk(&self) -> Result<MlpArch> {
        let mut widths = vec![self.embed_dim + self.chunk_dim];
        widths.extend(&self.trunk_hidden);
        widths.push(self.chunk_size);
        MlpArch::relu(widths)
    }

    fn chunk_table_len(&self) -> usize {
        self.num_chunks() * self.chunk_dim
    }

    /// Chunk identities plus trunk.
    pub fn total_params(&self) -> usize {
        self.chunk_table_len() + self.trunk().map_or(0, |t| t.total_params())
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        let mut out = vec![ManifestEntry {
            name: "chunk_embeddings".into(),
            shape: vec![self.num_chunks(), self.chunk_dim],
        }];
        let trunk = self.trunk().expect("validated");
        out.extend(trunk.manifest().into_iter().map(|e| ManifestEntry {
            name: format!("trunk.{}", e.name),
            ..e
        }));
        out
    }

    /// Chunk identities ~ N(0, 1) and a fan-in uniform trunk, which puts the
    /// first generated weights at a standard deviation near 0.1.
    pub fn init(&self, seed: u64) -> FlatParams {
        let mut rng = RngStream::labelled(seed, 0, 0, Purpose::Init, 3).generator();
        let mut values: Vec<f64> = gaussian_vec(&mut rng, self.chunk_table_len())
            .into_iter()
            .map(|z| z * CHUNK_INIT_STD)
            .collect();
        let trunk = self.trunk().expect("validated");
        let t = trunk.init(
            "trunk",
            &RngStream::labelled(seed, 0, 0, Purpose::Init, 4),
            TRUNK_OUTPUT_SCALE,
        );
        values.extend(t.values);
        FlatParams::new(HYPERNET_GROUP, values, self.manifest()).expect("manifest matches")
    }

    pub fn zeros(&self) -> FlatParams {
        FlatParams::new(
            HYPERNET_GROUP,
            vec![0.0; self.total_params()],
            self.manifest(),
        )
        .expect("manifest matches")
    }

    fn check(&self, classifier: &MlpArch) -> Result<()> {
        if classifier.total_params() != self.target_params {
            return Err(Error::Config(format!(
                "hypernetwork targets {} parameters but the classifier has {}",
                self.target_params,
                classifier.total_params()
            )));
        }
        Ok(())
    }
}

/// Raw trunk outputs for every (row, chunk) pair: `[B·J × chunk_size]`,
/// row `b·J + j` is chunk `j` of sample `b`.
pub fn trunk_outputs_on_tape(
    tape: &mut Tape,
    e: Var,
    theta_h: Var,
    arch: &HypernetArch,
) -> Result<Var> {
    let (_, p) = tape.value(e).dims2()?;
    if p != arch.embed_dim {
        return Err(Error::Config(format!(
            "hypernetwork expects {}-dim embeddings, got {p}",
            arch.embed_dim
        )));
    }
    if tape.value(theta_h).len() != arch.total_params() {
        return Err(Error::Config(format!(
            "hypernetwork parameters have length {}, layout needs {}",
            tape.value(theta_h).len(),
            arch.total_params()
        )));
    }
    let chunks = tape.slice(theta_h, 0, &[arch.num_chunks(), arch.chunk_dim])?;
    let inputs = tape.pair_concat(e, chunks)?;
    arch.trunk()?
        .forward(tape, inputs, theta_h, arch.chunk_table_len())
}

/// Concatenates chunk outputs per sample and truncates to `target_params`.
pub fn assemble_on_tape(
    tape: &mut Tape,
    raw: Var,
    rows: usize,
    arch: &HypernetArch,
) -> Result<Var> {
    let width = arch.num_chunks() * arch.chunk_size;
    let joined = tape.reshape(raw, &[rows, width])?;
    tape.narrow_cols(joined, 0, arch.target_params)
}

/// Generated parameter vectors `[B × target_params]` for embeddings `e [B×P]`.
pub fn generate_on_tape(tape: &mut Tape, e: Var, theta_h: Var, arch: &HypernetArch) -> Result<Var> {
    let rows = tape.value(e).dims2()?.0;
    let raw = trunk_outputs_on_tape(tape, e, theta_h, arch)?;
    assemble_on_tape(tape, raw, rows, arch)
}

/// A classifier parameter vector produced for one embedding row.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratedParams {
    pub values: Vec<f64>,
    /// The embedding row it was generated from.
    pub embedding: Vec<f64>,
}

pub fn generate(
    e_row: &[f64],
    params: &FlatParams,
    arch: &HypernetArch,
    classifier: &MlpArch,
) -> Result<GeneratedParams> {
    arch.check(classifier)?;
    let mut tape = Tape::new();
    let e = tape.leaf(Tensor::new(vec![1, e_row.len()], e_row.to_vec())?)?;
    let theta = tape.leaf(params.as_tensor())?;
    let out = generate_on_tape(&mut tape, e, theta, arch)?;
    Ok(GeneratedParams {
        values: tape.value(out).data().to_vec(),
        embedding: e_row.to_vec(),
    })
}

/// Logits of the classifier described by `gen` for a single input row.
pub fn forward_generated(
    x_row: &[f64],
    gen: &GeneratedParams,
    classifier: &MlpArch,
) -> Result<Vec<f64>> {
    if gen.values.len() != classifier.total_params() {
        return Err(Error::shape(format!(
            "generated vector has {} entries, classifier needs {}",
            gen.values.len(),
            classifier.total_params()
        )));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![1, x_row.len()], x_row.to_vec())?)?;
    let p = tape.leaf(Tensor::new(vec![1, gen.values.len()], gen.values.clone())?)?;
    let logits = classifier.forward_batched(&mut tape, x, p)?;
    Ok(tape.value(logits).data().to_vec())
}

/// Input-conditioned baseline: a shared MLP applied to `[x ‖ e]`.
pub fn forward_opt1(
    x_row: &[f64],
    e_row: &[f64],
    theta: &FlatParams,
    arch_aug: &MlpArch,
) -> Result<Vec<f64>> {
    if x_row.len() + e_row.len() != arch_aug.input_dim() {
        return Err(Error::shape(format!(
            "augmented classifier takes {} inputs, got {} + {}",
            arch_aug.input_dim(),
            x_row.len(),
            e_row.len()
        )));
    }
    if theta.len() != arch_aug.total_params() {
        return Err(Error::shape(
            "parameter vector does not match the augmented classifier",
        ));
    }
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![1, x_row.len()], x_row.to_vec())?)?;
    let e = tape.leaf(Tensor::new(vec![1, e_row.len()], e_row.to_vec())?)?;
    let xe = tape.concat_cols(x, e)?;
    let p = tape.leaf(theta.as_tensor())?;
    let logits = arch_aug.forward(&mut tape, xe, p, 0)?;
    Ok(tape.value(logits).data().to_vec())
}

/// Parameter counts on both sides of the generated-vs-direct comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetReport {
    pub extractor: usize,
    pub noisy: usize,
    pub hypernet: usize,
    /// extractor + noisy + hypernet
    pub generated_side: usize,
    pub classifier: usize,
    pub ratio: f64,
    pub num_chunks: usize,
    pub padding: usize,
}

impl BudgetReport {
    /// Relative size difference against the classifier, in percent.
    pub fn delta_percent(&self) -> f64 {
        (self.ratio - 1.0) * 100.0
    }
}

impl std::fmt::Display for BudgetReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "extractor      {}", self.extractor)?;
        writeln!(f, "noisy          {}", self.noisy)?;
        writeln!(f, "hypernet       {}", self.hypernet)?;
        writeln!(f, "generated side {}", self.generated_side)?;
        writeln!(f, "classifier     {}", self.classifier)?;
        writeln!(
            f,
            "chunks         {} (padding {})",
            self.num_chunks, self.padding
        )?;
        writeln!(f, "ratio          {:.4}", self.ratio)?;
        write!(f, "delta          {:+.2}%", self.delta_percent())
    }
}

pub fn param_budget(
    classifier: &MlpArch,
    extractor: &ExtractorArch,
    hypernet: &HypernetArch,
) -> BudgetReport {
    let net = extractor.network_params();
    let h = hypernet.total_params();
    let generated_side = 2 * net + h;
    let c = classifier.total_params();
    BudgetReport {
        extractor: net,
        noisy: net,
        hypernet: h,
        generated_side,
        classifier: c,
        ratio: generated_side as f64 / c as f64,
        num_chunks: hypernet.num_chunks(),
        padding: hypernet.num_chunks() * hypernet.chunk_size - hypernet.target_params,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layouts() {
        assert_eq!(chunk_layout(10, 4).unwrap(), (3, 2));
        assert_eq!(chunk_layout(8, 4).unwrap(), (2, 0));
        assert_eq!(chunk_layout(1, 576).unwrap(), (1, 575));
        assert!(chunk_layout(0, 4).is_err());
        assert!(chunk_layout(4, 0).is_err());
    }

    #[test]
    fn zero_trunk_generates_zero_classifier() {
        let clf = MlpArch::relu(vec![3, 5, 4]).unwrap();
        let arch = HypernetArch::new(4, 2, vec![6], 7, clf.total_params()).unwrap();
        let gen = generate(&[0.1, 0.2, 0.3, 0.4], &arch.zeros(), &arch, &clf).unwrap();
        assert!(gen.values.iter().all(|&v| v == 0.0));
        let logits = forward_generated(&[1.0, -2.0, 0.5], &gen, &clf).unwrap();
        assert_eq!(logits, vec![0.0; 4]);
    }

    #[test]
    fn identity_generated_classifier() {
        let clf = MlpArch::relu(vec![2, 2]).unwrap();
        let gen = GeneratedParams {
            values: vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
            embedding: vec![],
        };
        assert_eq!(
            forward_generated(&[3.0, -1.0], &gen, &clf).unwrap(),
            vec![3.0, -1.0]
        );
    }

    #[test]
    fn layout_mismatch_is_config_error() {
        let clf = MlpArch::relu(vec![2, 2]).unwrap();
        let arch = HypernetArch::new(2, 1, vec![], 4, 7).unwrap();
        assert!(matches!(
            generate(&[0.5, 0.5], &arch.zeros(), &arch, &clf),
            Err(Error::Config(_))
        ));
        let bad = GeneratedParams {
            values: vec![0.0; 5],
            embedding: vec![],
        };
        assert!(matches!(
            forward_generated(&[1.0, 1.0], &bad, &clf),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn opt1_zero_and_width_check() {
        let arch = MlpArch::relu(vec![3, 4, 2]).unwrap();
        let theta = arch.zeros("c");
        assert_eq!(
            forward_opt1(&[1.0, 2.0], &[0.5], &theta, &arch).unwrap(),
            vec![0.0, 0.0]
        );
        assert!(forward_opt1(&[1.0, 2.0], &[0.5, 0.5], &theta, &arch).is_err());
    }

    #[test]
    fn budget_arithmetic() {
        let clf = MlpArch::relu(vec![10, 8, 2]).unwrap();
        let ext = ExtractorArch::new(10, vec![], 2).unwrap();
        let h = HypernetArch::new(2, 1, vec![], 10, clf.total_params()).unwrap();
        let r = param_budget(&clf, &ext, &h);
        assert_eq!(r.classifier, 10 * 8 + 8 + 8 * 2 + 2);
        assert_eq!(r.extractor, 22);
        assert_eq!(r.hypernet, 11 + (3 * 10 + 10));
        assert_eq!(r.generated_side, 22 + 22 + 51);
        assert_eq!(r.ratio, 95.0 / 106.0);
    }
}
