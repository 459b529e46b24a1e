//! Reverse-mode automatic differentiation on a per-step tape.
//!
//! Nodes are appended in evaluation order, so the node vector is already a
//! topological order; backward walks it once in reverse. A tape is rebuilt for
//! every training step and never shared between threads.

use crate::error::{Error, Result};
use crate::tensor::{matmul_into, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `[B×n] + [n]`
    AddBias(Var, Var),
    /// tensor + scalar node, broadcast
    AddScalar(Var, Var),
    /// tensor / scalar node, broadcast
    DivScalar(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Softplus(Var),
    Softmax(Var),
    NegXLogX(Var),
    SumRows(Var),
    Sum(Var),
    Mean(Var),
    Slice {
        src: Var,
        offset: usize,
    },
    Reshape(Var),
    NarrowCols {
        src: Var,
        start: usize,
    },
    ConcatCols(Var, Var),
    PairConcat(Var, Var),
    BatchedLinear {
        x: Var,
        params: Var,
        offset: usize,
        fan_in: usize,
        fan_out: usize,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias(..) => "add_bias",
            Op::AddScalar(..) => "add_scalar",
            Op::DivScalar(..) => "div_scalar",
            Op::Scale(..) => "scale",
            Op::Relu(_) => "relu",
            Op::Softplus(_) => "softplus",
            Op::Softmax(_) => "softmax",
            Op::NegXLogX(_) => "neg_xlogx",
            Op::SumRows(_) => "sum_rows",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Slice { .. } => "slice",
            Op::Reshape(_) => "reshape",
            Op::NarrowCols { .. } => "narrow_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::PairConcat(..) => "pair_concat",
            Op::BatchedLinear { .. } => "batched_linear",
            Op::CrossEntropy { .. } => "cross_entropy",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation graph for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zeros when the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.adjoints[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.adjoints[v.0].as_ref()
    }
}

/// Numerically stable `ln(1 + e^v)`.
pub fn softplus_scalar(v: f64) -> f64 {
    (-v.abs()).exp().ln_1p() + v.max(0.0)
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Row-wise max-subtracted softmax over the last axis.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (_, cols) = x.rows_last()?;
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

fn neg_xlogx(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        -v * v.ln()
    }
}

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn expect_scalar(op: &str, t: &Tensor) -> Result<()> {
    if t.len() != 1 {
        return Err(Error::shape(format!(
            "{op}: expected a scalar, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes checked by caller")
}

fn map(a: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = a.data().iter().map(|&x| f(x)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("same length")
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                op: op.name().to_string(),
            });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an input or parameter.
    pub fn leaf(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let out = zip_map(x, y, |p, q| p + q);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("sub", x, y)?;
        let out = zip_map(x, y, |p, q| p - q);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let out = zip_map(x, y, |p, q| p * q);
        self.push(out, Op::Mul(a, b))
    }

    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let (_, cols) = xv.dims2()?;
        if bv.shape() != [cols] {
            return Err(Error::shape(format!(
                "add_bias: bias shape {:?} does not match {cols} columns",
                bv.shape()
            )));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(cols) {
            for (o, b) in row.iter_mut().zip(bv.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddBias(x, bias))
    }

    pub fn add_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        expect_scalar("add_scalar", self.value(s))?;
        let sv = self.value(s).item();
        let out = map(self.value(a), |v| v + sv);
        self.push(out, Op::AddScalar(a, s))
    }

    pub fn div_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        expect_scalar("div_scalar", self.value(s))?;
        let sv = self.value(s).item();
        let out = map(self.value(a), |v| v / sv);
        self.push(out, Op::DivScalar(a, s))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let out = map(self.value(a), |v| v * factor);
        self.push(out, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = map(self.value(a), |v| v.max(0.0));
        self.push(out, Op::Relu(a))
    }

    pub fn softplus(&mut self, a: Var) -> Result<Var> {
        let out = map(self.value(a), softplus_scalar);
        self.push(out, Op::Softplus(a))
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = softmax_rows(self.value(a))?;
        self.push(out, Op::Softmax(a))
    }

    /// Elementwise `-v ln v` with `0 ln 0 = 0`.
    pub fn neg_xlogx(&mut self, a: Var) -> Result<Var> {
        if self.value(a).data().iter().any(|&v| v < 0.0) {
            return Err(Error::contract("neg_xlogx: negative input"));
        }
        let out = map(self.value(a), neg_xlogx);
        self.push(out, Op::NegXLogX(a))
    }

    /// Sums a matrix over its rows: `[B×P] -> [P]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.value(a).dims2()?;
        let mut out = vec![0.0; cols];
        for i in 0..rows {
            for (o, v) in out.iter_mut().zip(self.value(a).row(i)) {
                *o += v;
            }
        }
        self.push(Tensor::vector(out), Op::SumRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let total = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::shape("mean of an empty tensor"));
        }
        let total: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total / n as f64), Op::Mean(a))
    }

    /// Views `shape.product()` consecutive entries of a flat tensor starting at `offset`.
    pub fn slice(&mut self, src: Var, offset: usize, shape: &[usize]) -> Result<Var> {
        let len: usize = shape.iter().product();
        let data = self.value(src).data();
        if offset + len > data.len() {
            return Err(Error::shape(format!(
                "slice {offset}..{} exceeds length {}",
                offset + len,
                data.len()
            )));
        }
        let out = Tensor::new(shape.to_vec(), data[offset..offset + len].to_vec())?;
        self.push(out, Op::Slice { src, offset })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).reshape(shape.to_vec())?;
        self.push(out, Op::Reshape(a))
    }

    /// Keeps columns `start..start + len` of a matrix.
    pub fn narrow_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let src = self.value(a);
        let (rows, cols) = src.dims2()?;
        if start + len > cols {
            return Err(Error::shape(format!(
                "narrow_cols {start}..{} exceeds {cols} columns",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(rows * len);
        for i in 0..rows {
            data.extend_from_slice(&src.row(i)[start..start + len]);
        }
        let out = Tensor::new(vec![rows, len], data)?;
        self.push(out, Op::NarrowCols { src: a, start })
    }

    /// `[B×p] ‖ [B×q] -> [B×(p+q)]`.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.value(a).dims2()?;
        let (rb, cb) = self.value(b).dims2()?;
        if ra != rb {
            return Err(Error::shape(format!("concat_cols: {ra} rows vs {rb} rows")));
        }
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            data.extend_from_slice(self.value(a).row(i));
            data.extend_from_slice(self.value(b).row(i));
        }
        let out = Tensor::new(vec![ra, ca + cb], data)?;
        self.push(out, Op::ConcatCols(a, b))
    }

    /// Every pairing of a row of `a [B×p]` with a row of `b [J×q]`:
    /// output row `i·J + j` is `a[i] ‖ b[j]`.
    pub fn pair_concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.value(a).dims2()?;
        let (rb, cb) = self.value(b).dims2()?;
        let mut data = Vec::with_capacity(ra * rb * (ca + cb));
        for i in 0..ra {
            for j in 0..rb {
                data.extend_from_slice(self.value(a).row(i));
                data.extend_from_slice(self.value(b).row(j));
            }
        }
        let out = Tensor::new(vec![ra * rb, ca + cb], data)?;
        self.push(out, Op::PairConcat(a, b))
    }

    /// Per-row affine map with per-row weights.
    ///
    /// Row `b` of `params` holds a `fan_in×fan_out` weight matrix (row-major) at
    /// `offset`, followed by `fan_out` biases; output row `b` is
    /// `x[b] · W_b + bias_b`.
    pub fn batched_linear(
        &mut self,
        x: Var,
        params: Var,
        offset: usize,
        fan_in: usize,
        fan_out: usize,
    ) -> Result<Var> {
        let (xv, pv) = (self.value(x), self.value(params));
        let (rows, cols) = xv.dims2()?;
        let (prows, pcols) = pv.dims2()?;
        if cols != fan_in || rows != prows || offset + fan_in * fan_out + fan_out > pcols {
            return Err(Error::shape(format!(
                "batched_linear: x {rows}x{cols}, params {prows}x{pcols}, layer {fan_in}->{fan_out} at {offset}"
            )));
        }
        let mut out = vec![0.0; rows * fan_out];
        for b in 0..rows {
            let p = pv.row(b);
            let w = &p[offset..offset + fan_in * fan_out];
            let bias = &p[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let o = &mut out[b * fan_out..(b + 1) * fan_out];
            o.copy_from_slice(bias);
            matmul_into(xv.row(b), w, o, 1, fan_in, fan_out);
        }
        let out = Tensor::new(vec![rows, fan_out], out)?;
        self.push(
            out,
            Op::BatchedLinear {
                x,
                params,
                offset,
                fan_in,
                fan_out,
            },
        )
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, classes) = lv.dims2()?;
        if rows != labels.len() {
            return Err(Error::shape(format!(
                "cross_entropy: {rows} logit rows for {} labels",
                labels.len()
            )));
        }
        if rows == 0 {
            return Err(Error::contract("cross_entropy on an empty batch"));
        }
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            if y >= classes {
                return Err(Error::Index(format!(
                    "label {y} out of range for {classes} classes"
                )));
            }
            let row = lv.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let out = Tensor::scalar(total / rows as f64);
        self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
        )
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Tensor::filled(self.value(root).shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.propagate(&node.op, &node.value, &g, &mut adj)?;
            adj[idx] = Some(g);
        }

        for (i, a) in adj.iter().enumerate() {
            if let Some(t) = a {
                if !t.is_finite() {
                    return Err(Error::NonFinite {
                        op: format!("backward through {}", self.nodes[i].op.name()),
                    });
                }
            }
        }
        adj.resize(self.nodes.len(), None);
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients {
            adjoints: adj,
            shapes,
        })
    }

    fn accumulate(&self, adj: &mut [Option<Tensor>], v: Var, f: impl FnOnce(&mut [f64])) {
        let slot = &mut adj[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.value(v).shape()));
        }
        f(slot.as_mut().expect("initialised").data_mut());
    }

    fn propagate(
        &self,
        op: &Op,
        out: &Tensor,
        g: &Tensor,
        adj: &mut [Option<Tensor>],
    ) -> Result<()> {
        let gd = g.data();
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.value(*a).dims2()?;
                let (_, n) = self.value(*b).dims2()?;
                let bt = self.value(*b).transpose()?;
                let at = self.value(*a).transpose()?;
                self.accumulate(adj, *a, |d| matmul_into(gd, bt.data(), d, m, n, k));
                self.accumulate(adj, *b, |d| matmul_into(at.data(), gd, d, k, m, n));
            }
            Op::Add(a, b) => {
                self.accumulate(adj, *a, |d| add_into(d, gd));
                self.accumulate(adj, *b, |d| add_into(d, gd));
            }
            Op::Sub(a, b) => {
                self.accumulate(adj, *a, |d| add_into(d, gd));
                self.accumulate(adj, *b, |d| d.iter_mut().zip(gd).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(adj, *a, |d| {
                    for ((x, gy), bb) in d.iter_mut().zip(gd).zip(bv) {
                        *x += gy * bb;
                    }
                });
                self.accumulate(adj, *b, |d| {
                    for ((x, gy), aa) in d.iter_mut().zip(gd).zip(av) {
                        *x += gy * aa;
                    }
                });
            }
            Op::AddBias(x, bias) => {
                let cols = self.value(*bias).len();
                self.accumulate(adj, *x, |d| add_into(d, gd));
                self.accumulate(adj, *bias, |d| {
                    for row in gd.chunks(cols) {
                        add_into(d, row);
                    }
                });
            }
            Op::AddScalar(a, s) => {
                self.accumulate(adj, *a, |d| add_into(d, gd));
                let total: f64 = gd.iter().sum();
                self.accumulate(adj, *s, |d| d[0] += total);
            }
            Op::DivScalar(a, s) => {
                let sv = self.value(*s).item();
                self.accumulate(adj, *a, |d| {
                    d.iter_mut().zip(gd).for_each(|(x, y)| *x += y / sv)
                });
                // d(a/s)/ds = -a/s² = -out/s
                let total: f64 = gd.iter().zip(out.data()).map(|(y, o)| y * o).sum();
                self.accumulate(adj, *s, |d| d[0] -= total / sv);
            }
            Op::Scale(a, f) => {
                self.accumulate(adj, *a, |d| {
                    d.iter_mut().zip(gd).for_each(|(x, y)| *x += y * f)
                });
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                self.accumulate(adj, *a, |d| {
                    for ((x, y), v) in d.iter_mut().zip(gd).zip(av) {
                        if *v > 0.0 {
                            *x += y;
                        }
                    }
                });
            }
            Op::Softplus(a) => {
                let av = self.value(*a).data();
                self.accumulate(adj, *a, |d| {
                    for ((x, y), v) in d.iter_mut().zip(gd).zip(av) {
                        *x += y * sigmoid(*v);
                    }
                });
            }
            Op::Softmax(a) => {
                let (_, cols) = out.rows_last()?;
                self.accumulate(adj, *a, |d| {
                    for ((drow, grow), yrow) in d
                        .chunks_mut(cols)
                        .zip(gd.chunks(cols))
                        .zip(out.data().chunks(cols))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                        for ((x, g), y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *x += y * (g - dot);
                        }
                    }
                });
            }
            Op::NegXLogX(a) => {
                let av = self.value(*a).data();
                self.accumulate(adj, *a, |d| {
                    for ((x, y), v) in d.iter_mut().zip(gd).zip(av) {
                        // subgradient 0 at the boundary
                        if *v > 0.0 {
                            *x -= y * (v.ln() + 1.0);
                        }
                    }
                });
            }
            Op::SumRows(a) => {
                self.accumulate(adj, *a, |d| {
                    for row in d.chunks_mut(gd.len()) {
                        add_into(row, gd);
                    }
                });
            }
            Op::Sum(a) => {
                let gv = gd[0];
                self.accumulate(adj, *a, |d| d.iter_mut().for_each(|x| *x += gv));
            }
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                let gv = gd[0] / n;
                self.accumulate(adj, *a, |d| d.iter_mut().for_each(|x| *x += gv));
            }
            Op::Slice { src, offset } => {
                let off = *offset;
                self.accumulate(adj, *src, |d| add_into(&mut d[off..off + gd.len()], gd));
            }
            Op::Reshape(a) => {
                self.accumulate(adj, *a, |d| add_into(d, gd));
            }
            Op::NarrowCols { src, start } => {
                let (rows, cols) = self.value(*src).dims2()?;
                let len = gd.len() / rows.max(1);
                let s = *start;
                self.accumulate(adj, *src, |d| {
                    for i in 0..rows {
                        add_into(
                            &mut d[i * cols + s..i * cols + s + len],
                            &gd[i * len..(i + 1) * len],
                        );
                    }
                });
            }
            Op::ConcatCols(a, b) => {
                let (rows, ca) = self.value(*a).dims2()?;
                let (_, cb) = self.value(*b).dims2()?;
                let w = ca + cb;
                self.accumulate(adj, *a, |d| {
                    for i in 0..rows {
                        add_into(&mut d[i * ca..(i + 1) * ca], &gd[i * w..i * w + ca]);
                    }
                });
                self.accumulate(adj, *b, |d| {
                    for i in 0..rows {
                        add_into(&mut d[i * cb..(i + 1) * cb], &gd[i * w + ca..(i + 1) * w]);
                    }
                });
            }
            Op::PairConcat(a, b) => {
                let (ra, ca) = self.value(*a).dims2()?;
                let (rb, cb) = self.value(*b).dims2()?;
                let w = ca + cb;
                self.accumulate(adj, *a, |d| {
                    for i in 0..ra {
                        for j in 0..rb {
                            let r = (i * rb + j) * w;
                            add_into(&mut d[i * ca..(i + 1) * ca], &gd[r..r + ca]);
                        }
                    }
                });
                self.accumulate(adj, *b, |d| {
                    for i in 0..ra {
                        for j in 0..rb {
                            let r = (i * rb + j) * w;
                            add_into(&mut d[j * cb..(j + 1) * cb], &gd[r + ca..r + w]);
                        }
                    }
                });
            }
            Op::BatchedLinear {
                x,
                params,
                offset,
                fan_in,
                fan_out,
            } => {
                let (fi, fo, off) = (*fan_in, *fan_out, *offset);
                let xv = self.value(*x);
                let pv = self.value(*params);
                let rows = xv.dims2()?.0;
                let pcols = pv.dims2()?.1;
                self.accumulate(adj, *x, |d| {
                    for b in 0..rows {
                        let w = &pv.row(b)[off..off + fi * fo];
                        let gy = &gd[b * fo..(b + 1) * fo];
                        for i in 0..fi {
                            let wr = &w[i * fo..(i + 1) * fo];
                            d[b * fi + i] += wr.iter().zip(gy).map(|(a, c)| a * c).sum::<f64>();
                        }
                    }
                });
                self.accumulate(adj, *params, |d| {
                    for b in 0..rows {
                        let gy = &gd[b * fo..(b + 1) * fo];
                        let xr = xv.row(b);
                        let base = b * pcols + off;
                        for i in 0..fi {
                            let xi = xr[i];
                            if xi != 0.0 {
                                let dw = &mut d[base + i * fo..base + (i + 1) * fo];
                                dw.iter_mut().zip(gy).for_each(|(p, c)| *p += xi * c);
                            }
                        }
                        add_into(&mut d[base + fi * fo..base + fi * fo + fo], gy);
                    }
                });
            }
            Op::CrossEntropy { logits, labels } => {
                let lv = self.value(*logits);
                let probs = softmax_rows(lv)?;
                let (rows, classes) = lv.dims2()?;
                let scale = gd[0] / rows as f64;
                self.accumulate(adj, *logits, |d| {
                    for (i, &y) in labels.iter().enumerate() {
                        let p = probs.row(i);
                        for c in 0..classes {
                            let onehot = if c == y { 1.0 } else { 0.0 };
                            d[i * classes + c] += scale * (p[c] - onehot);
                        }
                    }
                });
            }
        }
        Ok(())
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
}
