//! Dense building blocks with hand-written gradients.
//!
//! Weight matrices of [`DenseLayer`] are stored input-major (`in x out`):
//! row `j` holds the outgoing weights of input coordinate `j`. A sparse
//! bag-of-words input therefore touches only a few contiguous rows in both
//! the forward pass and the gradient, exactly like an embedding lookup.

use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Sparse vector with sorted, unique indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVec {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseVec {
    /// Sorts entries by index and sums duplicates.
    pub fn from_pairs(mut pairs: Vec<(usize, f64)>) -> Self {
        pairs.sort_by_key(|p| p.0);
        let mut out = SparseVec::default();
        for (i, v) in pairs {
            if out.indices.last() == Some(&i) {
                *out.values.last_mut().expect("nonempty") += v;
            } else {
                out.indices.push(i);
                out.values.push(v);
            }
        }
        out
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices
            .iter()
            .copied()
            .zip(self.values.iter().copied())
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        for (i, v) in self.iter() {
            out[i] += v;
        }
        out
    }
}

/// Layer input: either a dense activation or a sparse feature row.
#[derive(Debug, Clone, Copy)]
pub enum Input<'a> {
    Dense(&'a [f64]),
    Sparse(&'a SparseVec),
}

impl Input<'_> {
    fn check(&self, dim: usize) -> Result<()> {
        match self {
            Input::Dense(x) if x.len() != dim => Err(Error::InvalidInput(format!(
                "layer expects {dim} inputs, got {}",
                x.len()
            ))),
            Input::Sparse(x) => match x.indices.iter().find(|&&i| i >= dim) {
                Some(i) => Err(Error::InvalidInput(format!(
                    "sparse input index {i} out of range for {dim} inputs"
                ))),
                None => Ok(()),
            },
            _ => Ok(()),
        }
    }

    fn for_each_nonzero(&self, mut f: impl FnMut(usize, f64)) {
        match self {
            Input::Dense(x) => {
                for (j, &v) in x.iter().enumerate() {
                    if v != 0.0 {
                        f(j, v);
                    }
                }
            }
            Input::Sparse(x) => {
                for (j, v) in x.iter() {
                    f(j, v);
                }
            }
        }
    }
}

/// Gradient of a matrix parameter, stored only for rows that were touched.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGrad {
    cols: usize,
    rows: BTreeMap<usize, Vec<f64>>,
}

impl RowGrad {
    pub fn new(cols: usize) -> Self {
        Self {
            cols,
            rows: BTreeMap::new(),
        }
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let cols = self.cols;
        self.rows.entry(r).or_insert_with(|| vec![0.0; cols])
    }

    pub fn row(&self, r: usize) -> Option<&[f64]> {
        self.rows.get(&r).map(Vec::as_slice)
    }

    pub fn touched_rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.rows.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> + '_ {
        self.rows.iter().map(|(&r, v)| (r, v.as_slice()))
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn scale(&mut self, factor: f64) {
        for row in self.rows.values_mut() {
            row.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn to_dense(&self, num_rows: usize) -> Matrix {
        let mut m = Matrix::zeros(num_rows, self.cols);
        for (r, row) in self.iter() {
            m.row_mut(r).copy_from_slice(row);
        }
        m
    }
}

/// Fully connected ReLU layer `h = ReLU(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `in x out`, input-major.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerOutput {
    pub pre_activation: Vec<f64>,
    pub output: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weight: RowGrad,
    pub bias: Vec<f64>,
}

impl LayerGrad {
    pub fn for_layer(layer: &DenseLayer) -> Self {
        Self {
            weight: RowGrad::new(layer.out_dim()),
            bias: vec![0.0; layer.out_dim()],
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.weight.scale(factor);
        self.bias.iter_mut().for_each(|v| *v *= factor);
    }
}

impl DenseLayer {
    /// Glorot-uniform weights and zero bias.
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            weight: glorot_uniform(in_dim, out_dim, rng),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            weight: Matrix::zeros(in_dim, out_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, input: Input<'_>) -> Result<LayerOutput> {
        input.check(self.in_dim())?;
        let mut pre = self.bias.clone();
        input.for_each_nonzero(|j, v| {
            for (p, w) in pre.iter_mut().zip(self.weight.row(j)) {
                *p += w * v;
            }
        });
        let output = pre.iter().map(|&z| z.max(0.0)).collect();
        Ok(LayerOutput {
            pre_activation: pre,
            output,
        })
    }

    /// Accumulates parameter gradients into `grad` and, when asked, returns
    /// the gradient with respect to a dense input.
    pub fn backward(
        &self,
        input: Input<'_>,
        cached: &LayerOutput,
        grad_output: &[f64],
        grad: &mut LayerGrad,
        want_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let delta: Vec<f64> = cached
            .pre_activation
            .iter()
            .zip(grad_output)
            .map(|(&z, &g)| if z > 0.0 { g } else { 0.0 })
            .collect();
        for (b, d) in grad.bias.iter_mut().zip(&delta) {
            *b += d;
        }
        input.for_each_nonzero(|j, v| {
            for (gw, d) in grad.weight.row_mut(j).iter_mut().zip(&delta) {
                *gw += v * d;
            }
        });
        want_input_grad.then(|| {
            (0..self.in_dim())
                .map(|j| dot(self.weight.row(j), &delta))
                .collect()
        })
    }
}

/// One row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable(pub Matrix);

/// Context vectors `w_c`, one row per node.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextWeights(pub Matrix);

impl EmbeddingTable {
    pub fn new<R: Rng + ?Sized>(num_nodes: usize, dim: usize, rng: &mut R) -> Self {
        Self(embedding_uniform(num_nodes, dim, rng))
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }

    pub fn num_rows(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }
}

impl ContextWeights {
    pub fn new<R: Rng + ?Sized>(num_nodes: usize, dim: usize, rng: &mut R) -> Self {
        Self(embedding_uniform(num_nodes, dim, rng))
    }

    pub fn row(&self, c: usize) -> &[f64] {
        self.0.row(c)
    }

    pub fn num_rows(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `log sum_k exp(z_k)` with max subtraction.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln()
}

/// Cross-entropy of a softmax over `logits` against `label`.
///
/// Returns the loss and its gradient with respect to the logits.
pub fn softmax_xent(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    assert!(label < logits.len(), "label {label} out of range");
    let loss = log_sum_exp(logits) - logits[label];
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    (loss.max(0.0), grad)
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary log loss `-log sigmoid(gamma * score)` and its derivative in `score`.
pub fn sigmoid_binary_loss(score: f64, gamma: i8) -> (f64, f64) {
    let g = f64::from(gamma.signum());
    debug_assert!(g != 0.0, "gamma must be +1 or -1");
    let loss = softplus(-g * score);
    let grad = -g * sigmoid(-g * score);
    (loss, grad)
}

/// Full-softmax context loss `-(w_c . e - log sum_c' exp(w_c' . e))`.
///
/// Normalizes over every context row, so only usable on small tables.
pub fn skipgram_exact_loss(embedding: &[f64], context: &ContextWeights, c: usize) -> f64 {
    let scores: Vec<f64> = (0..context.num_rows())
        .map(|k| dot(context.row(k), embedding))
        .collect();
    log_sum_exp(&scores) - scores[c]
}

fn ensure_finite(name: &str, values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(pos) => Err(Error::NonFinite(format!(
            "gradient of {name} (entry {pos})"
        ))),
        None => Ok(()),
    }
}

/// `param -= lr * grad` for a dense tensor.
pub fn sgd_dense(name: &str, param: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    if param.len() != grad.len() {
        return Err(Error::InvalidInput(format!(
            "{name}: parameter has {} entries, gradient has {}",
            param.len(),
            grad.len()
        )));
    }
    ensure_finite(name, grad)?;
    for (p, g) in param.iter_mut().zip(grad) {
        *p -= lr * g;
    }
    Ok(())
}

/// `param -= lr * grad` on the rows present in `grad`; other rows are untouched.
pub fn sgd_rows(name: &str, param: &mut Matrix, grad: &RowGrad, lr: f64) -> Result<()> {
    if param.cols() != grad.cols() {
        return Err(Error::InvalidInput(format!(
            "{name}: parameter has {} columns, gradient has {}",
            param.cols(),
            grad.cols()
        )));
    }
    for (r, row) in grad.iter() {
        if r >= param.rows() {
            return Err(Error::InvalidInput(format!(
                "{name}: gradient row {r} out of range for {} rows",
                param.rows()
            )));
        }
        ensure_finite(name, row)?;
    }
    for (r, row) in grad.iter() {
        for (p, g) in param.row_mut(r).iter_mut().zip(row) {
            *p -= lr * g;
        }
    }
    Ok(())
}

/// Uniform in `[-s, s]` with `s = sqrt(6 / (fan_in + fan_out))`, shaped `in x out`.
pub fn glorot_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Matrix {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-s..=s))
        .collect();
    Matrix {
        rows: fan_in,
        cols: fan_out,
        data,
    }
}

/// Uniform in `[-0.5 / dim, 0.5 / dim]` per coordinate.
pub fn embedding_uniform<R: Rng + ?Sized>(rows: usize, dim: usize, rng: &mut R) -> Matrix {
    let s = 0.5 / dim as f64;
    let data = (0..rows * dim).map(|_| rng.gen_range(-s..=s)).collect();
    Matrix {
        rows,
        cols: dim,
        data,
    }
}
