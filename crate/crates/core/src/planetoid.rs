//! Planetoid models: transductive (T), inductive (I) and graph-only (G).
//!
//! Class prediction is a softmax over `[h^k(x), h^l(e)] W_y`:
//!
//! * T: `e` is a free per-node embedding row, `h^k` runs on the features.
//! * I: `e = h^{l1}(x)` is computed by an encoder on the features, so
//!   prediction depends on `x` alone and extends to unseen nodes.
//! * G: T without the feature path.
//!
//! The context loss scores a pair as `w_c . e_i` through a sigmoid. Context
//! vectors `w_c` are a free per-node table in every variant.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::neural::{
    dot, sgd_dense, sgd_rows, sigmoid_binary_loss, softmax, softmax_xent, ContextWeights,
    DenseLayer, EmbeddingTable, Input, LayerGrad, LayerOutput, Matrix, RowGrad, SparseVec,
};
use crate::sampler::ContextTriple;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelVariant {
    Transductive,
    Inductive,
    GraphOnly,
}

impl ModelVariant {
    pub fn name(&self) -> &'static str {
        match self {
            ModelVariant::Transductive => "planetoid-t",
            ModelVariant::Inductive => "planetoid-i",
            ModelVariant::GraphOnly => "planetoid-g",
        }
    }

    pub fn uses_features(&self) -> bool {
        !matches!(self, ModelVariant::GraphOnly)
    }

    pub fn has_embedding_table(&self) -> bool {
        !matches!(self, ModelVariant::Inductive)
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "planetoid-t" | "t" | "transductive" => Ok(ModelVariant::Transductive),
            "planetoid-i" | "i" | "inductive" => Ok(ModelVariant::Inductive),
            "planetoid-g" | "g" | "graph-only" => Ok(ModelVariant::GraphOnly),
            other => Err(Error::Config(format!("unknown model variant {other:?}"))),
        }
    }
}

/// Layer widths. Each list holds the output width of one ReLU layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    /// Layers on the feature vector (`h^k`). Unused by G.
    pub feature_hidden: Vec<usize>,
    /// Width of `e`.
    pub embedding_dim: usize,
    /// Inductive only: intermediate layers before the encoder's final layer,
    /// which always outputs `embedding_dim` (so `l1 = encoder_hidden.len() + 1`).
    pub encoder_hidden: Vec<usize>,
    /// Layers applied to `e` (`h^l` for T/G, `h^{l2}` for I).
    pub embedding_hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            feature_hidden: vec![50],
            embedding_dim: 50,
            encoder_hidden: Vec::new(),
            embedding_hidden: vec![50],
        }
    }
}

/// Problem dimensions a model is built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelShape {
    pub num_nodes: usize,
    pub num_features: usize,
    pub num_classes: usize,
}

/// Input for one prediction.
#[derive(Debug, Clone, Copy, Default)]
pub struct Instance<'a> {
    pub node: Option<usize>,
    pub features: Option<&'a SparseVec>,
}

impl<'a> Instance<'a> {
    pub fn new(node: usize, features: Option<&'a SparseVec>) -> Self {
        Self {
            node: Some(node),
            features,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LabeledInstance<'a> {
    pub instance: Instance<'a>,
    pub label: usize,
}

/// All trainable state.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    variant: ModelVariant,
    num_nodes: usize,
    num_features: usize,
    pub feature_path: Vec<DenseLayer>,
    /// `h^{l1}`, present only for the inductive variant.
    pub encoder: Vec<DenseLayer>,
    pub embedding_path: Vec<DenseLayer>,
    pub embedding_table: Option<EmbeddingTable>,
    pub context: ContextWeights,
    /// `(width(h^k) + width(h^l)) x classes`, input-major.
    pub label_weights: Matrix,
}

/// Gradients with the same layout as [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub feature_path: Vec<LayerGrad>,
    pub encoder: Vec<LayerGrad>,
    pub embedding_path: Vec<LayerGrad>,
    pub embedding_table: RowGrad,
    pub context: RowGrad,
    pub label_weights: RowGrad,
}

impl ModelGrads {
    pub fn zeros_like(params: &ModelParams) -> Self {
        Self {
            feature_path: params
                .feature_path
                .iter()
                .map(LayerGrad::for_layer)
                .collect(),
            encoder: params.encoder.iter().map(LayerGrad::for_layer).collect(),
            embedding_path: params
                .embedding_path
                .iter()
                .map(LayerGrad::for_layer)
                .collect(),
            embedding_table: RowGrad::new(params.embedding_dim()),
            context: RowGrad::new(params.embedding_dim()),
            label_weights: RowGrad::new(params.num_classes()),
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self
            .feature_path
            .iter_mut()
            .chain(self.encoder.iter_mut())
            .chain(self.embedding_path.iter_mut())
        {
            g.scale(factor);
        }
        self.embedding_table.scale(factor);
        self.context.scale(factor);
        self.label_weights.scale(factor);
    }
}

/// Activations of one forward pass.
struct Forward {
    feature_outs: Vec<LayerOutput>,
    encoder_outs: Vec<LayerOutput>,
    embedding: Vec<f64>,
    path_outs: Vec<LayerOutput>,
    concat: Vec<f64>,
    logits: Vec<f64>,
}

fn run_chain(layers: &[DenseLayer], first: Input<'_>) -> Result<Vec<LayerOutput>> {
    let mut outs: Vec<LayerOutput> = Vec::with_capacity(layers.len());
    for (k, layer) in layers.iter().enumerate() {
        let out = if k == 0 {
            layer.forward(first)?
        } else {
            layer.forward(Input::Dense(&outs[k - 1].output))?
        };
        outs.push(out);
    }
    Ok(outs)
}

/// Backpropagates `grad_out` through a chain. Returns the gradient with
/// respect to the chain input when it is dense and requested.
fn backprop_chain(
    layers: &[DenseLayer],
    first: Input<'_>,
    outs: &[LayerOutput],
    grad_out: Vec<f64>,
    grads: &mut [LayerGrad],
    want_input_grad: bool,
) -> Option<Vec<f64>> {
    let mut g = grad_out;
    for k in (0..layers.len()).rev() {
        let input = if k == 0 {
            first
        } else {
            Input::Dense(&outs[k - 1].output)
        };
        let need = k > 0 || want_input_grad;
        g = layers[k].backward(input, &outs[k], &g, &mut grads[k], need)?;
    }
    Some(g)
}

fn build_chain<R: Rng + ?Sized>(input: usize, widths: &[usize], rng: &mut R) -> Vec<DenseLayer> {
    let mut layers = Vec::with_capacity(widths.len());
    let mut prev = input;
    for &w in widths {
        layers.push(DenseLayer::new(prev, w, rng));
        prev = w;
    }
    layers
}

fn chain_output_width(input: usize, layers: &[DenseLayer]) -> usize {
    layers.last().map_or(input, DenseLayer::out_dim)
}

impl ModelParams {
    pub fn new<R: Rng + ?Sized>(
        variant: ModelVariant,
        shape: ModelShape,
        arch: &Architecture,
        rng: &mut R,
    ) -> Result<Self> {
        if shape.num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                shape.num_classes
            )));
        }
        if shape.num_nodes == 0 || arch.embedding_dim == 0 {
            return Err(Error::Config(
                "num_nodes and embedding_dim must be positive".into(),
            ));
        }
        let widths = arch
            .feature_hidden
            .iter()
            .chain(&arch.encoder_hidden)
            .chain(&arch.embedding_hidden);
        if widths.into_iter().any(|&w| w == 0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if variant.uses_features() && shape.num_features == 0 {
            return Err(Error::Config(format!(
                "{variant} requires a feature matrix"
            )));
        }

        let feature_path = if variant.uses_features() {
            build_chain(shape.num_features, &arch.feature_hidden, rng)
        } else {
            Vec::new()
        };
        let encoder = if variant == ModelVariant::Inductive {
            let mut widths = arch.encoder_hidden.clone();
            widths.push(arch.embedding_dim);
            build_chain(shape.num_features, &widths, rng)
        } else {
            Vec::new()
        };
        let embedding_path = build_chain(arch.embedding_dim, &arch.embedding_hidden, rng);
        let embedding_table = variant
            .has_embedding_table()
            .then(|| EmbeddingTable::new(shape.num_nodes, arch.embedding_dim, rng));
        let context = ContextWeights::new(shape.num_nodes, arch.embedding_dim, rng);

        let feature_width = if variant.uses_features() {
            chain_output_width(shape.num_features, &feature_path)
        } else {
            0
        };
        let concat = feature_width + chain_output_width(arch.embedding_dim, &embedding_path);
        let label_weights = crate::neural::glorot_uniform(concat, shape.num_classes, rng);

        Ok(Self {
            variant,
            num_nodes: shape.num_nodes,
            num_features: if variant.uses_features() {
                shape.num_features
            } else {
                0
            },
            feature_path,
            encoder,
            embedding_path,
            embedding_table,
            context,
            label_weights,
        })
    }

    pub fn variant(&self) -> ModelVariant {
        self.variant
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_features(&self) -> usize {
        self.num_features
    }

    pub fn num_classes(&self) -> usize {
        self.label_weights.cols()
    }

    pub fn embedding_dim(&self) -> usize {
        self.context.dim()
    }

    fn node_in_range(&self, node: Option<usize>) -> Result<usize> {
        match node {
            Some(i) if i < self.num_nodes => Ok(i),
            Some(i) => Err(Error::InvalidInput(format!(
                "{}: node {i} has no embedding (model covers {} nodes)",
                self.variant, self.num_nodes
            ))),
            None => Err(Error::InvalidInput(format!(
                "{} needs a node id",
                self.variant
            ))),
        }
    }

    fn features_of<'a>(&self, inst: &Instance<'a>) -> Result<&'a SparseVec> {
        inst.features
            .ok_or_else(|| Error::InvalidInput(format!("{} needs a feature vector", self.variant)))
    }

    /// Embedding `e` plus the encoder activations that produced it (inductive).
    fn embed(&self, inst: &Instance<'_>) -> Result<(Vec<LayerOutput>, Vec<f64>)> {
        match self.variant {
            ModelVariant::Inductive => {
                let x = self.features_of(inst)?;
                let outs = run_chain(&self.encoder, Input::Sparse(x))?;
                let e = outs
                    .last()
                    .expect("encoder has at least one layer")
                    .output
                    .clone();
                Ok((outs, e))
            }
            _ => {
                let i = self.node_in_range(inst.node)?;
                let table = self
                    .embedding_table
                    .as_ref()
                    .expect("T/G own an embedding table");
                Ok((Vec::new(), table.row(i).to_vec()))
            }
        }
    }

    fn forward(&self, inst: &Instance<'_>) -> Result<Forward> {
        let feature_outs = if self.variant.uses_features() {
            run_chain(&self.feature_path, Input::Sparse(self.features_of(inst)?))?
        } else {
            Vec::new()
        };
        let (encoder_outs, embedding) = self.embed(inst)?;
        let path_outs = run_chain(&self.embedding_path, Input::Dense(&embedding))?;

        let mut concat = Vec::with_capacity(self.label_weights.rows());
        if self.variant.uses_features() {
            match feature_outs.last() {
                Some(o) => concat.extend_from_slice(&o.output),
                None => concat.extend(self.features_of(inst)?.to_dense(self.num_features)),
            }
        }
        match path_outs.last() {
            Some(o) => concat.extend_from_slice(&o.output),
            None => concat.extend_from_slice(&embedding),
        }

        let mut logits = vec![0.0; self.num_classes()];
        for (j, &h) in concat.iter().enumerate() {
            if h != 0.0 {
                for (z, w) in logits.iter_mut().zip(self.label_weights.row(j)) {
                    *z += h * w;
                }
            }
        }
        Ok(Forward {
            feature_outs,
            encoder_outs,
            embedding,
            path_outs,
            concat,
            logits,
        })
    }

    /// Class probabilities for one instance.
    pub fn predict(&self, inst: &Instance<'_>) -> Result<Vec<f64>> {
        Ok(softmax(&self.forward(inst)?.logits))
    }

    /// The vector used as `e_i` in the context loss.
    pub fn embedding_of(&self, inst: &Instance<'_>) -> Result<Vec<f64>> {
        Ok(self.embed(inst)?.1)
    }

    /// Backpropagates `grad_e` into the embedding table row or the encoder.
    fn backprop_embedding(
        &self,
        inst: &Instance<'_>,
        encoder_outs: &[LayerOutput],
        grad_e: Vec<f64>,
        grads: &mut ModelGrads,
    ) -> Result<()> {
        match self.variant {
            ModelVariant::Inductive => {
                let x = self.features_of(inst)?;
                backprop_chain(
                    &self.encoder,
                    Input::Sparse(x),
                    encoder_outs,
                    grad_e,
                    &mut grads.encoder,
                    false,
                );
            }
            _ => {
                let i = self.node_in_range(inst.node)?;
                for (g, d) in grads.embedding_table.row_mut(i).iter_mut().zip(&grad_e) {
                    *g += d;
                }
            }
        }
        Ok(())
    }

    /// Mean negative log-likelihood of the labels and its gradient.
    pub fn supervised_loss_batch(
        &self,
        batch: &[LabeledInstance<'_>],
    ) -> Result<(f64, ModelGrads)> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("supervised batch is empty".into()));
        }
        let mut grads = ModelGrads::zeros_like(self);
        let mut total = 0.0;
        for item in batch {
            if item.label >= self.num_classes() {
                return Err(Error::InvalidInput(format!(
                    "label {} out of range for {} classes",
                    item.label,
                    self.num_classes()
                )));
            }
            let fwd = self.forward(&item.instance)?;
            let (loss, grad_logits) = softmax_xent(&fwd.logits, item.label);
            total += loss;

            let mut grad_concat = vec![0.0; fwd.concat.len()];
            for (j, &h) in fwd.concat.iter().enumerate() {
                let w_row = self.label_weights.row(j);
                grad_concat[j] = dot(w_row, &grad_logits);
                if h != 0.0 {
                    for (g, d) in grads.label_weights.row_mut(j).iter_mut().zip(&grad_logits) {
                        *g += h * d;
                    }
                }
            }

            let split = if self.variant.uses_features() {
                chain_output_width(self.num_features, &self.feature_path)
            } else {
                0
            };
            let (grad_feat, grad_path) = grad_concat.split_at(split);
            if self.variant.uses_features() && !self.feature_path.is_empty() {
                let x = self.features_of(&item.instance)?;
                backprop_chain(
                    &self.feature_path,
                    Input::Sparse(x),
                    &fwd.feature_outs,
                    grad_feat.to_vec(),
                    &mut grads.feature_path,
                    false,
                );
            }
            let grad_e = if self.embedding_path.is_empty() {
                grad_path.to_vec()
            } else {
                backprop_chain(
                    &self.embedding_path,
                    Input::Dense(&fwd.embedding),
                    &fwd.path_outs,
                    grad_path.to_vec(),
                    &mut grads.embedding_path,
                    true,
                )
                .expect("dense input gradient requested")
            };
            self.backprop_embedding(&item.instance, &fwd.encoder_outs, grad_e, &mut grads)?;
        }
        let n = batch.len() as f64;
        grads.scale(1.0 / n);
        Ok((total / n, grads))
    }

    /// Mean negative-sampling context loss over `triples` and its gradient.
    ///
    /// `features` is indexed by node id and is required by the inductive variant.
    pub fn unsupervised_loss_batch(
        &self,
        triples: &[ContextTriple],
        features: Option<&[SparseVec]>,
    ) -> Result<(f64, ModelGrads)> {
        if triples.is_empty() {
            return Err(Error::InvalidInput("context batch is empty".into()));
        }
        if self.variant == ModelVariant::Inductive && features.is_none() {
            return Err(Error::InvalidInput(
                "planetoid-i context loss needs features".into(),
            ));
        }
        let mut grads = ModelGrads::zeros_like(self);
        let mut total = 0.0;
        for t in triples {
            if t.context >= self.num_nodes {
                return Err(Error::InvalidInput(format!(
                    "context node {} out of range for {} nodes",
                    t.context, self.num_nodes
                )));
            }
            let inst = Instance {
                node: Some(t.instance),
                features: match features {
                    Some(rows) => Some(rows.get(t.instance).ok_or_else(|| {
                        Error::InvalidInput(format!("no feature row for node {}", t.instance))
                    })?),
                    None => None,
                },
            };
            let (encoder_outs, e) = self.embed(&inst)?;
            let w_c = self.context.row(t.context);
            let (loss, g_score) = sigmoid_binary_loss(dot(w_c, &e), t.gamma);
            total += loss;
            for (g, v) in grads.context.row_mut(t.context).iter_mut().zip(&e) {
                *g += g_score * v;
            }
            let grad_e: Vec<f64> = w_c.iter().map(|w| g_score * w).collect();
            self.backprop_embedding(&inst, &encoder_outs, grad_e, &mut grads)?;
        }
        let n = triples.len() as f64;
        grads.scale(1.0 / n);
        Ok((total / n, grads))
    }

    /// Visits every tensor with its checkpoint name.
    fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (prefix, layers) in [
            ("feature_path", &self.feature_path),
            ("encoder", &self.encoder),
            ("embedding_path", &self.embedding_path),
        ] {
            for (k, layer) in layers.iter().enumerate() {
                out.push((format!("{prefix}.{k}.weight"), &layer.weight));
            }
        }
        if let Some(table) = &self.embedding_table {
            out.push(("embedding_table".to_string(), &table.0));
        }
        out.push(("context".to_string(), &self.context.0));
        out.push(("label_weights".to_string(), &self.label_weights));
        out
    }

    /// `theta -= lr * grad` for every tensor. Nothing is modified when any
    /// gradient entry is non-finite.
    pub fn sgd_step(&mut self, grads: &ModelGrads, lr: f64) -> Result<()> {
        let check = |name: String, values: &mut dyn Iterator<Item = f64>| -> Result<()> {
            for v in values {
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("gradient of {name}")));
                }
            }
            Ok(())
        };
        for (prefix, layer_grads) in [
            ("feature_path", &grads.feature_path),
            ("encoder", &grads.encoder),
            ("embedding_path", &grads.embedding_path),
        ] {
            for (k, g) in layer_grads.iter().enumerate() {
                check(
                    format!("{prefix}.{k}"),
                    &mut g
                        .weight
                        .iter()
                        .flat_map(|(_, r)| r.iter().copied())
                        .chain(g.bias.iter().copied()),
                )?;
            }
        }
        for (name, g) in [
            ("embedding_table", &grads.embedding_table),
            ("context", &grads.context),
            ("label_weights", &grads.label_weights),
        ] {
            check(
                name.to_string(),
                &mut g.iter().flat_map(|(_, r)| r.iter().copied()),
            )?;
        }

        for (prefix, layers, layer_grads) in [
            ("feature_path", &mut self.feature_path, &grads.feature_path),
            ("encoder", &mut self.encoder, &grads.encoder),
            (
                "embedding_path",
                &mut self.embedding_path,
                &grads.embedding_path,
            ),
        ] {
            for (k, (layer, g)) in layers.iter_mut().zip(layer_grads).enumerate() {
                sgd_rows(
                    &format!("{prefix}.{k}.weight"),
                    &mut layer.weight,
                    &g.weight,
                    lr,
                )?;
                sgd_dense(&format!("{prefix}.{k}.bias"), &mut layer.bias, &g.bias, lr)?;
            }
        }
        if let Some(table) = &mut self.embedding_table {
            sgd_rows("embedding_table", &mut table.0, &grads.embedding_table, lr)?;
        }
        sgd_rows("context", &mut self.context.0, &grads.context, lr)?;
        sgd_rows(
            "label_weights",
            &mut self.label_weights,
            &grads.label_weights,
            lr,
        )?;
        Ok(())
    }

    /// True when every parameter is finite.
    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, m)| m.is_finite())
            && self
                .feature_path
                .iter()
                .chain(&self.encoder)
                .chain(&self.embedding_path)
                .all(|l| l.bias.iter().all(|b| b.is_finite()))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.variant.name());
        ck.push_vector("shape", &[self.num_nodes as f64, self.num_features as f64]);
        for (prefix, layers) in [
            ("feature_path", &self.feature_path),
            ("encoder", &self.encoder),
            ("embedding_path", &self.embedding_path),
        ] {
            for (k, layer) in layers.iter().enumerate() {
                ck.push(format!("{prefix}.{k}.weight"), layer.weight.clone());
                ck.push_vector(format!("{prefix}.{k}.bias"), &layer.bias);
            }
        }
        if let Some(table) = &self.embedding_table {
            ck.push("embedding_table", table.0.clone());
        }
        ck.push("context", self.context.0.clone());
        ck.push("label_weights", self.label_weights.clone());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let variant: ModelVariant = ck.kind.parse().map_err(|_| {
            Error::Config(format!(
                "checkpoint holds a {:?} model, not a planetoid model",
                ck.kind
            ))
        })?;
        let shape = ck.require_vector("shape")?;
        if shape.len() != 2 {
            return Err(Error::Data("malformed shape tensor".into()));
        }
        let load_chain = |prefix: &str| -> Result<Vec<DenseLayer>> {
            let mut layers = Vec::new();
            while let Some(weight) = ck.get(&format!("{prefix}.{}.weight", layers.len())) {
                let bias = ck.require_vector(&format!("{prefix}.{}.bias", layers.len()))?;
                if bias.len() != weight.cols() {
                    return Err(Error::Data(format!("{prefix}: bias/weight shape mismatch")));
                }
                layers.push(DenseLayer {
                    weight: weight.clone(),
                    bias,
                });
            }
            Ok(layers)
        };
        let params = Self {
            variant,
            num_nodes: shape[0] as usize,
            num_features: shape[1] as usize,
            feature_path: load_chain("feature_path")?,
            encoder: load_chain("encoder")?,
            embedding_path: load_chain("embedding_path")?,
            embedding_table: match variant.has_embedding_table() {
                true => Some(EmbeddingTable(ck.require("embedding_table")?.clone())),
                false => None,
            },
            context: ContextWeights(ck.require("context")?.clone()),
            label_weights: ck.require("label_weights")?.clone(),
        };
        if params.context.num_rows() != params.num_nodes
            || (variant == ModelVariant::Inductive && params.encoder.is_empty())
        {
            return Err(Error::Data("checkpoint tensors are inconsistent".into()));
        }
        Ok(params)
    }
}
