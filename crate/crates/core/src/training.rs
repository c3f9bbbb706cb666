//! Alternating supervised / context training with pretraining and early stopping.
//!
//! A round runs `t1` supervised steps on batches of `n1` labeled instances,
//! then `t2` context steps on batches of `n2` sampled triples. The `t1 : t2`
//! ratio plays the role of the loss weight between the two objectives.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{label_propagation, LabelDistributionTable, LinearSoftmax};
use crate::checkpoint::Checkpoint;
use crate::data::{Dataset, Section};
use crate::error::{Error, Result};
use crate::eval::{accuracy, argmax};
use crate::neural::SparseVec;
use crate::planetoid::{Architecture, LabeledInstance, ModelParams, ModelShape, ModelVariant};
use crate::sampler::{ContextSampler, LabelIndex, SamplerConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub sampler: SamplerConfig,
    pub architecture: Architecture,
    /// Supervised batch size.
    pub n1: usize,
    /// Context batch size.
    pub n2: usize,
    /// Supervised steps per round.
    pub t1: usize,
    /// Context steps per round. Zero gives purely supervised training.
    pub t2: usize,
    pub lr_sup: f64,
    pub lr_unsup: f64,
    pub pretrain_steps: usize,
    pub max_rounds: usize,
    /// Rounds without validation improvement before stopping.
    pub patience: usize,
    /// Share of each class's train labels held out for validation when the
    /// dataset has no validation section.
    pub val_fraction: f64,
    pub lp_max_iters: usize,
    pub lp_tol: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            sampler: SamplerConfig::default(),
            architecture: Architecture::default(),
            n1: 200,
            n2: 200,
            t1: 1,
            t2: 1,
            lr_sup: 0.1,
            lr_unsup: 0.1,
            pretrain_steps: 2000,
            max_rounds: 2000,
            patience: 50,
            val_fraction: 0.2,
            lp_max_iters: 1000,
            lp_tol: 1e-6,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Settings for citation-graph benchmarks (thousands of nodes, ~20
    /// labels per class). Losses are batch means, so each embedding row
    /// sees only a small share of a step; the context learning rate is
    /// scaled up accordingly and patience is longer than the default.
    pub fn citation() -> Self {
        Self {
            lr_sup: 1.0,
            lr_unsup: 20.0,
            patience: 200,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler.validate()?;
        for (name, v) in [
            ("n1", self.n1),
            ("n2", self.n2),
            ("t1", self.t1),
            ("patience", self.patience),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        for (name, v) in [("lr_sup", self.lr_sup), ("lr_unsup", self.lr_unsup)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!(
                    "{name} = {v} must be a positive number"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!(
                "val_fraction = {} is not in [0, 1)",
                self.val_fraction
            )));
        }
        if !(self.lp_tol.is_finite() && self.lp_tol >= 0.0) {
            return Err(Error::Config(format!(
                "lp_tol = {} is invalid",
                self.lp_tol
            )));
        }
        let arch = &self.architecture;
        if arch.embedding_dim == 0
            || arch
                .feature_hidden
                .iter()
                .chain(&arch.encoder_hidden)
                .chain(&arch.embedding_hidden)
                .any(|&w| w == 0)
        {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Independent random streams derived from one seed, so that, for example,
/// sampling context triples never shifts the supervised batches.
#[derive(Debug, Clone)]
pub struct Streams {
    pub init: ChaCha8Rng,
    pub split: ChaCha8Rng,
    pub supervised: ChaCha8Rng,
    pub context: ChaCha8Rng,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let stream = |id: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id);
            rng
        };
        Self {
            init: stream(1),
            split: stream(2),
            supervised: stream(3),
            context: stream(4),
        }
    }
}

/// Train labels after holding out validation instances.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSets {
    pub train: Vec<(usize, usize)>,
    pub validation: Vec<(usize, usize)>,
}

/// Uses the dataset's validation section when it has one. Otherwise holds out
/// `max(1, floor(fraction * n_k))` train labels of every class with at least
/// two of them, so each class keeps one training label.
pub fn labeled_sets<R: Rng + ?Sized>(
    ds: &Dataset,
    fraction: f64,
    rng: &mut R,
) -> Result<LabeledSets> {
    let train = ds.train_labels();
    if train.is_empty() {
        return Err(Error::Data("no labeled training instances".into()));
    }
    let validation = ds.labeled_section(Section::Validation);
    if !validation.is_empty() || fraction == 0.0 {
        return Ok(LabeledSets { train, validation });
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes];
    for &(node, y) in &train {
        by_class[y].push(node);
    }
    let mut held = vec![false; ds.num_nodes];
    for members in &mut by_class {
        if members.len() < 2 {
            continue;
        }
        let take = ((fraction * members.len() as f64).floor() as usize).clamp(1, members.len() - 1);
        members.shuffle(rng);
        for &node in &members[..take] {
            held[node] = true;
        }
    }
    let (validation, train) = train.into_iter().partition(|&(node, _)| held[node]);
    Ok(LabeledSets { train, validation })
}

/// One row of the round log.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    /// Mean supervised loss of the round.
    pub ls: Option<f64>,
    /// Mean context loss of the round.
    pub lu: Option<f64>,
    pub val_acc: Option<f64>,
    pub sup_steps: usize,
    pub unsup_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainHistory {
    pub pretrain_losses: Vec<f64>,
    pub rounds: Vec<RoundRecord>,
    /// Round whose parameters were kept.
    pub best_round: Option<usize>,
    pub best_val: Option<f64>,
    pub stopped_early: bool,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.9}"))
}

impl TrainHistory {
    /// `round \t Ls \t Lu \t val_acc`, one line per round after a header.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("round\tLs\tLu\tval_acc\n");
        for r in &self.rounds {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\n",
                r.round,
                fmt_opt(r.ls),
                fmt_opt(r.lu),
                fmt_opt(r.val_acc)
            ));
        }
        out
    }
}

/// Summary record written at the end of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub variant: String,
    pub seed: u64,
    pub rounds: usize,
    pub best_round: Option<usize>,
    pub best_val: Option<f64>,
    pub test_acc: Option<f64>,
}

impl RunMetrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }
}

/// Anything that maps a dataset node to class probabilities.
pub trait Predictor {
    fn predict_node(&self, ds: &Dataset, node: usize) -> Result<Vec<f64>>;
}

impl Predictor for ModelParams {
    fn predict_node(&self, ds: &Dataset, node: usize) -> Result<Vec<f64>> {
        self.predict(&ds.instance(node))
    }
}

impl Predictor for LinearSoftmax {
    fn predict_node(&self, ds: &Dataset, node: usize) -> Result<Vec<f64>> {
        let rows = ds
            .feature_rows()
            .ok_or_else(|| Error::Data("feat needs a feature matrix".into()))?;
        self.predict(&rows[node])
    }
}

impl Predictor for LabelDistributionTable {
    fn predict_node(&self, _ds: &Dataset, node: usize) -> Result<Vec<f64>> {
        if node >= self.num_nodes() {
            return Err(Error::InvalidInput(format!(
                "node {node} outside the propagated graph"
            )));
        }
        Ok(self.row(node).to_vec())
    }
}

/// Accuracy of argmax predictions over labeled `(node, class)` pairs.
pub fn accuracy_on<P: Predictor + ?Sized>(
    model: &P,
    ds: &Dataset,
    labeled: &[(usize, usize)],
) -> Result<f64> {
    let mut predicted = Vec::with_capacity(labeled.len());
    let mut gold = Vec::with_capacity(labeled.len());
    for &(node, y) in labeled {
        predicted.push(argmax(&model.predict_node(ds, node)?));
        gold.push(y);
    }
    accuracy(&predicted, &gold)
}

/// Accuracy on one section of the split.
pub fn evaluate<P: Predictor + ?Sized>(model: &P, ds: &Dataset, section: Section) -> Result<f64> {
    let labeled = ds.labeled_section(section);
    if labeled.is_empty() {
        return Err(Error::Data(format!(
            "the {section} section has no labeled nodes"
        )));
    }
    accuracy_on(model, ds, &labeled)
}

/// Fresh model for `ds`, initialized from the seed's init stream.
pub fn build_model(variant: ModelVariant, ds: &Dataset, cfg: &TrainConfig) -> Result<ModelParams> {
    if variant.uses_features() && ds.features.is_none() {
        return Err(Error::Data(format!(
            "{variant} needs a feature matrix (features.tsv)"
        )));
    }
    let shape = ModelShape {
        num_nodes: ds.num_nodes,
        num_features: ds.num_features(),
        num_classes: ds.num_classes,
    };
    ModelParams::new(
        variant,
        shape,
        &cfg.architecture,
        &mut Streams::new(cfg.seed).init,
    )
}

fn diverged(phase: &'static str, round: usize, step: usize, err: impl ToString) -> Error {
    Error::Diverged {
        phase,
        round,
        step,
        message: err.to_string(),
    }
}

/// Runs `cfg.pretrain_steps` context-only steps and returns each step's loss.
pub fn pretrain<R: Rng + ?Sized>(
    model: &mut ModelParams,
    sampler: &ContextSampler<'_>,
    features: Option<&[SparseVec]>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut losses = Vec::with_capacity(cfg.pretrain_steps);
    for step in 0..cfg.pretrain_steps {
        let batch = sampler.sample_batch(cfg.n2, rng);
        let (loss, grads) = model
            .unsupervised_loss_batch(&batch, features)
            .map_err(|e| diverged("pretrain", 0, step, e))?;
        if !loss.is_finite() {
            return Err(diverged("pretrain", 0, step, format!("loss is {loss}")));
        }
        model
            .sgd_step(&grads, cfg.lr_unsup)
            .map_err(|e| diverged("pretrain", 0, step, e))?;
        losses.push(loss);
    }
    Ok(losses)
}

fn check_compatible(model: &ModelParams, ds: &Dataset) -> Result<()> {
    if model.num_nodes() != ds.num_nodes || model.num_classes() != ds.num_classes {
        return Err(Error::Config(format!(
            "model built for {} nodes / {} classes, dataset has {} / {}",
            model.num_nodes(),
            model.num_classes(),
            ds.num_nodes,
            ds.num_classes
        )));
    }
    if model.variant().uses_features() && model.num_features() != ds.num_features() {
        return Err(Error::Config(format!(
            "model expects {} features, dataset has {}",
            model.num_features(),
            ds.num_features()
        )));
    }
    Ok(())
}

/// Tracks the best validation score and decides when to stop.
struct EarlyStop<M> {
    best: Option<(usize, f64, M)>,
    since: usize,
    patience: usize,
}

impl<M: Clone> EarlyStop<M> {
    fn new(patience: usize) -> Self {
        Self {
            best: None,
            since: 0,
            patience,
        }
    }

    /// Records a round; returns true when training should stop. Ties keep the
    /// later parameters but do not reset patience.
    fn observe(&mut self, round: usize, val: f64, model: &M) -> bool {
        match &self.best {
            Some((_, best, _)) if val < *best => self.since += 1,
            Some((_, best, _)) if val == *best => {
                self.since += 1;
                self.best = Some((round, val, model.clone()));
            }
            _ => {
                self.since = 0;
                self.best = Some((round, val, model.clone()));
            }
        }
        self.since >= self.patience
    }
}

/// Pretrains, then alternates supervised and context steps.
///
/// With a validation set the best-scoring parameters are restored at exit;
/// without one, training runs for `max_rounds` and keeps the final state.
pub fn train(model: &mut ModelParams, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    check_compatible(model, ds)?;
    let mut streams = Streams::new(cfg.seed);
    let sets = labeled_sets(ds, cfg.val_fraction, &mut streams.split)?;
    let features = ds.feature_rows();

    let needs_context = cfg.t2 > 0 || cfg.pretrain_steps > 0;
    let sampler = if needs_context {
        let index = LabelIndex::new(&sets.train, ds.num_classes)?;
        Some(ContextSampler::new(&ds.graph, index, cfg.sampler)?)
    } else {
        None
    };

    let mut history = TrainHistory::default();
    if let Some(s) = &sampler {
        history.pretrain_losses = pretrain(model, s, features, cfg, &mut streams.context)?;
    }

    let mut stop = EarlyStop::new(cfg.patience);
    for round in 1..=cfg.max_rounds {
        let mut ls = 0.0;
        for step in 0..cfg.t1 {
            let batch: Vec<LabeledInstance<'_>> = (0..cfg.n1)
                .map(|_| {
                    let (node, label) =
                        sets.train[streams.supervised.gen_range(0..sets.train.len())];
                    LabeledInstance {
                        instance: ds.instance(node),
                        label,
                    }
                })
                .collect();
            let (loss, grads) = model
                .supervised_loss_batch(&batch)
                .map_err(|e| diverged("supervised", round, step, e))?;
            if !loss.is_finite() {
                return Err(diverged(
                    "supervised",
                    round,
                    step,
                    format!("loss is {loss}"),
                ));
            }
            model
                .sgd_step(&grads, cfg.lr_sup)
                .map_err(|e| diverged("supervised", round, step, e))?;
            ls += loss;
        }
        let mut lu = None;
        if let Some(s) = &sampler {
            if cfg.t2 > 0 {
                let mut total = 0.0;
                for step in 0..cfg.t2 {
                    let batch = s.sample_batch(cfg.n2, &mut streams.context);
                    let (loss, grads) = model
                        .unsupervised_loss_batch(&batch, features)
                        .map_err(|e| diverged("context", round, step, e))?;
                    if !loss.is_finite() {
                        return Err(diverged("context", round, step, format!("loss is {loss}")));
                    }
                    model
                        .sgd_step(&grads, cfg.lr_unsup)
                        .map_err(|e| diverged("context", round, step, e))?;
                    total += loss;
                }
                lu = Some(total / cfg.t2 as f64);
            }
        }

        let val_acc = if sets.validation.is_empty() {
            None
        } else {
            Some(accuracy_on(model, ds, &sets.validation)?)
        };
        history.rounds.push(RoundRecord {
            round,
            ls: Some(ls / cfg.t1 as f64),
            lu,
            val_acc,
            sup_steps: cfg.t1,
            unsup_steps: if lu.is_some() { cfg.t2 } else { 0 },
        });
        if let Some(v) = val_acc {
            if stop.observe(round, v, model) {
                history.stopped_early = round < cfg.max_rounds;
                break;
            }
        }
    }

    match stop.best {
        Some((round, val, best)) => {
            *model = best;
            history.best_round = Some(round);
            history.best_val = Some(val);
        }
        None => history.best_round = history.rounds.last().map(|r| r.round),
    }
    Ok(history)
}

/// Feat with the same validation and early-stopping protocol: one full-batch
/// gradient step per round.
pub fn fit_feat(ds: &Dataset, cfg: &TrainConfig) -> Result<(LinearSoftmax, TrainHistory)> {
    cfg.validate()?;
    let rows = ds
        .feature_rows()
        .ok_or_else(|| Error::Data("feat needs a feature matrix (features.tsv)".into()))?;
    let mut streams = Streams::new(cfg.seed);
    let sets = labeled_sets(ds, cfg.val_fraction, &mut streams.split)?;
    let examples: Vec<(&SparseVec, usize)> =
        sets.train.iter().map(|&(i, y)| (&rows[i], y)).collect();
    let mut model = LinearSoftmax::zeros(ds.num_features(), ds.num_classes);
    let mut history = TrainHistory::default();
    let mut stop = EarlyStop::new(cfg.patience);
    for round in 1..=cfg.max_rounds {
        let loss = model
            .step(&examples, cfg.lr_sup)
            .map_err(|e| diverged("feat", round, 0, e))?;
        let val_acc = if sets.validation.is_empty() {
            None
        } else {
            Some(accuracy_on(&model, ds, &sets.validation)?)
        };
        history.rounds.push(RoundRecord {
            round,
            ls: Some(loss),
            lu: None,
            val_acc,
            sup_steps: 1,
            unsup_steps: 0,
        });
        if let Some(v) = val_acc {
            if stop.observe(round, v, &model) {
                history.stopped_early = round < cfg.max_rounds;
                break;
            }
        }
    }
    match stop.best {
        Some((round, val, best)) => {
            model = best;
            history.best_round = Some(round);
            history.best_val = Some(val);
        }
        None => history.best_round = history.rounds.last().map(|r| r.round),
    }
    Ok((model, history))
}

/// Label propagation from the train labels; the log has one line per sweep.
pub fn fit_lp(ds: &Dataset, cfg: &TrainConfig) -> Result<(LabelDistributionTable, TrainHistory)> {
    cfg.validate()?;
    let mut streams = Streams::new(cfg.seed);
    let sets = labeled_sets(ds, cfg.val_fraction, &mut streams.split)?;
    let table = label_propagation(
        &ds.graph,
        &sets.train,
        ds.num_classes,
        cfg.lp_max_iters,
        cfg.lp_tol,
    )?;
    let val_acc = if sets.validation.is_empty() {
        None
    } else {
        Some(accuracy_on(&table, ds, &sets.validation)?)
    };
    let mut history = TrainHistory::default();
    for (k, _) in table.residuals.iter().enumerate() {
        history.rounds.push(RoundRecord {
            round: k + 1,
            ls: None,
            lu: None,
            val_acc: if k + 1 == table.iterations() {
                val_acc
            } else {
                None
            },
            sup_steps: 0,
            unsup_steps: 0,
        });
    }
    history.best_round = Some(table.iterations());
    history.best_val = val_acc;
    Ok((table, history))
}

/// A trained model of any supported kind.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Planetoid(ModelParams),
    Feat(LinearSoftmax),
    LabelPropagation(LabelDistributionTable),
}

impl TrainedModel {
    pub fn kind(&self) -> &str {
        match self {
            TrainedModel::Planetoid(m) => m.variant().name(),
            TrainedModel::Feat(_) => LinearSoftmax::KIND,
            TrainedModel::LabelPropagation(_) => LabelDistributionTable::KIND,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        match self {
            TrainedModel::Planetoid(m) => m.to_checkpoint(),
            TrainedModel::Feat(m) => m.to_checkpoint(),
            TrainedModel::LabelPropagation(m) => m.to_checkpoint(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        match ck.kind.as_str() {
            LinearSoftmax::KIND => Ok(TrainedModel::Feat(LinearSoftmax::from_checkpoint(ck)?)),
            LabelDistributionTable::KIND => Ok(TrainedModel::LabelPropagation(
                LabelDistributionTable::from_checkpoint(ck)?,
            )),
            _ => Ok(TrainedModel::Planetoid(ModelParams::from_checkpoint(ck)?)),
        }
    }

    /// Checks that the model can score nodes of `ds`.
    pub fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        let mismatch = |what: String| {
            Err(Error::Config(format!(
                "checkpoint does not fit the dataset: {what}"
            )))
        };
        match self {
            TrainedModel::Planetoid(m) => check_compatible(m, ds),
            TrainedModel::Feat(m) => {
                if ds.features.is_none() {
                    return Err(Error::Data(
                        "feat needs a feature matrix (features.tsv)".into(),
                    ));
                }
                if m.num_features() != ds.num_features() || m.num_classes() != ds.num_classes {
                    return mismatch(format!(
                        "{} features / {} classes vs {} / {}",
                        m.num_features(),
                        m.num_classes(),
                        ds.num_features(),
                        ds.num_classes
                    ));
                }
                Ok(())
            }
            TrainedModel::LabelPropagation(t) => {
                if t.num_nodes() != ds.num_nodes || t.num_classes() != ds.num_classes {
                    return mismatch(format!("{} nodes vs {}", t.num_nodes(), ds.num_nodes));
                }
                Ok(())
            }
        }
    }
}

impl Predictor for TrainedModel {
    fn predict_node(&self, ds: &Dataset, node: usize) -> Result<Vec<f64>> {
        match self {
            TrainedModel::Planetoid(m) => m.predict_node(ds, node),
            TrainedModel::Feat(m) => m.predict_node(ds, node),
            TrainedModel::LabelPropagation(m) => m.predict_node(ds, node),
        }
    }
}

/// Which method a run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Planetoid(ModelVariant),
    Feat,
    LabelPropagation,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "feat" => Ok(Method::Feat),
            "lp" => Ok(Method::LabelPropagation),
            other => Ok(Method::Planetoid(other.parse()?)),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Method::Planetoid(v) => v.fmt(f),
            Method::Feat => f.write_str(LinearSoftmax::KIND),
            Method::LabelPropagation => f.write_str(LabelDistributionTable::KIND),
        }
    }
}

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub model: TrainedModel,
    pub history: TrainHistory,
    pub metrics: RunMetrics,
}

/// Trains `method` on `ds` and scores the test section when it has labels.
pub fn run(method: Method, ds: &Dataset, cfg: &TrainConfig) -> Result<RunOutput> {
    let (model, history) = match method {
        Method::Planetoid(variant) => {
            let mut model = build_model(variant, ds, cfg)?;
            let history = train(&mut model, ds, cfg)?;
            (TrainedModel::Planetoid(model), history)
        }
        Method::Feat => {
            let (m, h) = fit_feat(ds, cfg)?;
            (TrainedModel::Feat(m), h)
        }
        Method::LabelPropagation => {
            let (m, h) = fit_lp(ds, cfg)?;
            (TrainedModel::LabelPropagation(m), h)
        }
    };
    let test = ds.labeled_section(Section::Test);
    let test_acc = if test.is_empty() {
        None
    } else {
        Some(accuracy_on(&model, ds, &test)?)
    };
    let metrics = RunMetrics {
        variant: method.to_string(),
        seed: cfg.seed,
        rounds: history.rounds.len(),
        best_round: history.best_round,
        best_val: history.best_val,
        test_acc,
    };
    Ok(RunOutput {
        model,
        history,
        metrics,
    })
}
