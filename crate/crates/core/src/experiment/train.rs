//! Minibatch Adam training of a forecaster together with the projection
//! stacks of its auxiliary nodes.

use std::path::Path;

use log::{debug, info};
use ndarray::{Array1, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augmentation::{augment_adjacency_links, augment_features, project_context, AuxLink, ProjectionStack};
use crate::error::{Error, Result};
use crate::flow::FlowSeries;
use crate::metrics::ErrorAccumulator;
use crate::models::tape::{Activation, Tape, Var};
use crate::models::{normalized_adjacency, Architecture, Forecaster, HistoricalTable, Hyperparameters, ModelDims, NormStats};

use super::config::{LossKind, OptimizerConfig, Variant};
use super::data::PreparedSample;

/// Where an auxiliary node's context vector comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSource {
    City,
    /// Index into [`super::data::SampleContext::node`].
    Node(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxSlot {
    pub link: AuxLink,
    pub source: ContextSource,
}

/// City node first, then one node per target.
pub fn aux_slots(variant: Variant, enabled: bool, targets: &[usize]) -> Vec<AuxSlot> {
    let mut slots = Vec::new();
    if !enabled {
        return slots;
    }
    if variant.uses_city() {
        slots.push(AuxSlot {
            link: AuxLink::All,
            source: ContextSource::City,
        });
    }
    if variant.uses_node() {
        for (k, &g) in targets.iter().enumerate() {
            slots.push(AuxSlot {
                link: AuxLink::Single(g),
                source: ContextSource::Node(k),
            });
        }
    }
    slots
}

fn slot_context(sample: &PreparedSample, source: ContextSource) -> Result<&Array1<f64>> {
    match source {
        ContextSource::City => sample.context.city.as_ref(),
        ContextSource::Node(k) => sample.context.node.get(k),
    }
    .ok_or_else(|| Error::InvalidInput(format!("sample at {} lacks {source:?} context", sample.anchor)))
}

/// One row of the JSONL training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss on the normalized scale.
    pub train_loss: f64,
    /// All-regions validation error on the raw scale.
    pub val_mae: f64,
    pub val_rmse: f64,
}

/// A trained forecaster with its auxiliary-node layout. This is the
/// checkpoint format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub forecaster: Forecaster,
    pub variant: Variant,
    pub slots: Vec<AuxSlot>,
    pub stacks: Vec<ProjectionStack>,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
}

impl TrainedModel {
    pub fn n_aux(&self) -> usize {
        self.slots.len()
    }

    /// Raw-scale prediction `[n x d x t2]` for the original nodes, through the
    /// public augmentation and forecaster path.
    pub fn predict(&self, sample: &PreparedSample, adjacency: &Array2<f64>) -> Result<Array3<f64>> {
        let n = sample.x.dim().0;
        let blocks = self
            .slots
            .iter()
            .zip(&self.stacks)
            .map(|(slot, stack)| project_context(slot_context(sample, slot.source)?.view(), stack))
            .collect::<Result<Vec<_>>>()?;
        let x_e = augment_features(sample.x.view(), &blocks)?;
        let links: Vec<AuxLink> = self.slots.iter().map(|s| s.link).collect();
        let a_e = augment_adjacency_links(adjacency.view(), &links)?;
        let y = self.forecaster.forward(x_e.view(), a_e.view(), self.n_aux(), sample.anchor)?;
        Ok(y.slice_axis(Axis(0), (0..n).into()).to_owned())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// A batch laid out for the tape: history slices of `B*n x d`, one
/// `B x d_c'` context matrix per slot, and the normalized target `B*n x d*t2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub xs: Vec<Array2<f64>>,
    pub contexts: Vec<Array2<f64>>,
    pub target: Array2<f64>,
    pub b: usize,
    pub n: usize,
}

impl Batch {
    pub fn new(model: &Forecaster, slots: &[AuxSlot], samples: &[&PreparedSample]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::InvalidInput("empty batch".into()))?;
        let n = first.x.dim().0;
        let b = samples.len();
        let per: Vec<Vec<Array2<f64>>> = samples.iter().map(|s| model.history_slices(s.x.view(), n)).collect();
        let xs = (0..model.dims.t1)
            .map(|t| {
                let views: Vec<_> = per.iter().map(|p| p[t].view()).collect();
                ndarray::concatenate(Axis(0), &views).map_err(|e| Error::InvalidInput(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let contexts = slots
            .iter()
            .map(|slot| {
                let rows = samples
                    .iter()
                    .map(|s| slot_context(s, slot.source).map(|c| c.view()))
                    .collect::<Result<Vec<_>>>()?;
                ndarray::stack(Axis(0), &rows).map_err(|e| Error::InvalidInput(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let targets: Vec<Array2<f64>> = samples.iter().map(|s| model.flatten_target(s.y.view())).collect();
        let views: Vec<_> = targets.iter().map(|t| t.view()).collect();
        let target = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::InvalidInput(e.to_string()))?;
        Ok(Batch {
            xs,
            contexts,
            target,
            b,
            n,
        })
    }
}

/// The trainable pieces: forecaster parameters followed by each stack's
/// `[W_0^T, b_0, W_1^T, b_1, ...]`.
pub fn flat_params(model: &Forecaster, stacks: &[ProjectionStack]) -> Vec<Array2<f64>> {
    let mut flat = model.params.tensors.clone();
    for s in stacks {
        flat.extend(s.to_params());
    }
    flat
}

pub fn load_flat(model: &mut Forecaster, stacks: &mut [ProjectionStack], flat: &[Array2<f64>]) {
    let m = model.params.len();
    model.params.tensors.clone_from_slice(&flat[..m]);
    let mut at = m;
    for s in stacks.iter_mut() {
        let k = 2 * s.t1();
        s.load_params(&flat[at..at + k]);
        at += k;
    }
}

/// Records the batched forward pass. Returns the `B*n x d*t2` normalized
/// prediction for the original nodes.
pub fn batch_forward(tape: &mut Tape, model: &Forecaster, stacks: &[ProjectionStack], flat: &[Var], batch: &Batch, a_hat: Var) -> Var {
    let m = model.params.len();
    let (b, n, k) = (batch.b, batch.n, stacks.len());
    let big_n = n + k;
    let mut aux_rows: Vec<Vec<Var>> = Vec::with_capacity(k);
    let mut at = m;
    for (j, stack) in stacks.iter().enumerate() {
        let width = 2 * stack.t1();
        let c = tape.constant(batch.contexts[j].clone());
        aux_rows.push(stack.tape_rows(tape, &flat[at..at + width], c));
        at += width;
    }
    // Stacked rows are [all original rows, slot 0 rows, slot 1 rows, ...];
    // reorder so each sample's n + k rows are contiguous.
    let order: Vec<usize> = (0..b)
        .flat_map(|s| (0..n).map(move |i| s * n + i).chain((0..k).map(move |j| b * n + j * b + s)))
        .collect();
    let xs: Vec<Var> = (0..model.dims.t1)
        .map(|t| {
            let orig = tape.constant(batch.xs[t].clone());
            if k == 0 {
                return orig;
            }
            let mut parts = vec![orig];
            parts.extend(aux_rows.iter().map(|rows| rows[t]));
            let cat = tape.concat_rows(&parts);
            tape.gather_rows(cat, order.clone())
        })
        .collect();
    let pred = model.tape_forward(tape, &flat[..m], &xs, a_hat);
    if k == 0 {
        return pred;
    }
    let keep: Vec<usize> = (0..b).flat_map(|s| (0..n).map(move |i| s * big_n + i)).collect();
    tape.gather_rows(pred, keep)
}

fn record_loss(tape: &mut Tape, pred: Var, target: &Array2<f64>, kind: LossKind) -> Var {
    match kind {
        LossKind::Mae => tape.mae_loss(pred, target.clone()),
        LossKind::Mse => tape.mse_loss(pred, target.clone()),
    }
}

/// Loss of `batch` at parameters `flat`. `a_hat` is the normalized adjacency
/// of the augmented graph.
pub fn batch_loss(
    model: &Forecaster,
    stacks: &[ProjectionStack],
    flat: &[Array2<f64>],
    batch: &Batch,
    a_hat: &Array2<f64>,
    kind: LossKind,
) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = flat.iter().map(|p| tape.constant(p.clone())).collect();
    let a = tape.constant(a_hat.clone());
    let pred = batch_forward(&mut tape, model, stacks, &vars, batch, a);
    let loss = record_loss(&mut tape, pred, &batch.target, kind);
    tape.value(loss)[[0, 0]]
}

/// Loss and its gradient with respect to every tensor of `flat`.
pub fn batch_loss_grad(
    model: &Forecaster,
    stacks: &[ProjectionStack],
    flat: &[Array2<f64>],
    batch: &Batch,
    a_hat: &Array2<f64>,
    kind: LossKind,
) -> (f64, Vec<Array2<f64>>) {
    let mut tape = Tape::new();
    let vars: Vec<Var> = flat.iter().map(|p| tape.param(p.clone())).collect();
    let a = tape.constant(a_hat.clone());
    let pred = batch_forward(&mut tape, model, stacks, &vars, batch, a);
    let loss = record_loss(&mut tape, pred, &batch.target, kind);
    let grads = tape.backward(loss);
    let g = vars.iter().zip(flat).map(|(&v, p)| grads.get_or_zeros(v, p.dim())).collect();
    (tape.value(loss)[[0, 0]], g)
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    t: i32,
}

impl Adam {
    fn new(lr: f64, shapes: &[Array2<f64>]) -> Self {
        let zeros: Vec<Array2<f64>> = shapes.iter().map(|p| Array2::zeros(p.dim())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            m.zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            v.zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            ndarray::Zip::from(p).and(&*m).and(&*v).for_each(|p, &m, &v| {
                *p -= self.lr * (m / c1) / ((v / c2).sqrt() + self.eps);
            });
        }
    }
}

fn clip_global_norm(grads: &mut [Array2<f64>], max_norm: f64) {
    let norm = grads.iter().map(|g| g.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads {
            g.mapv_inplace(|v| v * scale);
        }
    }
}

/// Everything one training run needs.
pub struct TrainSetup<'a> {
    pub architecture: Architecture,
    pub hyperparameters: Hyperparameters,
    pub dims: ModelDims,
    pub norm: NormStats,
    /// Training split, used by the historical-average table.
    pub train_series: &'a FlowSeries,
    pub train: &'a [PreparedSample],
    pub val: &'a [PreparedSample],
    pub adjacency: &'a Array2<f64>,
    pub variant: Variant,
    pub slots: Vec<AuxSlot>,
    /// Reduced context dimensions `(city, node)`.
    pub context_dims: (Option<usize>, Option<usize>),
    pub activation: Activation,
    pub optimizer: &'a OptimizerConfig,
    pub seed: u64,
}

const EVAL_BATCH: usize = 256;

/// All-regions `(MAE, RMSE)` of the current parameters on `samples`.
fn raw_error(
    model: &Forecaster,
    stacks: &[ProjectionStack],
    slots: &[AuxSlot],
    samples: &[PreparedSample],
    a_hat: &Array2<f64>,
) -> Result<(f64, f64)> {
    let flat = flat_params(model, stacks);
    let mut acc = ErrorAccumulator::default();
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&PreparedSample> = chunk.iter().collect();
        let batch = Batch::new(model, slots, &refs)?;
        let mut tape = Tape::new();
        let vars: Vec<Var> = flat.iter().map(|p| tape.constant(p.clone())).collect();
        let a = tape.constant(a_hat.clone());
        let pred = batch_forward(&mut tape, model, stacks, &vars, &batch, a);
        let z = tape.value(pred);
        let n = batch.n;
        for (s, sample) in chunk.iter().enumerate() {
            let y = model.unflatten(&z.slice(ndarray::s![s * n..(s + 1) * n, ..]).to_owned());
            acc.add(sample.y.view(), y.view(), None)?;
        }
    }
    match (acc.mae(), acc.rmse()) {
        (Some(mae), Some(rmse)) => Ok((mae, rmse)),
        _ => Err(Error::InvalidInput("no samples to score".into())),
    }
}

/// Trains with early stopping on validation all-regions MAE and returns the
/// best parameters seen. Deterministic for a fixed seed and platform.
pub fn train(setup: TrainSetup<'_>) -> Result<TrainedModel> {
    let mut model = Forecaster::new(setup.architecture, setup.hyperparameters.clone(), setup.dims, setup.seed)?;
    model.norm = setup.norm.clone();
    if !setup.architecture.is_neural() {
        if setup.architecture == Architecture::HistoricalAverage {
            model.history = Some(HistoricalTable::fit(setup.train_series));
        }
        // Parameter-free baselines cannot use auxiliary nodes.
        return Ok(TrainedModel {
            forecaster: model,
            variant: setup.variant,
            slots: Vec::new(),
            stacks: Vec::new(),
            history: Vec::new(),
            best_epoch: 0,
        });
    }
    if setup.train.is_empty() || setup.val.is_empty() {
        return Err(Error::InvalidInput("training needs non-empty train and validation windows".into()));
    }

    // Stacks draw from their own stream so every variant shares the model init.
    let mut stack_rng = ChaCha8Rng::seed_from_u64(setup.seed);
    stack_rng.set_stream(1);
    let mut stacks: Vec<ProjectionStack> = setup
        .slots
        .iter()
        .map(|slot| {
            let dc = match slot.source {
                ContextSource::City => setup.context_dims.0,
                ContextSource::Node(_) => setup.context_dims.1,
            }
            .ok_or_else(|| Error::InvalidInput(format!("no reduced context for {:?}", slot.source)))?;
            Ok(ProjectionStack::init(
                setup.dims.t1,
                setup.dims.d,
                dc,
                setup.activation,
                &mut stack_rng,
            ))
        })
        .collect::<Result<_>>()?;

    let links: Vec<AuxLink> = setup.slots.iter().map(|s| s.link).collect();
    let a_hat = normalized_adjacency(augment_adjacency_links(setup.adjacency.view(), &links)?.view())?;
    let opt = setup.optimizer;
    let mut flat = flat_params(&model, &stacks);
    let mut adam = Adam::new(opt.learning_rate, &flat);
    let mut order_rng = ChaCha8Rng::seed_from_u64(setup.seed);
    order_rng.set_stream(2);
    let mut order: Vec<usize> = (0..setup.train.len()).collect();

    let mut history = Vec::new();
    let initial_train = {
        let mut sum = 0.0;
        for chunk in setup.train.chunks(EVAL_BATCH) {
            let refs: Vec<&PreparedSample> = chunk.iter().collect();
            let batch = Batch::new(&model, &setup.slots, &refs)?;
            sum += batch_loss(&model, &stacks, &flat, &batch, &a_hat, opt.loss) * chunk.len() as f64;
        }
        sum / setup.train.len() as f64
    };
    let (val_mae, val_rmse) = raw_error(&model, &stacks, &setup.slots, setup.val, &a_hat)?;
    history.push(EpochLog {
        epoch: 0,
        train_loss: initial_train,
        val_mae,
        val_rmse,
    });
    let mut best = (val_mae, 0usize, flat.clone());
    let mut stale = 0;

    for epoch in 1..=opt.max_epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        for (bi, chunk) in order.chunks(opt.batch_size).enumerate() {
            let refs: Vec<&PreparedSample> = chunk.iter().map(|&i| &setup.train[i]).collect();
            let batch = Batch::new(&model, &setup.slots, &refs)?;
            let (loss, mut grads) = batch_loss_grad(&model, &stacks, &flat, &batch, &a_hat, opt.loss);
            if !loss.is_finite() || grads.iter().any(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(Error::Divergence {
                    epoch,
                    message: format!("loss {loss} at batch {bi} of {}", model.architecture),
                });
            }
            loss_sum += loss * chunk.len() as f64;
            if let Some(c) = opt.grad_clip {
                clip_global_norm(&mut grads, c);
            }
            adam.step(&mut flat, &grads);
            load_flat(&mut model, &mut stacks, &flat);
        }
        let train_loss = loss_sum / setup.train.len() as f64;
        let (val_mae, val_rmse) = raw_error(&model, &stacks, &setup.slots, setup.val, &a_hat)?;
        if !val_mae.is_finite() {
            return Err(Error::Divergence {
                epoch,
                message: format!("validation MAE {val_mae}"),
            });
        }
        debug!(
            "{} {} epoch {epoch}: train {train_loss:.5} val mae {val_mae:.5}",
            model.architecture,
            setup.variant.id()
        );
        history.push(EpochLog {
            epoch,
            train_loss,
            val_mae,
            val_rmse,
        });
        if val_mae < best.0 {
            best = (val_mae, epoch, flat.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= opt.patience {
                break;
            }
        }
    }
    load_flat(&mut model, &mut stacks, &best.2);
    info!(
        "{} {}: best epoch {} of {}, val mae {:.4}",
        model.architecture,
        setup.variant.id(),
        best.1,
        history.len() - 1,
        best.0
    );
    Ok(TrainedModel {
        forecaster: model,
        variant: setup.variant,
        slots: setup.slots,
        stacks,
        history,
        best_epoch: best.1,
    })
}
