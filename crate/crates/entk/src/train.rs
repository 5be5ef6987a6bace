//! Deterministic minibatch SGD with momentum and checkpointing.
//!
//! The trainer is the discrete counterpart of gradient-flow dynamics:
//! `v <- beta v + grad, theta <- theta - eta v`. Checkpoints are deep
//! copies taken on a fixed schedule; a hook can attach a Gram matrix to
//! each one. Runs are fully determined by their seeds.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{self, LossKind, ModelState};
use crate::ntk::GramMatrix;
use crate::parallel;

/// Training aborts when the batch loss exceeds this or becomes non-finite.
pub const DIVERGENCE_CAP: f64 = 1e6;

/// When to snapshot the model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CheckpointSchedule {
    /// Every `k` iterations, plus iteration 0 and the final iteration.
    Every(u64),
    /// Explicit iteration list; iteration 0 is always added.
    Explicit(Vec<u64>),
}

impl CheckpointSchedule {
    /// Sorted, deduplicated schedule clipped to `[0, total]`.
    pub fn resolve(&self, total: u64) -> Result<Vec<u64>> {
        let mut out = match self {
            CheckpointSchedule::Every(k) => {
                if *k == 0 {
                    return Err(Error::Config("checkpoint interval must be positive".into()));
                }
                let mut v: Vec<u64> = (0..=total).step_by(*k as usize).collect();
                v.push(total);
                v
            }
            CheckpointSchedule::Explicit(list) => {
                if let Some(&bad) = list.iter().find(|&&t| t > total) {
                    return Err(Error::Config(format!(
                        "checkpoint {bad} beyond training horizon {total}"
                    )));
                }
                let mut v = list.clone();
                v.push(0);
                v
            }
        };
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }
}

/// All knobs of one SGD run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub total_iters: u64,
    pub shuffle_seed: u64,
    pub schedule: CheckpointSchedule,
    pub loss: LossKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.05,
            momentum: 0.9,
            batch_size: 64,
            total_iters: 3000,
            shuffle_seed: 0,
            schedule: CheckpointSchedule::Every(50),
            loss: LossKind::CrossEntropy,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) {
            return Err(Error::Config("learning rate must be nonnegative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("momentum must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        self.schedule.resolve(self.total_iters).map(|_| ())
    }
}

/// One snapshot along a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    pub model: ModelState,
    pub train_loss: f64,
    pub train_acc: f64,
    pub gram: Option<GramMatrix>,
}

/// What produced a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub enum RunKind {
    Standard,
    /// Training of the first-order expansion around `anchor`.
    Linearized { anchor: ModelState },
    /// Standard training up to `t_switch`, linearized afterwards.
    Switched { t_switch: u64, anchor: ModelState },
}

/// Ordered checkpoints of one run; record 0 is the initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub kind: RunKind,
    pub records: Vec<Checkpoint>,
}

impl TrajectoryLog {
    pub fn checkpoint_at(&self, t: u64) -> Result<&Checkpoint> {
        self.records
            .iter()
            .find(|c| c.iteration == t)
            .ok_or(Error::MissingCheckpoint(t))
    }

    pub fn gram_at(&self, t: u64) -> Result<&GramMatrix> {
        self.checkpoint_at(t)?
            .gram
            .as_ref()
            .ok_or_else(|| Error::Usage(format!("no cached Gram matrix at iteration {t}")))
    }

    pub fn iterations(&self) -> Vec<u64> {
        self.records.iter().map(|c| c.iteration).collect()
    }

    pub fn last(&self) -> &Checkpoint {
        self.records.last().expect("trajectory never empty")
    }
}

/// Deterministic minibatch index stream.
///
/// Indices are reshuffled per epoch; a leftover tail shorter than the batch
/// size is dropped. When the batch covers the whole dataset no shuffling
/// happens and batches come out in dataset order, making full-batch descent
/// agree exactly with `loss_and_grad` over `0..n`.
#[derive(Debug, Clone)]
pub struct BatchStream {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: ChaCha8Rng,
    full: bool,
}

impl BatchStream {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        let batch = batch_size.min(n).max(1);
        let full = batch == n;
        let mut stream = BatchStream {
            order: (0..n).collect(),
            pos: 0,
            batch,
            rng: ChaCha8Rng::seed_from_u64(seed),
            full,
        };
        if !stream.full {
            stream.order.shuffle(&mut stream.rng);
        }
        stream
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.full {
            return self.order.clone();
        }
        if self.pos + self.batch > self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let out = self.order[self.pos..self.pos + self.batch].to_vec();
        self.pos += self.batch;
        out
    }
}

/// Anything SGD can drive: a plain network or a linearized one.
pub(crate) trait SgdTarget {
    fn param_len(&self) -> usize;
    fn batch_loss_grad(
        &self,
        data: &Dataset,
        idx: &[usize],
        loss: LossKind,
    ) -> Result<(f64, Vec<f64>)>;
    /// `theta <- theta - lr * v`.
    fn apply_step(&mut self, velocity: &[f64], lr: f64);
    /// Parameter-space snapshot for the trajectory record.
    fn snapshot_model(&self) -> ModelState;
    /// Loss (under `loss`) and argmax accuracy over the whole dataset.
    fn full_metrics(&self, data: &Dataset, loss: LossKind) -> Result<(f64, f64)>;
}

/// Shared SGD loop over `[start, end]`, appending scheduled checkpoints.
pub(crate) fn run_sgd<T>(
    target: &mut T,
    data: &Dataset,
    cfg: &TrainConfig,
    stream: &mut BatchStream,
    start: u64,
    end: u64,
    schedule: &[u64],
    hook: &mut dyn FnMut(u64, &T) -> Result<Option<GramMatrix>>,
    records: &mut Vec<Checkpoint>,
) -> Result<()>
where
    T: SgdTarget,
{
    let mut velocity = vec![0.0; target.param_len()];
    for iter in start..=end {
        if schedule.binary_search(&iter).is_ok() {
            let model = target.snapshot_model();
            let (train_loss, train_acc) = target.full_metrics(data, cfg.loss)?;
            let gram = hook(iter, target)?.map(|g| g.with_iteration(iter));
            records.push(Checkpoint {
                iteration: iter,
                model,
                train_loss,
                train_acc,
                gram,
            });
        }
        if iter == end {
            break;
        }
        let batch = stream.next_batch();
        let (loss, grad) = target.batch_loss_grad(data, &batch, cfg.loss)?;
        if !loss.is_finite() || loss > DIVERGENCE_CAP {
            return Err(Error::Diverged {
                iteration: iter,
                loss,
            });
        }
        for (v, g) in velocity.iter_mut().zip(&grad) {
            *v = cfg.momentum * *v + g;
        }
        target.apply_step(&velocity, cfg.lr);
    }
    Ok(())
}

pub(crate) struct StdTarget {
    pub model: ModelState,
}

impl SgdTarget for StdTarget {
    fn param_len(&self) -> usize {
        self.model.params.len()
    }

    fn batch_loss_grad(
        &self,
        data: &Dataset,
        idx: &[usize],
        loss: LossKind,
    ) -> Result<(f64, Vec<f64>)> {
        let xs: Vec<&[f64]> = idx.iter().map(|&i| data.input(i)).collect();
        let ys: Vec<usize> = idx.iter().map(|&i| data.label(i)).collect();
        nn::loss_and_grad(&self.model, &xs, &ys, loss)
    }

    fn apply_step(&mut self, velocity: &[f64], lr: f64) {
        for (p, v) in self.model.params.iter_mut().zip(velocity) {
            *p -= lr * v;
        }
    }

    fn snapshot_model(&self) -> ModelState {
        self.model.clone()
    }

    fn full_metrics(&self, data: &Dataset, loss: LossKind) -> Result<(f64, f64)> {
        dataset_loss_acc(&self.model, data, loss)
    }
}

fn check_compat(model: &ModelState, data: &Dataset) -> Result<()> {
    if model.arch.input_dim != data.dim() {
        return Err(Error::Shape {
            what: "dataset feature dimension",
            expected: model.arch.input_dim,
            got: data.dim(),
        });
    }
    if model.arch.classes() < data.classes() {
        return Err(Error::Config(format!(
            "architecture has {} logits but dataset has {} classes",
            model.arch.classes(),
            data.classes()
        )));
    }
    Ok(())
}

/// Runs SGD from `model`, recording checkpoints per the schedule. `hook` is
/// invoked at every checkpoint and may return a Gram matrix to cache.
pub fn train<H>(
    model: &ModelState,
    data: &Dataset,
    cfg: &TrainConfig,
    mut hook: H,
) -> Result<TrajectoryLog>
where
    H: FnMut(u64, &ModelState) -> Result<Option<GramMatrix>>,
{
    cfg.validate()?;
    check_compat(model, data)?;
    let schedule = cfg.schedule.resolve(cfg.total_iters)?;
    let mut stream = BatchStream::new(data.len(), cfg.batch_size, cfg.shuffle_seed);
    let mut target = StdTarget {
        model: model.clone(),
    };
    let mut records = Vec::with_capacity(schedule.len());
    let mut adapted = |iter: u64, t: &StdTarget| hook(iter, &t.model);
    run_sgd(
        &mut target,
        data,
        cfg,
        &mut stream,
        0,
        cfg.total_iters,
        &schedule,
        &mut adapted,
        &mut records,
    )?;
    Ok(TrajectoryLog {
        kind: RunKind::Standard,
        records,
    })
}

/// Mean cross-entropy and argmax accuracy over a dataset. Argmax ties break
/// toward the lowest class index.
pub fn evaluate(model: &ModelState, data: &Dataset) -> Result<(f64, f64)> {
    dataset_loss_acc(model, data, LossKind::CrossEntropy)
}

pub(crate) fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Dataset-mean loss under `loss` plus argmax accuracy, folded in fixed
/// chunks for thread-count independence.
pub(crate) fn dataset_loss_acc(
    model: &ModelState,
    data: &Dataset,
    loss: LossKind,
) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Err(Error::Usage("empty dataset".into()));
    }
    check_compat(model, data)?;
    let plan = model.arch.plan()?;
    let indices: Vec<usize> = (0..data.len()).collect();
    let partials = parallel::map_chunks(&indices, parallel::FOLD_CHUNK, |chunk| {
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for &i in chunk {
            let logits = nn::forward_with_plan(&plan, &model.params, data.input(i))?;
            let y = data.label(i);
            loss_sum += match loss {
                LossKind::CrossEntropy => nn::cross_entropy_from_logits(&logits, y).0,
                LossKind::MseReadout(rule) => {
                    let seed = rule.seed(logits.len(), Some(y))?;
                    let u: f64 = logits.iter().zip(&seed).map(|(l, s)| l * s).sum();
                    let r = u - y as f64;
                    0.5 * r * r
                }
            };
            if argmax(&logits) == y {
                correct += 1;
            }
        }
        Ok::<_, Error>((loss_sum, correct))
    });

    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for partial in partials {
        let (l, c) = partial?;
        loss_sum += l;
        correct += c;
    }
    let n = data.len() as f64;
    Ok((loss_sum / n, correct as f64 / n))
}
