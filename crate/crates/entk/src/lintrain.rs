//! First-order Taylor linearization around an anchor, training of the
//! linearized model, and the standard-then-linearized switching experiment.
//!
//! A linearized model evaluates
//!
//! `f_lin(x; theta) = f(x; theta_a) + <grad f(x; theta_a), theta - theta_a>`
//!
//! per logit. Its parameter gradient is the anchor Jacobian, independent of
//! the displacement, so its tangent kernel is constant by construction:
//! training it realizes the lazy regime exactly.

use crate::data::{Dataset, ProbeSet};
use crate::error::{Error, Result};
use crate::nn::{self, plan::Plan, LossKind, ModelState, ReadoutRule};
use crate::ntk::{self, GramMatrix};
use crate::parallel;
use crate::train::{
    evaluate, run_sgd, BatchStream, RunKind, SgdTarget, StdTarget, TrainConfig, TrajectoryLog,
};

/// First-order expansion of a network around a fixed anchor.
#[derive(Debug, Clone)]
pub struct LinearizedModel {
    anchor: ModelState,
    delta: Vec<f64>,
    plan: Plan,
}

impl LinearizedModel {
    pub fn anchor(&self) -> &ModelState {
        &self.anchor
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    /// Parameter point `theta_a + delta` wrapped as a model state. Note that
    /// evaluating the nonlinear network there is not the same as evaluating
    /// the linearized model; use [`LinearizedModel::forward`] for the latter.
    pub fn equivalent_state(&self) -> ModelState {
        let params: Vec<f64> = self
            .anchor
            .params
            .iter()
            .zip(&self.delta)
            .map(|(a, d)| a + d)
            .collect();
        ModelState {
            arch: self.anchor.arch.clone(),
            params,
            seed: self.anchor.seed,
        }
    }

    /// Logits of the linearized model: anchor output plus the tangent along
    /// the displacement.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let trace = nn::plan::forward_trace(&self.plan, &self.anchor.params, x)?;
        let tangent = nn::plan::jvp(&self.plan, &self.anchor.params, &trace, &self.delta);
        let primal = trace.last().expect("trace never empty");
        Ok(primal.iter().zip(&tangent).map(|(p, t)| p + t).collect())
    }

    /// Tangent kernel of the linearized model. The Jacobian is anchored, so
    /// this is the anchor's Gram matrix whatever the displacement.
    pub fn entk_gram(
        &self,
        probe: &ProbeSet,
        rule: ReadoutRule,
        chunk: usize,
    ) -> Result<GramMatrix> {
        ntk::entk_gram(&self.anchor, probe, rule, chunk)
    }

    /// Mean cross-entropy and argmax accuracy of the linearized outputs.
    pub fn evaluate(&self, data: &Dataset) -> Result<(f64, f64)> {
        self.loss_acc(data, LossKind::CrossEntropy)
    }

    fn loss_acc(&self, data: &Dataset, loss: LossKind) -> Result<(f64, f64)> {
        if data.is_empty() {
            return Err(Error::Usage("empty dataset".into()));
        }
        let indices: Vec<usize> = (0..data.len()).collect();
        let partials = parallel::map_chunks(&indices, parallel::FOLD_CHUNK, |chunk| {
            let mut loss_sum = 0.0;
            let mut correct = 0usize;
            for &i in chunk {
                let logits = self.forward(data.input(i))?;
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
                if crate::train::argmax(&logits) == y {
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
}

/// Expands `anchor` to first order; the displacement starts at zero, so the
/// linearized model initially coincides with the network.
pub fn linearize(anchor: ModelState) -> Result<LinearizedModel> {
    if let Some(i) = anchor.params.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "anchor parameters".into(),
            index: i,
        });
    }
    let plan = anchor.arch.plan()?;
    let delta = vec![0.0; plan.param_len];
    Ok(LinearizedModel {
        anchor,
        delta,
        plan,
    })
}

struct LinTarget<'a> {
    lin: &'a mut LinearizedModel,
}

impl LinTarget<'_> {
    /// Loss and displacement gradient of one sample, accumulated into `grad`.
    /// One forward, one tangent, and one reverse pass, all at the anchor.
    fn sample_loss_grad(
        &self,
        x: &[f64],
        label: usize,
        loss: LossKind,
        grad: &mut [f64],
    ) -> Result<f64> {
        let lin = &self.lin;
        let trace = nn::plan::forward_trace(&lin.plan, &lin.anchor.params, x)?;
        let tangent = nn::plan::jvp(&lin.plan, &lin.anchor.params, &trace, &lin.delta);
        let primal = trace.last().expect("trace never empty");
        let logits: Vec<f64> = primal.iter().zip(&tangent).map(|(p, t)| p + t).collect();

        let (value, seed) = match loss {
            LossKind::CrossEntropy => {
                if label >= logits.len() {
                    return Err(Error::Usage(format!(
                        "label {label} out of range for {} classes",
                        logits.len()
                    )));
                }
                let (l, mut probs) = nn::cross_entropy_from_logits(&logits, label);
                probs[label] -= 1.0;
                (l, probs)
            }
            LossKind::MseReadout(rule) => {
                let rseed = rule.seed(logits.len(), Some(label))?;
                let u: f64 = logits.iter().zip(&rseed).map(|(l, s)| l * s).sum();
                let resid = u - label as f64;
                let seed: Vec<f64> = rseed.iter().map(|s| s * resid).collect();
                (0.5 * resid * resid, seed)
            }
        };
        nn::plan::vjp_accumulate(&lin.plan, &lin.anchor.params, &trace, &seed, grad);
        Ok(value)
    }
}

impl SgdTarget for LinTarget<'_> {
    fn param_len(&self) -> usize {
        self.lin.delta.len()
    }

    fn batch_loss_grad(
        &self,
        data: &Dataset,
        idx: &[usize],
        loss: LossKind,
    ) -> Result<(f64, Vec<f64>)> {
        if idx.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        let partials = parallel::map_chunks(idx, parallel::FOLD_CHUNK, |chunk| {
            let mut grad = vec![0.0; self.lin.delta.len()];
            let mut loss_sum = 0.0;
            for &i in chunk {
                loss_sum += self.sample_loss_grad(data.input(i), data.label(i), loss, &mut grad)?;
            }
            Ok::<_, Error>((loss_sum, grad))
        });
        let n = idx.len() as f64;
        let mut total_loss = 0.0;
        let mut total_grad = vec![0.0; self.lin.delta.len()];
        for partial in partials {
            let (l, g) = partial?;
            total_loss += l;
            for (t, v) in total_grad.iter_mut().zip(&g) {
                *t += v;
            }
        }
        total_loss /= n;
        for g in total_grad.iter_mut() {
            *g /= n;
        }
        Ok((total_loss, total_grad))
    }

    fn apply_step(&mut self, velocity: &[f64], lr: f64) {
        for (d, v) in self.lin.delta.iter_mut().zip(velocity) {
            *d -= lr * v;
        }
    }

    fn snapshot_model(&self) -> ModelState {
        self.lin.equivalent_state()
    }

    fn full_metrics(&self, data: &Dataset, loss: LossKind) -> Result<(f64, f64)> {
        self.lin.loss_acc(data, loss)
    }
}

/// SGD on the displacement of a linearized model. Checkpoints store the
/// anchor-plus-displacement parameter point; the run kind carries the anchor.
pub fn train_linearized<H>(
    lin: &mut LinearizedModel,
    data: &Dataset,
    cfg: &TrainConfig,
    mut hook: H,
) -> Result<TrajectoryLog>
where
    H: FnMut(u64, &LinearizedModel) -> Result<Option<GramMatrix>>,
{
    cfg.validate()?;
    let schedule = cfg.schedule.resolve(cfg.total_iters)?;
    let mut stream = BatchStream::new(data.len(), cfg.batch_size, cfg.shuffle_seed);
    let anchor = lin.anchor.clone();
    let mut records = Vec::with_capacity(schedule.len());
    let mut target = LinTarget { lin };
    let mut adapted = |iter: u64, t: &LinTarget| hook(iter, t.lin);
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
        kind: RunKind::Linearized { anchor },
        records,
    })
}

/// Outcome of one switching run.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchResult {
    pub t_switch: u64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub traj: TrajectoryLog,
}

/// Standard training up to `t_switch`, then linearized training up to
/// `horizon`, continuing the same minibatch stream. Test metrics are those
/// of the linearized model (or of the network itself when `t_switch ==
/// horizon`, where no second leg exists).
pub fn switch_experiment<H>(
    model: &ModelState,
    train_data: &Dataset,
    test_data: &Dataset,
    cfg: &TrainConfig,
    t_switch: u64,
    horizon: u64,
    mut hook: H,
) -> Result<SwitchResult>
where
    H: FnMut(u64, &ModelState) -> Result<Option<GramMatrix>>,
{
    if t_switch > horizon {
        return Err(Error::Usage(format!(
            "switch iteration {t_switch} beyond horizon {horizon}"
        )));
    }
    cfg.validate()?;
    let schedule = cfg.schedule.resolve(horizon)?;
    let mut stream = BatchStream::new(train_data.len(), cfg.batch_size, cfg.shuffle_seed);
    let mut records = Vec::with_capacity(schedule.len());

    // First leg: standard SGD to the switch point.
    let first_schedule: Vec<u64> = schedule.iter().copied().filter(|&t| t <= t_switch).collect();
    let mut std_target = StdTarget {
        model: model.clone(),
    };
    let mut std_hook = |iter: u64, t: &StdTarget| hook(iter, &t.model);
    run_sgd(
        &mut std_target,
        train_data,
        cfg,
        &mut stream,
        0,
        t_switch,
        &first_schedule,
        &mut std_hook,
        &mut records,
    )?;
    let anchor = std_target.model;

    if t_switch == horizon {
        let (test_loss, test_acc) = evaluate(&anchor, test_data)?;
        return Ok(SwitchResult {
            t_switch,
            test_loss,
            test_acc,
            traj: TrajectoryLog {
                kind: RunKind::Switched {
                    t_switch,
                    anchor: anchor.clone(),
                },
                records,
            },
        });
    }

    // Second leg: linearized SGD on the displacement, same stream. Momentum
    // restarts at zero in displacement space.
    let mut lin = linearize(anchor.clone())?;
    let second_schedule: Vec<u64> = schedule.iter().copied().filter(|&t| t > t_switch).collect();
    {
        let mut target = LinTarget { lin: &mut lin };
        let mut lin_hook = |iter: u64, t: &LinTarget| hook(iter, &t.lin.anchor);
        run_sgd(
            &mut target,
            train_data,
            cfg,
            &mut stream,
            t_switch,
            horizon,
            &second_schedule,
            &mut lin_hook,
            &mut records,
        )?;
    }
    let (test_loss, test_acc) = lin.evaluate(test_data)?;
    Ok(SwitchResult {
        t_switch,
        test_loss,
        test_acc,
        traj: TrajectoryLog {
            kind: RunKind::Switched { t_switch, anchor },
            records,
        },
    })
}
