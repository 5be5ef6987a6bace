//! Minimal neural-network engine with reverse-mode differentiation.
//!
//! Supports three architecture families — plain linear maps, MLPs, and a
//! small LeNet-style CNN — over a single flat `f64` parameter vector.
//! Besides the forward pass it provides per-sample parameter gradients of a
//! scalar readout (reverse mode), batch loss gradients, and tangent
//! (forward-mode) products used by linearized training. Everything is pure:
//! identical inputs give bitwise-identical outputs.

pub(crate) mod plan;

use crate::error::{Error, Result};
use crate::parallel;
use plan::{LayerPlan, Plan};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Elementwise nonlinearity between layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub(crate) fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output. The relu
    /// subgradient at 0 is fixed to 0.
    #[inline]
    pub(crate) fn deriv_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Architecture family.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchKind {
    /// Single dense layer, no activation.
    Linear,
    /// Dense layers with activations between them.
    Mlp,
    /// Two conv+pool stages followed by dense layers; input must be a
    /// square single-channel image.
    Lenet,
}

/// Architecture descriptor.
///
/// `widths` lists the output width of every parameterized stage and its last
/// entry is the class count. For [`ArchKind::Lenet`] the first two entries
/// are the channel counts of the two conv stages and the rest are dense
/// widths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub kind: ArchKind,
    pub input_dim: usize,
    pub widths: Vec<usize>,
    pub activation: Activation,
}

/// Kernel size of the LeNet conv stages.
const CONV_K: usize = 5;
/// Pooling window of the LeNet pool stages.
const POOL_K: usize = 2;

impl ArchSpec {
    pub fn linear(input_dim: usize, classes: usize) -> Self {
        ArchSpec {
            kind: ArchKind::Linear,
            input_dim,
            widths: vec![classes],
            activation: Activation::Relu,
        }
    }

    pub fn mlp(input_dim: usize, widths: Vec<usize>, activation: Activation) -> Self {
        ArchSpec {
            kind: ArchKind::Mlp,
            input_dim,
            widths,
            activation,
        }
    }

    /// LeNet-style CNN over a `side × side` single-channel image.
    pub fn lenet(side: usize, widths: Vec<usize>, activation: Activation) -> Self {
        ArchSpec {
            kind: ArchKind::Lenet,
            input_dim: side * side,
            widths,
            activation,
        }
    }

    /// Number of output logits.
    pub fn classes(&self) -> usize {
        self.widths.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        self.plan().map(|_| ())
    }

    /// Total flat parameter count `p`.
    pub fn param_count(&self) -> Result<usize> {
        Ok(self.plan()?.param_len)
    }

    pub(crate) fn plan(&self) -> Result<Plan> {
        if self.widths.is_empty() {
            return Err(Error::Config("width sequence must be nonempty".into()));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.input_dim == 0 {
            return Err(Error::Config("input dimension must be positive".into()));
        }

        let mut layers = Vec::new();
        let mut offset = 0usize;
        let push_dense = |in_dim: usize, out_dim: usize, offset: &mut usize| {
            let w = *offset..*offset + in_dim * out_dim;
            let b = w.end..w.end + out_dim;
            *offset = b.end;
            LayerPlan::Dense {
                in_dim,
                out_dim,
                w,
                b: Some(b),
            }
        };

        match self.kind {
            ArchKind::Linear => {
                if self.widths.len() != 1 {
                    return Err(Error::Config(
                        "linear architecture takes a single output width".into(),
                    ));
                }
                // Bias-free: f(x) = Wx, so the readout gradient is the input.
                let w = offset..offset + self.input_dim * self.widths[0];
                offset = w.end;
                layers.push(LayerPlan::Dense {
                    in_dim: self.input_dim,
                    out_dim: self.widths[0],
                    w,
                    b: None,
                });
            }
            ArchKind::Mlp => {
                let mut in_dim = self.input_dim;
                let last = self.widths.len() - 1;
                for (i, &w) in self.widths.iter().enumerate() {
                    layers.push(push_dense(in_dim, w, &mut offset));
                    if i != last {
                        layers.push(LayerPlan::Act(self.activation));
                    }
                    in_dim = w;
                }
            }
            ArchKind::Lenet => {
                if self.widths.len() < 3 {
                    return Err(Error::Config(
                        "lenet needs two conv channel counts and at least one dense width".into(),
                    ));
                }
                let side = (self.input_dim as f64).sqrt().round() as usize;
                if side * side != self.input_dim {
                    return Err(Error::Config(format!(
                        "lenet input dimension {} is not a square image",
                        self.input_dim
                    )));
                }
                let (c1, c2) = (self.widths[0], self.widths[1]);
                let mut in_ch = 1usize;
                let mut h = side;
                for &out_ch in &[c1, c2] {
                    if h < CONV_K {
                        return Err(Error::Config(format!(
                            "lenet image side {side} too small for two conv+pool stages"
                        )));
                    }
                    let w = offset..offset + out_ch * in_ch * CONV_K * CONV_K;
                    let b = w.end..w.end + out_ch;
                    offset = b.end;
                    layers.push(LayerPlan::Conv {
                        in_ch,
                        out_ch,
                        in_h: h,
                        in_w: h,
                        k: CONV_K,
                        w,
                        b,
                    });
                    layers.push(LayerPlan::Act(self.activation));
                    h -= CONV_K - 1;
                    if h % POOL_K != 0 || h / POOL_K == 0 {
                        return Err(Error::Config(format!(
                            "lenet image side {side} incompatible with pooling"
                        )));
                    }
                    layers.push(LayerPlan::AvgPool {
                        ch: out_ch,
                        in_h: h,
                        in_w: h,
                        k: POOL_K,
                    });
                    h /= POOL_K;
                    in_ch = out_ch;
                }
                let mut in_dim = c2 * h * h;
                let dense_widths = &self.widths[2..];
                let last = dense_widths.len() - 1;
                for (i, &w) in dense_widths.iter().enumerate() {
                    layers.push(push_dense(in_dim, w, &mut offset));
                    if i != last {
                        layers.push(LayerPlan::Act(self.activation));
                    }
                    in_dim = w;
                }
            }
        }

        Ok(Plan {
            layers,
            param_len: offset,
            in_dim: self.input_dim,
            out_dim: self.classes(),
        })
    }
}

/// How a `c`-logit network is reduced to the scalar output that per-sample
/// gradients and the Gram matrix are taken of.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReadoutRule {
    /// Logit of the example's ground-truth class (needs a label).
    TrueClass,
    /// Logit of one fixed class.
    FixedClass(usize),
    /// Sum of all logits.
    LogitSum,
}

impl ReadoutRule {
    /// Output-space seed vector selecting the readout.
    pub(crate) fn seed(&self, classes: usize, label: Option<usize>) -> Result<Vec<f64>> {
        let mut seed = vec![0.0; classes];
        match *self {
            ReadoutRule::TrueClass => {
                let y = label.ok_or_else(|| {
                    Error::Usage("true-class readout requires a label".into())
                })?;
                if y >= classes {
                    return Err(Error::Usage(format!(
                        "label {y} out of range for {classes} classes"
                    )));
                }
                seed[y] = 1.0;
            }
            ReadoutRule::FixedClass(k) => {
                if k >= classes {
                    return Err(Error::Usage(format!(
                        "fixed class {k} out of range for {classes} classes"
                    )));
                }
                seed[k] = 1.0;
            }
            ReadoutRule::LogitSum => seed.fill(1.0),
        }
        Ok(seed)
    }
}

/// Architecture plus flat parameter vector at one training instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub arch: ArchSpec,
    pub params: Vec<f64>,
    pub seed: u64,
}

impl ModelState {
    /// Wraps an explicit parameter vector, checking length and finiteness.
    pub fn with_params(arch: ArchSpec, params: Vec<f64>, seed: u64) -> Result<Self> {
        let expected = arch.param_count()?;
        if params.len() != expected {
            return Err(Error::Shape {
                what: "parameter vector",
                expected,
                got: params.len(),
            });
        }
        if let Some(i) = params.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "parameter vector".into(),
                index: i,
            });
        }
        Ok(ModelState { arch, params, seed })
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }
}

/// Deterministic initialization: weights uniform in `±1/sqrt(fan_in)`,
/// biases zero.
pub fn init_model(arch: &ArchSpec, seed: u64) -> Result<ModelState> {
    let plan = arch.plan()?;
    let mut params = vec![0.0; plan.param_len];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for seg in plan.param_segments() {
        let bound = 1.0 / (seg.fan_in as f64).sqrt();
        for idx in seg.weights {
            params[idx] = rng.random_range(-bound..bound);
        }
        for idx in seg.biases {
            params[idx] = 0.0;
        }
    }
    Ok(ModelState {
        arch: arch.clone(),
        params,
        seed,
    })
}

/// Full logit vector for one input.
pub fn forward(model: &ModelState, x: &[f64]) -> Result<Vec<f64>> {
    let plan = model.arch.plan()?;
    forward_with_plan(&plan, &model.params, x)
}

pub(crate) fn forward_with_plan(plan: &Plan, params: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let trace = plan::forward_trace(plan, params, x)?;
    Ok(trace.into_iter().last().expect("trace never empty"))
}

/// Scalar readout of the network on one input.
pub fn scalar_output(
    model: &ModelState,
    x: &[f64],
    label: Option<usize>,
    rule: ReadoutRule,
) -> Result<f64> {
    let logits = forward(model, x)?;
    let seed = rule.seed(logits.len(), label)?;
    Ok(logits.iter().zip(&seed).map(|(l, s)| l * s).sum())
}

/// Per-sample parameter gradient of the scalar readout (reverse mode).
pub fn grad_params(
    model: &ModelState,
    x: &[f64],
    label: Option<usize>,
    rule: ReadoutRule,
) -> Result<Vec<f64>> {
    let plan = model.arch.plan()?;
    grad_params_with_plan(&plan, &model.params, x, label, rule)
}

pub(crate) fn grad_params_with_plan(
    plan: &Plan,
    params: &[f64],
    x: &[f64],
    label: Option<usize>,
    rule: ReadoutRule,
) -> Result<Vec<f64>> {
    let trace = plan::forward_trace(plan, params, x)?;
    let seed = rule.seed(plan.out_dim, label)?;
    let mut grad = vec![0.0; plan.param_len];
    plan::vjp_accumulate(plan, params, &trace, &seed, &mut grad);
    if let Some(i) = grad.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("readout gradient (layer {})", plan.layer_of_param(i)),
            index: i,
        });
    }
    Ok(grad)
}

/// Training loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    /// Softmax cross-entropy over the full logit vector.
    CrossEntropy,
    /// Squared error of the scalar readout against the label value,
    /// `mean of 0.5 (u - y)^2`. Used by the functional-dynamics check.
    MseReadout(ReadoutRule),
}

/// Mean loss over a batch and its parameter gradient.
///
/// Per-sample contributions are folded in fixed-size chunks so the result is
/// identical whether or not the work is parallelized.
pub fn loss_and_grad(
    model: &ModelState,
    xs: &[&[f64]],
    labels: &[usize],
    loss: LossKind,
) -> Result<(f64, Vec<f64>)> {
    match loss {
        LossKind::CrossEntropy => batch_loss_grad(model, xs, |i, plan, params, grad| {
            cross_entropy_sample(plan, params, xs[i], labels[i], grad)
        }),
        LossKind::MseReadout(rule) => batch_loss_grad(model, xs, |i, plan, params, grad| {
            mse_readout_sample(plan, params, xs[i], labels[i] as f64, Some(labels[i]), rule, grad)
        }),
    }
}

/// Squared-error readout loss against explicit real targets.
pub fn mse_readout_loss_grad(
    model: &ModelState,
    xs: &[&[f64]],
    targets: &[f64],
    labels: &[usize],
    rule: ReadoutRule,
) -> Result<(f64, Vec<f64>)> {
    if targets.len() != xs.len() {
        return Err(Error::Shape {
            what: "target vector",
            expected: xs.len(),
            got: targets.len(),
        });
    }
    batch_loss_grad(model, xs, |i, plan, params, grad| {
        mse_readout_sample(plan, params, xs[i], targets[i], Some(labels[i]), rule, grad)
    })
}

fn batch_loss_grad<F>(model: &ModelState, xs: &[&[f64]], per_sample: F) -> Result<(f64, Vec<f64>)>
where
    F: Fn(usize, &Plan, &[f64], &mut [f64]) -> Result<f64> + Sync,
{
    if xs.is_empty() {
        return Err(Error::Usage("empty batch".into()));
    }
    let plan = model.arch.plan()?;
    let indices: Vec<usize> = (0..xs.len()).collect();
    let partials = parallel::map_chunks(&indices, parallel::FOLD_CHUNK, |chunk| {
        let mut grad = vec![0.0; plan.param_len];
        let mut loss_sum = 0.0;
        for &i in chunk {
            loss_sum += per_sample(i, &plan, &model.params, &mut grad)?;
        }
        Ok::<_, Error>((loss_sum, grad))
    });

    let n = xs.len() as f64;
    let mut total_loss = 0.0;
    let mut total_grad = vec![0.0; plan.param_len];
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
    if !total_loss.is_finite() {
        return Err(Error::NonFinite {
            context: "batch loss".into(),
            index: 0,
        });
    }
    Ok((total_loss, total_grad))
}

/// One sample's cross-entropy and its gradient contribution (unnormalized).
fn cross_entropy_sample(
    plan: &Plan,
    params: &[f64],
    x: &[f64],
    label: usize,
    grad: &mut [f64],
) -> Result<f64> {
    if label >= plan.out_dim {
        return Err(Error::Usage(format!(
            "label {label} out of range for {} classes",
            plan.out_dim
        )));
    }
    let trace = plan::forward_trace(plan, params, x)?;
    let logits = trace.last().expect("trace never empty");
    let (loss, mut seed) = cross_entropy_from_logits(logits, label);
    seed[label] -= 1.0;
    plan::vjp_accumulate(plan, params, &trace, &seed, grad);
    Ok(loss)
}

/// Stable cross-entropy; returns the loss and the softmax vector.
pub(crate) fn cross_entropy_from_logits(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut exps: Vec<f64> = logits.iter().map(|&l| (l - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() + m - logits[label];
    for e in exps.iter_mut() {
        *e /= z;
    }
    (loss, exps)
}

fn mse_readout_sample(
    plan: &Plan,
    params: &[f64],
    x: &[f64],
    target: f64,
    label: Option<usize>,
    rule: ReadoutRule,
    grad: &mut [f64],
) -> Result<f64> {
    let trace = plan::forward_trace(plan, params, x)?;
    let logits = trace.last().expect("trace never empty");
    let rseed = rule.seed(plan.out_dim, label)?;
    let u: f64 = logits.iter().zip(&rseed).map(|(l, s)| l * s).sum();
    let resid = u - target;
    let seed: Vec<f64> = rseed.iter().map(|s| s * resid).collect();
    plan::vjp_accumulate(plan, params, &trace, &seed, grad);
    Ok(0.5 * resid * resid)
}

#[cfg(test)]
pub(crate) mod testutil {
    //! Independent oracles shared by the unit tests.

    /// Central finite differences of a scalar function of the parameters.
    pub fn fd_grad<F: Fn(&[f64]) -> f64>(f: F, params: &[f64], h: f64) -> Vec<f64> {
        let mut p = params.to_vec();
        let mut out = Vec::with_capacity(p.len());
        for i in 0..p.len() {
            let orig = p[i];
            p[i] = orig + h;
            let hi = f(&p);
            p[i] = orig - h;
            let lo = f(&p);
            p[i] = orig;
            out.push((hi - lo) / (2.0 * h));
        }
        out
    }

    /// Worst per-component difference, relative to the gradient scale.
    pub fn rel_grad_err(analytic: &[f64], numeric: &[f64]) -> f64 {
        assert_eq!(analytic.len(), numeric.len());
        let scale = analytic
            .iter()
            .chain(numeric)
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1e-12);
        analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).abs() / scale)
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::testutil::{fd_grad, rel_grad_err};
    use super::*;

    fn linear_model(weights: &[f64]) -> ModelState {
        let arch = ArchSpec::linear(weights.len(), 1);
        ModelState::with_params(arch, weights.to_vec(), 0).unwrap()
    }

    #[test]
    fn mlp_param_count_matches_hand_count() {
        // 2 -> 3 -> 1: (2*3 + 3) + (3*1 + 1) = 13
        let arch = ArchSpec::mlp(2, vec![3, 1], Activation::Tanh);
        assert_eq!(arch.param_count().unwrap(), 13);
    }

    #[test]
    fn lenet_plan_dimensions() {
        let arch = ArchSpec::lenet(28, vec![4, 8, 32, 10], Activation::Relu);
        // conv1: 4*1*25+4, conv2: 8*4*25+8, fc1: 8*4*4*32+32, fc2: 32*10+10
        let expected = (4 * 25 + 4) + (8 * 4 * 25 + 8) + (128 * 32 + 32) + (32 * 10 + 10);
        assert_eq!(arch.param_count().unwrap(), expected);
        assert!(arch.param_count().unwrap() < 20_000);
    }

    #[test]
    fn invalid_widths_rejected() {
        let arch = ArchSpec::mlp(2, vec![], Activation::Relu);
        assert!(matches!(arch.validate(), Err(Error::Config(_))));
        let arch = ArchSpec::mlp(2, vec![3, 0, 1], Activation::Relu);
        assert!(matches!(arch.validate(), Err(Error::Config(_))));
        let arch = ArchSpec::lenet(27, vec![4, 8, 10], Activation::Relu);
        assert!(matches!(arch.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let arch = ArchSpec::linear(2, 1);
        let a = init_model(&arch, 7).unwrap();
        let b = init_model(&arch, 7).unwrap();
        assert_eq!(a.params, b.params);

        let arch = ArchSpec::mlp(4, vec![8, 3], Activation::Relu);
        let a = init_model(&arch, 1).unwrap();
        let b = init_model(&arch, 2).unwrap();
        assert_ne!(a.params, b.params);
    }

    #[test]
    fn init_biases_zero_and_weights_bounded() {
        let arch = ArchSpec::mlp(9, vec![4, 2], Activation::Tanh);
        let m = init_model(&arch, 3).unwrap();
        let plan = arch.plan().unwrap();
        for seg in plan.param_segments() {
            let bound = 1.0 / (seg.fan_in as f64).sqrt();
            for i in seg.weights {
                assert!(m.params[i].abs() <= bound);
            }
            for i in seg.biases {
                assert_eq!(m.params[i], 0.0);
            }
        }
    }

    #[test]
    fn linear_forward_is_dot_product() {
        let m = linear_model(&[1.0, 2.0]);
        let out = forward(&m, &[3.0, 4.0]).unwrap();
        assert_eq!(out, vec![11.0]);
    }

    #[test]
    fn relu_mlp_zero_input_gives_zero_logits() {
        let arch = ArchSpec::mlp(3, vec![5, 2], Activation::Relu);
        let m = init_model(&arch, 11).unwrap();
        let out = forward(&m, &[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
    }

    #[test]
    fn forward_rejects_wrong_input_dim() {
        let m = linear_model(&[1.0, 2.0]);
        assert!(matches!(
            forward(&m, &[1.0]),
            Err(Error::Shape { what: "input vector", .. })
        ));
    }

    /// Re-implementation of the MLP forward pass with explicit loops,
    /// independent of the plan machinery.
    fn hand_forward(arch: &ArchSpec, params: &[f64], x: &[f64]) -> Vec<f64> {
        assert_eq!(arch.kind, ArchKind::Mlp);
        let mut cur = x.to_vec();
        let mut off = 0usize;
        let mut in_dim = arch.input_dim;
        for (li, &w) in arch.widths.iter().enumerate() {
            let mut next = vec![0.0; w];
            for o in 0..w {
                let mut acc = params[off + w * in_dim + o]; // bias
                for i in 0..in_dim {
                    acc += params[off + o * in_dim + i] * cur[i];
                }
                next[o] = acc;
            }
            off += w * in_dim + w;
            if li != arch.widths.len() - 1 {
                for v in next.iter_mut() {
                    *v = match arch.activation {
                        Activation::Relu => v.max(0.0),
                        Activation::Tanh => v.tanh(),
                    };
                }
            }
            cur = next;
            in_dim = w;
        }
        cur
    }

    #[test]
    fn forward_matches_hand_rolled_mlp() {
        let arch = ArchSpec::mlp(4, vec![6, 3], Activation::Tanh);
        let m = init_model(&arch, 42).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let got = forward(&m, &x).unwrap();
            let want = hand_forward(&arch, &m.params, &x);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "got {g}, want {w}");
            }
        }
    }

    #[test]
    fn forward_is_pure() {
        let arch = ArchSpec::mlp(3, vec![4, 2], Activation::Relu);
        let m = init_model(&arch, 5).unwrap();
        let x = [0.3, -0.7, 0.2];
        let a = forward(&m, &x).unwrap();
        let b = forward(&m, &x).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn scalar_output_rules() {
        let arch = ArchSpec::mlp(1, vec![3], Activation::Relu);
        // One dense layer 1 -> 3 with weights 0 and biases (1, 2, 3).
        let params = vec![0.0, 0.0, 0.0, 1.0, 2.0, 3.0];
        let m = ModelState::with_params(arch, params, 0).unwrap();
        let x = [0.0];
        assert_eq!(
            scalar_output(&m, &x, None, ReadoutRule::LogitSum).unwrap(),
            6.0
        );
        assert_eq!(
            scalar_output(&m, &x, Some(2), ReadoutRule::TrueClass).unwrap(),
            3.0
        );
        assert_eq!(
            scalar_output(&m, &x, None, ReadoutRule::FixedClass(1)).unwrap(),
            2.0
        );
        assert!(matches!(
            scalar_output(&m, &x, None, ReadoutRule::TrueClass),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn single_logit_network_ignores_rule_choice() {
        let m = linear_model(&[0.5, -0.25]);
        let x = [2.0, 1.0];
        let want = 0.5 * 2.0 - 0.25 * 1.0;
        for rule in [
            ReadoutRule::TrueClass,
            ReadoutRule::FixedClass(0),
            ReadoutRule::LogitSum,
        ] {
            let got = scalar_output(&m, &x, Some(0), rule).unwrap();
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_gradient_is_the_input() {
        let m = linear_model(&[1.5, -2.0]);
        let g = grad_params(&m, &[3.0, 4.0], Some(0), ReadoutRule::TrueClass).unwrap();
        // d(w . x)/dw = x
        assert_eq!(g, vec![3.0, 4.0]);
    }

    #[test]
    fn gradient_matches_finite_differences_mlp() {
        let arch = ArchSpec::mlp(4, vec![8, 3], Activation::Tanh);
        let m = init_model(&arch, 17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for trial in 0..5 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let label = trial % 3;
            let g = grad_params(&m, &x, Some(label), ReadoutRule::TrueClass).unwrap();
            let arch2 = m.arch.clone();
            let fd = fd_grad(
                |p| {
                    let mm = ModelState::with_params(arch2.clone(), p.to_vec(), 0).unwrap();
                    scalar_output(&mm, &x, Some(label), ReadoutRule::TrueClass).unwrap()
                },
                &m.params,
                1e-5,
            );
            assert!(rel_grad_err(&g, &fd) < 1e-6);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_lenet() {
        let arch = ArchSpec::lenet(16, vec![2, 3, 4, 2], Activation::Tanh);
        let m = init_model(&arch, 31).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let x: Vec<f64> = (0..256).map(|_| rng.random_range(0.0..1.0)).collect();
        let g = grad_params(&m, &x, Some(1), ReadoutRule::TrueClass).unwrap();
        let arch2 = m.arch.clone();
        let fd = fd_grad(
            |p| {
                let mm = ModelState::with_params(arch2.clone(), p.to_vec(), 0).unwrap();
                scalar_output(&mm, &x, Some(1), ReadoutRule::TrueClass).unwrap()
            },
            &m.params,
            1e-5,
        );
        assert!(rel_grad_err(&g, &fd) < 1e-6);
    }

    #[test]
    fn relu_derivative_at_zero_is_zero() {
        // 1 -> 1 -> 1 MLP with relu; weights set so the hidden preactivation
        // is exactly 0 at x = 1. The hidden unit must contribute nothing.
        let arch = ArchSpec::mlp(1, vec![1, 1], Activation::Relu);
        // params: [w1, b1, w2, b2]
        let m = ModelState::with_params(arch, vec![1.0, -1.0, 5.0, 0.0], 0).unwrap();
        let g = grad_params(&m, &[1.0], Some(0), ReadoutRule::TrueClass).unwrap();
        // d out/d w1 = w2 * relu'(0) * x = 0; d/db1 = 0; d/dw2 = relu(0) = 0; d/db2 = 1
        assert_eq!(g, vec![0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn output_layer_scaling_scales_hidden_gradients() {
        let arch = ArchSpec::mlp(3, vec![5, 2], Activation::Tanh);
        let m = init_model(&arch, 13).unwrap();
        let x = [0.4, -0.2, 0.9];
        let g1 = grad_params(&m, &x, Some(1), ReadoutRule::TrueClass).unwrap();

        let alpha = 3.0;
        let plan = m.arch.plan().unwrap();
        let segs = plan.param_segments();
        let last = segs.last().unwrap();
        let mut scaled = m.params.clone();
        for i in last.weights.clone().chain(last.biases.clone()) {
            scaled[i] *= alpha;
        }
        let m2 = ModelState::with_params(m.arch.clone(), scaled, 0).unwrap();
        let g2 = grad_params(&m2, &x, Some(1), ReadoutRule::TrueClass).unwrap();
        // Earlier-layer gradients scale by alpha through the linear last layer.
        for i in 0..last.weights.start {
            assert!((g2[i] - alpha * g1[i]).abs() < 1e-10 * g1[i].abs().max(1.0));
        }
    }

    #[test]
    fn cross_entropy_perfect_prediction_is_zero() {
        let arch = ArchSpec::mlp(1, vec![3], Activation::Relu);
        // Biases push one logit far above the others.
        let params = vec![0.0, 0.0, 0.0, 100.0, 0.0, 0.0];
        let m = ModelState::with_params(arch, params, 0).unwrap();
        let xs: Vec<&[f64]> = vec![&[0.0]];
        let (loss, _) = loss_and_grad(&m, &xs, &[0], LossKind::CrossEntropy).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn mse_readout_at_target_is_zero() {
        let m = linear_model(&[2.0]);
        let x = [1.5];
        let u = scalar_output(&m, &x, Some(0), ReadoutRule::TrueClass).unwrap();
        let xs: Vec<&[f64]> = vec![&x];
        let (loss, grad) =
            mse_readout_loss_grad(&m, &xs, &[u], &[0], ReadoutRule::TrueClass).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn empty_batch_rejected() {
        let m = linear_model(&[1.0]);
        let xs: Vec<&[f64]> = vec![];
        assert!(matches!(
            loss_and_grad(&m, &xs, &[], LossKind::CrossEntropy),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn batch_loss_gradient_matches_finite_differences() {
        let arch = ArchSpec::mlp(3, vec![6, 4], Activation::Tanh);
        let m = init_model(&arch, 29).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let data: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let xs: Vec<&[f64]> = data.iter().map(|v| v.as_slice()).collect();
        let labels: Vec<usize> = (0..7).map(|i| i % 4).collect();

        for loss in [
            LossKind::CrossEntropy,
            LossKind::MseReadout(ReadoutRule::TrueClass),
        ] {
            let (_, g) = loss_and_grad(&m, &xs, &labels, loss).unwrap();
            let arch2 = m.arch.clone();
            let xs2 = xs.clone();
            let labels2 = labels.clone();
            let fd = fd_grad(
                |p| {
                    let mm = ModelState::with_params(arch2.clone(), p.to_vec(), 0).unwrap();
                    loss_and_grad(&mm, &xs2, &labels2, loss).unwrap().0
                },
                &m.params,
                1e-5,
            );
            assert!(rel_grad_err(&g, &fd) < 1e-6, "loss kind {loss:?}");
        }
    }

    #[test]
    fn jvp_matches_directional_finite_difference() {
        let arch = ArchSpec::lenet(16, vec![2, 2, 5, 3], Activation::Tanh);
        let m = init_model(&arch, 53).unwrap();
        let plan = m.arch.plan().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let x: Vec<f64> = (0..256).map(|_| rng.random_range(0.0..1.0)).collect();
        let dir: Vec<f64> = (0..plan.param_len)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();

        let trace = plan::forward_trace(&plan, &m.params, &x).unwrap();
        let t = plan::jvp(&plan, &m.params, &trace, &dir);

        let h = 1e-6;
        let plus: Vec<f64> = m
            .params
            .iter()
            .zip(&dir)
            .map(|(p, d)| p + h * d)
            .collect();
        let minus: Vec<f64> = m
            .params
            .iter()
            .zip(&dir)
            .map(|(p, d)| p - h * d)
            .collect();
        let f_plus = forward_with_plan(&plan, &plus, &x).unwrap();
        let f_minus = forward_with_plan(&plan, &minus, &x).unwrap();
        for k in 0..t.len() {
            let fd = (f_plus[k] - f_minus[k]) / (2.0 * h);
            assert!((t[k] - fd).abs() < 1e-6 * fd.abs().max(1.0));
        }
    }
}
