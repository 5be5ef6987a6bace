//! Gram matrices of per-sample readout gradients, the scale-invariant
//! kernel distance between them, and the kernel velocity.
//!
//! `H[i][j] = <df(x_i)/dtheta, df(x_j)/dtheta>` over a fixed probe set. The
//! distance between two such matrices is one minus their trace cosine,
//!
//! `S(A, B) = 1 - Tr(A B') / (sqrt(Tr(A A')) sqrt(Tr(B B')))`,
//!
//! which ignores overall kernel scale and lies in `[0, 1]` for PSD inputs.

use crate::data::ProbeSet;
use crate::error::{Error, Result};
use crate::nn::{self, ModelState, ReadoutRule};
use crate::parallel;
use crate::train::TrajectoryLog;

/// Symmetric PSD Gram matrix of probe-gradient inner products, tagged with
/// the iteration it was measured at.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    n: usize,
    /// Row-major `n * n` entries.
    h: Vec<f64>,
    pub iteration: u64,
    pub rule: ReadoutRule,
}

impl GramMatrix {
    pub fn new(h: Vec<f64>, n: usize, iteration: u64, rule: ReadoutRule) -> Result<Self> {
        if h.len() != n * n {
            return Err(Error::Shape {
                what: "Gram matrix",
                expected: n * n,
                got: h.len(),
            });
        }
        Ok(GramMatrix {
            n,
            h,
            iteration,
            rule,
        })
    }

    pub fn with_iteration(mut self, iteration: u64) -> Self {
        self.iteration = iteration;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.h[i * self.n + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.h
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// `Tr(A B')` — elementwise dot of the two matrices.
    pub fn frobenius_inner(&self, other: &GramMatrix) -> Result<f64> {
        if self.n != other.n {
            return Err(Error::Shape {
                what: "Gram matrix pair",
                expected: self.n,
                got: other.n,
            });
        }
        Ok(crate::math::dot(&self.h, &other.h))
    }
}

/// Computes the probe Gram matrix at the given model state.
///
/// Per-sample gradients are taken in parallel; the product is assembled in
/// row blocks of `chunk` rows and then symmetrized as `(H + H') / 2`. Every
/// entry is a full-length dot product, so the result does not depend on
/// `chunk` or on worker count.
pub fn entk_gram(
    model: &ModelState,
    probe: &ProbeSet,
    rule: ReadoutRule,
    chunk: usize,
) -> Result<GramMatrix> {
    if probe.is_empty() {
        return Err(Error::Usage("probe set is empty".into()));
    }
    if chunk == 0 {
        return Err(Error::Usage("gram chunk size must be positive".into()));
    }
    let plan = model.arch.plan()?;
    let n = probe.len();

    let grads: Vec<Result<Vec<f64>>> = parallel::map_indexed(n, |i| {
        nn::grad_params_with_plan(&plan, &model.params, probe.input(i), Some(probe.label(i)), rule)
    });
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for (i, g) in grads.into_iter().enumerate() {
        match g {
            Ok(g) => rows.push(g),
            Err(Error::NonFinite { .. }) => {
                return Err(Error::NonFinite {
                    context: "probe gradient".into(),
                    index: i,
                })
            }
            Err(e) => return Err(e),
        }
    }

    let row_ids: Vec<usize> = (0..n).collect();
    let blocks = parallel::map_chunks(&row_ids, chunk, |block| {
        let mut out = vec![0.0; block.len() * n];
        for (bi, &i) in block.iter().enumerate() {
            let gi = &rows[i];
            for j in 0..n {
                out[bi * n + j] = crate::math::dot(gi, &rows[j]);
            }
        }
        out
    });

    let mut h = Vec::with_capacity(n * n);
    for block in blocks {
        h.extend_from_slice(&block);
    }
    // Symmetrize; blocked assembly could in principle leave ~1e-15 skew.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (h[i * n + j] + h[j * n + i]);
            h[i * n + j] = avg;
            h[j * n + i] = avg;
        }
    }
    GramMatrix::new(h, n, 0, rule)
}

/// Scale-invariant kernel distance (one minus the trace cosine).
pub fn kernel_distance(a: &GramMatrix, b: &GramMatrix) -> Result<f64> {
    let faa = a.frobenius_inner(a)?;
    let fbb = b.frobenius_inner(b)?;
    if faa == 0.0 || fbb == 0.0 {
        return Err(Error::DegenerateKernel);
    }
    let fab = a.frobenius_inner(b)?;
    // sqrt(faa * fbb) rather than sqrt(faa) * sqrt(fbb): for identical
    // arguments the denominator then equals fab exactly and S(H, H) = 0.
    Ok(1.0 - fab / (faa * fbb).sqrt())
}

/// Scalar readouts of the model on every probe example, in probe order.
pub fn probe_outputs(model: &ModelState, probe: &ProbeSet, rule: ReadoutRule) -> Result<Vec<f64>> {
    let plan = model.arch.plan()?;
    let mut out = Vec::with_capacity(probe.len());
    for i in 0..probe.len() {
        let logits = nn::forward_with_plan(&plan, &model.params, probe.input(i))?;
        let seed = rule.seed(logits.len(), Some(probe.label(i)))?;
        let u: f64 = logits.iter().zip(&seed).map(|(l, s)| l * s).sum();
        if !u.is_finite() {
            return Err(Error::NonFinite {
                context: "probe readout".into(),
                index: i,
            });
        }
        out.push(u);
    }
    Ok(out)
}

/// Kernel velocity: `S(theta(t), theta(t+dt)) / dt` from cached Gram
/// matrices in a trajectory.
pub fn kernel_velocity(traj: &TrajectoryLog, t: u64, dt: u64) -> Result<f64> {
    if dt == 0 {
        return Err(Error::Usage("kernel velocity needs dt > 0".into()));
    }
    let a = traj.gram_at(t)?;
    let b = traj.gram_at(t + dt)?;
    Ok(kernel_distance(a, b)? / dt as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_blobs, Dataset, ProbeSet};
    use crate::nn::{
        grad_params, init_model, mse_readout_loss_grad, scalar_output, Activation, ArchSpec,
        ModelState,
    };
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn diag_gram(d: &[f64]) -> GramMatrix {
        let n = d.len();
        let mut h = vec![0.0; n * n];
        for (i, &v) in d.iter().enumerate() {
            h[i * n + i] = v;
        }
        GramMatrix::new(h, n, 0, ReadoutRule::LogitSum).unwrap()
    }

    fn unit_probe() -> (Dataset, ProbeSet) {
        let inputs = vec![1.0, 0.0, 0.0, 1.0];
        let data = Dataset::new("unit", inputs, vec![0, 0], 2, 1).unwrap();
        let probe = ProbeSet::from_indices(&data, &[0, 1]).unwrap();
        (data, probe)
    }

    #[test]
    fn linear_model_on_unit_probe_gives_identity() {
        let arch = ArchSpec::linear(2, 1);
        let model = ModelState::with_params(arch, vec![0.3, -0.8], 0).unwrap();
        let (_, probe) = unit_probe();
        let h = entk_gram(&model, &probe, ReadoutRule::TrueClass, 2).unwrap();
        // gradients are the inputs themselves
        assert_eq!(h.as_slice(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn single_probe_point_gives_grad_norm() {
        let arch = ArchSpec::mlp(3, vec![4, 2], Activation::Tanh);
        let model = init_model(&arch, 2).unwrap();
        let inputs = vec![0.5, -0.25, 1.0];
        let data = Dataset::new("one", inputs, vec![1], 3, 2).unwrap();
        let probe = ProbeSet::from_indices(&data, &[0]).unwrap();
        let h = entk_gram(&model, &probe, ReadoutRule::TrueClass, 1).unwrap();
        assert_eq!(h.n(), 1);
        let g = grad_params(&model, probe.input(0), Some(1), ReadoutRule::TrueClass).unwrap();
        let norm2: f64 = g.iter().map(|v| v * v).sum();
        assert!((h.get(0, 0) - norm2).abs() <= 1e-12 * norm2.abs());
    }

    #[test]
    fn gram_matches_naive_pairwise_oracle_for_all_chunks() {
        let arch = ArchSpec::mlp(3, vec![4, 2], Activation::Tanh);
        let model = init_model(&arch, 7).unwrap();
        let data = synth_blobs(11, 3, 3, 2, 0.7).unwrap();
        let probe = ProbeSet::from_indices(&data, &[0, 1, 2, 3, 4]).unwrap();

        // Independent oracle: double loop over grad_params calls.
        let n = probe.len();
        let grads: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                grad_params(
                    &model,
                    probe.input(i),
                    Some(probe.label(i)),
                    ReadoutRule::TrueClass,
                )
                .unwrap()
            })
            .collect();
        let mut want = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                want[i * n + j] = grads[i].iter().zip(&grads[j]).map(|(a, b)| a * b).sum();
            }
        }

        for chunk in [1, 2, n] {
            let h = entk_gram(&model, &probe, ReadoutRule::TrueClass, chunk).unwrap();
            for (a, b) in h.as_slice().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "chunk {chunk}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn gram_is_chunk_invariant_bitwise() {
        let arch = ArchSpec::mlp(4, vec![6, 3], Activation::Relu);
        let model = init_model(&arch, 13).unwrap();
        let data = synth_blobs(5, 4, 4, 3, 0.6).unwrap();
        let probe = ProbeSet::from_indices(&data, &[0, 2, 4, 6, 8, 10]).unwrap();
        let h1 = entk_gram(&model, &probe, ReadoutRule::TrueClass, 1).unwrap();
        let h2 = entk_gram(&model, &probe, ReadoutRule::TrueClass, 2).unwrap();
        let hn = entk_gram(&model, &probe, ReadoutRule::TrueClass, probe.len()).unwrap();
        assert_eq!(h1.as_slice(), h2.as_slice());
        assert_eq!(h1.as_slice(), hn.as_slice());
    }

    #[test]
    fn gram_is_psd_on_small_probes() {
        let arch = ArchSpec::mlp(4, vec![8, 3], Activation::Tanh);
        let model = init_model(&arch, 19).unwrap();
        let data = synth_blobs(23, 6, 4, 3, 0.8).unwrap();
        let probe = crate::data::probe_sample(&data, 16, 5, false).unwrap();
        let h = entk_gram(&model, &probe, ReadoutRule::TrueClass, 4).unwrap();

        let n = h.n();
        let m = nalgebra::DMatrix::from_row_slice(n, n, h.as_slice());
        let eigs = m.symmetric_eigenvalues();
        let floor = -1e-8 * h.trace() / n as f64;
        for e in eigs.iter() {
            assert!(*e >= floor, "eigenvalue {e} below {floor}");
        }
    }

    #[test]
    fn distance_of_matrix_with_itself_is_zero() {
        let h = diag_gram(&[1.0, 2.0, 0.5]);
        assert_eq!(kernel_distance(&h, &h).unwrap(), 0.0);
    }

    #[test]
    fn distance_of_orthogonal_diagonals_is_one() {
        let a = diag_gram(&[1.0, 0.0]);
        let b = diag_gram(&[0.0, 1.0]);
        assert_eq!(kernel_distance(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn distance_is_scale_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        // Symmetrize to get a valid input.
        let mut h = vec![0.0; 16];
        for i in 0..4 {
            for j in 0..4 {
                h[i * 4 + j] = 0.5 * (base[i * 4 + j] + base[j * 4 + i]);
            }
        }
        let a = GramMatrix::new(h.clone(), 4, 0, ReadoutRule::LogitSum).unwrap();
        for alpha in [0.5, 3.0, 100.0] {
            let scaled: Vec<f64> = h.iter().map(|v| alpha * v).collect();
            let b = GramMatrix::new(scaled, 4, 0, ReadoutRule::LogitSum).unwrap();
            let s = kernel_distance(&a, &b).unwrap();
            assert!(s.abs() < 1e-12, "alpha {alpha}: {s}");
        }
    }

    #[test]
    fn distance_is_symmetric_in_arguments() {
        let a = random_psd(4, 101);
        let b = random_psd(4, 202);
        let s1 = kernel_distance(&a, &b).unwrap();
        let s2 = kernel_distance(&b, &a).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn zero_kernel_is_degenerate() {
        let z = diag_gram(&[0.0, 0.0]);
        let h = diag_gram(&[1.0, 1.0]);
        assert!(matches!(
            kernel_distance(&z, &h),
            Err(Error::DegenerateKernel)
        ));
    }

    fn random_psd(n: usize, seed: u64) -> GramMatrix {
        // A' A for a random square A is PSD.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                h[i * n + j] = (0..n).map(|k| a[k * n + i] * a[k * n + j]).sum();
            }
        }
        GramMatrix::new(h, n, 0, ReadoutRule::LogitSum).unwrap()
    }

    #[test]
    fn distance_in_unit_interval_for_psd_pairs() {
        for trial in 0..100 {
            let a = random_psd(4, 1000 + trial);
            let b = random_psd(4, 2000 + trial);
            let s = kernel_distance(&a, &b).unwrap();
            assert!((-1e-12..=1.0 + 1e-12).contains(&s), "trial {trial}: {s}");
        }
    }

    #[test]
    fn distance_matches_direct_formula_evaluation() {
        let a = random_psd(4, 77);
        let b = random_psd(4, 88);
        // Independent evaluation with explicit trace loops.
        let tr = |x: &GramMatrix, y: &GramMatrix| -> f64 {
            let n = x.n();
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    // Tr(X Y') = sum_ij X_ij Y_ij
                    acc += x.get(i, j) * y.get(i, j);
                }
            }
            acc
        };
        let want = 1.0 - tr(&a, &b) / (tr(&a, &a).sqrt() * tr(&b, &b).sqrt());
        let got = kernel_distance(&a, &b).unwrap();
        assert!((got - want).abs() < 1e-14);
    }

    /// Scaling the linear last layer by `alpha` multiplies every gradient
    /// component of the earlier layers by `alpha` and leaves the last-layer
    /// components unchanged, so the Gram matrix decomposes as
    /// `H(alpha) = alpha^2 H_early + H_last`. A uniformly scaled kernel,
    /// obtained by scaling the gradients themselves, has distance zero from
    /// the original.
    #[test]
    fn output_layer_scaling_acts_blockwise_on_gram() {
        let arch = ArchSpec::mlp(3, vec![5, 2], Activation::Tanh);
        let model = init_model(&arch, 29).unwrap();
        let data = synth_blobs(31, 4, 3, 2, 0.7).unwrap();
        let probe = ProbeSet::from_indices(&data, &[0, 1, 4, 5]).unwrap();
        let rule = ReadoutRule::TrueClass;
        let n = probe.len();

        let plan = model.arch.plan().unwrap();
        let segs = plan.param_segments();
        let split = segs.last().unwrap().weights.start;

        let split_grams = |m: &ModelState| -> (Vec<f64>, Vec<f64>) {
            let grads: Vec<Vec<f64>> = (0..n)
                .map(|i| grad_params(m, probe.input(i), Some(probe.label(i)), rule).unwrap())
                .collect();
            let mut early = vec![0.0; n * n];
            let mut last = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    early[i * n + j] = grads[i][..split]
                        .iter()
                        .zip(&grads[j][..split])
                        .map(|(a, b)| a * b)
                        .sum();
                    last[i * n + j] = grads[i][split..]
                        .iter()
                        .zip(&grads[j][split..])
                        .map(|(a, b)| a * b)
                        .sum();
                }
            }
            (early, last)
        };

        let alpha = 2.5;
        let (early, last) = split_grams(&model);
        let mut scaled = model.params.clone();
        for v in scaled[split..].iter_mut() {
            *v *= alpha;
        }
        let model2 = ModelState::with_params(model.arch.clone(), scaled, 0).unwrap();
        let h2 = entk_gram(&model2, &probe, rule, 2).unwrap();
        for i in 0..n {
            for j in 0..n {
                let want = alpha * alpha * early[i * n + j] + last[i * n + j];
                assert!(
                    (h2.get(i, j) - want).abs() < 1e-10 * want.abs().max(1.0),
                    "({i}, {j}): {} vs {want}",
                    h2.get(i, j)
                );
            }
        }

        // Uniformly scaled gradients scale H by alpha^2 and move S not at all.
        let h = entk_gram(&model, &probe, rule, 2).unwrap();
        let uniform: Vec<f64> = h.as_slice().iter().map(|v| alpha * alpha * v).collect();
        let hu = GramMatrix::new(uniform, n, 0, rule).unwrap();
        assert!(kernel_distance(&h, &hu).unwrap().abs() < 1e-12);
    }

    /// First-order functional dynamics: one SGD step under the readout MSE
    /// moves the probe outputs by `-eta H g` up to an O(eta^2) residual.
    #[test]
    fn sgd_step_moves_outputs_along_kernel() {
        let arch = ArchSpec::mlp(3, vec![16, 2], Activation::Tanh);
        let model = init_model(&arch, 41).unwrap();
        let data = synth_blobs(43, 4, 3, 2, 0.8).unwrap();
        let probe = ProbeSet::from_indices(&data, &(0..8).collect::<Vec<_>>()).unwrap();
        let rule = ReadoutRule::TrueClass;
        let n = probe.len();

        let readouts = |m: &ModelState| -> Vec<f64> {
            (0..n)
                .map(|i| scalar_output(m, probe.input(i), Some(probe.label(i)), rule).unwrap())
                .collect()
        };

        let h = entk_gram(&model, &probe, rule, 4).unwrap();
        let u0 = readouts(&model);
        let targets: Vec<f64> = (0..n).map(|i| probe.label(i) as f64).collect();
        let labels: Vec<usize> = (0..n).map(|i| probe.label(i)).collect();
        let g: Vec<f64> = u0
            .iter()
            .zip(&targets)
            .map(|(u, t)| (u - t) / n as f64)
            .collect();

        let xs: Vec<&[f64]> = (0..n).map(|i| probe.input(i)).collect();
        let residual = |eta: f64| -> f64 {
            let (_, grad) =
                mse_readout_loss_grad(&model, &xs, &targets, &labels, rule).unwrap();
            let stepped: Vec<f64> = model
                .params
                .iter()
                .zip(&grad)
                .map(|(p, g)| p - eta * g)
                .collect();
            let m2 = ModelState::with_params(model.arch.clone(), stepped, 0).unwrap();
            let u1 = readouts(&m2);
            let mut err2 = 0.0;
            for i in 0..n {
                let pred: f64 = (0..n).map(|j| h.get(i, j) * g[j]).sum();
                let delta = u1[i] - u0[i];
                err2 += (delta + eta * pred).powi(2);
            }
            err2.sqrt()
        };

        let r1 = residual(1e-3);
        let r2 = residual(5e-4);
        assert!(r1 > 0.0 && r2 > 0.0, "degenerate residuals: {r1} {r2}");
        let ratio = r1 / r2;
        assert!(
            (3.0..=5.0).contains(&ratio),
            "residual ratio {ratio} not ~4 (r1={r1}, r2={r2})"
        );
    }
}
