//! Built-in invariant suite on tiny models, behind `entk validate`.
//!
//! Each check is self-contained (including its own finite-difference
//! oracle) and prints one PASS/FAIL line.

use entk::data::{probe_sample, synth_blobs, ProbeSet};
use entk::lintrain::{linearize, train_linearized};
use entk::nn::{
    grad_params, init_model, mse_readout_loss_grad, scalar_output, Activation, ArchSpec,
    LossKind, ModelState, ReadoutRule,
};
use entk::ntk::{entk_gram, kernel_distance, GramMatrix};
use entk::train::{CheckpointSchedule, TrainConfig};
use entk::Result;

fn fd_grad<F: Fn(&[f64]) -> f64>(f: F, params: &[f64], h: f64) -> Vec<f64> {
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

fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
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

fn check_gradient_oracle() -> Result<(bool, String)> {
    let arch = ArchSpec::mlp(3, vec![5, 2], Activation::Tanh);
    let model = init_model(&arch, 101)?;
    let x = [0.4, -0.3, 0.8];
    let g = grad_params(&model, &x, Some(1), ReadoutRule::TrueClass)?;
    let arch2 = model.arch.clone();
    let fd = fd_grad(
        |p| {
            let m = ModelState::with_params(arch2.clone(), p.to_vec(), 0).unwrap();
            scalar_output(&m, &x, Some(1), ReadoutRule::TrueClass).unwrap()
        },
        &model.params,
        1e-5,
    );
    let err = rel_err(&g, &fd);
    Ok((err < 1e-6, format!("max relative error {err:.3e}")))
}

fn check_gram_oracle() -> Result<(bool, String)> {
    let arch = ArchSpec::mlp(3, vec![4, 2], Activation::Tanh);
    let model = init_model(&arch, 103)?;
    let data = synth_blobs(107, 3, 3, 2, 0.6)?;
    let probe = ProbeSet::from_indices(&data, &[0, 1, 2, 3, 4])?;
    let n = probe.len();
    let grads: Vec<Vec<f64>> = (0..n)
        .map(|i| grad_params(&model, probe.input(i), Some(probe.label(i)), ReadoutRule::TrueClass))
        .collect::<Result<_>>()?;
    let mut worst = 0.0f64;
    for chunk in [1, 2, n] {
        let h = entk_gram(&model, &probe, ReadoutRule::TrueClass, chunk)?;
        for i in 0..n {
            for j in 0..n {
                let want: f64 = grads[i].iter().zip(&grads[j]).map(|(a, b)| a * b).sum();
                worst = worst.max((h.get(i, j) - want).abs());
            }
        }
    }
    Ok((worst < 1e-12, format!("max deviation {worst:.3e}")))
}

fn check_distance_algebra() -> Result<(bool, String)> {
    let mk = |d: &[f64]| {
        let n = d.len();
        let mut h = vec![0.0; n * n];
        for (i, &v) in d.iter().enumerate() {
            h[i * n + i] = v;
        }
        GramMatrix::new(h, n, 0, ReadoutRule::LogitSum).unwrap()
    };
    let h = mk(&[1.0, 2.0, 0.5]);
    let self_dist = kernel_distance(&h, &h)?;
    let orth = kernel_distance(&mk(&[1.0, 0.0, 0.0]), &mk(&[0.0, 1.0, 0.0]))?;
    let scaled: Vec<f64> = h.as_slice().iter().map(|v| 3.0 * v).collect();
    let scale_dist = kernel_distance(&h, &GramMatrix::new(scaled, 3, 0, ReadoutRule::LogitSum)?)?;

    let mut in_range = true;
    for seed in 0..20u64 {
        let a = random_psd(4, 900 + seed);
        let b = random_psd(4, 1900 + seed);
        let s = kernel_distance(&a, &b)?;
        in_range &= (-1e-12..=1.0 + 1e-12).contains(&s);
    }
    let ok = self_dist == 0.0 && orth == 1.0 && scale_dist.abs() < 1e-12 && in_range;
    Ok((
        ok,
        format!("S(H,H)={self_dist:.1e}, S(orth)={orth}, S(H,3H)={scale_dist:.1e}"),
    ))
}

fn random_psd(n: usize, seed: u64) -> GramMatrix {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let a: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            h[i * n + j] = (0..n).map(|k| a[k * n + i] * a[k * n + j]).sum();
        }
    }
    GramMatrix::new(h, n, 0, ReadoutRule::LogitSum).unwrap()
}

fn check_functional_dynamics() -> Result<(bool, String)> {
    let arch = ArchSpec::mlp(3, vec![12, 2], Activation::Tanh);
    let model = init_model(&arch, 109)?;
    let data = synth_blobs(113, 4, 3, 2, 0.8)?;
    let probe = ProbeSet::from_indices(&data, &(0..8).collect::<Vec<_>>())?;
    let rule = ReadoutRule::TrueClass;
    let n = probe.len();

    let readouts = |m: &ModelState| -> Result<Vec<f64>> {
        (0..n)
            .map(|i| scalar_output(m, probe.input(i), Some(probe.label(i)), rule))
            .collect()
    };
    let h = entk_gram(&model, &probe, rule, 4)?;
    let u0 = readouts(&model)?;
    let targets: Vec<f64> = (0..n).map(|i| probe.label(i) as f64).collect();
    let labels: Vec<usize> = (0..n).map(|i| probe.label(i)).collect();
    let g: Vec<f64> = u0
        .iter()
        .zip(&targets)
        .map(|(u, t)| (u - t) / n as f64)
        .collect();
    let xs: Vec<&[f64]> = (0..n).map(|i| probe.input(i)).collect();
    let (_, grad) = mse_readout_loss_grad(&model, &xs, &targets, &labels, rule)?;

    let residual = |eta: f64| -> Result<f64> {
        let stepped: Vec<f64> = model
            .params
            .iter()
            .zip(&grad)
            .map(|(p, gr)| p - eta * gr)
            .collect();
        let m2 = ModelState::with_params(model.arch.clone(), stepped, 0)?;
        let u1 = readouts(&m2)?;
        let mut err2 = 0.0;
        for i in 0..n {
            let pred: f64 = (0..n).map(|j| h.get(i, j) * g[j]).sum();
            err2 += (u1[i] - u0[i] + eta * pred).powi(2);
        }
        Ok(err2.sqrt())
    };
    let r1 = residual(1e-3)?;
    let r2 = residual(5e-4)?;
    let ratio = r1 / r2;
    Ok((
        (3.0..=5.0).contains(&ratio),
        format!("halving eta shrinks the residual {ratio:.2}x"),
    ))
}

fn check_lazy_constancy() -> Result<(bool, String)> {
    let data = synth_blobs(127, 8, 3, 2, 0.7)?;
    let probe = probe_sample(&data, 6, 3, false)?;
    let arch = ArchSpec::mlp(3, vec![6, 2], Activation::Tanh);
    let model = init_model(&arch, 131)?;
    let mut lin = linearize(model)?;
    let cfg = TrainConfig {
        lr: 0.05,
        momentum: 0.9,
        batch_size: 8,
        total_iters: 60,
        shuffle_seed: 7,
        schedule: CheckpointSchedule::Every(20),
        loss: LossKind::CrossEntropy,
    };
    let traj = train_linearized(&mut lin, &data, &cfg, |_, l| {
        l.entk_gram(&probe, ReadoutRule::TrueClass, 2).map(Some)
    })?;
    let h0 = traj.gram_at(0)?;
    let mut worst = 0.0f64;
    for &t in &traj.iterations() {
        worst = worst.max(kernel_distance(traj.gram_at(t)?, h0)?.abs());
    }
    Ok((worst < 1e-8, format!("max S(H(t), H(0)) = {worst:.3e}")))
}

fn check_mds_recovery() -> Result<(bool, String)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(137);
    let pts: Vec<(f64, f64)> = (0..10)
        .map(|_| (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)))
        .collect();
    let m = pts.len();
    let mut s = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            let dx = pts[i].0 - pts[j].0;
            let dy = pts[i].1 - pts[j].1;
            s[i * m + j] = dx * dx + dy * dy;
        }
    }
    let iters: Vec<u64> = (0..m as u64).collect();
    let emb = entk::analysis::cone_embedding(&iters, &s)?;
    let got: Vec<(f64, f64)> = emb.points.iter().map(|p| (p.1, p.2)).collect();
    let resid = entk::analysis::procrustes_residual(&got, &pts);
    Ok((resid < 1e-8, format!("procrustes residual {resid:.3e}")))
}

/// Runs every check, printing one line each. Returns whether all passed.
pub fn run_validate(quiet: bool) -> Result<bool> {
    let checks: [(&str, fn() -> Result<(bool, String)>); 6] = [
        ("gradient-oracle", check_gradient_oracle),
        ("gram-oracle", check_gram_oracle),
        ("distance-algebra", check_distance_algebra),
        ("functional-dynamics", check_functional_dynamics),
        ("lazy-constancy", check_lazy_constancy),
        ("mds-recovery", check_mds_recovery),
    ];
    let mut all_ok = true;
    for (name, check) in checks {
        let (ok, detail) = check()?;
        all_ok &= ok;
        if ok {
            if !quiet {
                println!("PASS {name}: {detail}");
            }
        } else {
            println!("FAIL {name}: {detail}");
        }
    }
    Ok(all_ok)
}
