//! Run orchestration: dataset construction, the `dynamics`, `switch`, and
//! `embed` pipelines, and their output files.

use std::fs;
use std::path::Path;

use entk::analysis::{
    adjacent_distances, cone_embedding, cone_report, distance_to_references, pairwise_distances,
    velocity_series, ConeReport, DistanceCurve, Embedding2D,
};
use entk::data::{load_idx, probe_sample, synth_blobs, synth_digits, Dataset, ProbeSet};
use entk::lintrain::switch_experiment;
use entk::nn::{init_model, ArchSpec, LossKind, ModelState};
use entk::ntk::{entk_gram, GramMatrix};
use entk::train::{train, TrainConfig};
use entk::{Error, Result};

use crate::config::{
    config_hash, derive_seed, serialize, DatasetKind, ExperimentConfig, LossCfg, ProbeSplit,
};
use crate::out;
use crate::svg;

/// Train and test splits for one run. Synthetic test sets come from a seed
/// derived from the dataset seed, so they are disjoint from training draws.
pub fn load_datasets(cfg: &ExperimentConfig) -> Result<(Dataset, Option<Dataset>)> {
    let seed = cfg.dataset.seed.expect("config resolved");
    match cfg.dataset.kind {
        DatasetKind::Blobs => {
            let d = &cfg.dataset;
            let train = synth_blobs(seed, d.per_class, d.dim, d.classes, d.spread)?;
            let test = if d.test_per_class > 0 {
                Some(synth_blobs(
                    derive_seed(seed, 5),
                    d.test_per_class,
                    d.dim,
                    d.classes,
                    d.spread,
                )?)
            } else {
                None
            };
            Ok((train, test))
        }
        DatasetKind::Digits => {
            let d = &cfg.dataset;
            let train = synth_digits(seed, d.train_n, d.side)?;
            let test = if d.test_n > 0 {
                Some(synth_digits(derive_seed(seed, 5), d.test_n, d.side)?)
            } else {
                None
            };
            Ok((train, test))
        }
        DatasetKind::Idx => {
            let d = &cfg.dataset;
            let mut train = load_idx(&d.train_images, &d.train_labels)?;
            if d.limit > 0 {
                train.truncate(d.limit);
            }
            let test = if !d.test_images.as_os_str().is_empty() {
                let mut t = load_idx(&d.test_images, &d.test_labels)?;
                if d.test_limit > 0 {
                    t.truncate(d.test_limit);
                }
                Some(t)
            } else {
                None
            };
            Ok((train, test))
        }
    }
}

pub fn build_arch(cfg: &ExperimentConfig, data: &Dataset) -> ArchSpec {
    ArchSpec {
        kind: cfg.arch.kind,
        input_dim: data.dim(),
        widths: cfg.arch.widths.clone(),
        activation: cfg.arch.activation,
    }
}

pub fn build_train_config(cfg: &ExperimentConfig) -> TrainConfig {
    TrainConfig {
        lr: cfg.train.lr,
        momentum: cfg.train.momentum,
        batch_size: cfg.train.batch,
        total_iters: cfg.train.iters,
        shuffle_seed: cfg.train.shuffle_seed.expect("config resolved"),
        schedule: cfg.schedule(),
        loss: match cfg.train.loss {
            LossCfg::CrossEntropy => LossKind::CrossEntropy,
            LossCfg::MseReadout => LossKind::MseReadout(cfg.readout),
        },
    }
}

pub fn build_probe(
    cfg: &ExperimentConfig,
    train_data: &Dataset,
    test_data: Option<&Dataset>,
) -> Result<ProbeSet> {
    let source = match cfg.probe.split {
        ProbeSplit::Train => train_data,
        ProbeSplit::Test => test_data.ok_or_else(|| {
            Error::Config("probe.split = test requires a test dataset".into())
        })?,
    };
    probe_sample(
        source,
        cfg.probe.size,
        cfg.probe.seed.expect("config resolved"),
        cfg.probe.stratified,
    )
}

fn echo_config(cfg: &ExperimentConfig, dir: &Path, hash: &str) -> Result<()> {
    let text = format!("# config={hash}\n{}", serialize(cfg));
    out::write_atomic(&dir.join("config_resolved.ini"), text.as_bytes())
}

fn curve_series(curves: &[DistanceCurve], prefix: &str) -> Vec<svg::Series> {
    curves
        .iter()
        .map(|c| svg::Series {
            label: format!("{prefix}{}", c.param.value()),
            points: c.points.iter().map(|&(t, s)| (t as f64, s)).collect(),
        })
        .collect()
}

fn report_text(report: Option<&ConeReport>, emb: &Embedding2D, hash: &str) -> String {
    let mut text = format!("# config={hash}\n");
    match report {
        Some(r) => {
            match r.transition {
                Some(t) => text.push_str(&format!("transition_iteration: {t}\n")),
                None => text.push_str("transition_iteration: absent\n"),
            }
            text.push_str(&format!(
                "velocity_dt: {}\nrho: {}\nwindow: {}\n",
                r.velocity_dt, r.rho, r.window
            ));
            text.push_str("tau plateau_level plateau_variation\n");
            for p in &r.plateaus {
                text.push_str(&format!("{} {:.6e} {:.6e}\n", p.tau, p.level, p.variation));
            }
        }
        None => {
            text.push_str("transition_iteration: absent (fewer than two checkpoints)\n");
        }
    }
    text.push_str(&format!("embedding_stress: {:.6e}\n", emb.stress));
    text
}

/// Trains under the resolved config, caching a probe Gram matrix at every
/// checkpoint, and writes the trajectory, curves, report, embedding, and
/// plots into the output directory.
pub fn run_dynamics(cfg: &ExperimentConfig, quiet: bool) -> Result<()> {
    let hash = config_hash(cfg);
    let dir = cfg.out_dir.clone();
    fs::create_dir_all(&dir)?;

    let (train_data, test_data) = load_datasets(cfg)?;
    let arch = build_arch(cfg, &train_data);
    let model = init_model(&arch, cfg.init_seed.expect("config resolved"))?;
    let probe = build_probe(cfg, &train_data, test_data.as_ref())?;
    let tcfg = build_train_config(cfg);
    let chunk = cfg.measure.chunk;
    let rule = cfg.readout;

    if !quiet {
        println!(
            "dynamics: {} examples, {} parameters, {} iterations, probe {}",
            train_data.len(),
            model.param_count(),
            tcfg.total_iters,
            probe.len()
        );
    }

    let traj = train(&model, &train_data, &tcfg, |_, m| {
        entk_gram(m, &probe, rule, chunk).map(Some)
    })?;

    echo_config(cfg, &dir, &hash)?;
    out::write_trajectory(&dir, &traj, &hash)?;

    let taus = cfg.measure.taus.clone().unwrap_or_default();
    let dts = cfg.measure.dts.clone().unwrap_or_default();
    let ref_curves = distance_to_references(&traj, &taus)?;
    let adj_curves = if traj.records.len() >= 2 {
        adjacent_distances(&traj, &dts)?
    } else {
        Vec::new()
    };
    out::write_atomic(
        &dir.join("kernel_distance.csv"),
        out::kernel_distance_csv(&ref_curves, &adj_curves, &hash).as_bytes(),
    )?;

    let mut velocity = Vec::new();
    if traj.records.len() >= 2 {
        for &dt in &dts {
            velocity.push((dt, velocity_series(&traj, dt)?));
        }
    }
    out::write_atomic(
        &dir.join("velocity.csv"),
        out::velocity_csv(&velocity, &hash).as_bytes(),
    )?;

    let report = if traj.records.len() >= 2 {
        Some(cone_report(
            &traj,
            &taus,
            &dts,
            cfg.measure.rho,
            cfg.measure.window,
        )?)
    } else {
        None
    };

    let (iters, pairwise) = entk::analysis::pairwise_kernel_distances(&traj)?;
    let emb = cone_embedding(&iters, &pairwise)?;
    out::write_atomic(
        &dir.join("embedding.csv"),
        out::embedding_csv(&emb, &hash).as_bytes(),
    )?;
    out::write_atomic(
        &dir.join("cone_report.txt"),
        report_text(report.as_ref(), &emb, &hash).as_bytes(),
    )?;

    // Plots. Curve charts need at least one series; the degenerate
    // single-checkpoint run only gets the embedding chart.
    let mut series = curve_series(&ref_curves, "tau=");
    if !series.is_empty() {
        out::write_atomic(
            &dir.join("kernel_distance.svg"),
            svg::line_chart(
                "Kernel distance to reference checkpoints",
                "iteration t",
                "S(theta(t), theta(tau))",
                &series,
                &hash,
            )?
            .as_bytes(),
        )?;
    }
    series = curve_series(&adj_curves, "dt=");
    if !series.is_empty() {
        out::write_atomic(
            &dir.join("adjacent_distance.svg"),
            svg::line_chart(
                "Kernel distance between adjacent checkpoints",
                "iteration t",
                "S(theta(t), theta(t+dt))",
                &series,
                &hash,
            )?
            .as_bytes(),
        )?;
    }
    let vseries: Vec<svg::Series> = velocity
        .iter()
        .map(|(dt, pts)| svg::Series {
            label: format!("dt={dt}"),
            points: pts.iter().map(|&(t, v)| (t as f64, v)).collect(),
        })
        .collect();
    if !vseries.is_empty() {
        out::write_atomic(
            &dir.join("velocity.svg"),
            svg::line_chart(
                "Kernel velocity",
                "iteration t",
                "v(t)",
                &vseries,
                &hash,
            )?
            .as_bytes(),
        )?;
    }
    out::write_atomic(
        &dir.join("embedding.svg"),
        svg::embedding_chart("Kernel trajectory (classical MDS)", &emb.points, &hash)?.as_bytes(),
    )?;

    if !quiet {
        if let Some(r) = &report {
            match r.transition {
                Some(t) => println!("phase transition detected at iteration {t}"),
                None => println!("no phase transition detected"),
            }
        }
        println!("outputs written to {}", dir.display());
    }
    Ok(())
}

/// Runs the switching experiment over the configured grid and writes one
/// `(t_switch, test_loss, test_accuracy)` row per grid entry.
pub fn run_switch(cfg: &ExperimentConfig, quiet: bool) -> Result<()> {
    let hash = config_hash(cfg);
    let dir = cfg.out_dir.clone();
    fs::create_dir_all(&dir)?;

    let (train_data, test_data) = load_datasets(cfg)?;
    let test_data = test_data.ok_or_else(|| {
        Error::Config("switch experiment needs a test split (see dataset.* keys)".into())
    })?;
    let arch = build_arch(cfg, &train_data);
    let model = init_model(&arch, cfg.init_seed.expect("config resolved"))?;
    let tcfg = build_train_config(cfg);

    let mut grid = cfg.switch.grid.clone().unwrap_or_default();
    grid.sort_unstable();
    grid.dedup();

    let mut rows = Vec::with_capacity(grid.len());
    for &t_switch in &grid {
        let res = switch_experiment(
            &model,
            &train_data,
            &test_data,
            &tcfg,
            t_switch,
            cfg.switch.horizon,
            |_, _| Ok(None),
        )?;
        if !quiet {
            println!(
                "t_switch {:>6}: test_loss {:.4}, test_acc {:.4}",
                t_switch, res.test_loss, res.test_acc
            );
        }
        rows.push((t_switch, res.test_loss, res.test_acc));
    }

    echo_config(cfg, &dir, &hash)?;
    out::write_atomic(
        &dir.join("switch.csv"),
        out::switch_csv(&rows, &hash).as_bytes(),
    )?;
    let acc_series = svg::Series {
        label: "test accuracy".into(),
        points: rows.iter().map(|&(t, _, a)| (t as f64, a)).collect(),
    };
    out::write_atomic(
        &dir.join("switch.svg"),
        svg::line_chart(
            "Switching experiment",
            "switch iteration t",
            "test accuracy",
            &[acc_series],
            &hash,
        )?
        .as_bytes(),
    )?;
    if !quiet {
        println!("outputs written to {}", dir.display());
    }
    Ok(())
}

/// Recomputes the kernel-path embedding of a stored run from its persisted
/// checkpoints and rewrites `embedding.csv` / `embedding.svg`.
pub fn run_embed(cfg: &ExperimentConfig, quiet: bool) -> Result<()> {
    let hash = config_hash(cfg);
    let dir = cfg.out_dir.clone();

    let (train_data, test_data) = load_datasets(cfg)?;
    let arch = build_arch(cfg, &train_data);
    let probe = build_probe(cfg, &train_data, test_data.as_ref())?;

    let index = out::read_index(&dir)?;
    if index.is_empty() {
        return Err(Error::Usage(format!(
            "no stored checkpoints under {}",
            dir.display()
        )));
    }
    let mut iters = Vec::with_capacity(index.len());
    let mut grams: Vec<GramMatrix> = Vec::with_capacity(index.len());
    for (iter, path) in &index {
        let params = out::read_checkpoint(path)?;
        let model = ModelState::with_params(arch.clone(), params, 0)?;
        grams.push(entk_gram(&model, &probe, cfg.readout, cfg.measure.chunk)?.with_iteration(*iter));
        iters.push(*iter);
    }
    let gram_refs: Vec<&GramMatrix> = grams.iter().collect();
    let pairwise = pairwise_distances(&gram_refs)?;
    let emb = cone_embedding(&iters, &pairwise)?;

    out::write_atomic(
        &dir.join("embedding.csv"),
        out::embedding_csv(&emb, &hash).as_bytes(),
    )?;
    out::write_atomic(
        &dir.join("embedding.svg"),
        svg::embedding_chart("Kernel trajectory (classical MDS)", &emb.points, &hash)?.as_bytes(),
    )?;
    if !quiet {
        println!(
            "embedding recomputed over {} checkpoints (stress {:.3e})",
            iters.len(),
            emb.stress
        );
    }
    Ok(())
}

/// Maps library errors to process exit codes: 2 for numeric divergence,
/// 1 for everything else.
pub fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Diverged { .. } | Error::NonFinite { .. } => 2,
        _ => 1,
    }
}
