//! Measurement curves and summaries over a trajectory: reference-distance
//! curves, adjacent-distance curves, kernel-velocity series, phase-transition
//! detection, plateau statistics, and a 2-D embedding of the kernel path.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::ntk::kernel_distance;
use crate::train::TrajectoryLog;

/// What a distance curve is parameterized by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveParam {
    /// Reference iteration `tau`; the curve is `t -> S(theta(t), theta(tau))`.
    Tau(u64),
    /// Offset `dt`; the curve is `t -> S(theta(t), theta(t + dt))`.
    Dt(u64),
}

impl CurveParam {
    pub fn value(&self) -> u64 {
        match self {
            CurveParam::Tau(v) | CurveParam::Dt(v) => *v,
        }
    }
}

/// One kernel-distance curve; `points` are `(t, S)` with `t` strictly
/// increasing and `S` clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceCurve {
    pub param: CurveParam,
    pub points: Vec<(u64, f64)>,
}

fn clamp_unit(s: f64) -> f64 {
    s.clamp(0.0, 1.0)
}

/// `S(theta(t), theta(tau))` over all checkpoints, one curve per `tau`.
pub fn distance_to_references(traj: &TrajectoryLog, taus: &[u64]) -> Result<Vec<DistanceCurve>> {
    let mut curves = Vec::with_capacity(taus.len());
    for &tau in taus {
        let reference = traj.gram_at(tau)?;
        let mut points = Vec::with_capacity(traj.records.len());
        for rec in &traj.records {
            let gram = traj.gram_at(rec.iteration)?;
            points.push((rec.iteration, clamp_unit(kernel_distance(gram, reference)?)));
        }
        curves.push(DistanceCurve {
            param: CurveParam::Tau(tau),
            points,
        });
    }
    Ok(curves)
}

/// Smallest positive step of the checkpoint grid (gcd of consecutive gaps).
fn checkpoint_spacing(iters: &[u64]) -> u64 {
    let mut g = 0u64;
    for w in iters.windows(2) {
        let mut a = w[1] - w[0];
        let mut b = g;
        while a != 0 {
            let t = b % a;
            b = a;
            a = t;
        }
        g = b;
    }
    g
}

/// `S(theta(t), theta(t + dt))` wherever both checkpoints exist, one curve
/// per `dt`. Each `dt` must be a positive multiple of the checkpoint spacing.
pub fn adjacent_distances(traj: &TrajectoryLog, dts: &[u64]) -> Result<Vec<DistanceCurve>> {
    let iters = traj.iterations();
    let spacing = checkpoint_spacing(&iters);
    let mut curves = Vec::with_capacity(dts.len());
    for &dt in dts {
        if dt == 0 || (spacing > 0 && dt % spacing != 0) {
            return Err(Error::Usage(format!(
                "dt {dt} is not a multiple of the checkpoint spacing {spacing}"
            )));
        }
        let mut points = Vec::new();
        for &t in &iters {
            if iters.binary_search(&(t + dt)).is_ok() {
                let a = traj.gram_at(t)?;
                let b = traj.gram_at(t + dt)?;
                points.push((t, clamp_unit(kernel_distance(a, b)?)));
            }
        }
        if points.is_empty() {
            return Err(Error::Usage(format!(
                "dt {dt} pairs no checkpoints on this trajectory"
            )));
        }
        curves.push(DistanceCurve {
            param: CurveParam::Dt(dt),
            points,
        });
    }
    Ok(curves)
}

/// Kernel velocity `S(theta(t), theta(t + dt)) / dt` at every checkpoint
/// where the offset partner exists.
pub fn velocity_series(traj: &TrajectoryLog, dt: u64) -> Result<Vec<(u64, f64)>> {
    if dt == 0 {
        return Err(Error::Usage("velocity needs dt > 0".into()));
    }
    let iters = traj.iterations();
    let mut out = Vec::new();
    for &t in &iters {
        if iters.binary_search(&(t + dt)).is_ok() {
            out.push((t, crate::ntk::kernel_velocity(traj, t, dt)?.max(0.0)));
        }
    }
    if out.is_empty() {
        return Err(Error::Usage(format!(
            "dt {dt} pairs no checkpoints on this trajectory"
        )));
    }
    Ok(out)
}

/// First iteration where the velocity has dropped to `rho` times its running
/// maximum for `window` consecutive checkpoints; `None` if that never
/// happens. The drop test is inclusive, so an identically zero series
/// transitions at its first window.
pub fn detect_phase_transition(
    series: &[(u64, f64)],
    rho: f64,
    window: usize,
) -> Result<Option<u64>> {
    if series.is_empty() {
        return Err(Error::Usage("velocity series is empty".into()));
    }
    if !(0.0 < rho && rho < 1.0) {
        return Err(Error::Usage("drop fraction must lie in (0, 1)".into()));
    }
    if window == 0 {
        return Err(Error::Usage("detection window must be at least 1".into()));
    }
    let mut run_max = f64::NEG_INFINITY;
    let mut consecutive = 0usize;
    for (i, &(_, v)) in series.iter().enumerate() {
        run_max = run_max.max(v);
        if v <= rho * run_max {
            consecutive += 1;
            if consecutive == window {
                return Ok(Some(series[i + 1 - window].0));
            }
        } else {
            consecutive = 0;
        }
    }
    Ok(None)
}

/// Plateau statistics of one reference curve over its final third.
#[derive(Debug, Clone, PartialEq)]
pub struct TauPlateau {
    pub tau: u64,
    /// Mean `S` over the final third of checkpoints.
    pub level: f64,
    /// `max - min` of `S` over the final third.
    pub variation: f64,
}

/// Aggregate of the two-phase measurements of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeReport {
    pub transition: Option<u64>,
    pub plateaus: Vec<TauPlateau>,
    pub velocity: Vec<(u64, f64)>,
    pub velocity_dt: u64,
    pub rho: f64,
    pub window: usize,
}

fn final_third(points: &[(u64, f64)]) -> &[(u64, f64)] {
    let k = points.len().div_ceil(3).max(1);
    &points[points.len() - k..]
}

/// Runs transition detection and plateau statistics in one pass. The
/// velocity series uses the smallest requested `dt` (or the checkpoint
/// spacing when `dts` is empty).
pub fn cone_report(
    traj: &TrajectoryLog,
    taus: &[u64],
    dts: &[u64],
    rho: f64,
    window: usize,
) -> Result<ConeReport> {
    let spacing = checkpoint_spacing(&traj.iterations());
    let velocity_dt = dts.iter().copied().min().unwrap_or(spacing.max(1));
    let velocity = velocity_series(traj, velocity_dt)?;
    let transition = detect_phase_transition(&velocity, rho, window)?;

    let mut plateaus = Vec::with_capacity(taus.len());
    for curve in distance_to_references(traj, taus)? {
        let tail = final_third(&curve.points);
        let level = tail.iter().map(|&(_, s)| s).sum::<f64>() / tail.len() as f64;
        let max = tail.iter().map(|&(_, s)| s).fold(f64::NEG_INFINITY, f64::max);
        let min = tail.iter().map(|&(_, s)| s).fold(f64::INFINITY, f64::min);
        plateaus.push(TauPlateau {
            tau: curve.param.value(),
            level,
            variation: max - min,
        });
    }
    Ok(ConeReport {
        transition,
        plateaus,
        velocity,
        velocity_dt,
        rho,
        window,
    })
}

/// Planar embedding of the kernel trajectory plus its residual distortion.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding2D {
    pub points: Vec<(u64, f64, f64)>,
    pub stress: f64,
}

/// Full pairwise kernel-distance matrix over a list of Gram matrices
/// (row-major, zero diagonal, exactly symmetric).
pub fn pairwise_distances(grams: &[&crate::ntk::GramMatrix]) -> Result<Vec<f64>> {
    let m = grams.len();
    let mut s = vec![0.0; m * m];
    for i in 0..m {
        for j in (i + 1)..m {
            let d = clamp_unit(kernel_distance(grams[i], grams[j])?);
            s[i * m + j] = d;
            s[j * m + i] = d;
        }
    }
    Ok(s)
}

/// Pairwise kernel-distance matrix over all checkpoints of a trajectory.
pub fn pairwise_kernel_distances(traj: &TrajectoryLog) -> Result<(Vec<u64>, Vec<f64>)> {
    let iters = traj.iterations();
    let grams: Result<Vec<&crate::ntk::GramMatrix>> =
        iters.iter().map(|&t| traj.gram_at(t)).collect();
    Ok((iters, pairwise_distances(&grams?)?))
}

/// Classical (Torgerson) MDS of the pairwise kernel distances into the
/// plane, treating `S` as squared dissimilarity.
///
/// Double-centers `B = -1/2 J S J`, embeds with the top two eigenpairs
/// (eigenvalues clamped at zero), translates checkpoint 0 to the origin, and
/// reports the relative Frobenius mismatch between the input distances
/// `sqrt(S)` and the embedded ones as `stress`.
pub fn cone_embedding(iters: &[u64], s: &[f64]) -> Result<Embedding2D> {
    let m = iters.len();
    if m == 0 {
        return Err(Error::Usage("embedding needs at least one checkpoint".into()));
    }
    if s.len() != m * m {
        return Err(Error::Shape {
            what: "pairwise distance matrix",
            expected: m * m,
            got: s.len(),
        });
    }
    for i in 0..m {
        if s[i * m + i].abs() > 1e-12 {
            return Err(Error::Usage(format!("nonzero diagonal at index {i}")));
        }
        for j in 0..m {
            if (s[i * m + j] - s[j * m + i]).abs() > 1e-12 {
                return Err(Error::Usage(format!("matrix not symmetric at ({i}, {j})")));
            }
            if !s[i * m + j].is_finite() || s[i * m + j] < -1e-12 {
                return Err(Error::Usage(format!("invalid distance at ({i}, {j})")));
            }
        }
    }

    let d2 = DMatrix::from_row_slice(m, m, s);
    let j = DMatrix::identity(m, m).add_scalar(0.0)
        - DMatrix::from_element(m, m, 1.0 / m as f64);
    let mut b = -0.5 * (&j * &d2 * &j);
    // Exact symmetry for the eigensolver.
    for i in 0..m {
        for k in (i + 1)..m {
            let avg = 0.5 * (b[(i, k)] + b[(k, i)]);
            b[(i, k)] = avg;
            b[(k, i)] = avg;
        }
    }

    let eig = b.symmetric_eigen();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &c| {
        eig.eigenvalues[c]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    let mut coords = vec![(0.0f64, 0.0f64); m];
    for (axis, &idx) in order.iter().take(2).enumerate() {
        let lambda = eig.eigenvalues[idx].max(0.0);
        let scale = lambda.sqrt();
        for i in 0..m {
            let v = eig.eigenvectors[(i, idx)] * scale;
            if axis == 0 {
                coords[i].0 = v;
            } else {
                coords[i].1 = v;
            }
        }
    }

    // Embedded distances vs input distances (sqrt of the squared input).
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..m {
        for k in 0..m {
            let d_in = s[i * m + k].max(0.0).sqrt();
            let dx = coords[i].0 - coords[k].0;
            let dy = coords[i].1 - coords[k].1;
            let d_out = (dx * dx + dy * dy).sqrt();
            num += (d_in - d_out) * (d_in - d_out);
            den += d_in * d_in;
        }
    }
    let stress = if den == 0.0 { 0.0 } else { (num / den).sqrt() };

    let (ox, oy) = coords[0];
    let points = iters
        .iter()
        .zip(&coords)
        .map(|(&t, &(x, y))| (t, x - ox, y - oy))
        .collect();
    Ok(Embedding2D { points, stress })
}

/// Residual of the best rigid alignment (rotation, reflection, translation)
/// of `a` onto `b`: `||R a_centered - b_centered||_F`.
pub fn procrustes_residual(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    assert_eq!(a.len(), b.len(), "point sets must match in size");
    let n = a.len() as f64;
    let ca = a.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let cb = b.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let ca = (ca.0 / n, ca.1 / n);
    let cb = (cb.0 / n, cb.1 / n);

    // Cross-covariance H = sum (a_i - ca)(b_i - cb)'.
    let mut h = [[0.0f64; 2]; 2];
    for (pa, pb) in a.iter().zip(b) {
        let (ax, ay) = (pa.0 - ca.0, pa.1 - ca.1);
        let (bx, by) = (pb.0 - cb.0, pb.1 - cb.1);
        h[0][0] += ax * bx;
        h[0][1] += ax * by;
        h[1][0] += ay * bx;
        h[1][1] += ay * by;
    }
    let hm = nalgebra::Matrix2::new(h[0][0], h[0][1], h[1][0], h[1][1]);
    let svd = hm.svd(true, true);
    let u = svd.u.expect("svd with u");
    let vt = svd.v_t.expect("svd with v_t");
    // b ~ R a with R = V U' (reflections allowed).
    let r = vt.transpose() * u.transpose();

    let mut resid = 0.0;
    for (pa, pb) in a.iter().zip(b) {
        let (ax, ay) = (pa.0 - ca.0, pa.1 - ca.1);
        let (bx, by) = (pb.0 - cb.0, pb.1 - cb.1);
        let rx = r[(0, 0)] * ax + r[(0, 1)] * ay;
        let ry = r[(1, 0)] * ax + r[(1, 1)] * ay;
        resid += (rx - bx) * (rx - bx) + (ry - by) * (ry - by);
    }
    resid.sqrt()
}
