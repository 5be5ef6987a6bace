//! Output persistence: CSV emission at full precision, binary checkpoint
//! files with an index, and atomic writes (temp file + rename).

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use entk::analysis::{CurveParam, DistanceCurve, Embedding2D};
use entk::train::TrajectoryLog;
use entk::{Error, Result};

/// Writes `content` to `path` atomically.
pub fn write_atomic(path: &Path, content: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(content)?;
        f.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Full-precision float formatting: 17 significant digits, '.' separator.
fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// `kernel_distance.csv`: columns `kind,param,t,S` over both curve families.
pub fn kernel_distance_csv(ref_curves: &[DistanceCurve], adj_curves: &[DistanceCurve], hash: &str) -> String {
    let mut out = format!("# config={hash}\nkind,param,t,S\n");
    for curve in ref_curves.iter().chain(adj_curves) {
        let (kind, param) = match curve.param {
            CurveParam::Tau(v) => ("ref", v),
            CurveParam::Dt(v) => ("adj", v),
        };
        for &(t, s) in &curve.points {
            out.push_str(&format!("{kind},{param},{t},{}\n", fmt_f64(s)));
        }
    }
    out
}

/// `velocity.csv`: columns `t,dt,v`, one block per requested `dt`.
pub fn velocity_csv(series: &[(u64, Vec<(u64, f64)>)], hash: &str) -> String {
    let mut out = format!("# config={hash}\nt,dt,v\n");
    for (dt, points) in series {
        for &(t, v) in points {
            out.push_str(&format!("{t},{dt},{}\n", fmt_f64(v)));
        }
    }
    out
}

/// `embedding.csv`: columns `t,x,y`.
pub fn embedding_csv(emb: &Embedding2D, hash: &str) -> String {
    let mut out = format!("# config={hash}\nt,x,y\n");
    for &(t, x, y) in &emb.points {
        out.push_str(&format!("{t},{},{}\n", fmt_f64(x), fmt_f64(y)));
    }
    out
}

/// `switch.csv`: columns `t_switch,test_loss,test_accuracy`, sorted rows.
pub fn switch_csv(rows: &[(u64, f64, f64)], hash: &str) -> String {
    let mut out = format!("# config={hash}\nt_switch,test_loss,test_accuracy\n");
    for &(t, loss, acc) in rows {
        out.push_str(&format!("{t},{},{}\n", fmt_f64(loss), fmt_f64(acc)));
    }
    out
}

/// One checkpoint parameter vector: `u64` little-endian length header, then
/// that many `f64` little-endian values.
pub fn write_checkpoint(path: &Path, params: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + params.len() * 8);
    buf.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in params {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    write_atomic(path, &buf)
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 {
        return Err(Error::Format(format!(
            "checkpoint {} truncated before length header",
            path.display()
        )));
    }
    let n = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
    if bytes.len() != 8 + 8 * n {
        return Err(Error::Format(format!(
            "checkpoint {} has {} bytes, expected {}",
            path.display(),
            bytes.len(),
            8 + 8 * n
        )));
    }
    let mut out = Vec::with_capacity(n);
    for chunk in bytes[8..].chunks_exact(8) {
        out.push(f64::from_le_bytes(chunk.try_into().expect("8 bytes")));
    }
    Ok(out)
}

/// Persists every checkpoint of a trajectory plus `index.txt` mapping
/// iterations to files.
pub fn write_trajectory(dir: &Path, traj: &TrajectoryLog, hash: &str) -> Result<()> {
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    let mut index = format!("# config={hash}\n");
    for rec in &traj.records {
        let name = format!("ckpt_{:07}.bin", rec.iteration);
        write_checkpoint(&ckpt_dir.join(&name), &rec.model.params)?;
        index.push_str(&format!("{} {name}\n", rec.iteration));
    }
    write_atomic(&ckpt_dir.join("index.txt"), index.as_bytes())
}

/// Reads the checkpoint index of a stored run: `(iteration, file path)`.
pub fn read_index(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let ckpt_dir = dir.join("checkpoints");
    let text = fs::read_to_string(ckpt_dir.join("index.txt"))?;
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (iter, name) = line
            .split_once(' ')
            .ok_or_else(|| Error::Format(format!("bad index line '{line}'")))?;
        let iter: u64 = iter
            .parse()
            .map_err(|_| Error::Format(format!("bad iteration in index line '{line}'")))?;
        out.push((iter, ckpt_dir.join(name)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("entk-out-{tag}-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let dir = tmpdir("ckpt");
        let path = dir.join("c.bin");
        let params = vec![0.0, -1.5, f64::MIN_POSITIVE, 1.0 / 3.0, 1e300];
        write_checkpoint(&path, &params).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(params, back);
        // Exact layout: 8-byte LE header + 8 bytes per value.
        let bytes = fs::read(&path).unwrap();
        assert_eq!(bytes.len(), 8 + 8 * params.len());
        assert_eq!(&bytes[..8], &5u64.to_le_bytes());
    }

    #[test]
    fn truncated_checkpoint_rejected() {
        let dir = tmpdir("trunc");
        let path = dir.join("c.bin");
        fs::write(&path, [1u8, 0, 0, 0, 0, 0, 0, 0, 9]).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Format(_))));
    }

    #[test]
    fn csv_has_hash_header_and_full_precision() {
        let curve = DistanceCurve {
            param: CurveParam::Tau(100),
            points: vec![(0, 0.1), (50, 1.0 / 3.0)],
        };
        let csv = kernel_distance_csv(&[curve], &[], "deadbeef");
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("# config=deadbeef"));
        assert_eq!(lines.next(), Some("kind,param,t,S"));
        let row = lines.nth(1).unwrap();
        assert!(row.starts_with("ref,100,50,3.3333333333333331e-1"), "{row}");
    }
}
