//! Dataset ingestion and probe-set sampling.
//!
//! Handles bit-exact IDX parsing (big-endian magic `0x00000803` for images,
//! `0x00000801` for labels), two synthetic generators, and deterministic
//! probe sampling. Datasets are immutable after construction.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

/// A labeled dataset with row-major `f64` features.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// `len * dim` feature matrix, row-major.
    inputs: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        inputs: Vec<f64>,
        labels: Vec<usize>,
        dim: usize,
        classes: usize,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("dataset feature dimension must be positive".into()));
        }
        if inputs.len() != labels.len() * dim {
            return Err(Error::Shape {
                what: "dataset feature matrix",
                expected: labels.len() * dim,
                got: inputs.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Config(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Dataset {
            name: name.into(),
            inputs,
            labels,
            dim,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Keeps the first `n` examples (no-op if `n >= len`).
    pub fn truncate(&mut self, n: usize) {
        if n < self.len() {
            self.labels.truncate(n);
            self.inputs.truncate(n * self.dim);
        }
    }
}

fn read_be_u32(reader: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    reader
        .read_exact(&mut buf)
        .map_err(|_| Error::Format(format!("truncated {what}")))?;
    Ok(u32::from_be_bytes(buf))
}

/// Loads an image/label IDX pair, scaling pixels to `[0, 1]`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let mut img = BufReader::new(File::open(images)?);
    let magic = read_be_u32(&mut img, "image header")?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "image file has magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"
        )));
    }
    let n = read_be_u32(&mut img, "image header")? as usize;
    let rows = read_be_u32(&mut img, "image header")? as usize;
    let cols = read_be_u32(&mut img, "image header")? as usize;
    let dim = rows * cols;
    let mut pixels = vec![0u8; n * dim];
    img.read_exact(&mut pixels)
        .map_err(|_| Error::Format(format!("truncated image payload: expected {} bytes", n * dim)))?;

    let mut lbl = BufReader::new(File::open(labels)?);
    let magic = read_be_u32(&mut lbl, "label header")?;
    if magic != IDX_LABEL_MAGIC {
        return Err(Error::Format(format!(
            "label file has magic {magic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"
        )));
    }
    let n_lbl = read_be_u32(&mut lbl, "label header")? as usize;
    if n_lbl != n {
        return Err(Error::Format(format!(
            "label count {n_lbl} does not match image count {n}"
        )));
    }
    let mut raw_labels = vec![0u8; n];
    lbl.read_exact(&mut raw_labels)
        .map_err(|_| Error::Format(format!("truncated label payload: expected {n} bytes")))?;

    let inputs: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().copied().max().map_or(1, |m| m + 1);
    Dataset::new(
        images.file_stem().and_then(|s| s.to_str()).unwrap_or("idx"),
        inputs,
        labels,
        dim,
        classes,
    )
}

/// Writes a dataset back out as an IDX image/label pair. Features must be in
/// `[0, 1]`; they are quantized to bytes, so round-trips are exact only for
/// data that came from bytes. The image is written as `n x dim x 1`.
pub fn write_idx(data: &Dataset, images: &Path, labels: &Path) -> Result<()> {
    let mut img = BufWriter::new(File::create(images)?);
    img.write_all(&IDX_IMAGE_MAGIC.to_be_bytes())?;
    img.write_all(&(data.len() as u32).to_be_bytes())?;
    // Store as rows x cols; fall back to a flat row when dim is not square.
    let side = (data.dim() as f64).sqrt().round() as usize;
    let (rows, cols) = if side * side == data.dim() {
        (side, side)
    } else {
        (data.dim(), 1)
    };
    img.write_all(&(rows as u32).to_be_bytes())?;
    img.write_all(&(cols as u32).to_be_bytes())?;
    for v in &data.inputs {
        img.write_all(&[(v * 255.0).round().clamp(0.0, 255.0) as u8])?;
    }
    img.flush()?;

    let mut lbl = BufWriter::new(File::create(labels)?);
    lbl.write_all(&IDX_LABEL_MAGIC.to_be_bytes())?;
    lbl.write_all(&(data.len() as u32).to_be_bytes())?;
    for &l in &data.labels {
        lbl.write_all(&[l as u8])?;
    }
    lbl.flush()?;
    Ok(())
}

/// Gaussian blobs around one deterministic center per class.
pub fn synth_blobs(
    seed: u64,
    per_class: usize,
    dim: usize,
    classes: usize,
    spread: f64,
) -> Result<Dataset> {
    if classes < 2 {
        return Err(Error::Config("blobs need at least 2 classes".into()));
    }
    if spread <= 0.0 {
        return Err(Error::Config("blob spread must be positive".into()));
    }
    if per_class == 0 || dim == 0 {
        return Err(Error::Config("blobs need positive size and dimension".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();

    let n = per_class * classes;
    let mut inputs = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    let normal = StandardNormal;
    for class in 0..classes {
        for _ in 0..per_class {
            for d in 0..dim {
                let noise: f64 = normal.sample(&mut rng);
                inputs.push(centers[class][d] + spread * noise);
            }
            labels.push(class);
        }
    }
    Dataset::new(format!("blobs-{seed}"), inputs, labels, dim, classes)
}

/// Glyph stroke templates for the ten digit classes, as polylines in the
/// unit square.
const DIGIT_STROKES: [&[(f64, f64)]; 10] = [
    // 0: closed octagon
    &[
        (0.35, 0.15),
        (0.65, 0.15),
        (0.78, 0.35),
        (0.78, 0.65),
        (0.65, 0.85),
        (0.35, 0.85),
        (0.22, 0.65),
        (0.22, 0.35),
        (0.35, 0.15),
    ],
    // 1: stem with a small flag
    &[(0.38, 0.30), (0.52, 0.15), (0.52, 0.85)],
    // 2: top arc, diagonal, bottom bar
    &[
        (0.25, 0.30),
        (0.40, 0.15),
        (0.62, 0.17),
        (0.72, 0.35),
        (0.30, 0.82),
        (0.75, 0.82),
    ],
    // 3: two bumps
    &[
        (0.28, 0.18),
        (0.68, 0.20),
        (0.48, 0.48),
        (0.70, 0.60),
        (0.62, 0.82),
        (0.28, 0.82),
    ],
    // 4: angled stroke plus stem
    &[(0.60, 0.85), (0.60, 0.15), (0.25, 0.60), (0.75, 0.60)],
    // 5: flag, stem, belly
    &[
        (0.72, 0.15),
        (0.30, 0.15),
        (0.28, 0.48),
        (0.62, 0.50),
        (0.70, 0.70),
        (0.55, 0.85),
        (0.28, 0.80),
    ],
    // 6: hook into a loop
    &[
        (0.65, 0.15),
        (0.38, 0.35),
        (0.28, 0.62),
        (0.45, 0.85),
        (0.68, 0.72),
        (0.60, 0.52),
        (0.32, 0.58),
    ],
    // 7: bar and diagonal
    &[(0.25, 0.17), (0.75, 0.17), (0.45, 0.85)],
    // 8: two stacked loops
    &[
        (0.50, 0.15),
        (0.70, 0.28),
        (0.50, 0.48),
        (0.30, 0.28),
        (0.50, 0.15),
        (0.50, 0.48),
        (0.72, 0.68),
        (0.50, 0.87),
        (0.28, 0.68),
        (0.50, 0.48),
    ],
    // 9: loop with a tail
    &[
        (0.68, 0.42),
        (0.52, 0.52),
        (0.32, 0.40),
        (0.40, 0.16),
        (0.66, 0.18),
        (0.68, 0.42),
        (0.62, 0.85),
    ],
];

fn dist_to_segment(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (ax, ay) = a;
    let (bx, by) = b;
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

/// Procedurally rendered digit-like glyphs with per-sample jitter
/// (translation, rotation, scale, stroke width, pixel noise).
///
/// A stand-in for handwritten-digit data when no IDX files are available:
/// classes are only separable through spatially invariant features, so
/// linear models underperform trained networks on it.
pub fn synth_digits(seed: u64, n: usize, side: usize) -> Result<Dataset> {
    if side < 12 {
        return Err(Error::Config("digit canvas must be at least 12x12".into()));
    }
    if n == 0 {
        return Err(Error::Config("digit count must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = side * side;
    let mut inputs = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    let normal = StandardNormal;

    for idx in 0..n {
        let class = idx % 10;
        let strokes = DIGIT_STROKES[class];

        let scale = rng.random_range(0.75..1.0);
        let angle = rng.random_range(-0.25..0.25f64);
        let tx = rng.random_range(-0.14..0.14);
        let ty = rng.random_range(-0.14..0.14);
        let width = rng.random_range(0.050..0.085);
        let (sin, cos) = angle.sin_cos();

        // Transform the template once per sample.
        let pts: Vec<(f64, f64)> = strokes
            .iter()
            .map(|&(x, y)| {
                let (cx, cy) = (x - 0.5, y - 0.5);
                let (rx, ry) = (cx * cos - cy * sin, cx * sin + cy * cos);
                (rx * scale + 0.5 + tx, ry * scale + 0.5 + ty)
            })
            .collect();

        for py in 0..side {
            for px in 0..side {
                let u = (px as f64 + 0.5) / side as f64;
                let v = (py as f64 + 0.5) / side as f64;
                let mut d = f64::INFINITY;
                for w in pts.windows(2) {
                    d = d.min(dist_to_segment(u, v, w[0], w[1]));
                }
                // Soft stroke edge about one pixel wide.
                let edge = 1.0 / side as f64;
                let ink = 1.0 - ((d - width) / edge).clamp(0.0, 1.0);
                let noise: f64 = normal.sample(&mut rng);
                inputs.push((ink + 0.02 * noise).clamp(0.0, 1.0));
            }
        }
        labels.push(class);
    }
    Dataset::new(format!("digits-{seed}"), inputs, labels, dim, 10)
}

/// Frozen subset of a dataset on which all Gram matrices are evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    indices: Vec<usize>,
    inputs: Vec<f64>,
    labels: Vec<usize>,
    dim: usize,
    classes: usize,
}

impl ProbeSet {
    /// Materializes a probe from explicit dataset indices. Unlike
    /// [`probe_sample`] this allows a single-example probe.
    pub fn from_indices(data: &Dataset, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Usage("probe indices must be nonempty".into()));
        }
        let mut seen = indices.to_vec();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != indices.len() {
            return Err(Error::Usage("probe indices must be unique".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= data.len()) {
            return Err(Error::Usage(format!(
                "probe index {bad} out of range for dataset of size {}",
                data.len()
            )));
        }
        let mut inputs = Vec::with_capacity(indices.len() * data.dim());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            inputs.extend_from_slice(data.input(i));
            labels.push(data.label(i));
        }
        Ok(ProbeSet {
            indices: indices.to_vec(),
            inputs,
            labels,
            dim: data.dim(),
            classes: data.classes(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn classes(&self) -> usize {
        self.classes
    }
}

/// Samples `n_probe` examples without replacement, uniformly or stratified
/// by class. Deterministic in `(dataset, n_probe, seed, stratified)`.
pub fn probe_sample(
    data: &Dataset,
    n_probe: usize,
    seed: u64,
    stratified: bool,
) -> Result<ProbeSet> {
    if n_probe > data.len() {
        return Err(Error::Usage(format!(
            "probe size {n_probe} exceeds dataset size {}",
            data.len()
        )));
    }
    if n_probe < 2 {
        return Err(Error::Usage(
            "probe needs at least 2 examples for a nontrivial Gram matrix".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices: Vec<usize> = if n_probe == data.len() {
        (0..data.len()).collect()
    } else if stratified {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); data.classes()];
        for i in 0..data.len() {
            by_class[data.label(i)].push(i);
        }
        for bucket in by_class.iter_mut() {
            bucket.shuffle(&mut rng);
        }
        // Round-robin over classes keeps per-class counts within one of
        // each other and exact when the class count divides n_probe.
        let mut picked = Vec::with_capacity(n_probe);
        let mut cursor = vec![0usize; by_class.len()];
        'outer: loop {
            let mut advanced = false;
            for (c, bucket) in by_class.iter().enumerate() {
                if picked.len() == n_probe {
                    break 'outer;
                }
                if cursor[c] < bucket.len() {
                    picked.push(bucket[cursor[c]]);
                    cursor[c] += 1;
                    advanced = true;
                }
            }
            if !advanced {
                break;
            }
        }
        if picked.len() < n_probe {
            return Err(Error::Usage(format!(
                "stratified sampling exhausted classes at {} of {n_probe}",
                picked.len()
            )));
        }
        picked
    } else {
        let mut all: Vec<usize> = (0..data.len()).collect();
        all.shuffle(&mut rng);
        all.truncate(n_probe);
        all
    };
    indices.sort_unstable();

    let mut inputs = Vec::with_capacity(n_probe * data.dim());
    let mut labels = Vec::with_capacity(n_probe);
    for &i in &indices {
        inputs.extend_from_slice(data.input(i));
        labels.push(data.label(i));
    }
    Ok(ProbeSet {
        indices,
        inputs,
        labels,
        dim: data.dim(),
        classes: data.classes(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmpdir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("entk-data-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn idx_fixture_roundtrip() {
        let dir = tmpdir("roundtrip");
        let img = dir.join("im.idx");
        let lbl = dir.join("lb.idx");
        // 2 images of 28x28, pixel values chosen to be byte-exact.
        let mut inputs = Vec::new();
        for i in 0..2 * 784usize {
            inputs.push(((i * 7) % 256) as f64 / 255.0);
        }
        let data = Dataset::new("fx", inputs, vec![3, 9], 784, 10).unwrap();
        write_idx(&data, &img, &lbl).unwrap();
        let back = load_idx(&img, &lbl).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.dim(), 784);
        assert_eq!(back.labels(), &[3, 9]);
        for i in 0..2 {
            assert_eq!(back.input(i), data.input(i));
        }
    }

    #[test]
    fn idx_header_dimensions_respected() {
        let dir = tmpdir("header");
        let img = dir.join("im.idx");
        let lbl = dir.join("lb.idx");
        let mut f = File::create(&img).unwrap();
        f.write_all(&IDX_IMAGE_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&28u32.to_be_bytes()).unwrap();
        f.write_all(&28u32.to_be_bytes()).unwrap();
        f.write_all(&vec![0u8; 2 * 784]).unwrap();
        let mut f = File::create(&lbl).unwrap();
        f.write_all(&IDX_LABEL_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&[0u8, 1u8]).unwrap();

        let data = load_idx(&img, &lbl).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.dim(), 784);
        // all-zero pixels map to an all-zero feature row
        assert!(data.input(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_magic_is_reported_with_observed_value() {
        let dir = tmpdir("magic");
        let img = dir.join("im.idx");
        let lbl = dir.join("lb.idx");
        // Label file written with the image magic.
        let mut f = File::create(&lbl).unwrap();
        f.write_all(&IDX_IMAGE_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&1u32.to_be_bytes()).unwrap();
        f.write_all(&[0u8]).unwrap();
        let mut f = File::create(&img).unwrap();
        f.write_all(&IDX_IMAGE_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&1u32.to_be_bytes()).unwrap();
        f.write_all(&1u32.to_be_bytes()).unwrap();
        f.write_all(&1u32.to_be_bytes()).unwrap();
        f.write_all(&[0u8]).unwrap();

        let err = load_idx(&img, &lbl).unwrap_err();
        match err {
            Error::Format(msg) => {
                assert!(msg.contains("0x00000803"), "observed magic missing: {msg}");
                assert!(msg.contains("0x00000801"), "expected magic missing: {msg}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn truncated_payload_is_a_length_error() {
        let dir = tmpdir("trunc");
        let img = dir.join("im.idx");
        let lbl = dir.join("lb.idx");
        let mut f = File::create(&img).unwrap();
        f.write_all(&IDX_IMAGE_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&4u32.to_be_bytes()).unwrap();
        f.write_all(&4u32.to_be_bytes()).unwrap();
        f.write_all(&vec![0u8; 5]).unwrap(); // needs 32
        let mut f = File::create(&lbl).unwrap();
        f.write_all(&IDX_LABEL_MAGIC.to_be_bytes()).unwrap();
        f.write_all(&2u32.to_be_bytes()).unwrap();
        f.write_all(&[0u8, 0u8]).unwrap();

        let err = load_idx(&img, &lbl).unwrap_err();
        assert!(matches!(err, Error::Format(ref m) if m.contains("truncated")));
    }

    #[test]
    fn blobs_are_deterministic() {
        let a = synth_blobs(5, 10, 3, 2, 0.2).unwrap();
        let b = synth_blobs(5, 10, 3, 2, 0.2).unwrap();
        assert_eq!(a, b);
        let c = synth_blobs(6, 10, 3, 2, 0.2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn blobs_tiny_spread_sits_on_centers() {
        let tight = synth_blobs(5, 4, 3, 2, 1e-9).unwrap();
        let wide = synth_blobs(5, 4, 3, 2, 1.0).unwrap();
        // Identical seeds draw identical centers; with spread -> 0 all
        // points of a class collapse onto one point.
        for i in 1..4 {
            for d in 0..3 {
                assert!((tight.input(i)[d] - tight.input(0)[d]).abs() < 1e-6);
            }
        }
        assert!((wide.input(1)[0] - wide.input(0)[0]).abs() > 1e-3);
    }

    #[test]
    fn digits_deterministic_and_in_range() {
        let a = synth_digits(9, 40, 16).unwrap();
        let b = synth_digits(9, 40, 16).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.classes(), 10);
        assert!(a
            .input(0)
            .iter()
            .chain(a.input(39))
            .all(|&v| (0.0..=1.0).contains(&v)));
        // Each glyph should contain some ink and some background.
        let ink: f64 = a.input(7).iter().sum();
        assert!(ink > 2.0 && ink < 200.0);
    }

    #[test]
    fn probe_identity_when_full() {
        let data = synth_blobs(1, 5, 2, 2, 0.5).unwrap();
        let probe = probe_sample(&data, 10, 3, false).unwrap();
        assert_eq!(probe.indices(), (0..10).collect::<Vec<_>>().as_slice());
    }

    #[test]
    fn probe_stratified_balanced() {
        let data = synth_blobs(2, 20, 2, 4, 0.5).unwrap();
        let probe = probe_sample(&data, 8, 7, true).unwrap();
        let mut counts = [0usize; 4];
        for i in 0..probe.len() {
            counts[probe.label(i)] += 1;
        }
        assert_eq!(counts, [2, 2, 2, 2]);
    }

    #[test]
    fn probe_deterministic_and_unique() {
        let data = synth_blobs(3, 50, 2, 2, 0.5).unwrap();
        let a = probe_sample(&data, 16, 11, false).unwrap();
        let b = probe_sample(&data, 16, 11, false).unwrap();
        assert_eq!(a, b);
        let mut idx = a.indices().to_vec();
        idx.dedup();
        assert_eq!(idx.len(), 16);
    }

    #[test]
    fn probe_too_large_rejected() {
        let data = synth_blobs(3, 2, 2, 2, 0.5).unwrap();
        assert!(matches!(
            probe_sample(&data, 5, 0, false),
            Err(Error::Usage(_))
        ));
    }
}
