//! Experiment configuration: a flat `key = value` text format with dotted
//! section keys, `#` comments, and order-insensitive lines.
//!
//! Parsing fills in defaults immediately; `resolve` derives any seeds that
//! were not set explicitly from the global seed, after which serialization
//! echoes every knob. Parse -> serialize -> parse is the identity on
//! resolved configs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use entk::nn::{Activation, ArchKind, ReadoutRule};
use entk::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetKind {
    Blobs,
    Digits,
    Idx,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetCfg {
    pub kind: DatasetKind,
    pub seed: Option<u64>,
    // blobs
    pub per_class: usize,
    pub test_per_class: usize,
    pub dim: usize,
    pub classes: usize,
    pub spread: f64,
    // digits
    pub train_n: usize,
    pub test_n: usize,
    pub side: usize,
    // idx
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    pub limit: usize,
    pub test_limit: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchCfg {
    pub kind: ArchKind,
    pub widths: Vec<usize>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainCfg {
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub iters: u64,
    pub shuffle_seed: Option<u64>,
    pub loss: LossCfg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossCfg {
    CrossEntropy,
    MseReadout,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CkptCfg {
    Every(u64),
    List(Vec<u64>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProbeSplit {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeCfg {
    pub size: usize,
    pub seed: Option<u64>,
    pub stratified: bool,
    pub split: ProbeSplit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasureCfg {
    /// Empty means "derive quarter points of the horizon on the grid".
    pub taus: Option<Vec<u64>>,
    pub dts: Option<Vec<u64>>,
    pub rho: f64,
    pub window: usize,
    pub chunk: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchCfg {
    /// Empty means "derive a five-point grid over the horizon".
    pub grid: Option<Vec<u64>>,
    pub horizon: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub init_seed: Option<u64>,
    pub dataset: DatasetCfg,
    pub arch: ArchCfg,
    pub train: TrainCfg,
    pub ckpt: CkptCfg,
    pub probe: ProbeCfg,
    pub readout: ReadoutRule,
    pub measure: MeasureCfg,
    pub switch: SwitchCfg,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            init_seed: None,
            dataset: DatasetCfg {
                kind: DatasetKind::Digits,
                seed: None,
                per_class: 100,
                test_per_class: 25,
                dim: 16,
                classes: 3,
                spread: 0.4,
                train_n: 5000,
                test_n: 1000,
                side: 28,
                train_images: PathBuf::new(),
                train_labels: PathBuf::new(),
                test_images: PathBuf::new(),
                test_labels: PathBuf::new(),
                limit: 0,
                test_limit: 0,
            },
            arch: ArchCfg {
                kind: ArchKind::Mlp,
                widths: vec![256, 10],
                activation: Activation::Relu,
            },
            train: TrainCfg {
                lr: 0.05,
                momentum: 0.9,
                batch: 64,
                iters: 3000,
                shuffle_seed: None,
                loss: LossCfg::CrossEntropy,
            },
            ckpt: CkptCfg::Every(50),
            probe: ProbeCfg {
                size: 64,
                seed: None,
                stratified: true,
                split: ProbeSplit::Train,
            },
            readout: ReadoutRule::TrueClass,
            measure: MeasureCfg {
                taus: None,
                dts: None,
                rho: 0.2,
                window: 3,
                chunk: 16,
            },
            switch: SwitchCfg {
                grid: None,
                horizon: 3000,
            },
            out_dir: PathBuf::from("run"),
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Stable per-component seed derivation from the global seed.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix(seed ^ splitmix(tag))
}

impl ExperimentConfig {
    /// Fills derived seeds and default measurement grids, then checks
    /// cross-field consistency. `seed_override` replaces the global seed
    /// first (and re-derives everything that was not explicit).
    pub fn resolve(&mut self, seed_override: Option<u64>) -> Result<()> {
        if let Some(s) = seed_override {
            self.seed = s;
        }
        if self.dataset.seed.is_none() {
            self.dataset.seed = Some(derive_seed(self.seed, 1));
        }
        if self.init_seed.is_none() {
            self.init_seed = Some(derive_seed(self.seed, 2));
        }
        if self.train.shuffle_seed.is_none() {
            self.train.shuffle_seed = Some(derive_seed(self.seed, 3));
        }
        if self.probe.seed.is_none() {
            self.probe.seed = Some(derive_seed(self.seed, 4));
        }

        let total = self.train.iters;
        let schedule = self.schedule().resolve(total)?;
        if self.measure.taus.is_none() {
            // Quarter points of the horizon, snapped to the grid.
            let mut taus: Vec<u64> = [total / 4, total / 2, 3 * total / 4]
                .iter()
                .map(|&t| snap_to_grid(t, &schedule))
                .filter(|&t| t > 0)
                .collect();
            taus.dedup();
            self.measure.taus = Some(taus);
        }
        if self.measure.dts.is_none() {
            let spacing = grid_spacing(&schedule);
            let dts: Vec<u64> = [1u64, 2, 4]
                .iter()
                .map(|m| m * spacing)
                .filter(|&dt| dt > 0 && dt <= total)
                .collect();
            self.measure.dts = Some(dts);
        }
        if self.switch.grid.is_none() {
            let h = self.switch.horizon;
            let mut grid = vec![0, h / 6, h / 3, 2 * h / 3, h];
            grid.sort_unstable();
            grid.dedup();
            self.switch.grid = Some(grid);
        }
        self.validate()
    }

    pub fn schedule(&self) -> entk::train::CheckpointSchedule {
        match &self.ckpt {
            CkptCfg::Every(k) => entk::train::CheckpointSchedule::Every(*k),
            CkptCfg::List(v) => entk::train::CheckpointSchedule::Explicit(v.clone()),
        }
    }

    fn validate(&self) -> Result<()> {
        let total = self.train.iters;
        let schedule = self.schedule().resolve(total)?;
        for &tau in self.measure.taus.as_deref().unwrap_or(&[]) {
            if schedule.binary_search(&tau).is_err() {
                return Err(Error::Config(format!(
                    "measure.taus entry {tau} is not on the checkpoint grid"
                )));
            }
        }
        let spacing = grid_spacing(&schedule);
        for &dt in self.measure.dts.as_deref().unwrap_or(&[]) {
            if dt == 0 || (spacing > 0 && dt % spacing != 0) {
                return Err(Error::Config(format!(
                    "measure.dts entry {dt} is not a multiple of the checkpoint spacing {spacing}"
                )));
            }
        }
        if !(self.measure.rho > 0.0 && self.measure.rho < 1.0) {
            return Err(Error::Config("measure.rho must lie in (0, 1)".into()));
        }
        if self.measure.window == 0 {
            return Err(Error::Config("measure.window must be at least 1".into()));
        }
        if self.measure.chunk == 0 {
            return Err(Error::Config("measure.chunk must be positive".into()));
        }
        if self.probe.size < 2 {
            return Err(Error::Config("probe.size must be at least 2".into()));
        }
        for &t in self.switch.grid.as_deref().unwrap_or(&[]) {
            if t > self.switch.horizon {
                return Err(Error::Config(format!(
                    "switch.grid entry {t} beyond switch.horizon {}",
                    self.switch.horizon
                )));
            }
        }
        if self.arch.widths.is_empty() {
            return Err(Error::Config("arch.widths must be nonempty".into()));
        }
        if self.dataset.kind == DatasetKind::Idx && self.dataset.train_images.as_os_str().is_empty()
        {
            return Err(Error::Config(
                "dataset.kind = idx requires dataset.train_images/train_labels".into(),
            ));
        }
        Ok(())
    }
}

fn snap_to_grid(t: u64, grid: &[u64]) -> u64 {
    match grid.binary_search(&t) {
        Ok(_) => t,
        Err(pos) => {
            // Nearest neighbor, ties toward the earlier checkpoint.
            let before = if pos > 0 { Some(grid[pos - 1]) } else { None };
            let after = grid.get(pos).copied();
            match (before, after) {
                (Some(b), Some(a)) => {
                    if t - b <= a - t {
                        b
                    } else {
                        a
                    }
                }
                (Some(b), None) => b,
                (None, Some(a)) => a,
                (None, None) => 0,
            }
        }
    }
}

fn grid_spacing(grid: &[u64]) -> u64 {
    let mut g = 0u64;
    for w in grid.windows(2) {
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

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

fn parse_list_u64(v: &str) -> Result<Vec<u64>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',')
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("bad integer list entry '{s}'")))
        })
        .collect()
}

fn parse_list_usize(v: &str) -> Result<Vec<usize>> {
    Ok(parse_list_u64(v)?.into_iter().map(|x| x as usize).collect())
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad integer for {key}: '{v}'")))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad integer for {key}: '{v}'")))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad number for {key}: '{v}'")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean for {key}: '{v}'"))),
    }
}

pub fn parse(text: &str) -> Result<ExperimentConfig> {
    let mut entries: BTreeMap<String, String> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
        })?;
        entries.insert(key.trim().to_string(), value.trim().to_string());
    }

    let mut cfg = ExperimentConfig::default();
    for (key, v) in &entries {
        let v = v.as_str();
        match key.as_str() {
            "seed" => cfg.seed = parse_u64(key, v)?,
            "init.seed" => cfg.init_seed = Some(parse_u64(key, v)?),
            "dataset.kind" => {
                cfg.dataset.kind = match v {
                    "blobs" => DatasetKind::Blobs,
                    "digits" => DatasetKind::Digits,
                    "idx" => DatasetKind::Idx,
                    _ => return Err(Error::Config(format!("unknown dataset.kind '{v}'"))),
                }
            }
            "dataset.seed" => cfg.dataset.seed = Some(parse_u64(key, v)?),
            "dataset.per_class" => cfg.dataset.per_class = parse_usize(key, v)?,
            "dataset.test_per_class" => cfg.dataset.test_per_class = parse_usize(key, v)?,
            "dataset.dim" => cfg.dataset.dim = parse_usize(key, v)?,
            "dataset.classes" => cfg.dataset.classes = parse_usize(key, v)?,
            "dataset.spread" => cfg.dataset.spread = parse_f64(key, v)?,
            "dataset.train_n" => cfg.dataset.train_n = parse_usize(key, v)?,
            "dataset.test_n" => cfg.dataset.test_n = parse_usize(key, v)?,
            "dataset.side" => cfg.dataset.side = parse_usize(key, v)?,
            "dataset.train_images" => cfg.dataset.train_images = PathBuf::from(v),
            "dataset.train_labels" => cfg.dataset.train_labels = PathBuf::from(v),
            "dataset.test_images" => cfg.dataset.test_images = PathBuf::from(v),
            "dataset.test_labels" => cfg.dataset.test_labels = PathBuf::from(v),
            "dataset.limit" => cfg.dataset.limit = parse_usize(key, v)?,
            "dataset.test_limit" => cfg.dataset.test_limit = parse_usize(key, v)?,
            "arch.kind" => {
                cfg.arch.kind = match v {
                    "mlp" => ArchKind::Mlp,
                    "lenet" => ArchKind::Lenet,
                    "linear" => ArchKind::Linear,
                    _ => return Err(Error::Config(format!("unknown arch.kind '{v}'"))),
                }
            }
            "arch.widths" => cfg.arch.widths = parse_list_usize(v)?,
            "arch.activation" => {
                cfg.arch.activation = match v {
                    "relu" => Activation::Relu,
                    "tanh" => Activation::Tanh,
                    _ => return Err(Error::Config(format!("unknown arch.activation '{v}'"))),
                }
            }
            "train.lr" => cfg.train.lr = parse_f64(key, v)?,
            "train.momentum" => cfg.train.momentum = parse_f64(key, v)?,
            "train.batch" => cfg.train.batch = parse_usize(key, v)?,
            "train.iters" => cfg.train.iters = parse_u64(key, v)?,
            "train.shuffle_seed" => cfg.train.shuffle_seed = Some(parse_u64(key, v)?),
            "train.loss" => {
                cfg.train.loss = match v {
                    "cross-entropy" => LossCfg::CrossEntropy,
                    "mse-readout" => LossCfg::MseReadout,
                    _ => return Err(Error::Config(format!("unknown train.loss '{v}'"))),
                }
            }
            "ckpt.every" => cfg.ckpt = CkptCfg::Every(parse_u64(key, v)?),
            "ckpt.list" => cfg.ckpt = CkptCfg::List(parse_list_u64(v)?),
            "probe.size" => cfg.probe.size = parse_usize(key, v)?,
            "probe.seed" => cfg.probe.seed = Some(parse_u64(key, v)?),
            "probe.stratified" => cfg.probe.stratified = parse_bool(key, v)?,
            "probe.split" => {
                cfg.probe.split = match v {
                    "train" => ProbeSplit::Train,
                    "test" => ProbeSplit::Test,
                    _ => return Err(Error::Config(format!("unknown probe.split '{v}'"))),
                }
            }
            "readout.rule" => {
                cfg.readout = if v == "true-class" {
                    ReadoutRule::TrueClass
                } else if v == "logit-sum" {
                    ReadoutRule::LogitSum
                } else if let Some(k) = v.strip_prefix("fixed:") {
                    ReadoutRule::FixedClass(parse_usize(key, k)?)
                } else {
                    return Err(Error::Config(format!("unknown readout.rule '{v}'")));
                }
            }
            "measure.taus" => cfg.measure.taus = Some(parse_list_u64(v)?),
            "measure.dts" => cfg.measure.dts = Some(parse_list_u64(v)?),
            "measure.rho" => cfg.measure.rho = parse_f64(key, v)?,
            "measure.window" => cfg.measure.window = parse_usize(key, v)?,
            "measure.chunk" => cfg.measure.chunk = parse_usize(key, v)?,
            "switch.grid" => cfg.switch.grid = Some(parse_list_u64(v)?),
            "switch.horizon" => cfg.switch.horizon = parse_u64(key, v)?,
            "out.dir" => cfg.out_dir = PathBuf::from(v),
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
    }
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Serialization (canonical key order)
// ---------------------------------------------------------------------------

fn join_u64(v: &[u64]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn serialize(cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k} = {v}");
    };

    kv("seed", cfg.seed.to_string());
    if let Some(x) = cfg.init_seed {
        kv("init.seed", x.to_string());
    }
    kv(
        "dataset.kind",
        match cfg.dataset.kind {
            DatasetKind::Blobs => "blobs",
            DatasetKind::Digits => "digits",
            DatasetKind::Idx => "idx",
        }
        .to_string(),
    );
    if let Some(x) = cfg.dataset.seed {
        kv("dataset.seed", x.to_string());
    }
    match cfg.dataset.kind {
        DatasetKind::Blobs => {
            kv("dataset.per_class", cfg.dataset.per_class.to_string());
            kv(
                "dataset.test_per_class",
                cfg.dataset.test_per_class.to_string(),
            );
            kv("dataset.dim", cfg.dataset.dim.to_string());
            kv("dataset.classes", cfg.dataset.classes.to_string());
            kv("dataset.spread", format!("{}", cfg.dataset.spread));
        }
        DatasetKind::Digits => {
            kv("dataset.train_n", cfg.dataset.train_n.to_string());
            kv("dataset.test_n", cfg.dataset.test_n.to_string());
            kv("dataset.side", cfg.dataset.side.to_string());
        }
        DatasetKind::Idx => {
            kv(
                "dataset.train_images",
                cfg.dataset.train_images.display().to_string(),
            );
            kv(
                "dataset.train_labels",
                cfg.dataset.train_labels.display().to_string(),
            );
            kv(
                "dataset.test_images",
                cfg.dataset.test_images.display().to_string(),
            );
            kv(
                "dataset.test_labels",
                cfg.dataset.test_labels.display().to_string(),
            );
            kv("dataset.limit", cfg.dataset.limit.to_string());
            kv("dataset.test_limit", cfg.dataset.test_limit.to_string());
        }
    }
    kv(
        "arch.kind",
        match cfg.arch.kind {
            ArchKind::Mlp => "mlp",
            ArchKind::Lenet => "lenet",
            ArchKind::Linear => "linear",
        }
        .to_string(),
    );
    kv(
        "arch.widths",
        cfg.arch
            .widths
            .iter()
            .map(|w| w.to_string())
            .collect::<Vec<_>>()
            .join(","),
    );
    kv(
        "arch.activation",
        match cfg.arch.activation {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
        .to_string(),
    );
    kv("train.lr", format!("{}", cfg.train.lr));
    kv("train.momentum", format!("{}", cfg.train.momentum));
    kv("train.batch", cfg.train.batch.to_string());
    kv("train.iters", cfg.train.iters.to_string());
    if let Some(x) = cfg.train.shuffle_seed {
        kv("train.shuffle_seed", x.to_string());
    }
    kv(
        "train.loss",
        match cfg.train.loss {
            LossCfg::CrossEntropy => "cross-entropy",
            LossCfg::MseReadout => "mse-readout",
        }
        .to_string(),
    );
    match &cfg.ckpt {
        CkptCfg::Every(k) => kv("ckpt.every", k.to_string()),
        CkptCfg::List(v) => kv("ckpt.list", join_u64(v)),
    }
    kv("probe.size", cfg.probe.size.to_string());
    if let Some(x) = cfg.probe.seed {
        kv("probe.seed", x.to_string());
    }
    kv("probe.stratified", cfg.probe.stratified.to_string());
    kv(
        "probe.split",
        match cfg.probe.split {
            ProbeSplit::Train => "train",
            ProbeSplit::Test => "test",
        }
        .to_string(),
    );
    kv(
        "readout.rule",
        match cfg.readout {
            ReadoutRule::TrueClass => "true-class".to_string(),
            ReadoutRule::FixedClass(k) => format!("fixed:{k}"),
            ReadoutRule::LogitSum => "logit-sum".to_string(),
        },
    );
    if let Some(taus) = &cfg.measure.taus {
        kv("measure.taus", join_u64(taus));
    }
    if let Some(dts) = &cfg.measure.dts {
        kv("measure.dts", join_u64(dts));
    }
    kv("measure.rho", format!("{}", cfg.measure.rho));
    kv("measure.window", cfg.measure.window.to_string());
    kv("measure.chunk", cfg.measure.chunk.to_string());
    if let Some(grid) = &cfg.switch.grid {
        kv("switch.grid", join_u64(grid));
    }
    kv("switch.horizon", cfg.switch.horizon.to_string());
    kv("out.dir", cfg.out_dir.display().to_string());
    s
}

/// First 16 hex characters of the SHA-256 of the serialized config. The
/// output directory is excluded: it locates a run but does not identify the
/// experiment.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    use sha2::{Digest, Sha256};
    let mut identity = cfg.clone();
    identity.out_dir = PathBuf::new();
    let digest = Sha256::digest(serialize(&identity).as_bytes());
    let mut out = String::with_capacity(16);
    for byte in digest.iter().take(8) {
        let _ = write!(out, "{byte:02x}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "
# blob run
seed = 9
dataset.kind = blobs
dataset.per_class = 40   # comment after value
dataset.dim = 8
dataset.classes = 3
dataset.spread = 0.5
arch.kind = mlp
arch.widths = 32,3
arch.activation = tanh
train.lr = 0.1
train.iters = 200
ckpt.every = 20
probe.size = 12
measure.taus = 100,200
measure.dts = 20,40
switch.grid = 0,100,200
switch.horizon = 200
out.dir = /tmp/run
";

    #[test]
    fn parse_serialize_parse_is_identity() {
        let mut cfg = parse(SAMPLE).unwrap();
        cfg.resolve(None).unwrap();
        let text = serialize(&cfg);
        let mut back = parse(&text).unwrap();
        back.resolve(None).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(serialize(&back), text);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(parse("bogus.key = 1").is_err());
    }

    #[test]
    fn order_insensitive() {
        let a = parse("seed = 3\ntrain.lr = 0.2").unwrap();
        let b = parse("train.lr = 0.2\nseed = 3").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn seed_override_rederives_components() {
        let mut a = parse(SAMPLE).unwrap();
        a.resolve(Some(123)).unwrap();
        let mut b = parse(SAMPLE).unwrap();
        b.resolve(Some(456)).unwrap();
        assert_ne!(a.dataset.seed, b.dataset.seed);
        assert_ne!(a.init_seed, b.init_seed);

        // Explicit seeds survive the override.
        let mut c = parse(&format!("{SAMPLE}\nprobe.seed = 7")).unwrap();
        c.resolve(Some(123)).unwrap();
        assert_eq!(c.probe.seed, Some(7));
    }

    #[test]
    fn off_grid_tau_rejected() {
        let mut cfg = parse(SAMPLE).unwrap();
        cfg.measure.taus = Some(vec![110]);
        assert!(matches!(cfg.resolve(None), Err(Error::Config(_))));
    }

    #[test]
    fn switch_grid_beyond_horizon_rejected() {
        let mut cfg = parse(SAMPLE).unwrap();
        cfg.switch.grid = Some(vec![0, 300]);
        assert!(matches!(cfg.resolve(None), Err(Error::Config(_))));
    }

    #[test]
    fn default_switch_grid_follows_horizon() {
        let mut cfg = parse("switch.horizon = 3000").unwrap();
        cfg.resolve(None).unwrap();
        assert_eq!(
            cfg.switch.grid.as_deref(),
            Some(&[0, 500, 1000, 2000, 3000][..])
        );
        let mut zero = parse("switch.horizon = 0\ntrain.iters = 0").unwrap();
        zero.resolve(None).unwrap();
        assert_eq!(zero.switch.grid.as_deref(), Some(&[0][..]));
    }

    #[test]
    fn default_measurement_grids_derived() {
        let mut cfg = parse("train.iters = 400\nckpt.every = 50").unwrap();
        cfg.resolve(None).unwrap();
        assert_eq!(cfg.measure.taus.as_deref(), Some(&[100, 200, 300][..]));
        assert_eq!(cfg.measure.dts.as_deref(), Some(&[50, 100, 200][..]));
    }

    #[test]
    fn degenerate_zero_iteration_config_resolves() {
        let mut cfg = parse("train.iters = 0").unwrap();
        cfg.resolve(None).unwrap();
        assert_eq!(cfg.measure.taus.as_deref(), Some(&[][..]));
        assert_eq!(cfg.measure.dts.as_deref(), Some(&[][..]));
    }

    #[test]
    fn hash_is_stable_and_seed_sensitive() {
        let mut a = parse(SAMPLE).unwrap();
        a.resolve(None).unwrap();
        let mut b = parse(SAMPLE).unwrap();
        b.resolve(None).unwrap();
        assert_eq!(config_hash(&a), config_hash(&b));
        let mut c = parse(SAMPLE).unwrap();
        c.resolve(Some(1000)).unwrap();
        assert_ne!(config_hash(&a), config_hash(&c));
        assert_eq!(config_hash(&a).len(), 16);
    }
}
