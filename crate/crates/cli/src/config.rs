//! Experiment configuration: a plain-text `key = value` file plus
//! command-line overrides. Lines starting with `#` are comments; unknown
//! keys are rejected. Every run writes its resolved configuration next to
//! its outputs so results stay attributable.
//!
//! Seed derivation: the master `seed` feeds fixed offsets so each random
//! consumer gets an independent, documented stream:
//! `+0` synthetic data (train), `+1` train subsample, `+2` test subsample,
//! `+3` network init, `+4` sensitivity probes, `+5` SGD batching,
//! `+6` Rademacher draws, `+7` synthetic data (test).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use tsens_core::error::{Error, Result};
use tsens_core::network::HE_SCALE;
use tsens_core::sensitivity::SensMethod;
use tsens_core::training::Optimizer;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    Blobs,
    Mnist,
    Cifar10,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormalizeKind {
    None,
    PerPixel01,
    GlobalUnitSupNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SensKind {
    Auto,
    Exact,
    Layerwise,
    Probes,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Gd,
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub data_root: PathBuf,
    pub blobs_n_per_class: usize,
    pub blobs_dim: usize,
    pub blobs_separation: f64,
    /// 0 keeps the whole split.
    pub train_subsample: usize,
    pub test_subsample: usize,
    pub stratified: bool,
    pub normalize: NormalizeKind,

    pub dims: Vec<usize>,
    pub biasless: bool,
    pub init_scale: f64,

    pub optimizer: OptimizerKind,
    pub eta: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,

    pub record_every: usize,
    pub classes: Vec<usize>,
    pub track_cts: bool,
    pub sens_method: SensKind,
    pub sens_probes: usize,
    pub delta: f64,
    /// User-supplied trajectory-radius report threshold; 0 disables the note.
    pub epsilon: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub save_record: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetKind::Blobs,
            data_root: default_data_root(),
            blobs_n_per_class: 250,
            blobs_dim: 8,
            blobs_separation: 4.0,
            train_subsample: 0,
            test_subsample: 0,
            stratified: true,
            normalize: NormalizeKind::None,
            dims: vec![8, 64, 1],
            biasless: true,
            init_scale: HE_SCALE,
            optimizer: OptimizerKind::Gd,
            eta: 0.02,
            steps: 200,
            batch_size: 32,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            record_every: 10,
            classes: vec![0],
            track_cts: true,
            sens_method: SensKind::Auto,
            sens_probes: 64,
            delta: 0.1,
            epsilon: 0.0,
            seed: 42,
            out_dir: PathBuf::from("out"),
            save_record: true,
        }
    }
}

fn default_data_root() -> PathBuf {
    std::env::var("TSENS_DATA_ROOT")
        .map(PathBuf::from)
        .unwrap_or_else(|_| PathBuf::from("data"))
}

// seed offsets, see module docs
pub const SEED_BLOBS_TRAIN: u64 = 0;
pub const SEED_SUBSAMPLE_TRAIN: u64 = 1;
pub const SEED_SUBSAMPLE_TEST: u64 = 2;
pub const SEED_INIT: u64 = 3;
pub const SEED_PROBES: u64 = 4;
pub const SEED_SGD: u64 = 5;
pub const SEED_RADEMACHER: u64 = 6;
pub const SEED_BLOBS_TEST: u64 = 7;

impl ExperimentConfig {
    pub fn seed_for(&self, offset: u64) -> u64 {
        self.seed.wrapping_add(offset)
    }

    pub fn optimizer(&self) -> Optimizer {
        match self.optimizer {
            OptimizerKind::Gd => Optimizer::Gd,
            OptimizerKind::Sgd => Optimizer::Sgd {
                batch: self.batch_size,
                seed: self.seed_for(SEED_SGD),
            },
            OptimizerKind::Adam => Optimizer::Adam {
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            },
        }
    }

    /// Sensitivity method for a network with parameter count `p` and input
    /// width `n_in` (the auto rule switches to probes above the exact-matrix
    /// entry budget).
    pub fn sens_method(&self, p: usize, n_in: usize) -> SensMethod {
        let probes = SensMethod::Probes {
            m: self.sens_probes,
            seed: self.seed_for(SEED_PROBES),
        };
        match self.sens_method {
            SensKind::Exact => SensMethod::Exact,
            SensKind::Layerwise => SensMethod::Layerwise,
            SensKind::Probes => probes,
            SensKind::Auto => {
                if p.saturating_mul(n_in) <= tsens_core::sensitivity::EXACT_ENTRY_BUDGET {
                    SensMethod::Layerwise
                } else {
                    probes
                }
            }
        }
    }

    pub fn load_file(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidArgument(format!("cannot read config {path:?}: {e}")))?;
        let mut cfg = ExperimentConfig::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidArgument(format!("config line {}: expected key = value", lineno + 1))
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Applies one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn bad(key: &str, value: &str, err: impl std::fmt::Display) -> Error {
            Error::InvalidArgument(format!("config key {key}: bad value {value:?} ({err})"))
        }
        macro_rules! parse {
            ($t:ty) => {
                value.parse::<$t>().map_err(|e| bad(key, value, e))?
            };
        }
        match key {
            "dataset" => {
                self.dataset = match value {
                    "blobs" => DatasetKind::Blobs,
                    "mnist" => DatasetKind::Mnist,
                    "cifar10" => DatasetKind::Cifar10,
                    _ => return Err(bad(key, value, "expected blobs|mnist|cifar10")),
                }
            }
            "data_root" => self.data_root = PathBuf::from(value),
            "blobs_n_per_class" => self.blobs_n_per_class = parse!(usize),
            "blobs_dim" => self.blobs_dim = parse!(usize),
            "blobs_separation" => self.blobs_separation = parse!(f64),
            "train_subsample" => self.train_subsample = parse!(usize),
            "test_subsample" => self.test_subsample = parse!(usize),
            "stratified" => self.stratified = parse!(bool),
            "normalize" => {
                self.normalize = match value {
                    "none" => NormalizeKind::None,
                    "per-pixel-01" => NormalizeKind::PerPixel01,
                    "global-unit-sup-norm" => NormalizeKind::GlobalUnitSupNorm,
                    _ => {
                        return Err(bad(
                            key,
                            value,
                            "expected none|per-pixel-01|global-unit-sup-norm",
                        ))
                    }
                }
            }
            "dims" => {
                self.dims = value
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| bad(key, value, e))?;
            }
            "biasless" => self.biasless = parse!(bool),
            "init_scale" => self.init_scale = parse!(f64),
            "optimizer" => {
                self.optimizer = match value {
                    "gd" => OptimizerKind::Gd,
                    "sgd" => OptimizerKind::Sgd,
                    "adam" => OptimizerKind::Adam,
                    _ => return Err(bad(key, value, "expected gd|sgd|adam")),
                }
            }
            "eta" => self.eta = parse!(f64),
            "steps" => self.steps = parse!(usize),
            "batch_size" => self.batch_size = parse!(usize),
            "adam_beta1" => self.adam_beta1 = parse!(f64),
            "adam_beta2" => self.adam_beta2 = parse!(f64),
            "adam_eps" => self.adam_eps = parse!(f64),
            "record_every" => self.record_every = parse!(usize),
            "classes" => {
                self.classes = value
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| bad(key, value, e))?;
            }
            "track_cts" => self.track_cts = parse!(bool),
            "sens_method" => {
                self.sens_method = match value {
                    "auto" => SensKind::Auto,
                    "exact" => SensKind::Exact,
                    "layerwise" => SensKind::Layerwise,
                    "probes" => SensKind::Probes,
                    _ => return Err(bad(key, value, "expected auto|exact|layerwise|probes")),
                }
            }
            "sens_probes" => self.sens_probes = parse!(usize),
            "delta" => self.delta = parse!(f64),
            "epsilon" => self.epsilon = parse!(f64),
            "seed" => self.seed = parse!(u64),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "save_record" => self.save_record = parse!(bool),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown config key: {key}"
                )))
            }
        }
        Ok(())
    }

    /// Cheap consistency checks plus existence of referenced files.
    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 || self.dims.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(
                "dims must list at least two positive widths".into(),
            ));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidArgument("delta must lie in (0, 1)".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidArgument("record_every must be >= 1".into()));
        }
        if self.classes.is_empty() {
            return Err(Error::InvalidArgument("classes must not be empty".into()));
        }
        if let Some(&c) = self.classes.iter().find(|&&c| c >= *self.dims.last().unwrap()) {
            return Err(Error::InvalidArgument(format!(
                "tracked class {c} exceeds the network's output width"
            )));
        }
        for p in self.dataset_paths() {
            if !p.exists() {
                return Err(Error::InvalidArgument(format!(
                    "dataset file not found: {}",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    pub fn dataset_paths(&self) -> Vec<PathBuf> {
        match self.dataset {
            DatasetKind::Blobs => Vec::new(),
            DatasetKind::Mnist => {
                let d = self.data_root.join("mnist");
                vec![
                    d.join("train-images-idx3-ubyte"),
                    d.join("train-labels-idx1-ubyte"),
                    d.join("t10k-images-idx3-ubyte"),
                    d.join("t10k-labels-idx1-ubyte"),
                ]
            }
            DatasetKind::Cifar10 => {
                let d = self.data_root.join("cifar-10-batches-bin");
                let mut v: Vec<PathBuf> = (1..=5)
                    .map(|i| d.join(format!("data_batch_{i}.bin")))
                    .collect();
                v.push(d.join("test_batch.bin"));
                v
            }
        }
    }

    /// Deterministic resolved form, reparseable by [`ExperimentConfig::apply_text`].
    pub fn resolved_text(&self) -> String {
        let mut kv: Vec<(String, String)> = Vec::new();
        let dataset = match self.dataset {
            DatasetKind::Blobs => "blobs",
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
        };
        kv.push(("dataset".into(), dataset.into()));
        kv.push(("data_root".into(), self.data_root.display().to_string()));
        kv.push(("blobs_n_per_class".into(), self.blobs_n_per_class.to_string()));
        kv.push(("blobs_dim".into(), self.blobs_dim.to_string()));
        kv.push(("blobs_separation".into(), format!("{}", self.blobs_separation)));
        kv.push(("train_subsample".into(), self.train_subsample.to_string()));
        kv.push(("test_subsample".into(), self.test_subsample.to_string()));
        kv.push(("stratified".into(), self.stratified.to_string()));
        let normalize = match self.normalize {
            NormalizeKind::None => "none",
            NormalizeKind::PerPixel01 => "per-pixel-01",
            NormalizeKind::GlobalUnitSupNorm => "global-unit-sup-norm",
        };
        kv.push(("normalize".into(), normalize.into()));
        kv.push((
            "dims".into(),
            self.dims
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(","),
        ));
        kv.push(("biasless".into(), self.biasless.to_string()));
        kv.push(("init_scale".into(), format!("{}", self.init_scale)));
        let optimizer = match self.optimizer {
            OptimizerKind::Gd => "gd",
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        };
        kv.push(("optimizer".into(), optimizer.into()));
        kv.push(("eta".into(), format!("{}", self.eta)));
        kv.push(("steps".into(), self.steps.to_string()));
        kv.push(("batch_size".into(), self.batch_size.to_string()));
        kv.push(("adam_beta1".into(), format!("{}", self.adam_beta1)));
        kv.push(("adam_beta2".into(), format!("{}", self.adam_beta2)));
        kv.push(("adam_eps".into(), format!("{}", self.adam_eps)));
        kv.push(("record_every".into(), self.record_every.to_string()));
        kv.push((
            "classes".into(),
            self.classes
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(","),
        ));
        kv.push(("track_cts".into(), self.track_cts.to_string()));
        let sens = match self.sens_method {
            SensKind::Auto => "auto",
            SensKind::Exact => "exact",
            SensKind::Layerwise => "layerwise",
            SensKind::Probes => "probes",
        };
        kv.push(("sens_method".into(), sens.into()));
        kv.push(("sens_probes".into(), self.sens_probes.to_string()));
        kv.push(("delta".into(), format!("{}", self.delta)));
        kv.push(("epsilon".into(), format!("{}", self.epsilon)));
        kv.push(("seed".into(), self.seed.to_string()));
        kv.push(("out_dir".into(), self.out_dir.display().to_string()));
        kv.push(("save_record".into(), self.save_record.to_string()));

        let map: BTreeMap<String, String> = kv.into_iter().collect();
        let mut out = String::from("# resolved run configuration\n");
        for (k, v) in map {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }
}
