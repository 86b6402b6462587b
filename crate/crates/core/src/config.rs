//! Experiment configuration files (TOML).
//!
//! ```toml
//! version = 1
//! seed = 42
//! out = "out"
//! trials = 3
//! pairs = [[4, 8]]            # (k, m)
//! sketches = ["sparse_random", "learned"]
//!
//! [train]
//! lr = 20.0
//! iterations = 500
//!
//! [[datasets]]
//! label = "spiked"
//! kind = "spiked"
//! n = 64
//! d = 48
//! count_train = 50
//! count_test = 20
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalbench::{DatasetKind, DatasetSpec, SketchType};
use crate::rng::derive_seed;
use crate::theory::RobustnessParams;
use crate::trainer::TrainConfig;

pub const CONFIG_VERSION: u32 = 1;

const STREAM_DATA: u64 = 0x6461_7461;
const STREAM_TRAIN: u64 = 0x7472_6e67;
const STREAM_VERIFY: u64 = 0x7672_6679;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub dominance_trials: usize,
    pub gradient_instances: usize,
    pub stable_rank_profiles: usize,
    pub stable_rank_samples: usize,
    pub generalization_ns: Vec<usize>,
    pub generalization_splits: usize,
    /// Test hook: replaces the concatenated sketch by its second block so
    /// the dominance check fails.
    pub inject_broken_concat: bool,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            dominance_trials: 200,
            gradient_instances: 20,
            stable_rank_profiles: 30,
            stable_rank_samples: 100_000,
            generalization_ns: vec![25, 100, 400],
            generalization_splits: 20,
            inject_broken_concat: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub out: PathBuf,
    pub trials: usize,
    /// `(k, m)` pairs.
    pub pairs: Vec<[usize; 2]>,
    pub sketches: Vec<SketchType>,
    /// `k` and `seed` are set per run.
    pub train: TrainConfig,
    pub datasets: Vec<DatasetSpec>,
    pub verify: VerifyConfig,
    pub theory: RobustnessParams,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            seed: 42,
            out: PathBuf::from("out"),
            trials: 3,
            pairs: vec![[4, 8]],
            sketches: SketchType::ALL.to_vec(),
            train: TrainConfig {
                lr: 20.0,
                iterations: 500,
                learned_rows: 4,
                checkpoint_every: 50,
                ..TrainConfig::default()
            },
            datasets: vec![DatasetSpec::spiked("spiked", 64, 48, 50, 20, 1)],
            verify: VerifyConfig::default(),
            theory: RobustnessParams::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path)?)?;
        // Relative dataset paths are resolved against the config's directory.
        let base = path.parent().unwrap_or(Path::new("."));
        for spec in &mut cfg.datasets {
            if let Some(p) = &spec.path {
                if p.is_relative() {
                    spec.path = Some(base.join(p));
                }
            }
        }
        cfg.check_paths()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        for [k, m] in &self.pairs {
            if *k == 0 || *m == 0 {
                return Err(Error::Config(format!(
                    "(k, m) = ({k}, {m}): both must be >= 1"
                )));
            }
        }
        let mut labels: Vec<&str> = self.datasets.iter().map(|d| d.label.as_str()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("dataset labels must be unique".into()));
        }
        if labels
            .iter()
            .any(|l| l.is_empty() || l.contains(['/', '\\']))
        {
            return Err(Error::Config(
                "dataset labels must be nonempty file-name-safe strings".into(),
            ));
        }
        for spec in &self.datasets {
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        self.theory
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }

    fn check_paths(&self) -> Result<()> {
        for spec in &self.datasets {
            if spec.kind == DatasetKind::Files {
                let p = spec.path.as_ref().expect("validated");
                if !p.exists() {
                    return Err(Error::MissingFile(p.clone()));
                }
            }
        }
        Ok(())
    }

    /// The dataset spec with its seed derived from the master seed.
    pub fn seeded_dataset(&self, spec: &DatasetSpec) -> DatasetSpec {
        DatasetSpec {
            seed: derive_seed(derive_seed(self.seed, STREAM_DATA), spec.seed),
            ..spec.clone()
        }
    }

    /// Training config for rank `k`, seeded from the master seed.
    pub fn train_config(&self, k: usize) -> TrainConfig {
        TrainConfig {
            k,
            seed: derive_seed(self.seed, STREAM_TRAIN),
            ..self.train.clone()
        }
    }

    pub fn verify_seed(&self) -> u64 {
        derive_seed(self.seed, STREAM_VERIFY)
    }
}
