//! Experiment configuration file.
//!
//! One TOML file carries the dataset source, node profiles and every grid
//! parameter. Relative paths are resolved against the file's directory.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{load_csv, synth_generate, Dataset, FeatureSchema, SynthSpec};
use crate::error::{Error, Result};
use crate::governance::{load_profiles, NodeProfile};
use crate::partition::SplitConfig;
use crate::weight_learning::OptimizerConfig;

pub const DEFAULT_ALPHAS: [f64; 7] = [0.05, 0.10, 0.20, 0.30, 0.50, 0.70, 1.00];
pub const DEFAULT_REPS: usize = 5;
pub const DEFAULT_SEED: u64 = 42;

/// Keys that may be overridden from the command line.
pub const OVERRIDE_KEYS: [&str; 5] = ["seed", "alphas", "reps", "lambda", "delta"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Proposal {
    /// Centralized model on the pooled training split.
    C,
    /// Size-proportional weights.
    B,
    /// Inverse label-entropy weights.
    E,
    /// Learned weights with the governance prior.
    A,
}

impl Proposal {
    /// Record order within a cell.
    pub const ALL: [Proposal; 4] = [Proposal::C, Proposal::B, Proposal::E, Proposal::A];

    pub fn as_str(self) -> &'static str {
        match self {
            Proposal::C => "C",
            Proposal::B => "B",
            Proposal::E => "E",
            Proposal::A => "A",
        }
    }

    pub fn uses_weights(self) -> bool {
        self != Proposal::C
    }
}

impl fmt::Display for Proposal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Proposal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "C" | "c" => Ok(Proposal::C),
            "B" | "b" => Ok(Proposal::B),
            "E" | "e" => Ok(Proposal::E),
            "A" | "a" => Ok(Proposal::A),
            other => Err(Error::Config(format!("unknown proposal `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic(SynthSpec),
    Csv {
        #[serde(default)]
        name: Option<String>,
        path: PathBuf,
        schema: PathBuf,
    },
}

impl DatasetSource {
    pub fn name(&self) -> String {
        match self {
            DatasetSource::Synthetic(spec) => spec.name.clone(),
            DatasetSource::Csv { name: Some(n), .. } => n.clone(),
            DatasetSource::Csv { path, .. } => path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "dataset".into()),
        }
    }

    /// Per-node degradation levels; all zero for CSV sources.
    pub fn node_noise(&self, k: usize) -> Vec<f64> {
        match self {
            DatasetSource::Synthetic(spec) if !spec.node_noise.is_empty() => spec.node_noise.clone(),
            _ => vec![0.0; k],
        }
    }

    /// Materializes the full dataset. Synthetic data depends on `seed` only.
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSource::Synthetic(spec) => synth_generate(spec, seed),
            DatasetSource::Csv { path, schema, .. } => {
                let schema = FeatureSchema::load(schema)?;
                Ok(load_csv(path, &schema, None)?.0)
            }
        }
    }

    fn resolve(&mut self, base: &Path) {
        if let DatasetSource::Csv { path, schema, .. } = self {
            *path = resolve(base, path);
            *schema = resolve(base, schema);
        }
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl SplitFractions {
    pub fn with_seed(&self, seed: u64) -> Result<SplitConfig> {
        SplitConfig::new(self.train, self.val, self.test, seed)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOptimizer {
    lambda: Option<f64>,
    delta: Option<f64>,
    max_iters: Option<usize>,
    n_starts: Option<usize>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    alphas: Option<Vec<f64>>,
    reps: Option<usize>,
    proposals: Option<Vec<String>>,
    #[serde(default)]
    record_timing: bool,
    dataset: DatasetSource,
    split: Option<SplitFractions>,
    #[serde(default)]
    optimizer: RawOptimizer,
    profiles: Option<PathBuf>,
    #[serde(default)]
    node: Vec<NodeProfile>,
}

/// A fully resolved experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub alphas: Vec<f64>,
    pub reps: usize,
    pub proposals: Vec<Proposal>,
    /// Fill the `runtime_ms` column. Off by default so that results files
    /// are byte-reproducible.
    pub record_timing: bool,
    pub dataset: DatasetSource,
    pub split: SplitFractions,
    pub optimizer: OptimizerConfig,
    #[serde(rename = "node")]
    pub profiles: Vec<NodeProfile>,
    /// Parameters set explicitly (in the file or by override) rather than
    /// left at their defaults.
    #[serde(default)]
    pub explicit: BTreeSet<String>,
}

impl ExperimentConfig {
    /// Defaults for every grid parameter around a dataset and profiles.
    pub fn new(dataset: DatasetSource, profiles: Vec<NodeProfile>) -> Self {
        Self {
            seed: DEFAULT_SEED,
            alphas: DEFAULT_ALPHAS.to_vec(),
            reps: DEFAULT_REPS,
            proposals: Proposal::ALL.to_vec(),
            record_timing: false,
            dataset,
            split: SplitFractions::default(),
            optimizer: OptimizerConfig {
                seed: DEFAULT_SEED,
                ..OptimizerConfig::default()
            },
            profiles,
            explicit: BTreeSet::new(),
        }
    }

    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut profiles = raw.node;
        if let Some(p) = &raw.profiles {
            if !profiles.is_empty() {
                return Err(Error::Config("give either `profiles` or [[node]] entries, not both".into()));
            }
            profiles = load_profiles(resolve(base, p))?;
        }
        let mut dataset = raw.dataset;
        dataset.resolve(base);

        let mut config = ExperimentConfig::new(dataset, profiles);
        config.record_timing = raw.record_timing;
        let mut explicit = BTreeSet::new();
        let mut mark = |key: &str, set: bool| {
            if set {
                explicit.insert(key.to_string());
            }
        };
        mark("seed", raw.seed.is_some());
        mark("alphas", raw.alphas.is_some());
        mark("reps", raw.reps.is_some());
        mark("split", raw.split.is_some());
        mark("lambda", raw.optimizer.lambda.is_some());
        mark("delta", raw.optimizer.delta.is_some());
        mark("max_iters", raw.optimizer.max_iters.is_some());
        mark("n_starts", raw.optimizer.n_starts.is_some());
        config.explicit = explicit;

        if let Some(seed) = raw.seed {
            config.seed = seed;
            config.optimizer.seed = seed;
        }
        if let Some(a) = raw.alphas {
            config.alphas = a;
        }
        if let Some(r) = raw.reps {
            config.reps = r;
        }
        if let Some(p) = raw.proposals {
            let mut set = p.iter().map(|s| s.parse()).collect::<Result<Vec<Proposal>>>()?;
            set.sort();
            set.dedup();
            config.proposals = set;
        }
        if let Some(s) = raw.split {
            config.split = s;
        }
        let o = raw.optimizer;
        config.optimizer.lambda = o.lambda.unwrap_or(config.optimizer.lambda);
        config.optimizer.floor_delta = o.delta.unwrap_or(config.optimizer.floor_delta);
        config.optimizer.max_iters = o.max_iters.unwrap_or(config.optimizer.max_iters);
        config.optimizer.n_starts = o.n_starts.unwrap_or(config.optimizer.n_starts);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    /// Applies a `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("`{key}` expects {what}, got `{value}`"));
        match key {
            "seed" => {
                self.seed = value.trim().parse().map_err(|_| bad("an unsigned integer"))?;
                self.optimizer.seed = self.seed;
            }
            "alphas" => {
                self.alphas = value
                    .trim_matches(|c| c == '[' || c == ']')
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad("a comma-separated list of numbers"))?;
            }
            "reps" => self.reps = value.trim().parse().map_err(|_| bad("a positive integer"))?,
            "lambda" => self.optimizer.lambda = value.trim().parse().map_err(|_| bad("a number"))?,
            "delta" => self.optimizer.floor_delta = value.trim().parse().map_err(|_| bad("a number"))?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown override key `{key}` (allowed: {})",
                    OVERRIDE_KEYS.join(", ")
                )))
            }
        }
        self.explicit.insert(key.to_string());
        self.validate()
    }

    pub fn k(&self) -> usize {
        self.profiles.len()
    }

    pub fn dataset_name(&self) -> String {
        self.dataset.name()
    }

    pub fn n_cells(&self) -> usize {
        self.alphas.len() * self.reps
    }

    pub fn validate(&self) -> Result<()> {
        if self.profiles.len() < 2 {
            return Err(Error::Config(format!(
                "at least two node profiles are required, got {}",
                self.profiles.len()
            )));
        }
        if self.alphas.is_empty() {
            return Err(Error::Config("alphas must not be empty".into()));
        }
        if self.alphas.iter().any(|&a| !(a.is_finite() && a > 0.0)) {
            return Err(Error::Config("alphas must be positive and finite".into()));
        }
        if self.alphas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("alphas must be strictly increasing".into()));
        }
        if self.reps == 0 {
            return Err(Error::Config("reps must be at least 1".into()));
        }
        if self.proposals.is_empty() {
            return Err(Error::Config("at least one proposal is required".into()));
        }
        self.split.with_seed(self.seed)?;
        self.optimizer.validate(self.k())?;
        if let DatasetSource::Synthetic(spec) = &self.dataset {
            spec.validate()?;
            if !spec.node_noise.is_empty() && spec.node_noise.len() != self.k() {
                return Err(Error::Config(format!(
                    "node_noise has {} entries for {} nodes",
                    spec.node_noise.len(),
                    self.k()
                )));
            }
        }
        Ok(())
    }

    /// Serialized form, written next to results so a run can be verified
    /// and repeated from its output directory alone.
    pub fn to_echo_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_echo_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }
}
