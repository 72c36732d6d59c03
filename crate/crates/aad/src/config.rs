//! Run configuration, read from flat `key = value` TOML files.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error(transparent)]
    Toml(#[from] toml::de::Error),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error("override {0:?} is not of the form key=value")]
    BadOverride(String),
    #[error("unknown {kind} {value:?}")]
    Unknown { kind: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Batch,
    Stream,
    Glad,
}

/// Named experimental condition; fixes the learner, its strategy and the
/// prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    /// Uniform weights, no learning.
    Unsupervised,
    Bal,
    BalNopriorUnif,
    BalNopriorRand,
    /// Select-Top with batches of `batch_size`.
    BalT,
    /// Select-Diverse with batches of `batch_size`.
    BalD,
    /// Random pick among the top `candidates`.
    BalR,
    SalKl,
    #[serde(rename = "sal-20pct")]
    Sal20Pct,
    SalNoreplace,
    /// KL replacement with learning disabled.
    SalUnsupervised,
    Glad,
    /// Unweighted LODA ranking.
    Loda,
    /// Batch weight learning on LODA member scores.
    LodaGlobal,
}

impl Arm {
    pub const ALL: [Arm; 14] = [
        Arm::Unsupervised,
        Arm::Bal,
        Arm::BalNopriorUnif,
        Arm::BalNopriorRand,
        Arm::BalT,
        Arm::BalD,
        Arm::BalR,
        Arm::SalKl,
        Arm::Sal20Pct,
        Arm::SalNoreplace,
        Arm::SalUnsupervised,
        Arm::Glad,
        Arm::Loda,
        Arm::LodaGlobal,
    ];

    pub fn mode(self) -> Mode {
        match self {
            Arm::SalKl | Arm::Sal20Pct | Arm::SalNoreplace | Arm::SalUnsupervised => Mode::Stream,
            Arm::Glad | Arm::Loda | Arm::LodaGlobal => Mode::Glad,
            _ => Mode::Batch,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Arm::Unsupervised => "unsupervised",
            Arm::Bal => "bal",
            Arm::BalNopriorUnif => "bal-noprior-unif",
            Arm::BalNopriorRand => "bal-noprior-rand",
            Arm::BalT => "bal-t",
            Arm::BalD => "bal-d",
            Arm::BalR => "bal-r",
            Arm::SalKl => "sal-kl",
            Arm::Sal20Pct => "sal-20pct",
            Arm::SalNoreplace => "sal-noreplace",
            Arm::SalUnsupervised => "sal-unsupervised",
            Arm::Glad => "glad",
            Arm::Loda => "loda",
            Arm::LodaGlobal => "loda-global",
        }
    }
}

impl FromStr for Arm {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Arm::ALL.into_iter().find(|a| a.as_str() == s).ok_or_else(|| ConfigError::Unknown { kind: "arm", value: s.into() })
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Built-in generators selectable as `dataset = "synthetic:<name>"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Synthetic {
    Benchmark,
    Cluster,
    Toy,
    /// Stationary stream.
    Stream,
    /// +3 sd jump at window 10.
    StreamShift,
    /// +6 sd reached linearly over windows 10 to 15.
    StreamGradual,
}

impl Synthetic {
    const NAMES: [(&'static str, Synthetic); 6] = [
        ("benchmark", Synthetic::Benchmark),
        ("cluster", Synthetic::Cluster),
        ("toy", Synthetic::Toy),
        ("stream", Synthetic::Stream),
        ("stream-shift", Synthetic::StreamShift),
        ("stream-gradual", Synthetic::StreamGradual),
    ];
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DatasetSource {
    Synthetic(Synthetic),
    Csv(PathBuf),
}

impl FromStr for DatasetSource {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.strip_prefix("synthetic:") {
            Some(name) => Synthetic::NAMES
                .iter()
                .find(|(n, _)| *n == name)
                .map(|&(_, k)| DatasetSource::Synthetic(k))
                .ok_or_else(|| ConfigError::Unknown { kind: "synthetic dataset", value: name.into() }),
            None => Ok(DatasetSource::Csv(PathBuf::from(s))),
        }
    }
}

/// Budget and window presets for the public benchmark datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// B = 300 for the batch experiments.
    Batch,
    Covtype,
    KddCup99,
    Mammography,
    Shuttle,
    Electricity,
    Weather,
}

impl Preset {
    /// `(budget, window)`; the batch preset leaves the window alone.
    pub fn budget_and_window(self) -> (usize, Option<usize>) {
        match self {
            Preset::Batch => (300, None),
            Preset::Covtype | Preset::KddCup99 => (3000, Some(4096)),
            Preset::Mammography | Preset::Shuttle => (1500, Some(4096)),
            Preset::Electricity => (1500, Some(1024)),
            Preset::Weather => (1000, Some(1024)),
        }
    }
}

/// Everything that determines a run apart from the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    /// `synthetic:<name>` or a CSV path, relative to the config file.
    pub dataset: String,
    pub label_column: String,
    pub class_column: Option<String>,
    /// Subsample anomalies (seeded) to at most this fraction of the data.
    pub downsample: Option<f64>,
    pub arm: Arm,
    pub preset: Option<Preset>,
    pub budget: usize,
    pub queries_per_window: usize,
    pub window: usize,
    pub tau: f64,
    pub alpha_kl: f64,
    pub kl_reps: usize,
    pub delta: usize,
    /// GLAD prior relevance.
    pub prior_b: f64,
    pub glad_lambda: f64,
    pub trees: usize,
    pub subsample: usize,
    pub members: usize,
    pub batch_size: usize,
    pub candidates: usize,
    pub precision_threshold: f64,
    pub seeds: Vec<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            name: "run".into(),
            dataset: "synthetic:benchmark".into(),
            label_column: "label".into(),
            class_column: None,
            downsample: None,
            arm: Arm::Bal,
            preset: None,
            budget: 100,
            queries_per_window: 20,
            window: 512,
            tau: 0.03,
            alpha_kl: 0.05,
            kl_reps: 10,
            delta: 5,
            prior_b: 0.5,
            glad_lambda: 1.0,
            trees: 100,
            subsample: 256,
            members: 15,
            batch_size: 3,
            candidates: 10,
            precision_threshold: 0.4,
            seeds: vec![0],
        }
    }
}

/// Largest LODA ensemble the GLAD arms accept.
pub const MAX_MEMBERS: usize = 15;

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key, reason: reason.into() }
}

impl RunConfig {
    /// Parses a flat TOML table. Keys absent from the file keep their
    /// defaults, or the preset's values when `preset` is given.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse()?;
        Self::from_table(table)
    }

    fn from_table(table: toml::Table) -> Result<Self, ConfigError> {
        let mut base = RunConfig::default();
        if let Some(p) = table.get("preset") {
            let preset: Preset = p.clone().try_into()?;
            base.apply_preset(preset);
        }
        let mut merged = toml::Table::try_from(&base).expect("config serializes");
        merged.extend(table);
        let config: RunConfig = merged.try_into()?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        let mut config = Self::from_toml_str(&text)?;
        if let (Ok(DatasetSource::Csv(p)), Some(dir)) = (config.source(), path.parent()) {
            if p.is_relative() {
                config.dataset = dir.join(p).display().to_string();
            }
        }
        Ok(config)
    }

    pub fn apply_preset(&mut self, preset: Preset) {
        let (budget, window) = preset.budget_and_window();
        self.preset = Some(preset);
        self.budget = budget;
        if let Some(k) = window {
            self.window = k;
        }
    }

    /// Applies `key=value` overrides; values use TOML syntax, with bare
    /// words taken as strings.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self, ConfigError> {
        let mut table = toml::Table::try_from(self).expect("config serializes");
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::BadOverride(o.into()))?;
            let (k, v) = (k.trim(), v.trim());
            let value = format!("x = {v}")
                .parse::<toml::Table>()
                .ok()
                .and_then(|mut t| t.remove("x"))
                .unwrap_or_else(|| toml::Value::String(v.into()));
            if k == "preset" {
                let preset: Preset = value.clone().try_into()?;
                let mut c: RunConfig = table.clone().try_into()?;
                c.apply_preset(preset);
                table = toml::Table::try_from(&c).expect("config serializes");
            }
            table.insert(k.into(), value);
        }
        let config: RunConfig = table.try_into()?;
        config.validate()?;
        Ok(config)
    }

    pub fn mode(&self) -> Mode {
        self.arm.mode()
    }

    pub fn source(&self) -> Result<DatasetSource, ConfigError> {
        self.dataset.parse()
    }

    // Negated comparisons so NaN is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.source()?;
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(invalid("name", "must be a non-empty path component"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(invalid("tau", "must lie in (0, 1)"));
        }
        if !(self.alpha_kl > 0.0 && self.alpha_kl < 1.0) {
            return Err(invalid("alpha_kl", "must lie in (0, 1)"));
        }
        if !(self.prior_b > 0.0 && self.prior_b < 1.0) {
            return Err(invalid("prior_b", "must lie in (0, 1)"));
        }
        if !(self.glad_lambda >= 0.0) {
            return Err(invalid("glad_lambda", "must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.precision_threshold) {
            return Err(invalid("precision_threshold", "must lie in [0, 1]"));
        }
        if let Some(f) = self.downsample {
            if !(f > 0.0 && f <= 1.0) {
                return Err(invalid("downsample", "must lie in (0, 1]"));
            }
        }
        let positive: [(&'static str, usize); 6] = [
            ("window", self.window),
            ("queries_per_window", self.queries_per_window),
            ("trees", self.trees),
            ("delta", self.delta),
            ("batch_size", self.batch_size),
            ("kl_reps", self.kl_reps),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(invalid(key, "must be at least 1"));
            }
        }
        if self.subsample < 2 {
            return Err(invalid("subsample", "must be at least 2"));
        }
        if self.members == 0 || self.members > MAX_MEMBERS {
            return Err(invalid("members", format!("must lie in 1..={MAX_MEMBERS}")));
        }
        if self.candidates < self.batch_size {
            return Err(invalid("candidates", "must be at least batch_size"));
        }
        Ok(())
    }
}
