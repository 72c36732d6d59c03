//! Experiment runs. Each seed gets its own dataset draw (for synthetic
//! sources), model and learner; results land in
//! `<out>/<name>/<arm>/<seed>/`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use aad_core::active::HistoryRecord;
use aad_core::data::Dataset;
use aad_core::glad::PrimeStatus;
use aad_core::iforest::{EnsembleModel, ForestParams};
use aad_core::math::derive_seed;
use aad_core::stream::DriftReport;
use aad_core::synth::{benchmark_dataset, cluster_dataset, stream_dataset, toy_dataset, BenchmarkSpec, StreamSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Arm, ConfigError, DatasetSource, RunConfig, Synthetic};
use crate::csv_io::{load_csv, with_default_names, CsvError, CsvOptions, LoadedCsv};
use crate::engine::Engine;
use crate::metrics::{angle_histogram, class_diversity_series, discovery_curve, AngleHistogram, DiversitySeries, MetricsError};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error(transparent)]
    Core(#[from] aad_core::Error),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io { path: path.to_path_buf(), source }
}

/// Package version, plus the git revision when the build could read it.
pub fn code_version() -> String {
    match option_env!("AAD_GIT_REVISION") {
        Some(rev) if !rev.is_empty() => format!("{}+{rev}", env!("CARGO_PKG_VERSION")),
        _ => env!("CARGO_PKG_VERSION").to_string(),
    }
}

/// Points at the window in which the shifted streams change.
pub const SHIFT_WINDOW: usize = 10;

pub fn synthetic_dataset(kind: Synthetic, seed: u64) -> aad_core::Result<Dataset> {
    match kind {
        Synthetic::Benchmark => benchmark_dataset(&BenchmarkSpec::default(), seed),
        Synthetic::Cluster => cluster_dataset(2000, 2, 0.02, seed),
        Synthetic::Toy => toy_dataset(seed),
        Synthetic::Stream => stream_dataset(&StreamSpec::default(), seed),
        Synthetic::StreamShift => {
            stream_dataset(&StreamSpec { shift_from: Some(SHIFT_WINDOW), shift: 3.0, ramp: 1, ..StreamSpec::default() }, seed)
        }
        Synthetic::StreamGradual => {
            stream_dataset(&StreamSpec { shift_from: Some(SHIFT_WINDOW), shift: 6.0, ramp: 6, ..StreamSpec::default() }, seed)
        }
    }
}

fn csv_options(config: &RunConfig) -> CsvOptions {
    CsvOptions { label_column: config.label_column.clone(), class_column: config.class_column.clone(), ..CsvOptions::default() }
}

/// Loads CSV sources once; synthetic sources are drawn per seed.
#[derive(Debug, Clone)]
pub struct DataSource {
    source: DatasetSource,
    csv: Option<LoadedCsv>,
    downsample: Option<f64>,
}

impl DataSource {
    pub fn open(config: &RunConfig) -> Result<Self, HarnessError> {
        let source = config.source()?;
        let csv = match &source {
            DatasetSource::Csv(path) => Some(load_csv(path, &csv_options(config))?),
            DatasetSource::Synthetic(_) => None,
        };
        Ok(DataSource { source, csv, downsample: config.downsample })
    }

    pub fn for_seed(&self, seed: u64) -> Result<LoadedCsv, HarnessError> {
        let mut loaded = match (&self.source, &self.csv) {
            (DatasetSource::Synthetic(kind), _) => with_default_names(synthetic_dataset(*kind, seed)?),
            (_, Some(csv)) => csv.clone(),
            (DatasetSource::Csv(_), None) => unreachable!("CSV sources are loaded on open"),
        };
        if let Some(f) = self.downsample.filter(|&f| f < 1.0) {
            loaded.dataset = loaded.dataset.downsample_anomalies(f, derive_seed(seed, 20))?;
        }
        Ok(loaded)
    }
}

pub fn load_dataset(config: &RunConfig, seed: u64) -> Result<LoadedCsv, HarnessError> {
    DataSource::open(config)?.for_seed(seed)
}

/// Everything recorded about one seed of one arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub arm: Arm,
    pub total_anomalies: usize,
    pub found: usize,
    /// Anomalies found after each query, starting with 0.
    pub curve: Vec<usize>,
    pub history: Vec<HistoryRecord>,
    pub drift: Vec<DriftReport>,
    /// Final description of the labeled anomalies, where the arm has one.
    pub rules: Option<String>,
    pub prime_status: Option<PrimeStatus>,
    /// Distinct classes per batch, for batch arms on data with class tags.
    pub diversity: Option<DiversitySeries>,
}

pub fn run_seed(config: &RunConfig, dataset: &Dataset, seed: u64) -> Result<SeedOutcome, HarnessError> {
    let mut engine = Engine::build(config, dataset.features(), seed)?;
    engine.run(&mut dataset.oracle())?;
    let history = engine.history().to_vec();
    let tags = dataset.class_tags();
    let batched = matches!(config.arm, Arm::BalT | Arm::BalD | Arm::BalR);
    let diversity = if batched && tags.iter().all(Option::is_some) {
        Some(class_diversity_series(&history, tags, config.batch_size)?)
    } else {
        None
    };
    let curve = discovery_curve(&history);
    Ok(SeedOutcome {
        seed,
        arm: config.arm,
        total_anomalies: dataset.ground_truth().total_anomalies(),
        found: *curve.last().unwrap_or(&0),
        curve,
        drift: engine.drift_reports().to_vec(),
        rules: engine.description()?.map(|r| r.to_text()),
        prime_status: engine.prime_status(),
        diversity,
        history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: RunConfig,
    pub code_version: String,
    pub outcomes: Vec<SeedOutcome>,
}

/// Runs every configured seed, in parallel. Outcomes keep the seed order.
pub fn run(config: &RunConfig) -> Result<RunResult, HarnessError> {
    config.validate()?;
    let source = DataSource::open(config)?;
    let outcomes = config
        .seeds
        .par_iter()
        .map(|&seed| run_seed(config, &source.for_seed(seed)?.dataset, seed))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RunResult { config: config.clone(), code_version: code_version(), outcomes })
}

pub fn seed_dir(out: &Path, config: &RunConfig, seed: u64) -> PathBuf {
    out.join(&config.name).join(config.arm.as_str()).join(seed.to_string())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|source| HarnessError::Json { path: path.into(), source })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_err(path))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut w, row).map_err(|source| HarnessError::Json { path: path.into(), source })?;
        w.write_all(b"\n").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Serialize)]
struct SeedConfig<'a> {
    seed: u64,
    code_version: &'a str,
    config: &'a RunConfig,
}

/// Summary stored as `result.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub arm: Arm,
    pub total_anomalies: usize,
    pub found: usize,
    pub curve: Vec<usize>,
    pub prime_status: Option<PrimeStatus>,
    pub diversity: Option<DiversitySeries>,
    pub code_version: String,
}

/// Writes `config.json`, `history.jsonl`, `drift.jsonl` (stream arms),
/// `rules.txt` (when rules exist) and `result.json` for each seed, and
/// returns the seed directories.
pub fn write_run(out: &Path, result: &RunResult) -> Result<Vec<PathBuf>, HarnessError> {
    let mut dirs = Vec::with_capacity(result.outcomes.len());
    for o in &result.outcomes {
        let dir = seed_dir(out, &result.config, o.seed);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        write_json(&dir.join("config.json"), &SeedConfig { seed: o.seed, code_version: &result.code_version, config: &result.config })?;
        write_jsonl(&dir.join("history.jsonl"), &o.history)?;
        if !o.drift.is_empty() {
            write_jsonl(&dir.join("drift.jsonl"), &o.drift)?;
        }
        if let Some(rules) = &o.rules {
            let path = dir.join("rules.txt");
            fs::write(&path, format!("{rules}\n")).map_err(io_err(&path))?;
        }
        let summary = SeedSummary {
            seed: o.seed,
            arm: o.arm,
            total_anomalies: o.total_anomalies,
            found: o.found,
            curve: o.curve.clone(),
            prime_status: o.prime_status,
            diversity: o.diversity.clone(),
            code_version: result.code_version.clone(),
        };
        write_json(&dir.join("result.json"), &summary)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

/// Reads every `<seed>/result.json` under an arm directory, in seed order.
pub fn read_summaries(arm_dir: &Path) -> Result<Vec<SeedSummary>, HarnessError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(arm_dir).map_err(io_err(arm_dir))? {
        let path = entry.map_err(io_err(arm_dir))?.path().join("result.json");
        if !path.is_file() {
            continue;
        }
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        let summary: SeedSummary = serde_json::from_str(&text).map_err(|source| HarnessError::Json { path: path.clone(), source })?;
        out.push(summary);
    }
    out.sort_by_key(|s| s.seed);
    Ok(out)
}

/// Angle histogram of the forest fitted for `seed`.
pub fn angle_report(config: &RunConfig, seed: u64, bins: usize) -> Result<AngleHistogram, HarnessError> {
    let data = load_dataset(config, seed)?.dataset;
    let params = ForestParams { n_trees: config.trees, subsample: config.subsample, max_depth: None };
    let model = EnsembleModel::build(data.features(), params, seed)?;
    Ok(angle_histogram(&model, &data, bins)?)
}
