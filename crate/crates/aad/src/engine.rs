//! One step interface over every arm, shared by the harness and the service
//! so that a scripted session and a harness run take identical paths.

use std::ops::Range;

use aad_core::active::{normalize_scores, score, BalConfig, BalLearner, HistoryRecord, LearnParams, Prior, WeightInit};
use aad_core::data::{stream_windows, FeatureMatrix, Label, LabelOracle};
use aad_core::describe::{compact_description, interpretable_description, ClipBox, InterpretParams, SubspaceCatalog};
use aad_core::glad::{most_relevant_member, FssnParams, GladConfig, GladLearner, PrimeStatus};
use aad_core::iforest::{EnsembleModel, ForestParams, SparseScoreVector};
use aad_core::loda::{fit_loda, LodaEnsemble};
use aad_core::math::{by_score_desc, derive_seed};
use aad_core::query::{QueryBatch, StrategyConfig};
use aad_core::rules::RuleSet;
use aad_core::stream::{DriftReport, ReplacementPolicy, StreamConfig, StreamLearner};
use aad_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{Arm, RunConfig};

/// Margin of the volume clip box, as a fraction of each feature's range.
pub const CLIP_MARGIN: f64 = 0.05;

fn forest(config: &RunConfig) -> ForestParams {
    ForestParams { n_trees: config.trees, subsample: config.subsample, max_depth: None }
}

fn learn_params(config: &RunConfig, prior: Prior) -> LearnParams {
    LearnParams { tau: config.tau, prior, ..LearnParams::default() }
}

fn batch_strategy(config: &RunConfig) -> StrategyConfig {
    let (b, n) = (config.batch_size, config.candidates);
    let base = match config.arm {
        Arm::BalT => StrategyConfig::top_batch(b),
        Arm::BalD => StrategyConfig { batch_size: b, candidates: n, ..StrategyConfig::diverse() },
        Arm::BalR => StrategyConfig { batch_size: b, candidates: n, ..StrategyConfig::random_top() },
        _ => StrategyConfig::top(),
    };
    StrategyConfig { delta: config.delta, ..base }
}

/// IFOR-backed batch learner with a catalog kept for descriptions.
#[derive(Debug, Clone)]
pub struct BatchEngine {
    learner: BalLearner,
    zs: Vec<SparseScoreVector>,
    catalog: Option<SubspaceCatalog>,
    delta: usize,
    describe: InterpretParams,
    seed: u64,
}

impl BatchEngine {
    fn build(config: &RunConfig, data: &FeatureMatrix, seed: u64) -> Result<Self> {
        let model = EnsembleModel::build(data, forest(config), seed)?;
        let zs = model.transform_all(data)?.iter().map(normalize_scores).collect::<Result<Vec<_>>>()?;
        let catalog = SubspaceCatalog::new(&model, &ClipBox::from_bounding_box(&data.bounding_box(), CLIP_MARGIN))?;
        let (prior, init, learning) = match config.arm {
            Arm::Unsupervised => (Prior::Decaying, WeightInit::Uniform, false),
            Arm::BalNopriorUnif => (Prior::Off, WeightInit::Uniform, true),
            Arm::BalNopriorRand => (Prior::Off, WeightInit::Random, true),
            _ => (Prior::Decaying, WeightInit::Uniform, true),
        };
        let strategy = batch_strategy(config);
        let bal = BalConfig {
            budget: config.budget,
            learn: learn_params(config, prior),
            strategy,
            learning_enabled: learning,
            init,
            seed,
        };
        let diverse = config.arm == Arm::BalD;
        let learner = BalLearner::new(zs.clone(), diverse.then(|| catalog.clone()), &bal)?;
        let describe = InterpretParams { precision_threshold: config.precision_threshold, delta: config.delta, ..InterpretParams::default() };
        Ok(BatchEngine { learner, zs, catalog: (!diverse).then_some(catalog), delta: config.delta, describe, seed })
    }

    pub fn learner(&self) -> &BalLearner {
        &self.learner
    }

    fn catalog(&self) -> &SubspaceCatalog {
        self.learner.catalog().or(self.catalog.as_ref()).expect("batch engines always carry a catalog")
    }

    fn query_rules(&self, id: usize) -> Result<RuleSet> {
        let z = self.zs.get(id).ok_or(Error::UnknownInstance(id))?;
        Ok(compact_description(self.catalog(), self.learner.weights().as_slice(), &[z], self.delta)?.rules)
    }

    fn description(&self) -> Result<RuleSet> {
        let labeled: Vec<(&SparseScoreVector, Label)> = self.learner.history().iter().map(|h| (&self.zs[h.queried_id], h.label)).collect();
        if !labeled.iter().any(|(_, y)| y.is_anomaly()) {
            return Ok(RuleSet::default());
        }
        let pool: Vec<&SparseScoreVector> = self.learner.state().unlabeled().iter().map(|s| &s.z).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, 7));
        let w = self.learner.weights().as_slice();
        Ok(interpretable_description(self.catalog(), w, &labeled, &pool, &self.describe, &mut rng)?.rules)
    }
}

/// Stream learner fed window by window from an in-memory dataset.
#[derive(Debug, Clone)]
pub struct StreamEngine {
    learner: StreamLearner,
    data: FeatureMatrix,
    windows: Vec<Range<usize>>,
    next_window: usize,
    ended: bool,
    delta: usize,
}

impl StreamEngine {
    fn build(config: &RunConfig, data: &FeatureMatrix, seed: u64) -> Result<Self> {
        let policy = match config.arm {
            Arm::Sal20Pct => ReplacementPolicy::FixedFraction(0.2),
            Arm::SalNoreplace => ReplacementPolicy::Never,
            _ => ReplacementPolicy::KlAdaptive,
        };
        let stream = StreamConfig {
            window: config.window,
            budget: config.budget,
            per_window: config.queries_per_window,
            alpha: config.alpha_kl,
            reps: config.kl_reps,
            forest: forest(config),
            learn: learn_params(config, Prior::Fixed(0.5)),
            strategy: StrategyConfig { delta: config.delta, ..StrategyConfig::top() },
            policy,
            learning_enabled: config.arm != Arm::SalUnsupervised,
            seed,
        };
        Ok(StreamEngine {
            learner: StreamLearner::new(stream)?,
            data: data.clone(),
            windows: stream_windows(data.len(), config.window)?,
            next_window: 0,
            ended: false,
            delta: config.delta,
        })
    }

    pub fn learner(&self) -> &StreamLearner {
        &self.learner
    }

    fn next_query(&mut self) -> Result<Option<usize>> {
        loop {
            if let Some(id) = self.learner.next_query()? {
                return Ok(Some(id));
            }
            if let Some(range) = self.windows.get(self.next_window).cloned() {
                let last = self.next_window + 1 == self.windows.len();
                self.learner.push_window(range.start, &self.data.slice(range), last)?;
                self.next_window += 1;
            } else if !self.ended {
                self.learner.end_stream();
                self.ended = true;
            } else {
                return Ok(None);
            }
        }
    }

    fn score(&self, id: usize) -> Option<f64> {
        let z = self.learner.model()?.transform(self.data.row(id)).ok()?;
        let z = normalize_scores(&z).unwrap_or(z);
        score(self.learner.weights()?, &z).ok()
    }

    fn description(&self) -> Result<RuleSet> {
        let anomalies: Vec<usize> = self.learner.history().iter().filter(|h| h.label.is_anomaly()).map(|h| h.queried_id).collect();
        if anomalies.is_empty() {
            return Ok(RuleSet::default());
        }
        Ok(self.learner.describe(&anomalies, self.delta)?.rules)
    }
}

/// Greedy walk down a fixed ranking.
#[derive(Debug, Clone)]
pub struct RankedEngine {
    scores: Vec<f64>,
    order: Vec<usize>,
    budget: usize,
    history: Vec<HistoryRecord>,
    anomalies: usize,
}

impl RankedEngine {
    pub fn new(scores: Vec<f64>, budget: usize) -> Self {
        let mut ranked: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
        ranked.sort_by(by_score_desc);
        let order = ranked.into_iter().map(|r| r.0).collect();
        RankedEngine { scores, order, budget, history: Vec::new(), anomalies: 0 }
    }

    fn next_query(&self) -> Option<usize> {
        let i = self.history.len();
        (i < self.budget).then(|| self.order.get(i).copied()).flatten()
    }

    fn submit(&mut self, id: usize, label: Label) -> Result<()> {
        if self.next_query() != Some(id) {
            return Err(Error::LabelRejected { id, reason: "not the pending query" });
        }
        self.anomalies += usize::from(label.is_anomaly());
        self.history.push(HistoryRecord {
            iter: self.history.len() + 1,
            queried_id: id,
            label,
            num_anomalies_so_far: self.anomalies,
            weights_hash: 0,
        });
        Ok(())
    }
}

/// LODA member scores mapped into `[-1, 0]` with one global range so the
/// largest raw score maps to 0.
pub fn loda_score_vectors(ensemble: &LodaEnsemble, data: &FeatureMatrix) -> Result<Vec<SparseScoreVector>> {
    let raw = data.rows().map(|x| ensemble.member_scores(x)).collect::<Result<Vec<_>>>()?;
    let (lo, hi) = raw.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = if hi > lo { hi - lo } else { 1.0 };
    Ok(raw.iter().map(|s| SparseScoreVector::from_dense(&s.iter().map(|v| (v - hi) / range).collect::<Vec<_>>())).collect())
}

/// The LODA ensemble every LODA-backed arm fits for `seed`.
pub fn loda_members(config: &RunConfig, data: &FeatureMatrix, seed: u64) -> Result<LodaEnsemble> {
    fit_loda(data, config.members, None, &mut ChaCha8Rng::seed_from_u64(derive_seed(seed, 10)))
}

#[derive(Debug, Clone)]
pub enum Engine {
    Batch(Box<BatchEngine>),
    Stream(Box<StreamEngine>),
    Glad(Box<GladLearner>),
    Ranked(RankedEngine),
}

impl Engine {
    pub fn build(config: &RunConfig, data: &FeatureMatrix, seed: u64) -> Result<Engine> {
        Ok(match config.arm {
            Arm::SalKl | Arm::Sal20Pct | Arm::SalNoreplace | Arm::SalUnsupervised => {
                Engine::Stream(Box::new(StreamEngine::build(config, data, seed)?))
            }
            Arm::Glad => {
                let ensemble = loda_members(config, data, seed)?;
                let fssn = FssnParams { b: config.prior_b, lambda: config.glad_lambda, tau: config.tau, ..FssnParams::default() };
                let glad = GladConfig { budget: config.budget, fssn, learning_enabled: true, seed };
                Engine::Glad(Box::new(GladLearner::new(data.clone(), ensemble, glad)?))
            }
            Arm::Loda => {
                let ensemble = loda_members(config, data, seed)?;
                let scores = data.rows().map(|x| ensemble.score(x)).collect::<Result<Vec<_>>>()?;
                Engine::Ranked(RankedEngine::new(scores, config.budget))
            }
            Arm::LodaGlobal => {
                let ensemble = loda_members(config, data, seed)?;
                let zs = loda_score_vectors(&ensemble, data)?;
                let bal = BalConfig {
                    budget: config.budget,
                    learn: learn_params(config, Prior::Decaying),
                    strategy: StrategyConfig::top(),
                    learning_enabled: true,
                    init: WeightInit::Uniform,
                    seed,
                };
                let learner = BalLearner::new(zs.clone(), None, &bal)?;
                let describe = InterpretParams::default();
                Engine::Batch(Box::new(BatchEngine { learner, zs, catalog: None, delta: config.delta, describe, seed }))
            }
            _ => Engine::Batch(Box::new(BatchEngine::build(config, data, seed)?)),
        })
    }

    /// The instance awaiting a label. Repeated calls return the same id
    /// until it is labeled.
    pub fn next_query(&mut self) -> Result<Option<usize>> {
        match self {
            Engine::Batch(e) => e.learner.next_query(),
            Engine::Stream(e) => e.next_query(),
            Engine::Glad(g) => g.next_query(),
            Engine::Ranked(r) => Ok(r.next_query()),
        }
    }

    pub fn submit(&mut self, id: usize, label: Label) -> Result<()> {
        match self {
            Engine::Batch(e) => e.learner.submit(id, label),
            Engine::Stream(e) => e.learner.submit(id, label),
            Engine::Glad(g) => g.submit(id, label),
            Engine::Ranked(r) => r.submit(id, label),
        }
    }

    /// Labels queries from `oracle` until the engine stops asking.
    pub fn run<O: LabelOracle + ?Sized>(&mut self, oracle: &mut O) -> Result<()> {
        while let Some(id) = self.next_query()? {
            let label = oracle.label(id)?;
            self.submit(id, label)?;
        }
        Ok(())
    }

    pub fn history(&self) -> &[HistoryRecord] {
        match self {
            Engine::Batch(e) => e.learner.history(),
            Engine::Stream(e) => e.learner.history(),
            Engine::Glad(g) => g.history(),
            Engine::Ranked(r) => &r.history,
        }
    }

    pub fn budget(&self) -> usize {
        match self {
            Engine::Batch(e) => e.learner.budget(),
            Engine::Stream(e) => e.learner.config().budget,
            Engine::Glad(g) => g.budget(),
            Engine::Ranked(r) => r.budget,
        }
    }

    pub fn batches(&self) -> &[QueryBatch] {
        match self {
            Engine::Batch(e) => e.learner.batches(),
            Engine::Stream(e) => e.learner.batches(),
            _ => &[],
        }
    }

    pub fn drift_reports(&self) -> &[DriftReport] {
        match self {
            Engine::Stream(e) => e.learner.reports(),
            _ => &[],
        }
    }

    pub fn prime_status(&self) -> Option<PrimeStatus> {
        match self {
            Engine::Glad(g) => Some(g.prime_status()),
            _ => None,
        }
    }

    /// Current anomaly score of instance `id` (higher is more anomalous).
    pub fn score(&self, id: usize) -> Option<f64> {
        match self {
            Engine::Batch(e) => e.zs.get(id).and_then(|z| e.learner.score_of(z).ok()),
            Engine::Stream(e) => e.score(id),
            Engine::Glad(g) => (id < g.data().len()).then(|| g.score(id)),
            Engine::Ranked(r) => r.scores.get(id).copied(),
        }
    }

    /// GLAD relevance of each member at instance `id`.
    pub fn relevance(&self, id: usize) -> Option<Vec<f64>> {
        match self {
            Engine::Glad(g) if id < g.data().len() => Some(g.relevance(g.data().row(id))),
            _ => None,
        }
    }

    pub fn most_relevant_member(&self, id: usize) -> Option<usize> {
        self.relevance(id).map(|p| most_relevant_member(&p))
    }

    /// Compact-description rules for one instance, where subspaces exist.
    pub fn query_rules(&self, id: usize) -> Result<Option<RuleSet>> {
        match self {
            Engine::Batch(e) if e.learner.catalog().is_some() || e.catalog.is_some() => e.query_rules(id).map(Some),
            Engine::Stream(e) => Ok(Some(e.learner.describe(&[id], e.delta)?.rules)),
            _ => Ok(None),
        }
    }

    /// Rules describing the anomalies labeled so far.
    pub fn description(&self) -> Result<Option<RuleSet>> {
        match self {
            Engine::Batch(e) if e.learner.catalog().is_some() || e.catalog.is_some() => e.description().map(Some),
            Engine::Stream(e) => e.description().map(Some),
            _ => Ok(None),
        }
    }
}
