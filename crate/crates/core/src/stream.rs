//! Streaming active learning with KL-divergence drift detection.
//!
//! Each tree's leaves act as histogram bins. A window whose leaf occupancy
//! diverges from the tree's baseline beyond a calibrated threshold marks the
//! tree as drifted; when enough trees drift they are rebuilt on the window.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::active::{normalize_scores, FeedbackLoop, FeedbackState, HistoryRecord, LearnParams, Prior, ScoredInstance, WeightVector};
use crate::data::{FeatureMatrix, Label, LabelOracle};
use crate::describe::{compact_description, ClipBox, Description, SubspaceCatalog};
use crate::error::{invalid, Error, Result};
use crate::iforest::{EnsembleModel, ForestParams, IsolationTree, LeafRemap, SparseScoreVector};
use crate::math;
use crate::query::{QueryBatch, StrategyConfig, StrategyKind};

/// Pseudo-count added to every leaf so empty leaves keep finite divergence.
pub const SMOOTHING: f64 = 1e-3;

/// Smoothed leaf-occupancy distribution of `rows` in `tree`.
pub fn tree_distribution<'a, I>(tree: &IsolationTree, rows: I) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut counts = vec![SMOOTHING; tree.leaf_count()];
    let mut n = 0usize;
    for row in rows {
        counts[tree.locate(row).0] += 1.0;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("leaf distribution of an empty batch"));
    }
    let total: f64 = counts.iter().sum();
    counts.iter_mut().for_each(|c| *c /= total);
    Ok(counts)
}

/// `sum p_i ln(p_i / q_i)`, skipping `p_i = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch { expected: p.len(), found: q.len() });
    }
    Ok(p.iter().zip(q).filter(|(&pi, _)| pi > 0.0).map(|(&pi, &qi)| pi * math::ln(pi / qi)).sum())
}

pub fn ensemble_distribution(model: &EnsembleModel, data: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
    model.trees().iter().map(|t| tree_distribution(t, data.rows())).collect()
}

/// Calibrates the divergence threshold: over `reps` random half-splits of
/// `data`, average each tree's divergence between the halves and return the
/// `1 - alpha` quantile of those per-tree means.
pub fn kl_threshold<R: rand::Rng + ?Sized>(data: &FeatureMatrix, model: &EnsembleModel, alpha: f64, reps: usize, rng: &mut R) -> Result<f64> {
    kl_threshold_with(data, model, alpha, reps, |idx| idx.shuffle(rng))
}

/// As [`kl_threshold`] with a caller-supplied permutation; the first half of
/// the permuted indices forms one side of each split.
pub fn kl_threshold_with<F>(data: &FeatureMatrix, model: &EnsembleModel, alpha: f64, reps: usize, mut permute: F) -> Result<f64>
where
    F: FnMut(&mut [usize]),
{
    if data.len() < 2 {
        return Err(invalid("threshold calibration needs at least two instances"));
    }
    if reps == 0 {
        return Err(invalid("threshold calibration needs at least one repetition"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid("alpha must lie in (0, 1)"));
    }
    let mut means = vec![0.0; model.n_trees()];
    let mut idx: Vec<usize> = (0..data.len()).collect();
    for _ in 0..reps {
        idx.sort_unstable();
        permute(&mut idx);
        let (a, b) = idx.split_at(data.len() / 2);
        for (t, tree) in model.trees().iter().enumerate() {
            let pa = tree_distribution(tree, a.iter().map(|&i| data.row(i)))?;
            let pb = tree_distribution(tree, b.iter().map(|&i| data.row(i)))?;
            means[t] += kl_divergence(&pa, &pb)?;
        }
    }
    means.iter_mut().for_each(|m| *m /= reps as f64);
    Ok(math::quantile(&means, 1.0 - alpha).unwrap_or(0.0))
}

/// Per-tree baseline distributions and the divergence threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftBaseline {
    pub distributions: Vec<Vec<f64>>,
    pub q_kl: f64,
    pub alpha: f64,
    pub reps: usize,
}

impl DriftBaseline {
    pub fn fit<R: rand::Rng + ?Sized>(data: &FeatureMatrix, model: &EnsembleModel, alpha: f64, reps: usize, rng: &mut R) -> Result<Self> {
        let q_kl = kl_threshold(data, model, alpha, reps, rng)?;
        Ok(DriftBaseline { distributions: ensemble_distribution(model, data)?, q_kl, alpha, reps })
    }

    /// Divergence of each tree's baseline from its distribution on `data`.
    pub fn divergences(&self, model: &EnsembleModel, data: &FeatureMatrix) -> Result<Vec<f64>> {
        model
            .trees()
            .iter()
            .zip(&self.distributions)
            .map(|(tree, p)| kl_divergence(p, &tree_distribution(tree, data.rows())?))
            .collect()
    }

    /// Trees counted as drifted must reach `2 * alpha * T` before acting.
    pub fn min_drifted(&self, n_trees: usize) -> f64 {
        2.0 * self.alpha * n_trees as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReplacementPolicy {
    /// Replace the divergent trees when enough of them diverge.
    KlAdaptive,
    /// Replace this fraction of the oldest trees every window.
    FixedFraction(f64),
    Never,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    /// Trees rebuilt on the window, ascending.
    pub replaced: Vec<usize>,
    /// Per-tree divergence from the baseline before any replacement.
    pub divergences: Vec<f64>,
    /// Threshold the divergences were compared against.
    pub q_kl: f64,
    /// Whether enough trees exceeded the threshold.
    pub drift_detected: bool,
    pub remap: Option<LeafRemap>,
}

/// Compares `data` against the baseline and replaces trees per `policy`.
/// `ages[t]` orders trees by creation (lower is older) for the fixed-fraction
/// policy. After any replacement the baseline is refit on `data`.
pub fn update_model(
    data: &FeatureMatrix,
    model: &mut EnsembleModel,
    baseline: &mut DriftBaseline,
    policy: ReplacementPolicy,
    ages: &[usize],
    seed: u64,
) -> Result<UpdateOutcome> {
    let divergences = baseline.divergences(model, data)?;
    let q_kl = baseline.q_kl;
    let drifted: Vec<usize> = (0..divergences.len()).filter(|&t| divergences[t] > q_kl).collect();
    let drift_detected = drifted.len() as f64 >= baseline.min_drifted(model.n_trees());
    let mut replaced = match policy {
        ReplacementPolicy::KlAdaptive if drift_detected => drifted,
        ReplacementPolicy::FixedFraction(f) => {
            let k = (math::ceil(f * model.n_trees() as f64) as usize).min(model.n_trees());
            let mut order: Vec<usize> = (0..model.n_trees()).collect();
            order.sort_by_key(|&t| (ages.get(t).copied().unwrap_or(0), t));
            order.truncate(k);
            order
        }
        _ => Vec::new(),
    };
    replaced.sort_unstable();
    let mut remap = None;
    if !replaced.is_empty() {
        let params = *model.params();
        let trees = replaced
            .iter()
            .map(|&t| IsolationTree::build(data, &params, math::derive_seed(seed, t as u64)))
            .collect::<Result<Vec<_>>>()?;
        remap = Some(model.replace_trees(&replaced, trees)?);
        let mut rng = ChaCha8Rng::seed_from_u64(math::derive_seed(seed, u64::MAX));
        *baseline = DriftBaseline::fit(data, model, baseline.alpha, baseline.reps, &mut rng)?;
    }
    Ok(UpdateOutcome { replaced, divergences, q_kl, drift_detected, remap })
}

/// Carries surviving weights over, gives new leaves `1/sqrt(m')`, renormalizes.
pub fn remap_weights(w: &WeightVector, remap: &LeafRemap) -> Result<WeightVector> {
    if remap.old_to_new.len() != w.dim() {
        return Err(Error::DimensionMismatch { expected: remap.old_to_new.len(), found: w.dim() });
    }
    let fresh = 1.0 / math::sqrt(remap.new_m as f64);
    let mut out = vec![fresh; remap.new_m];
    for (old, new) in remap.old_to_new.iter().enumerate() {
        if let Some(n) = new {
            out[*n] = w.as_slice()[old];
        }
    }
    WeightVector::from_vec(out)
}

/// Keeps the `k` highest-scoring instances; ties go to the more recent
/// arrival, then the lower id. `pool` pairs each instance with its arrival
/// window.
pub fn merge_and_retain(w: &WeightVector, pool: Vec<(ScoredInstance, usize)>, k: usize) -> Result<Vec<ScoredInstance>> {
    if k == 0 {
        return Err(invalid("retention size must be at least 1"));
    }
    let mut scored: Vec<(f64, usize, ScoredInstance)> =
        pool.into_iter().map(|(s, arrival)| (s.z.dot(w.as_slice()), arrival, s)).collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.id.cmp(&b.2.id)));
    scored.truncate(k);
    Ok(scored.into_iter().map(|s| s.2).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamConfig {
    pub window: usize,
    pub budget: usize,
    pub per_window: usize,
    pub alpha: f64,
    pub reps: usize,
    pub forest: ForestParams,
    pub learn: LearnParams,
    pub strategy: StrategyConfig,
    pub policy: ReplacementPolicy,
    pub learning_enabled: bool,
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        StreamConfig {
            window: 512,
            budget: 300,
            per_window: 20,
            alpha: 0.05,
            reps: 10,
            forest: ForestParams::default(),
            learn: LearnParams { prior: Prior::Fixed(0.5), ..LearnParams::default() },
            strategy: StrategyConfig::top(),
            policy: ReplacementPolicy::KlAdaptive,
            learning_enabled: true,
            seed: 0,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(invalid("window size must be at least 1"));
        }
        if self.per_window == 0 || self.per_window > self.budget.max(1) {
            return Err(invalid("per-window queries must satisfy 1 <= Q <= B"));
        }
        if let ReplacementPolicy::FixedFraction(f) = self.policy {
            if !(0.0..=1.0).contains(&f) {
                return Err(invalid("replacement fraction must lie in [0, 1]"));
            }
        }
        self.learn.validate()?;
        self.strategy.validate()
    }
}

/// One line of the per-window drift log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub window: usize,
    pub n_trees_replaced: usize,
    pub q_kl: f64,
    pub kl_max: f64,
    /// Trees whose divergence exceeded `q_kl`.
    pub n_divergent: usize,
    pub drift_detected: bool,
    /// Short final window, excluded from drift statistics.
    pub exempt: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    AwaitingWindow,
    Querying,
    Continuation,
}

/// Stream active learning as a step machine: push a window, then drain
/// queries until `next_query` returns `None`, repeat; call `end_stream` to
/// spend the rest of the budget on the retained pool.
#[derive(Debug, Clone)]
pub struct StreamLearner {
    config: StreamConfig,
    model: Option<EnsembleModel>,
    baseline: Option<DriftBaseline>,
    catalog: Option<SubspaceCatalog>,
    bbox: Vec<(f64, f64)>,
    engine: Option<FeedbackLoop>,
    /// Features and arrival window of every retained or labeled instance.
    memory: BTreeMap<usize, (Vec<f64>, usize)>,
    ages: Vec<usize>,
    window_index: usize,
    window_spent: usize,
    phase: Phase,
    reports: Vec<DriftReport>,
}

impl StreamLearner {
    pub fn new(config: StreamConfig) -> Result<Self> {
        config.validate()?;
        Ok(StreamLearner {
            config,
            model: None,
            baseline: None,
            catalog: None,
            bbox: Vec::new(),
            engine: None,
            memory: BTreeMap::new(),
            ages: Vec::new(),
            window_index: 0,
            window_spent: 0,
            phase: Phase::AwaitingWindow,
            reports: Vec::new(),
        })
    }

    pub fn config(&self) -> &StreamConfig {
        &self.config
    }

    pub fn model(&self) -> Option<&EnsembleModel> {
        self.model.as_ref()
    }

    pub fn baseline(&self) -> Option<&DriftBaseline> {
        self.baseline.as_ref()
    }

    pub fn reports(&self) -> &[DriftReport] {
        &self.reports
    }

    pub fn history(&self) -> &[HistoryRecord] {
        self.engine.as_ref().map_or(&[], |e| e.history())
    }

    pub fn batches(&self) -> &[QueryBatch] {
        self.engine.as_ref().map_or(&[], |e| e.batches())
    }

    pub fn weights(&self) -> Option<&WeightVector> {
        self.engine.as_ref().map(|e| e.weights())
    }

    pub fn state(&self) -> Option<&FeedbackState> {
        self.engine.as_ref().map(|e| e.state())
    }

    pub fn spent(&self) -> usize {
        self.engine.as_ref().map_or(0, |e| e.queries())
    }

    pub fn retained(&self) -> usize {
        self.state().map_or(0, |s| s.unlabeled().len())
    }

    pub fn features_of(&self, id: usize) -> Option<&[f64]> {
        self.memory.get(&id).map(|m| m.0.as_slice())
    }

    /// Compact description of the given retained or labeled instances under
    /// the current model and weights.
    pub fn describe(&self, ids: &[usize], delta: usize) -> Result<Description> {
        let (Some(model), Some(w)) = (self.model.as_ref(), self.weights()) else {
            return Err(Error::Empty("no window ingested"));
        };
        let zs = ids
            .iter()
            .map(|&id| Self::score_vector(model, self.features_of(id).ok_or(Error::UnknownInstance(id))?))
            .collect::<Result<Vec<_>>>()?;
        let owned;
        let catalog = match self.catalog.as_ref() {
            Some(c) => c,
            None => {
                owned = SubspaceCatalog::new(model, &ClipBox::from_bounding_box(&self.bbox, 0.05))?;
                &owned
            }
        };
        compact_description(catalog, w.as_slice(), &zs.iter().collect::<Vec<_>>(), delta)
    }

    fn score_vector(model: &EnsembleModel, x: &[f64]) -> Result<SparseScoreVector> {
        let z = model.transform(x)?;
        // A single-leaf forest scores zero everywhere; keep such vectors raw.
        Ok(normalize_scores(&z).unwrap_or(z))
    }

    fn grow_bbox(&mut self, data: &FeatureMatrix) {
        let b = data.bounding_box();
        if self.bbox.is_empty() {
            self.bbox = b;
        } else {
            for (acc, (lo, hi)) in self.bbox.iter_mut().zip(b) {
                acc.0 = acc.0.min(lo);
                acc.1 = acc.1.max(hi);
            }
        }
    }

    fn refresh_catalog(&mut self) -> Result<()> {
        if self.config.strategy.kind == StrategyKind::Diverse {
            let model = self.model.as_ref().expect("model built");
            self.catalog = Some(SubspaceCatalog::new(model, &ClipBox::from_bounding_box(&self.bbox, 0.05))?);
        }
        Ok(())
    }

    /// Ingests the next window; `first_id` is the stream id of its first row.
    /// `is_last` marks the final window of the stream.
    pub fn push_window(&mut self, first_id: usize, data: &FeatureMatrix, is_last: bool) -> Result<DriftReport> {
        if data.is_empty() {
            return Err(Error::Empty("empty stream window"));
        }
        if self.phase == Phase::Continuation {
            return Err(invalid("stream already ended"));
        }
        if let Some(e) = self.engine.as_mut() {
            e.clear_queue();
        }
        let window = self.window_index;
        let seed = math::derive_seed(self.config.seed, window as u64 + 1_000);
        self.grow_bbox(data);
        let report = match self.model.as_mut() {
            None => {
                let model = EnsembleModel::build(data, self.config.forest, math::derive_seed(self.config.seed, 0))?;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let baseline = DriftBaseline::fit(data, &model, self.config.alpha, self.config.reps, &mut rng)?;
                let m = model.m();
                self.ages = vec![0; model.n_trees()];
                let report = DriftReport {
                    window,
                    n_trees_replaced: 0,
                    q_kl: baseline.q_kl,
                    kl_max: 0.0,
                    n_divergent: 0,
                    drift_detected: false,
                    exempt: false,
                };
                self.model = Some(model);
                self.baseline = Some(baseline);
                let state = FeedbackState::new(m, Vec::new())?;
                let w0 = WeightVector::uniform(m);
                self.engine = Some(FeedbackLoop::new(
                    state,
                    w0,
                    self.config.learn,
                    self.config.strategy,
                    self.config.learning_enabled,
                    math::derive_seed(self.config.seed, 2),
                )?);
                self.refresh_catalog()?;
                report
            }
            Some(model) => {
                let exempt = is_last && data.len() < self.config.window;
                let baseline = self.baseline.as_mut().expect("baseline exists with model");
                if exempt {
                    DriftReport {
                        window,
                        n_trees_replaced: 0,
                        q_kl: baseline.q_kl,
                        kl_max: 0.0,
                        n_divergent: 0,
                        drift_detected: false,
                        exempt: true,
                    }
                } else {
                    let outcome = update_model(data, model, baseline, self.config.policy, &self.ages, seed)?;
                    for &t in &outcome.replaced {
                        self.ages[t] = window;
                    }
                    let report = DriftReport {
                        window,
                        n_trees_replaced: outcome.replaced.len(),
                        q_kl: outcome.q_kl,
                        kl_max: outcome.divergences.iter().copied().fold(0.0, f64::max),
                        n_divergent: outcome.divergences.iter().filter(|&&k| k > outcome.q_kl).count(),
                        drift_detected: outcome.drift_detected,
                        exempt: false,
                    };
                    if let Some(remap) = outcome.remap {
                        self.apply_remap(&remap)?;
                    }
                    report
                }
            }
        };

        let model = self.model.as_ref().expect("model built");
        let engine = self.engine.as_mut().expect("engine built");
        let mut pool: Vec<(ScoredInstance, usize)> = engine
            .state_mut()
            .take_unlabeled()
            .into_iter()
            .map(|s| {
                let arrival = self.memory.get(&s.id).map_or(0, |m| m.1);
                (s, arrival)
            })
            .collect();
        for (i, row) in data.rows().enumerate() {
            let id = first_id + i;
            if self.memory.contains_key(&id) {
                return Err(invalid("stream ids must be unique"));
            }
            pool.push((ScoredInstance { id, z: Self::score_vector(model, row)? }, window));
            self.memory.insert(id, (row.to_vec(), window));
        }
        let retained = merge_and_retain(engine.weights(), pool, self.config.window)?;
        let keep: alloc::collections::BTreeSet<usize> = retained
            .iter()
            .map(|s| s.id)
            .chain(engine.state().anomalies().iter().chain(engine.state().nominals()).map(|s| s.id))
            .collect();
        self.memory.retain(|id, _| keep.contains(id));
        engine.state_mut().set_unlabeled(retained)?;

        self.window_index += 1;
        self.window_spent = 0;
        self.phase = Phase::Querying;
        self.reports.push(report.clone());
        Ok(report)
    }

    fn apply_remap(&mut self, remap: &LeafRemap) -> Result<()> {
        let model = self.model.as_ref().expect("model built");
        let engine = self.engine.as_mut().expect("engine built");
        let w = remap_weights(engine.weights(), remap)?;
        let memory = &self.memory;
        engine.state_mut().rescore(model.m(), |id| {
            let x = &memory.get(&id).ok_or(Error::UnknownInstance(id))?.0;
            Self::score_vector(model, x)
        })?;
        engine.set_weights(w)?;
        self.refresh_catalog()
    }

    /// Marks the stream exhausted; remaining budget goes to the retained pool.
    pub fn end_stream(&mut self) {
        self.phase = Phase::Continuation;
    }

    fn query_allowance(&self) -> usize {
        let left = self.config.budget - self.spent();
        match self.phase {
            Phase::AwaitingWindow => 0,
            Phase::Querying => left.min(self.config.per_window - self.window_spent.min(self.config.per_window)),
            Phase::Continuation => left,
        }
    }

    /// Pending query for the current window (or continuation), if any.
    pub fn next_query(&mut self) -> Result<Option<usize>> {
        let allowance = self.query_allowance();
        let Some(engine) = self.engine.as_mut() else {
            return Ok(None);
        };
        if allowance == 0 {
            return Ok(None);
        }
        engine.next_query(allowance, self.catalog.as_ref())
    }

    pub fn submit(&mut self, id: usize, label: Label) -> Result<()> {
        if self.query_allowance() == 0 {
            return Err(Error::LabelRejected { id, reason: "no queries allowed in this window" });
        }
        let engine = self.engine.as_mut().ok_or(Error::LabelRejected { id, reason: "no window ingested" })?;
        engine.submit(id, label)?;
        self.window_spent += 1;
        if self.query_allowance() == 0 {
            let e = self.engine.as_mut().expect("engine built");
            if e.pending().is_some() {
                e.clear_queue();
                e.relearn()?;
            }
        }
        Ok(())
    }

    fn drain<O: LabelOracle + ?Sized>(&mut self, oracle: &mut O) -> Result<()> {
        while let Some(id) = self.next_query()? {
            let label = oracle.label(id)?;
            self.submit(id, label)?;
        }
        Ok(())
    }

    /// Runs the whole stream of `data` in windows, then the continuation.
    pub fn run<O: LabelOracle + ?Sized>(&mut self, data: &FeatureMatrix, oracle: &mut O) -> Result<()> {
        let windows = crate::data::stream_windows(data.len(), self.config.window)?;
        if windows.is_empty() {
            return Err(Error::Empty("empty stream"));
        }
        let last = windows.len() - 1;
        for (i, range) in windows.into_iter().enumerate() {
            let start = range.start;
            self.push_window(start, &data.slice(range), i == last)?;
            self.drain(oracle)?;
        }
        self.end_stream();
        self.drain(oracle)
    }
}
