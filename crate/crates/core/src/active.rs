//! Linear ensemble scoring and weight learning from label feedback.
//!
//! Scores are `w . z` with `w` kept at unit length. Each feedback round
//! minimizes per-class averaged hinge losses against a quantile anchor plus a
//! pull toward the uniform weight vector, then renormalizes.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Label, LabelOracle};
use crate::describe::SubspaceCatalog;
use crate::error::{invalid, Error, Result};
use crate::iforest::SparseScoreVector;
use crate::math::{self, Fnv1a};
use crate::query::{self, PoolEntry, QueryBatch, StrategyConfig, StrategyKind};

/// Unit-norm weights over ensemble members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    /// `[1/sqrt(m); m]`.
    pub fn uniform(m: usize) -> Self {
        WeightVector(vec![1.0 / math::sqrt(m as f64); m])
    }

    /// Direction drawn uniformly from the unit sphere.
    pub fn random_unit<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Self {
        loop {
            let v: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
            if let Ok(w) = WeightVector::from_vec(v) {
                return w;
            }
        }
    }

    /// Normalizes `v` to unit length.
    pub fn from_vec(mut v: Vec<f64>) -> Result<Self> {
        let n = math::norm(&v);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::ZeroVector);
        }
        v.iter_mut().for_each(|x| *x /= n);
        Ok(WeightVector(v))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        math::norm(&self.0)
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// FNV-1a over the little-endian bytes of every weight.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::default();
        h.write_f64s(&self.0);
        h.finish()
    }
}

pub fn score(w: &WeightVector, z: &SparseScoreVector) -> Result<f64> {
    if w.dim() != z.dim() {
        return Err(Error::DimensionMismatch { expected: w.dim(), found: z.dim() });
    }
    Ok(z.dot(w.as_slice()))
}

/// Rescales `z` to unit Euclidean length.
pub fn normalize_scores(z: &SparseScoreVector) -> Result<SparseScoreVector> {
    let n = z.norm();
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(z.scaled(1.0 / n))
}

/// Zero when an anomaly scores at least `q` or a nominal scores below it,
/// otherwise the distance to `q`.
pub fn hinge_loss(q: f64, score: f64, label: Label) -> f64 {
    match label {
        Label::Anomaly if score < q => q - score,
        Label::Nominal if score >= q => score - q,
        _ => 0.0,
    }
}

/// Strength of the pull toward uniform weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Prior {
    /// `0.5 / labels`, or `0.5` before any label.
    Decaying,
    Fixed(f64),
    Off,
}

impl Prior {
    pub fn lambda(self, n_labeled: usize) -> f64 {
        match self {
            Prior::Decaying if n_labeled == 0 => 0.5,
            Prior::Decaying => 0.5 / n_labeled as f64,
            Prior::Fixed(l) => l,
            Prior::Off => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnParams {
    /// Rank quantile of the anchor instance.
    pub tau: f64,
    pub prior: Prior,
    pub step: f64,
    pub max_steps: usize,
    /// Stop once an update improves the objective by less than this.
    pub tolerance: f64,
    /// Treat the anchor instance's score under the current weights as part
    /// of the objective rather than a constant.
    pub differentiate_anchor: bool,
}

impl Default for LearnParams {
    fn default() -> Self {
        LearnParams { tau: 0.03, prior: Prior::Decaying, step: 0.01, max_steps: 1000, tolerance: 1e-8, differentiate_anchor: true }
    }
}

impl LearnParams {
    // Negated comparisons so NaN is rejected too.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(invalid("tau must lie in (0, 1)"));
        }
        if !(self.step > 0.0) {
            return Err(invalid("step must be positive"));
        }
        if let Prior::Fixed(l) = self.prior {
            if !(l >= 0.0) {
                return Err(invalid("prior strength must be non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredInstance {
    pub id: usize,
    pub z: SparseScoreVector,
}

/// Unlabeled, labeled-anomaly and labeled-nominal score vectors, disjoint by id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackState {
    dim: usize,
    unlabeled: Vec<ScoredInstance>,
    anomalies: Vec<ScoredInstance>,
    nominals: Vec<ScoredInstance>,
}

impl FeedbackState {
    pub fn new(dim: usize, pool: Vec<ScoredInstance>) -> Result<Self> {
        let mut ids: Vec<usize> = pool.iter().map(|s| s.id).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(invalid("duplicate instance id in pool"));
        }
        if let Some(bad) = pool.iter().find(|s| s.z.dim() != dim) {
            return Err(Error::DimensionMismatch { expected: dim, found: bad.z.dim() });
        }
        Ok(FeedbackState { dim, unlabeled: pool, anomalies: Vec::new(), nominals: Vec::new() })
    }

    /// Pool of `zs[i]` with id `i`.
    pub fn from_vectors(zs: Vec<SparseScoreVector>) -> Result<Self> {
        let dim = zs.first().map_or(0, SparseScoreVector::dim);
        FeedbackState::new(dim, zs.into_iter().enumerate().map(|(id, z)| ScoredInstance { id, z }).collect())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn unlabeled(&self) -> &[ScoredInstance] {
        &self.unlabeled
    }

    pub fn anomalies(&self) -> &[ScoredInstance] {
        &self.anomalies
    }

    pub fn nominals(&self) -> &[ScoredInstance] {
        &self.nominals
    }

    pub fn n_labeled(&self) -> usize {
        self.anomalies.len() + self.nominals.len()
    }

    pub fn len(&self) -> usize {
        self.unlabeled.len() + self.n_labeled()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all(&self) -> impl Iterator<Item = &ScoredInstance> {
        self.unlabeled.iter().chain(&self.anomalies).chain(&self.nominals)
    }

    pub fn is_labeled(&self, id: usize) -> bool {
        self.anomalies.iter().chain(&self.nominals).any(|s| s.id == id)
    }

    /// Moves `id` from the unlabeled pool into the labeled set for `label`.
    pub fn label(&mut self, id: usize, label: Label) -> Result<()> {
        let Some(pos) = self.unlabeled.iter().position(|s| s.id == id) else {
            return Err(if self.is_labeled(id) {
                Error::LabelRejected { id, reason: "already labeled" }
            } else {
                Error::UnknownInstance(id)
            });
        };
        let inst = self.unlabeled.remove(pos);
        match label {
            Label::Anomaly => self.anomalies.push(inst),
            Label::Nominal => self.nominals.push(inst),
        }
        Ok(())
    }

    pub fn set_unlabeled(&mut self, pool: Vec<ScoredInstance>) -> Result<()> {
        if let Some(bad) = pool.iter().find(|s| s.z.dim() != self.dim) {
            return Err(Error::DimensionMismatch { expected: self.dim, found: bad.z.dim() });
        }
        self.unlabeled = pool;
        Ok(())
    }

    pub fn take_unlabeled(&mut self) -> Vec<ScoredInstance> {
        core::mem::take(&mut self.unlabeled)
    }

    /// Replaces every score vector (e.g. after the model changed).
    pub fn rescore<F>(&mut self, dim: usize, mut f: F) -> Result<()>
    where
        F: FnMut(usize) -> Result<SparseScoreVector>,
    {
        for s in self.unlabeled.iter_mut().chain(&mut self.anomalies).chain(&mut self.nominals) {
            s.z = f(s.id)?;
        }
        self.dim = dim;
        Ok(())
    }
}

/// Score vector of the instance ranked at position `ceil(n * tau)` by
/// descending score (ties to the lower id), and that score.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileAnchor {
    pub id: usize,
    pub z: SparseScoreVector,
    pub score: f64,
}

impl QuantileAnchor {
    pub fn compute(state: &FeedbackState, w: &WeightVector, tau: f64) -> Option<Self> {
        let mut ranked: Vec<(usize, f64, &SparseScoreVector)> = state.all().map(|s| (s.id, s.z.dot(w.as_slice()), &s.z)).collect();
        if ranked.is_empty() {
            return None;
        }
        let n = ranked.len();
        let rank = (math::ceil(n as f64 * tau) as usize).clamp(1, n) - 1;
        ranked.select_nth_unstable_by(rank, |a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let (id, score, z) = ranked[rank];
        Some(QuantileAnchor { id, z: z.clone(), score })
    }
}

/// Weight-learning objective for one feedback round.
#[derive(Debug, Clone, Copy)]
pub struct Objective<'a> {
    pub anomalies: &'a [ScoredInstance],
    pub nominals: &'a [ScoredInstance],
    pub anchor: &'a QuantileAnchor,
    pub lambda: f64,
    pub differentiate_anchor: bool,
}

impl Objective<'_> {
    fn class_terms(&self, w: &[f64], anchor_now: f64, class: &[ScoredInstance], label: Label) -> f64 {
        if class.is_empty() {
            return 0.0;
        }
        let sum: f64 = class
            .iter()
            .map(|s| {
                let sc = s.z.dot(w);
                hinge_loss(self.anchor.score, sc, label) + hinge_loss(anchor_now, sc, label)
            })
            .sum();
        sum / class.len() as f64
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        let anchor_now = if self.differentiate_anchor { self.anchor.z.dot(w) } else { self.anchor.score };
        let unif = 1.0 / math::sqrt(w.len() as f64);
        let prior: f64 = w.iter().map(|&x| (x - unif) * (x - unif)).sum();
        self.class_terms(w, anchor_now, self.anomalies, Label::Anomaly)
            + self.class_terms(w, anchor_now, self.nominals, Label::Nominal)
            + self.lambda * prior
    }

    fn class_gradient(&self, w: &[f64], anchor_now: f64, class: &[ScoredInstance], label: Label, grad: &mut [f64]) {
        if class.is_empty() {
            return;
        }
        let k = 1.0 / class.len() as f64;
        // Loss is `sign * (q - score)` where active; d/dw of `q` is the
        // anchor vector only for the moving anchor.
        let sign = if label.is_anomaly() { 1.0 } else { -1.0 };
        for s in class {
            let sc = s.z.dot(w);
            let active = |q: f64| if label.is_anomaly() { sc < q } else { sc > q };
            if active(self.anchor.score) {
                s.z.add_to(grad, -sign * k);
            }
            if active(anchor_now) {
                s.z.add_to(grad, -sign * k);
                if self.differentiate_anchor {
                    self.anchor.z.add_to(grad, sign * k);
                }
            }
        }
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let anchor_now = if self.differentiate_anchor { self.anchor.z.dot(w) } else { self.anchor.score };
        let unif = 1.0 / math::sqrt(w.len() as f64);
        let mut grad: Vec<f64> = w.iter().map(|&x| 2.0 * self.lambda * (x - unif)).collect();
        self.class_gradient(w, anchor_now, self.anomalies, Label::Anomaly, &mut grad);
        self.class_gradient(w, anchor_now, self.nominals, Label::Nominal, &mut grad);
        grad
    }
}

/// One feedback round of gradient descent from `w_prev`; returns `w_prev`
/// unchanged when nothing is labeled yet.
pub fn learn_weights(state: &FeedbackState, w_prev: &WeightVector, params: &LearnParams) -> Result<WeightVector> {
    params.validate()?;
    if w_prev.dim() != state.dim() {
        return Err(Error::DimensionMismatch { expected: state.dim(), found: w_prev.dim() });
    }
    if state.n_labeled() == 0 {
        return Ok(w_prev.clone());
    }
    let anchor = QuantileAnchor::compute(state, w_prev, params.tau).expect("labeled instances exist");
    let objective = Objective {
        anomalies: state.anomalies(),
        nominals: state.nominals(),
        anchor: &anchor,
        lambda: params.prior.lambda(state.n_labeled()),
        differentiate_anchor: params.differentiate_anchor,
    };
    let mut w = w_prev.as_slice().to_vec();
    let mut value = objective.value(&w);
    let mut next = vec![0.0; w.len()];
    for _ in 0..params.max_steps {
        let grad = objective.gradient(&w);
        for ((n, &x), g) in next.iter_mut().zip(&w).zip(grad) {
            *n = x - params.step * g;
        }
        let next_value = objective.value(&next);
        let improvement = value - next_value;
        if improvement <= 0.0 {
            break;
        }
        core::mem::swap(&mut w, &mut next);
        value = next_value;
        if improvement < params.tolerance {
            break;
        }
    }
    WeightVector::from_vec(w).or_else(|_| Ok(w_prev.clone()))
}

/// One line of the query history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryRecord {
    /// 1-based query count.
    pub iter: usize,
    pub queried_id: usize,
    pub label: Label,
    pub num_anomalies_so_far: usize,
    /// Fingerprint of the weights after this label was processed.
    pub weights_hash: u64,
}

/// Query/label state machine shared by the batch and stream learners.
///
/// Instances are queued a batch at a time; weights are relearned once the
/// whole batch is labeled.
#[derive(Debug, Clone)]
pub struct FeedbackLoop {
    state: FeedbackState,
    weights: WeightVector,
    learn: LearnParams,
    strategy: StrategyConfig,
    learning_enabled: bool,
    rng: ChaCha8Rng,
    queue: VecDeque<usize>,
    history: Vec<HistoryRecord>,
    batches: Vec<QueryBatch>,
    anomalies_found: usize,
}

impl FeedbackLoop {
    pub fn new(
        state: FeedbackState,
        w0: WeightVector,
        learn: LearnParams,
        strategy: StrategyConfig,
        learning_enabled: bool,
        seed: u64,
    ) -> Result<Self> {
        learn.validate()?;
        strategy.validate()?;
        if w0.dim() != state.dim() {
            return Err(Error::DimensionMismatch { expected: state.dim(), found: w0.dim() });
        }
        Ok(FeedbackLoop {
            state,
            weights: w0,
            learn,
            strategy,
            learning_enabled,
            rng: ChaCha8Rng::seed_from_u64(seed),
            queue: VecDeque::new(),
            history: Vec::new(),
            batches: Vec::new(),
            anomalies_found: 0,
        })
    }

    pub fn state(&self) -> &FeedbackState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut FeedbackState {
        &mut self.state
    }

    pub fn weights(&self) -> &WeightVector {
        &self.weights
    }

    pub fn set_weights(&mut self, w: WeightVector) -> Result<()> {
        if w.dim() != self.state.dim() {
            return Err(Error::DimensionMismatch { expected: self.state.dim(), found: w.dim() });
        }
        self.weights = w;
        Ok(())
    }

    pub fn history(&self) -> &[HistoryRecord] {
        &self.history
    }

    pub fn batches(&self) -> &[QueryBatch] {
        &self.batches
    }

    pub fn anomalies_found(&self) -> usize {
        self.anomalies_found
    }

    pub fn queries(&self) -> usize {
        self.history.len()
    }

    pub fn strategy(&self) -> &StrategyConfig {
        &self.strategy
    }

    pub fn learn_params(&self) -> &LearnParams {
        &self.learn
    }

    pub fn pending(&self) -> Option<usize> {
        self.queue.front().copied()
    }

    /// Remaining ids of the current batch, next first.
    pub fn queued(&self) -> impl Iterator<Item = usize> + '_ {
        self.queue.iter().copied()
    }

    /// Drops queued queries, e.g. at a window boundary.
    pub fn clear_queue(&mut self) {
        self.queue.clear();
    }

    /// Current score of every unlabeled instance as `(id, score)`.
    pub fn unlabeled_scores(&self) -> Vec<(usize, f64)> {
        self.state.unlabeled().iter().map(|s| (s.id, s.z.dot(self.weights.as_slice()))).collect()
    }

    /// Pending query, selecting a new batch of at most `max_batch` if none is
    /// queued. `None` when the unlabeled pool is empty.
    pub fn next_query(&mut self, max_batch: usize, catalog: Option<&SubspaceCatalog>) -> Result<Option<usize>> {
        if let Some(id) = self.pending() {
            return Ok(Some(id));
        }
        if self.state.unlabeled().is_empty() || max_batch == 0 {
            return Ok(None);
        }
        let w = self.weights.as_slice();
        let pool: Vec<PoolEntry<'_>> =
            self.state.unlabeled().iter().map(|s| PoolEntry { id: s.id, score: s.z.dot(w), z: &s.z }).collect();
        let batch = query::select(&self.strategy, &pool, max_batch, catalog, w, &mut self.rng)?;
        self.queue.extend(batch.selected.iter().copied());
        self.batches.push(batch);
        Ok(self.pending())
    }

    /// Records the label for the pending query. Returns `true` when it closed
    /// a batch (and weights were relearned if learning is on).
    pub fn submit(&mut self, id: usize, label: Label) -> Result<bool> {
        match self.pending() {
            Some(p) if p == id => {}
            _ => return Err(Error::LabelRejected { id, reason: "not the pending query" }),
        }
        self.state.label(id, label)?;
        self.queue.pop_front();
        if label.is_anomaly() {
            self.anomalies_found += 1;
        }
        let closed = self.queue.is_empty();
        if closed && self.learning_enabled {
            self.weights = learn_weights(&self.state, &self.weights, &self.learn)?;
        }
        self.history.push(HistoryRecord {
            iter: self.history.len() + 1,
            queried_id: id,
            label,
            num_anomalies_so_far: self.anomalies_found,
            weights_hash: self.weights.fingerprint(),
        });
        Ok(closed)
    }

    /// Relearns from the current labels regardless of batch state.
    pub fn relearn(&mut self) -> Result<()> {
        if self.learning_enabled {
            self.weights = learn_weights(&self.state, &self.weights, &self.learn)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightInit {
    Uniform,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalConfig {
    pub budget: usize,
    pub learn: LearnParams,
    pub strategy: StrategyConfig,
    pub learning_enabled: bool,
    pub init: WeightInit,
    pub seed: u64,
}

impl Default for BalConfig {
    fn default() -> Self {
        BalConfig {
            budget: 100,
            learn: LearnParams::default(),
            strategy: StrategyConfig::top(),
            learning_enabled: true,
            init: WeightInit::Uniform,
            seed: 0,
        }
    }
}

/// Batch active learning over a fixed pool.
#[derive(Debug, Clone)]
pub struct BalLearner {
    inner: FeedbackLoop,
    catalog: Option<SubspaceCatalog>,
    budget: usize,
}

impl BalLearner {
    /// `zs[i]` is the score vector of instance `i`. The catalog is needed
    /// only by the diverse strategy.
    pub fn new(zs: Vec<SparseScoreVector>, catalog: Option<SubspaceCatalog>, config: &BalConfig) -> Result<Self> {
        let state = FeedbackState::from_vectors(zs)?;
        if config.strategy.kind == StrategyKind::Diverse && catalog.is_none() {
            return Err(invalid("the diverse strategy needs a subspace catalog"));
        }
        let m = state.dim();
        let w0 = match config.init {
            WeightInit::Uniform => WeightVector::uniform(m),
            WeightInit::Random => WeightVector::random_unit(m, &mut ChaCha8Rng::seed_from_u64(math::derive_seed(config.seed, 1))),
        };
        let inner = FeedbackLoop::new(state, w0, config.learn, config.strategy, config.learning_enabled, math::derive_seed(config.seed, 2))?;
        Ok(BalLearner { inner, catalog, budget: config.budget })
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn spent(&self) -> usize {
        self.inner.queries()
    }

    pub fn remaining(&self) -> usize {
        self.budget - self.spent()
    }

    pub fn is_complete(&self) -> bool {
        self.remaining() == 0 || (self.inner.pending().is_none() && self.inner.state().unlabeled().is_empty())
    }

    pub fn next_query(&mut self) -> Result<Option<usize>> {
        let remaining = self.remaining();
        if remaining == 0 {
            return Ok(None);
        }
        // Never queue past the budget.
        self.inner.next_query(remaining, self.catalog.as_ref())
    }

    pub fn submit(&mut self, id: usize, label: Label) -> Result<()> {
        if self.remaining() == 0 {
            return Err(Error::LabelRejected { id, reason: "budget exhausted" });
        }
        self.inner.submit(id, label)?;
        if self.remaining() == 0 && self.inner.pending().is_some() {
            self.inner.clear_queue();
        }
        Ok(())
    }

    /// Queries `oracle` until the budget or the pool runs out.
    pub fn run<O: LabelOracle + ?Sized>(&mut self, oracle: &mut O) -> Result<()> {
        while let Some(id) = self.next_query()? {
            let label = oracle.label(id)?;
            self.submit(id, label)?;
        }
        Ok(())
    }

    pub fn engine(&self) -> &FeedbackLoop {
        &self.inner
    }

    pub fn weights(&self) -> &WeightVector {
        self.inner.weights()
    }

    pub fn state(&self) -> &FeedbackState {
        self.inner.state()
    }

    pub fn history(&self) -> &[HistoryRecord] {
        self.inner.history()
    }

    pub fn batches(&self) -> &[QueryBatch] {
        self.inner.batches()
    }

    pub fn catalog(&self) -> Option<&SubspaceCatalog> {
        self.catalog.as_ref()
    }

    pub fn score_of(&self, z: &SparseScoreVector) -> Result<f64> {
        score(self.weights(), z)
    }
}
