//! GLAD: per-member local relevance learned by a small network.
//!
//! The combined score is `sum_m s_m(x) * p_m(x)` where `s_m` are LODA member
//! scores and `p_m` the relevance network's sigmoid outputs. The network is
//! first primed to output a constant `b` everywhere, so the initial ranking
//! is the plain ensemble ranking, then trained on label feedback.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::active::HistoryRecord;
use crate::data::{FeatureMatrix, Label, LabelOracle};
use crate::error::{invalid, Error, Result};
use crate::loda::LodaEnsemble;
use crate::math::{self, Fnv1a};

/// `-ln(sigmoid(a))`, stable for large `|a|`.
fn neg_log_sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        math::ln(1.0 + math::exp(-a))
    } else {
        -a + math::ln(1.0 + math::exp(a))
    }
}

/// One hidden tanh layer, sigmoid outputs, standardized inputs. Parameters
/// live in one flat vector: hidden weights, hidden biases, output weights,
/// output biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fssn {
    d: usize,
    hidden: usize,
    members: usize,
    mean: Vec<f64>,
    scale: Vec<f64>,
    params: Vec<f64>,
}

/// Activations kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Forward {
    input: Vec<f64>,
    hidden: Vec<f64>,
    /// Output pre-activations.
    pub logits: Vec<f64>,
    pub relevance: Vec<f64>,
}

impl Fssn {
    /// Hidden weights ~ N(0, 1/d); output weights ~ N(0, (init_scale)^2 / hidden);
    /// output biases at `logit(b)`.
    pub fn new<R: Rng + ?Sized>(
        data: &FeatureMatrix,
        members: usize,
        hidden: usize,
        b: f64,
        init_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if !(b > 0.0 && b < 1.0) {
            return Err(invalid("prior relevance b must lie in (0, 1)"));
        }
        if members == 0 || hidden == 0 {
            return Err(invalid("network needs at least one hidden and one output unit"));
        }
        if data.is_empty() {
            return Err(Error::Empty("cannot standardize on an empty batch"));
        }
        let d = data.d();
        let n = data.len() as f64;
        let mut mean = vec![0.0; d];
        for row in data.rows() {
            mean.iter_mut().zip(row).for_each(|(m, v)| *m += v / n);
        }
        let mut var = vec![0.0; d];
        for row in data.rows() {
            var.iter_mut().zip(row).zip(&mean).for_each(|((s, v), m)| *s += (v - m) * (v - m) / n);
        }
        let scale = var.into_iter().map(|v| if v > 0.0 { math::sqrt(v) } else { 1.0 }).collect();
        let mut net = Fssn { d, hidden, members, mean, scale, params: vec![0.0; hidden * d + hidden + members * hidden + members] };
        let w1 = 1.0 / math::sqrt(d as f64);
        let w2 = init_scale / math::sqrt(hidden as f64);
        let (h_w, _, o_w, o_b) = net.offsets();
        for i in 0..hidden * d {
            net.params[h_w + i] = w1 * rng.sample::<f64, _>(StandardNormal);
        }
        for i in 0..members * hidden {
            net.params[o_w + i] = w2 * rng.sample::<f64, _>(StandardNormal);
        }
        for m in 0..members {
            net.params[o_b + m] = math::logit(b);
        }
        Ok(net)
    }

    fn offsets(&self) -> (usize, usize, usize, usize) {
        let h_w = 0;
        let h_b = self.hidden * self.d;
        let o_w = h_b + self.hidden;
        let o_b = o_w + self.members * self.hidden;
        (h_w, h_b, o_w, o_b)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn members(&self) -> usize {
        self.members
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Whether parameter `i` is a weight (regularized) rather than a bias.
    pub fn is_weight(&self, i: usize) -> bool {
        let (_, h_b, o_w, o_b) = self.offsets();
        i < h_b || (o_w..o_b).contains(&i)
    }

    pub fn forward(&self, x: &[f64]) -> Forward {
        let (h_w, h_b, o_w, o_b) = self.offsets();
        let input: Vec<f64> = x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect();
        let hidden: Vec<f64> = (0..self.hidden)
            .map(|j| {
                let row = &self.params[h_w + j * self.d..h_w + (j + 1) * self.d];
                math::tanh(math::dot(row, &input) + self.params[h_b + j])
            })
            .collect();
        let logits: Vec<f64> = (0..self.members)
            .map(|m| {
                let row = &self.params[o_w + m * self.hidden..o_w + (m + 1) * self.hidden];
                math::dot(row, &hidden) + self.params[o_b + m]
            })
            .collect();
        let relevance = logits.iter().map(|&a| math::sigmoid(a)).collect();
        Forward { input, hidden, logits, relevance }
    }

    pub fn relevance(&self, x: &[f64]) -> Vec<f64> {
        self.forward(x).relevance
    }

    /// Adds `d(loss)/d(params)` into `grad` given `d(loss)/d(logits)`.
    pub fn backward(&self, fw: &Forward, dlogits: &[f64], grad: &mut [f64]) {
        let (h_w, h_b, o_w, o_b) = self.offsets();
        let mut dhidden = vec![0.0; self.hidden];
        for (m, &g) in dlogits.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad[o_b + m] += g;
            let base = o_w + m * self.hidden;
            for j in 0..self.hidden {
                grad[base + j] += g * fw.hidden[j];
                dhidden[j] += g * self.params[base + j];
            }
        }
        for j in 0..self.hidden {
            let dz = dhidden[j] * (1.0 - fw.hidden[j] * fw.hidden[j]);
            if dz == 0.0 {
                continue;
            }
            grad[h_b + j] += dz;
            let base = h_w + j * self.d;
            for (k, &v) in fw.input.iter().enumerate() {
                grad[base + k] += dz * v;
            }
        }
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::default();
        h.write_f64s(&self.params);
        h.finish()
    }
}

/// Cross-entropy of every output against the constant target `b`.
pub fn prior_loss(fw: &Forward, b: f64) -> f64 {
    fw.logits.iter().map(|&a| b * neg_log_sigmoid(a) + (1.0 - b) * neg_log_sigmoid(-a)).sum()
}

/// `sum_m s_m * p_m`.
pub fn combined_score(member_scores: &[f64], relevance: &[f64]) -> f64 {
    member_scores.iter().zip(relevance).map(|(s, p)| s * p).sum()
}

/// `max(0, y * (q - score))`.
pub fn anchor_hinge(q: f64, score: f64, label: Label) -> f64 {
    (label.sign() * (q - score)).max(0.0)
}

/// Quantile anchor for one training round: the instance at rank
/// `ceil(n * tau)` under the pre-update scores, and its score.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GladAnchor {
    pub id: usize,
    pub score: f64,
}

impl GladAnchor {
    pub fn from_scores(scores: &[f64], tau: f64) -> Option<Self> {
        if scores.is_empty() {
            return None;
        }
        let mut ranked: Vec<(usize, f64)> = scores.iter().copied().enumerate().collect();
        let n = ranked.len();
        let rank = (math::ceil(n as f64 * tau) as usize).clamp(1, n) - 1;
        ranked.select_nth_unstable_by(rank, math::by_score_desc);
        Some(GladAnchor { id: ranked[rank].0, score: ranked[rank].1 })
    }
}

/// Data the combined loss is evaluated on.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub data: &'a FeatureMatrix,
    pub member_scores: &'a [Vec<f64>],
    pub anchor: GladAnchor,
    pub lambda: f64,
    pub b: f64,
}

/// Mean hinge loss over `labeled` plus `lambda` times the mean prior loss
/// over `prior_ids`; either part is dropped when its set is empty. Adds the
/// gradient into `grad` when given.
pub fn fssn_loss(net: &Fssn, inputs: &LossInputs<'_>, prior_ids: &[usize], labeled: &[(usize, Label)], mut grad: Option<&mut [f64]>) -> f64 {
    let mut loss = 0.0;
    if !prior_ids.is_empty() {
        let k = inputs.lambda / prior_ids.len() as f64;
        for &i in prior_ids {
            let fw = net.forward(inputs.data.row(i));
            loss += k * prior_loss(&fw, inputs.b);
            if let Some(g) = grad.as_deref_mut() {
                let dl: Vec<f64> = fw.relevance.iter().map(|&p| k * (p - inputs.b)).collect();
                net.backward(&fw, &dl, g);
            }
        }
    }
    if !labeled.is_empty() {
        let k = 1.0 / labeled.len() as f64;
        let anchor_fw = net.forward(inputs.data.row(inputs.anchor.id));
        let anchor_now = combined_score(&inputs.member_scores[inputs.anchor.id], &anchor_fw.relevance);
        let mut anchor_coeff = 0.0;
        for &(i, y) in labeled {
            let fw = net.forward(inputs.data.row(i));
            let s = combined_score(&inputs.member_scores[i], &fw.relevance);
            let sign = y.sign();
            let mut coeff = 0.0;
            for (q, moving) in [(inputs.anchor.score, false), (anchor_now, true)] {
                let l = anchor_hinge(q, s, y);
                if l > 0.0 {
                    loss += k * l;
                    coeff -= k * sign;
                    if moving {
                        anchor_coeff += k * sign;
                    }
                }
            }
            if let Some(g) = grad.as_deref_mut() {
                if coeff != 0.0 {
                    net.backward(&fw, &score_logit_grad(&inputs.member_scores[i], &fw.relevance, coeff), g);
                }
            }
        }
        if let Some(g) = grad {
            if anchor_coeff != 0.0 {
                net.backward(&anchor_fw, &score_logit_grad(&inputs.member_scores[inputs.anchor.id], &anchor_fw.relevance, anchor_coeff), g);
            }
        }
    }
    loss
}

/// `coeff * d(score)/d(logits)`.
fn score_logit_grad(member_scores: &[f64], relevance: &[f64], coeff: f64) -> Vec<f64> {
    member_scores.iter().zip(relevance).map(|(s, p)| coeff * s * p * (1.0 - p)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FssnParams {
    /// `None` means `max(50, 3M)`.
    pub hidden: Option<usize>,
    pub b: f64,
    pub lambda: f64,
    pub tau: f64,
    pub step: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub l2: f64,
    /// Copies of each labeled instance per training pass.
    pub upsample: usize,
    pub prime_tolerance: f64,
    pub prime_epochs: usize,
    /// Scale of the initial output weights relative to `1/sqrt(hidden)`. At
    /// zero the network starts exactly at the prior, so priming converges
    /// immediately and the first query matches unweighted LODA.
    pub init_scale: f64,
}

impl Default for FssnParams {
    fn default() -> Self {
        FssnParams {
            hidden: None,
            b: 0.5,
            lambda: 1.0,
            tau: 0.03,
            step: 0.01,
            momentum: 0.9,
            batch_size: 64,
            l2: 1e-3,
            upsample: 5,
            prime_tolerance: 0.01,
            prime_epochs: 500,
            init_scale: 0.0,
        }
    }
}

impl FssnParams {
    pub fn hidden_units(&self, members: usize) -> usize {
        self.hidden.unwrap_or_else(|| 50.max(3 * members))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum PrimeStatus {
    Converged { epochs: usize, max_deviation: f64 },
    /// Epoch cap reached before the tolerance.
    CapReached { epochs: usize, max_deviation: f64 },
}

impl PrimeStatus {
    pub fn converged(&self) -> bool {
        matches!(self, PrimeStatus::Converged { .. })
    }

    pub fn max_deviation(&self) -> f64 {
        match *self {
            PrimeStatus::Converged { max_deviation, .. } | PrimeStatus::CapReached { max_deviation, .. } => max_deviation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Item {
    Prior(usize),
    Labeled(usize, Label),
}

/// Momentum SGD over shuffled mini-batches with L2 on weights.
fn train_pass<R: Rng + ?Sized>(net: &mut Fssn, inputs: &LossInputs<'_>, items: &mut [Item], params: &FssnParams, rng: &mut R) {
    items.shuffle(rng);
    let mut velocity = vec![0.0; net.params.len()];
    let mut grad = vec![0.0; net.params.len()];
    for chunk in items.chunks(params.batch_size.max(1)) {
        let prior: Vec<usize> = chunk.iter().filter_map(|it| if let Item::Prior(i) = it { Some(*i) } else { None }).collect();
        let labeled: Vec<(usize, Label)> =
            chunk.iter().filter_map(|it| if let Item::Labeled(i, y) = it { Some((*i, *y)) } else { None }).collect();
        grad.iter_mut().for_each(|g| *g = 0.0);
        fssn_loss(net, inputs, &prior, &labeled, Some(&mut grad));
        for i in 0..net.params.len() {
            let reg = if net.is_weight(i) { params.l2 * net.params[i] } else { 0.0 };
            velocity[i] = params.momentum * velocity[i] - params.step * (grad[i] + reg);
            net.params[i] += velocity[i];
        }
    }
}

fn max_deviation(net: &Fssn, data: &FeatureMatrix, b: f64) -> f64 {
    data.rows().flat_map(|x| net.relevance(x)).map(|p| (p - b).abs()).fold(0.0, f64::max)
}

/// Trains on the prior loss alone until every output over `data` is within
/// the tolerance of `b`, or the epoch cap is hit.
pub fn prime_fssn<R: Rng + ?Sized>(net: &mut Fssn, data: &FeatureMatrix, params: &FssnParams, rng: &mut R) -> PrimeStatus {
    let dummy: Vec<Vec<f64>> = Vec::new();
    let inputs = LossInputs { data, member_scores: &dummy, anchor: GladAnchor { id: 0, score: 0.0 }, lambda: 1.0, b: params.b };
    let mut items: Vec<Item> = (0..data.len()).map(Item::Prior).collect();
    let prime_params = FssnParams { l2: 0.0, ..*params };
    let mut dev = max_deviation(net, data, params.b);
    let mut epochs = 0;
    while dev > params.prime_tolerance {
        if epochs == params.prime_epochs {
            return PrimeStatus::CapReached { epochs, max_deviation: dev };
        }
        train_pass(net, &inputs, &mut items, &prime_params, rng);
        epochs += 1;
        dev = max_deviation(net, data, params.b);
    }
    PrimeStatus::Converged { epochs, max_deviation: dev }
}

/// Index of the most relevant member; ties go to the lowest index.
pub fn most_relevant_member(relevance: &[f64]) -> usize {
    let mut best = 0;
    for (m, &p) in relevance.iter().enumerate() {
        if p > relevance[best] {
            best = m;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GladConfig {
    pub budget: usize,
    pub fssn: FssnParams,
    pub learning_enabled: bool,
    pub seed: u64,
}

impl Default for GladConfig {
    fn default() -> Self {
        GladConfig { budget: 60, fssn: FssnParams::default(), learning_enabled: true, seed: 0 }
    }
}

/// Greedy GLAD loop over a fixed dataset as a step machine.
#[derive(Debug, Clone)]
pub struct GladLearner {
    ensemble: LodaEnsemble,
    net: Fssn,
    data: FeatureMatrix,
    member_scores: Vec<Vec<f64>>,
    labeled: Vec<(usize, Label)>,
    is_labeled: Vec<bool>,
    config: GladConfig,
    rng: ChaCha8Rng,
    prime: PrimeStatus,
    history: Vec<HistoryRecord>,
    anomalies_found: usize,
    pending: Option<usize>,
}

impl GladLearner {
    pub fn new(data: FeatureMatrix, ensemble: LodaEnsemble, config: GladConfig) -> Result<Self> {
        if ensemble.d() != data.d() {
            return Err(Error::DimensionMismatch { expected: data.d(), found: ensemble.d() });
        }
        if !(config.fssn.tau > 0.0 && config.fssn.tau < 1.0) {
            return Err(invalid("tau must lie in (0, 1)"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(math::derive_seed(config.seed, 3));
        let members = ensemble.members();
        let mut net = Fssn::new(&data, members, config.fssn.hidden_units(members), config.fssn.b, config.fssn.init_scale, &mut rng)?;
        let prime = prime_fssn(&mut net, &data, &config.fssn, &mut rng);
        let member_scores = data.rows().map(|x| ensemble.member_scores(x)).collect::<Result<Vec<_>>>()?;
        let n = data.len();
        Ok(GladLearner {
            ensemble,
            net,
            data,
            member_scores,
            labeled: Vec::new(),
            is_labeled: vec![false; n],
            config,
            rng,
            prime,
            history: Vec::new(),
            anomalies_found: 0,
            pending: None,
        })
    }

    pub fn prime_status(&self) -> PrimeStatus {
        self.prime
    }

    pub fn network(&self) -> &Fssn {
        &self.net
    }

    pub fn ensemble(&self) -> &LodaEnsemble {
        &self.ensemble
    }

    pub fn data(&self) -> &FeatureMatrix {
        &self.data
    }

    pub fn member_scores(&self) -> &[Vec<f64>] {
        &self.member_scores
    }

    pub fn history(&self) -> &[HistoryRecord] {
        &self.history
    }

    pub fn labeled(&self) -> &[(usize, Label)] {
        &self.labeled
    }

    pub fn spent(&self) -> usize {
        self.history.len()
    }

    pub fn budget(&self) -> usize {
        self.config.budget
    }

    pub fn relevance(&self, x: &[f64]) -> Vec<f64> {
        self.net.relevance(x)
    }

    pub fn most_relevant_member(&self, x: &[f64]) -> usize {
        most_relevant_member(&self.net.relevance(x))
    }

    /// Combined score of instance `id`.
    pub fn score(&self, id: usize) -> f64 {
        combined_score(&self.member_scores[id], &self.net.relevance(self.data.row(id)))
    }

    pub fn scores(&self) -> Vec<f64> {
        (0..self.data.len()).map(|i| self.score(i)).collect()
    }

    pub fn next_query(&mut self) -> Result<Option<usize>> {
        if self.pending.is_some() {
            return Ok(self.pending);
        }
        if self.spent() >= self.config.budget {
            return Ok(None);
        }
        let mut best: Option<(usize, f64)> = None;
        for i in 0..self.data.len() {
            if self.is_labeled[i] {
                continue;
            }
            let s = self.score(i);
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        self.pending = best.map(|b| b.0);
        Ok(self.pending)
    }

    pub fn submit(&mut self, id: usize, label: Label) -> Result<()> {
        if self.pending != Some(id) {
            return Err(Error::LabelRejected { id, reason: "not the pending query" });
        }
        self.pending = None;
        self.is_labeled[id] = true;
        self.labeled.push((id, label));
        if label.is_anomaly() {
            self.anomalies_found += 1;
        }
        if self.config.learning_enabled {
            self.retrain();
        }
        self.history.push(HistoryRecord {
            iter: self.history.len() + 1,
            queried_id: id,
            label,
            num_anomalies_so_far: self.anomalies_found,
            weights_hash: self.net.fingerprint(),
        });
        Ok(())
    }

    /// One pass over the data plus up-sampled labels, anchors frozen from the
    /// pre-update scores.
    fn retrain(&mut self) {
        let anchor = GladAnchor::from_scores(&self.scores(), self.config.fssn.tau).expect("dataset is non-empty");
        let inputs = LossInputs {
            data: &self.data,
            member_scores: &self.member_scores,
            anchor,
            lambda: self.config.fssn.lambda,
            b: self.config.fssn.b,
        };
        let mut items: Vec<Item> = (0..self.data.len()).map(Item::Prior).collect();
        for _ in 0..self.config.fssn.upsample.max(1) {
            items.extend(self.labeled.iter().map(|&(i, y)| Item::Labeled(i, y)));
        }
        train_pass(&mut self.net, &inputs, &mut items, &self.config.fssn, &mut self.rng);
    }

    pub fn run<O: LabelOracle + ?Sized>(&mut self, oracle: &mut O) -> Result<()> {
        while let Some(id) = self.next_query()? {
            let label = oracle.label(id)?;
            self.submit(id, label)?;
        }
        Ok(())
    }
}
