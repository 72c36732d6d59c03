//! Query selection: greedy top, diversity-driven, and random-from-top.

use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::describe::{compact_description, SubspaceCatalog};
use crate::error::{invalid, Error, Result};
use crate::iforest::SparseScoreVector;
use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    Top,
    Diverse,
    RandomTop,
}

impl StrategyKind {
    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::Top => "top",
            StrategyKind::Diverse => "diverse",
            StrategyKind::RandomTop => "random-top",
        }
    }
}

impl core::str::FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "top" => Ok(StrategyKind::Top),
            "diverse" => Ok(StrategyKind::Diverse),
            "random-top" => Ok(StrategyKind::RandomTop),
            other => Err(invalid(alloc::format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Instances labeled per batch.
    pub batch_size: usize,
    /// Top-ranked candidates considered by the diverse and random strategies.
    pub candidates: usize,
    /// Relevant subspaces per candidate when describing the candidate set.
    pub delta: usize,
}

impl StrategyConfig {
    pub fn top() -> Self {
        StrategyConfig { kind: StrategyKind::Top, batch_size: 1, candidates: 1, delta: 5 }
    }

    pub fn top_batch(b: usize) -> Self {
        StrategyConfig { kind: StrategyKind::Top, batch_size: b, candidates: b, delta: 5 }
    }

    pub fn diverse() -> Self {
        StrategyConfig { kind: StrategyKind::Diverse, batch_size: 3, candidates: 10, delta: 5 }
    }

    pub fn random_top() -> Self {
        StrategyConfig { kind: StrategyKind::RandomTop, batch_size: 3, candidates: 10, delta: 5 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(invalid("batch size must be at least 1"));
        }
        if self.kind != StrategyKind::Top && self.candidates < self.batch_size {
            return Err(invalid("candidate count must be at least the batch size"));
        }
        if self.delta == 0 {
            return Err(invalid("delta must be at least 1"));
        }
        Ok(())
    }
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig::top()
    }
}

/// Pairwise shared-subspace counts for a selected batch and for the greedy
/// top batch over the same description.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapStats {
    pub selected: usize,
    pub top: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryBatch {
    /// Ids in query order.
    pub selected: Vec<usize>,
    pub candidates: Vec<usize>,
    pub strategy: StrategyKind,
    /// Set when the pool was smaller than the requested batch.
    pub truncated: bool,
    pub overlap: Option<OverlapStats>,
}

/// One unlabeled instance offered to a strategy.
#[derive(Debug, Clone, Copy)]
pub struct PoolEntry<'a> {
    pub id: usize,
    pub score: f64,
    pub z: &'a SparseScoreVector,
}

fn ranked(scores: &[(usize, f64)], n: usize) -> Vec<(usize, f64)> {
    let mut all = scores.to_vec();
    all.sort_by(math::by_score_desc);
    all.truncate(n);
    all
}

/// The `b` highest scores, ties to the lower id.
pub fn select_top(scores: &[(usize, f64)], b: usize) -> Result<QueryBatch> {
    if b == 0 {
        return Err(invalid("batch size must be at least 1"));
    }
    let top: Vec<usize> = ranked(scores, b).into_iter().map(|r| r.0).collect();
    Ok(QueryBatch { truncated: top.len() < b, candidates: top.clone(), selected: top, strategy: StrategyKind::Top, overlap: None })
}

/// `b` ids drawn uniformly without replacement from the top `n`.
pub fn select_random_top<R: Rng + ?Sized>(scores: &[(usize, f64)], b: usize, n: usize, rng: &mut R) -> Result<QueryBatch> {
    if b == 0 || n < b {
        return Err(invalid("random-top needs n >= b >= 1"));
    }
    let candidates: Vec<usize> = ranked(scores, n).into_iter().map(|r| r.0).collect();
    let take = b.min(candidates.len());
    let mut picks = index::sample(rng, candidates.len(), take).into_vec();
    picks.sort_unstable();
    let selected = picks.into_iter().map(|i| candidates[i]).collect();
    Ok(QueryBatch { selected, truncated: take < b, candidates, strategy: StrategyKind::RandomTop, overlap: None })
}

fn shared(a: &[usize], b: &[usize]) -> usize {
    a.iter().filter(|x| b.contains(x)).count()
}

fn pairwise_overlap(members: &[&[usize]]) -> usize {
    let mut total = 0;
    for i in 0..members.len() {
        for j in i + 1..members.len() {
            total += shared(members[i], members[j]);
        }
    }
    total
}

/// Diversity-driven batch: describe the top `n` candidates with a compact set
/// of subspaces, then repeatedly pick the candidate sharing the fewest of
/// those subspaces with the picks so far (ties to higher score, then lower
/// id). If the greedy picks end up overlapping more than the plain top batch,
/// the top batch is returned instead.
pub fn select_diverse(
    catalog: &SubspaceCatalog,
    w: &[f64],
    pool: &[PoolEntry<'_>],
    b: usize,
    n: usize,
    delta: usize,
) -> Result<QueryBatch> {
    if b == 0 || n < b {
        return Err(invalid("select-diverse needs n >= b >= 1"));
    }
    let scores: Vec<(usize, f64)> = pool.iter().enumerate().map(|(i, e)| (i, e.score)).collect();
    let mut order: Vec<(usize, f64)> = scores;
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(pool[a.0].id.cmp(&pool[b.0].id)));
    order.truncate(n);
    let cands: Vec<&PoolEntry<'_>> = order.iter().map(|&(i, _)| &pool[i]).collect();
    let candidate_ids: Vec<usize> = cands.iter().map(|e| e.id).collect();
    if cands.is_empty() {
        return Ok(QueryBatch { selected: Vec::new(), candidates: candidate_ids, strategy: StrategyKind::Diverse, truncated: true, overlap: None });
    }
    let zs: Vec<&SparseScoreVector> = cands.iter().map(|e| e.z).collect();
    let desc = compact_description(catalog, w, &zs, delta)?;
    // Membership in the description is geometric: a candidate belongs to
    // every selected subspace whose leaf it falls in.
    let members: Vec<Vec<usize>> =
        cands.iter().map(|e| desc.subspaces.iter().copied().filter(|&l| e.z.contains_leaf(l)).collect()).collect();

    let take = b.min(cands.len());
    let mut picked: Vec<usize> = Vec::with_capacity(take);
    let mut left: Vec<usize> = (0..cands.len()).collect();
    while picked.len() < take {
        let mut best: Option<(usize, usize)> = None;
        for (slot, &c) in left.iter().enumerate() {
            let overlap: usize = picked.iter().map(|&p| shared(&members[c], &members[p])).sum();
            // `left` is in rank order, so strict improvement keeps score/id ties.
            if best.is_none_or(|(_, o)| overlap < o) {
                best = Some((slot, overlap));
            }
        }
        let (slot, _) = best.expect("candidates remain");
        picked.push(left.remove(slot));
    }

    let overlap_of = |idx: &[usize]| pairwise_overlap(&idx.iter().map(|&i| members[i].as_slice()).collect::<Vec<_>>());
    let top: Vec<usize> = (0..take).collect();
    let (o_sel, o_top) = (overlap_of(&picked), overlap_of(&top));
    let (chosen, o_final) = if o_sel > o_top { (top, o_top) } else { (picked, o_sel) };
    Ok(QueryBatch {
        selected: chosen.iter().map(|&i| cands[i].id).collect(),
        candidates: candidate_ids,
        strategy: StrategyKind::Diverse,
        truncated: take < b,
        overlap: Some(OverlapStats { selected: o_final, top: o_top }),
    })
}

/// Dispatches on `config.kind`, asking for at most `max_batch` instances.
pub fn select<R: Rng + ?Sized>(
    config: &StrategyConfig,
    pool: &[PoolEntry<'_>],
    max_batch: usize,
    catalog: Option<&SubspaceCatalog>,
    w: &[f64],
    rng: &mut R,
) -> Result<QueryBatch> {
    config.validate()?;
    let b = config.batch_size.min(max_batch.max(1));
    let n = config.candidates.max(b);
    let scores = || pool.iter().map(|e| (e.id, e.score)).collect::<Vec<_>>();
    match config.kind {
        StrategyKind::Top => select_top(&scores(), b),
        StrategyKind::RandomTop => select_random_top(&scores(), b, n, rng),
        StrategyKind::Diverse => {
            let catalog = catalog.ok_or_else(|| invalid("select-diverse needs a subspace catalog"))?;
            select_diverse(catalog, w, pool, b, n, config.delta)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn top_examples() {
        assert_eq!(select_top(&[(0, 0.9), (1, 0.1), (2, 0.5)], 1).unwrap().selected, vec![0]);
        assert_eq!(select_top(&[(0, 0.9), (1, 0.1), (2, 0.5)], 3).unwrap().selected, vec![0, 2, 1]);
        assert_eq!(select_top(&[(0, 0.9), (1, 0.9)], 1).unwrap().selected, vec![0]);
        assert_eq!(select_top(&[(5, 0.9), (3, 0.9)], 1).unwrap().selected, vec![3]);
        let short = select_top(&[(0, 1.0)], 3).unwrap();
        assert!(short.truncated);
        assert!(select_top(&[(0, 1.0)], 0).is_err());
    }

    #[test]
    fn random_top_degenerates_to_top() {
        let scores = [(0, 0.3), (1, 0.8), (2, 0.5), (3, 0.9)];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut r = select_random_top(&scores, 2, 2, &mut rng).unwrap().selected;
        r.sort_unstable();
        assert_eq!(r, vec![1, 3]);
        assert_eq!(select_random_top(&scores, 1, 1, &mut rng).unwrap().selected, vec![3]);
        assert!(select_random_top(&scores, 3, 2, &mut rng).is_err());
    }

    #[test]
    fn random_top_is_uniform_over_candidates() {
        // Chi-square goodness of fit, 9 degrees of freedom; 21.666 is the
        // 0.99 quantile.
        let scores: Vec<(usize, f64)> = (0..30).map(|i| (i, -(i as f64))).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut counts = [0usize; 10];
        let draws = 10_000;
        for _ in 0..draws {
            let q = select_random_top(&scores, 1, 10, &mut rng).unwrap();
            counts[q.selected[0]] += 1;
        }
        let expected = draws as f64 / 10.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 21.666, "chi2 = {chi2}");
    }
}
