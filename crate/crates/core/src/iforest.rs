//! Isolation forest, read as an ensemble whose members are the leaves.
//!
//! Every leaf at depth `l` scores an instance `-l` when the instance falls in
//! the leaf and `0` otherwise, so an instance's score vector has exactly one
//! entry per tree.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;
use crate::error::{invalid, Error, Result};
use crate::math;

/// Half-open range `(lo, hi]`; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const UNBOUNDED: Interval = Interval { lo: f64::NEG_INFINITY, hi: f64::INFINITY };

    pub fn contains(&self, v: f64) -> bool {
        v > self.lo && v <= self.hi
    }

    /// Number of finite bounds, i.e. predicates needed to state the range.
    pub fn finite_bounds(&self) -> usize {
        usize::from(self.lo.is_finite()) + usize::from(self.hi.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub subsample: usize,
    /// `None` means `ceil(log2(effective subsample))`.
    pub max_depth: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 100, subsample: 256, max_depth: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { leaf: usize, depth: usize, samples: usize },
}

/// One random-split tree. Leaves are numbered in left-first DFS order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationTree {
    nodes: Vec<Node>,
    n_leaves: usize,
}

impl IsolationTree {
    /// Builds a tree on an independent subsample of `data`.
    pub fn build(data: &FeatureMatrix, params: &ForestParams, seed: u64) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("cannot build a tree on an empty batch"));
        }
        if params.subsample < 2 {
            return Err(invalid("subsample must be at least 2"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let size = params.subsample.min(data.len());
        let mut idx = index::sample(&mut rng, data.len(), size).into_vec();
        let max_depth = params.max_depth.unwrap_or_else(|| math::ceil_log2(size));
        let mut tree = IsolationTree { nodes: Vec::new(), n_leaves: 0 };
        tree.grow(data, &mut idx, 0, max_depth, &mut rng);
        Ok(tree)
    }

    fn grow(
        &mut self,
        data: &FeatureMatrix,
        idx: &mut [usize],
        depth: usize,
        max_depth: usize,
        rng: &mut ChaCha8Rng,
    ) -> usize {
        if idx.len() <= 1 || depth >= max_depth {
            return self.push_leaf(depth, idx.len());
        }
        let d = data.d();
        let mut chosen = None;
        // A constant feature leaves one side empty; resample up to d times.
        for _ in 0..d {
            let f = rng.random_range(0..d);
            let (lo, hi) = idx.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = data.row(i)[f];
                (lo.min(v), hi.max(v))
            });
            if lo < hi {
                let mut split = rng.random_range(lo..hi);
                if split >= hi {
                    split = lo;
                }
                chosen = Some((f, split));
                break;
            }
        }
        let Some((feature, threshold)) = chosen else {
            return self.push_leaf(depth, idx.len());
        };
        let mut k = 0;
        for j in 0..idx.len() {
            if data.row(idx[j])[feature] <= threshold {
                idx.swap(k, j);
                k += 1;
            }
        }
        let node = self.nodes.len();
        self.nodes.push(Node::Split { feature, threshold, left: 0, right: 0 });
        let (left_idx, right_idx) = idx.split_at_mut(k);
        let left = self.grow(data, left_idx, depth + 1, max_depth, rng);
        let right = self.grow(data, right_idx, depth + 1, max_depth, rng);
        self.nodes[node] = Node::Split { feature, threshold, left, right };
        node
    }

    fn push_leaf(&mut self, depth: usize, samples: usize) -> usize {
        self.nodes.push(Node::Leaf { leaf: self.n_leaves, depth, samples });
        self.n_leaves += 1;
        self.nodes.len() - 1
    }

    pub fn leaf_count(&self) -> usize {
        self.n_leaves
    }

    /// `(local leaf index, depth)` of the leaf containing `x`.
    pub fn locate(&self, x: &[f64]) -> (usize, usize) {
        let mut node = 0;
        loop {
            match &self.nodes[node] {
                Node::Split { feature, threshold, left, right } => {
                    node = if x[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { leaf, depth, .. } => return (*leaf, *depth),
            }
        }
    }

    /// Depth and training-sample count of every leaf, by local index.
    pub fn leaf_stats(&self) -> Vec<(usize, usize)> {
        let mut out = vec![(0, 0); self.n_leaves];
        for n in &self.nodes {
            if let Node::Leaf { leaf, depth, samples } = n {
                out[*leaf] = (*depth, *samples);
            }
        }
        out
    }

    /// Feature-range box of every leaf, by local index.
    pub fn leaf_boxes(&self, d: usize) -> Vec<Vec<Interval>> {
        let mut out = vec![Vec::new(); self.n_leaves];
        let mut stack = vec![(0usize, vec![Interval::UNBOUNDED; d])];
        while let Some((node, bounds)) = stack.pop() {
            match &self.nodes[node] {
                Node::Split { feature, threshold, left, right } => {
                    let mut lb = bounds.clone();
                    lb[*feature].hi = lb[*feature].hi.min(*threshold);
                    let mut rb = bounds;
                    rb[*feature].lo = rb[*feature].lo.max(*threshold);
                    stack.push((*left, lb));
                    stack.push((*right, rb));
                }
                Node::Leaf { leaf, .. } => out[*leaf] = bounds,
            }
        }
        out
    }
}

/// Sparse per-instance score vector over all `m` leaves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseScoreVector {
    dim: usize,
    entries: Vec<(usize, f64)>,
}

impl SparseScoreVector {
    /// `entries` must be sorted by index, without duplicates, all `< dim`.
    pub fn new(dim: usize, entries: Vec<(usize, f64)>) -> Result<Self> {
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(invalid("sparse entries must be strictly increasing by index"));
        }
        if let Some(&(i, _)) = entries.last() {
            if i >= dim {
                return Err(Error::DimensionMismatch { expected: dim, found: i + 1 });
            }
        }
        Ok(SparseScoreVector { dim, entries })
    }

    pub fn from_dense(values: &[f64]) -> Self {
        SparseScoreVector { dim: values.len(), entries: values.iter().copied().enumerate().collect() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.entries
            .binary_search_by_key(&i, |e| e.0)
            .map(|k| self.entries[k].1)
            .unwrap_or(0.0)
    }

    /// Indices with a stored entry (the leaves containing the instance).
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn contains_leaf(&self, i: usize) -> bool {
        self.entries.binary_search_by_key(&i, |e| e.0).is_ok()
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| v * dense[i]).sum()
    }

    pub fn norm(&self) -> f64 {
        math::sqrt(self.entries.iter().map(|e| e.1 * e.1).sum())
    }

    pub fn scaled(&self, k: f64) -> Self {
        SparseScoreVector { dim: self.dim, entries: self.entries.iter().map(|&(i, v)| (i, v * k)).collect() }
    }

    /// Adds `k * self` into `dense`.
    pub fn add_to(&self, dense: &mut [f64], k: f64) {
        for &(i, v) in &self.entries {
            dense[i] += k * v;
        }
    }
}

/// A leaf viewed as a region of feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    pub leaf: usize,
    pub tree: usize,
    pub depth: usize,
    /// Raw leaf score `-depth`.
    pub score: f64,
    pub bounds: Vec<Interval>,
}

impl Subspace {
    pub fn contains(&self, x: &[f64]) -> bool {
        self.bounds.iter().zip(x).all(|(b, &v)| b.contains(v))
    }

    pub fn rule_length(&self) -> usize {
        self.bounds.iter().map(Interval::finite_bounds).sum()
    }
}

/// Maps leaf indices of a model to those of its successor after tree
/// replacement. `None` marks leaves of discarded trees.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafRemap {
    pub old_to_new: Vec<Option<usize>>,
    pub new_m: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EnsembleRepr {
    d: usize,
    params: ForestParams,
    trees: Vec<IsolationTree>,
}

/// Isolation forest whose `m` leaves form the ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "EnsembleRepr", into = "EnsembleRepr")]
pub struct EnsembleModel {
    d: usize,
    params: ForestParams,
    trees: Vec<IsolationTree>,
    offsets: Vec<usize>,
    m: usize,
}

impl From<EnsembleRepr> for EnsembleModel {
    fn from(r: EnsembleRepr) -> Self {
        EnsembleModel::assemble(r.d, r.params, r.trees)
    }
}

impl From<EnsembleModel> for EnsembleRepr {
    fn from(m: EnsembleModel) -> Self {
        EnsembleRepr { d: m.d, params: m.params, trees: m.trees }
    }
}

impl EnsembleModel {
    /// Builds `params.n_trees` trees; tree `t` uses a seed derived from
    /// `(seed, t)` so trees are independent of build order.
    pub fn build(data: &FeatureMatrix, params: ForestParams, seed: u64) -> Result<Self> {
        if params.n_trees == 0 {
            return Err(invalid("forest needs at least one tree"));
        }
        let trees = (0..params.n_trees)
            .map(|t| IsolationTree::build(data, &params, math::derive_seed(seed, t as u64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(EnsembleModel::assemble(data.d(), params, trees))
    }

    fn assemble(d: usize, params: ForestParams, trees: Vec<IsolationTree>) -> Self {
        let mut offsets = Vec::with_capacity(trees.len());
        let mut m = 0;
        for t in &trees {
            offsets.push(m);
            m += t.leaf_count();
        }
        EnsembleModel { d, params, trees, offsets, m }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    /// Total number of leaves (ensemble members).
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn trees(&self) -> &[IsolationTree] {
        &self.trees
    }

    pub fn tree_leaves(&self, t: usize) -> core::ops::Range<usize> {
        self.offsets[t]..self.offsets[t] + self.trees[t].leaf_count()
    }

    pub fn tree_of_leaf(&self, leaf: usize) -> usize {
        match self.offsets.binary_search(&leaf) {
            Ok(mut t) => {
                // skip empty-range duplicates (cannot occur: every tree has a leaf)
                while t + 1 < self.offsets.len() && self.offsets[t + 1] == leaf {
                    t += 1;
                }
                t
            }
            Err(t) => t - 1,
        }
    }

    pub fn transform(&self, x: &[f64]) -> Result<SparseScoreVector> {
        if x.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, found: x.len() });
        }
        let entries = self
            .trees
            .iter()
            .zip(&self.offsets)
            .map(|(tree, off)| {
                let (leaf, depth) = tree.locate(x);
                (off + leaf, -(depth as f64))
            })
            .collect();
        Ok(SparseScoreVector { dim: self.m, entries })
    }

    pub fn transform_all(&self, data: &FeatureMatrix) -> Result<Vec<SparseScoreVector>> {
        data.rows().map(|r| self.transform(r)).collect()
    }

    /// One subspace per leaf, indexed by global leaf index.
    pub fn leaf_subspaces(&self) -> Vec<Subspace> {
        let mut out = Vec::with_capacity(self.m);
        for (t, tree) in self.trees.iter().enumerate() {
            let stats = tree.leaf_stats();
            for (local, bounds) in tree.leaf_boxes(self.d).into_iter().enumerate() {
                let depth = stats[local].0;
                out.push(Subspace {
                    leaf: self.offsets[t] + local,
                    tree: t,
                    depth,
                    score: -(depth as f64),
                    bounds,
                });
            }
        }
        out
    }

    /// Swaps in `replacements[k]` for tree `which[k]`.
    pub fn replace_trees(&mut self, which: &[usize], replacements: Vec<IsolationTree>) -> Result<LeafRemap> {
        if which.len() != replacements.len() {
            return Err(invalid("one replacement tree is needed per replaced index"));
        }
        let old_offsets = self.offsets.clone();
        let old_counts: Vec<usize> = self.trees.iter().map(IsolationTree::leaf_count).collect();
        let old_m = self.m;
        let mut replaced = vec![false; self.trees.len()];
        for (&t, tree) in which.iter().zip(replacements) {
            if t >= self.trees.len() {
                return Err(invalid("replaced tree index out of range"));
            }
            replaced[t] = true;
            self.trees[t] = tree;
        }
        let trees = core::mem::take(&mut self.trees);
        *self = EnsembleModel::assemble(self.d, self.params, trees);
        let mut old_to_new = vec![None; old_m];
        for t in 0..self.trees.len() {
            if !replaced[t] {
                for k in 0..old_counts[t] {
                    old_to_new[old_offsets[t] + k] = Some(self.offsets[t] + k);
                }
            }
        }
        Ok(LeafRemap { old_to_new, new_m: self.m })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> FeatureMatrix {
        let rows: Vec<[f64; 2]> = (0..n).map(|i| [(i % 17) as f64, (i * 7 % 13) as f64]).collect();
        FeatureMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn single_instance_gives_single_root_leaf() {
        let data = FeatureMatrix::from_rows(&[[1.0, 2.0]]).unwrap();
        let model = EnsembleModel::build(&data, ForestParams { n_trees: 1, ..Default::default() }, 3).unwrap();
        assert_eq!(model.m(), 1);
        let subs = model.leaf_subspaces();
        assert_eq!(subs[0].depth, 0);
        assert!(subs[0].bounds.iter().all(|b| *b == Interval::UNBOUNDED));
        let z = model.transform(&[5.0, 5.0]).unwrap();
        assert_eq!(z.entries(), &[(0, -0.0)]);
    }

    #[test]
    fn subsample_below_two_is_rejected() {
        let data = grid(10);
        let p = ForestParams { n_trees: 1, subsample: 1, max_depth: None };
        assert!(EnsembleModel::build(&data, p, 0).is_err());
    }

    #[test]
    fn transform_has_one_entry_per_tree_with_negative_depth() {
        let data = grid(300);
        let model = EnsembleModel::build(&data, ForestParams { n_trees: 20, ..Default::default() }, 11).unwrap();
        let subs = model.leaf_subspaces();
        assert_eq!(subs.len(), model.m());
        for row in data.rows().take(50) {
            let z = model.transform(row).unwrap();
            assert_eq!(z.nnz(), 20);
            for (t, &(leaf, v)) in z.entries().iter().enumerate() {
                assert_eq!(model.tree_of_leaf(leaf), t);
                assert_eq!(v, subs[leaf].score);
                assert!(subs[leaf].contains(row));
            }
        }
    }

    #[test]
    fn leaf_boxes_partition_space() {
        let data = grid(200);
        let model = EnsembleModel::build(&data, ForestParams { n_trees: 5, ..Default::default() }, 5).unwrap();
        let subs = model.leaf_subspaces();
        let probes = [[-100.0, 3.0], [4.5, 4.5], [16.0, 12.0], [1e9, -1e9], [8.0, 0.0]];
        for x in &probes {
            for t in 0..model.n_trees() {
                let hits = model.tree_leaves(t).filter(|&l| subs[l].contains(x)).count();
                assert_eq!(hits, 1);
            }
        }
    }

    #[test]
    fn one_split_tree_has_two_half_spaces() {
        let data = FeatureMatrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let model = EnsembleModel::build(&data, ForestParams { n_trees: 1, subsample: 2, max_depth: None }, 9).unwrap();
        let subs = model.leaf_subspaces();
        assert_eq!(subs.len(), 2);
        let split = subs[0].bounds[0].hi;
        assert!((0.0..1.0).contains(&split));
        assert_eq!(subs[0].bounds[0].lo, f64::NEG_INFINITY);
        assert_eq!(subs[1].bounds[0], Interval { lo: split, hi: f64::INFINITY });
        assert!(subs[0].contains(&[split]), "boundary goes left");
    }

    #[test]
    fn constant_data_terminates_at_max_depth() {
        let rows = [[2.0, 2.0]; 64];
        let data = FeatureMatrix::from_rows(&rows).unwrap();
        let model = EnsembleModel::build(&data, ForestParams { n_trees: 3, ..Default::default() }, 1).unwrap();
        assert_eq!(model.m(), 3);
    }

    #[test]
    fn replace_trees_keeps_surviving_leaf_identity() {
        let data = grid(300);
        let p = ForestParams { n_trees: 4, ..Default::default() };
        let mut model = EnsembleModel::build(&data, p, 2).unwrap();
        let before = model.leaf_subspaces();
        let fresh = IsolationTree::build(&data, &p, 999).unwrap();
        let remap = model.replace_trees(&[1], alloc::vec![fresh]).unwrap();
        let after = model.leaf_subspaces();
        assert_eq!(remap.new_m, model.m());
        for (old, new) in remap.old_to_new.iter().enumerate() {
            match new {
                Some(n) => assert_eq!(before[old].bounds, after[*n].bounds),
                None => assert_eq!(before[old].tree, 1),
            }
        }
    }
}
